//! Sample-complexity calculators, idealized in-context-learning oracles, and
//! Monte Carlo experiments that check each probabilistic bound empirically.
//!
//! The crate is organised bottom-up:
//!
//! * [`dist`] finite categorical distributions, sampling and the L1 metric.
//! * [`bounds`] closed-form sample-size calculators.
//! * [`classify`] logistic regression, coreset and k-NN subset selection.
//! * [`icl`] the idealized in-context oracle with an injectable error knob.
//! * [`prompt`] few-shot prompt construction and similarity-based selection.
//! * [`harness`] Monte Carlo experiments and report emission.
//! * [`cli`] the `icl-lab` command line.

pub mod bounds;
pub mod classify;
pub mod cli;
pub mod dist;
mod error;
pub mod harness;
pub mod icl;
pub mod prompt;
pub mod rng;

pub use error::{LabError, Result};
