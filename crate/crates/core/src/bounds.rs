//! Closed-form sample-size calculators.
//!
//! Every big-O bound is evaluated with an explicit multiplicative constant
//! (default 1). The per-context text-generation bound additionally has an
//! `exact` mode that evaluates the explicit Hoeffding + union-bound chain,
//! `n_i >= V^2 / (2 eps^2) * ln(2 V m / delta)`, which is quadratic rather than
//! linear in `V`. Both are exposed so the gap stays visible.
//!
//! All logarithms are natural. Real arithmetic is done in `f64` and `ceil` is
//! applied last.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::{LabError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundParams {
    #[serde(alias = "V", default = "defaults::vocab_size")]
    pub vocab_size: u64,
    #[serde(alias = "m", default = "defaults::one")]
    pub contexts: u64,
    #[serde(alias = "d", default = "defaults::one")]
    pub dim: u64,
    #[serde(alias = "l", default = "defaults::one")]
    pub length: u64,
    pub epsilon: f64,
    #[serde(default = "defaults::delta")]
    pub delta: f64,
    #[serde(default = "defaults::constant")]
    pub constant: f64,
}

mod defaults {
    pub fn vocab_size() -> u64 {
        2
    }
    pub fn one() -> u64 {
        1
    }
    pub fn delta() -> f64 {
        0.05
    }
    pub fn constant() -> f64 {
        1.0
    }
}

impl Default for BoundParams {
    fn default() -> Self {
        Self {
            vocab_size: defaults::vocab_size(),
            contexts: 1,
            dim: 1,
            length: 1,
            epsilon: 0.1,
            delta: defaults::delta(),
            constant: defaults::constant(),
        }
    }
}

impl BoundParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("vocab_size", self.vocab_size),
            ("contexts", self.contexts),
            ("dim", self.dim),
            ("length", self.length),
        ] {
            if v == 0 {
                return Err(LabError::param(format!("{name} must be at least 1")));
            }
        }
        if !(self.epsilon > 0.0 && self.epsilon <= 2.0) {
            return Err(LabError::param(format!(
                "epsilon must be in (0, 2], got {}",
                self.epsilon
            )));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(LabError::param(format!(
                "delta must be in (0, 1), got {}",
                self.delta
            )));
        }
        if !(self.constant.is_finite() && self.constant > 0.0) {
            return Err(LabError::param(format!(
                "constant must be positive, got {}",
                self.constant
            )));
        }
        Ok(())
    }

    pub fn with_constant(&self, constant: f64) -> Self {
        Self {
            constant,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundMode {
    /// Big-O form scaled by the configured constant.
    #[default]
    #[serde(alias = "bigo")]
    BigO,
    /// Explicit Hoeffding constants (text generation only).
    Exact,
}

impl fmt::Display for BoundMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BoundMode::BigO => "big_o",
            BoundMode::Exact => "exact",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundKind {
    Textgen,
    BoundedTextgen,
    Coreset,
    Knn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundResult {
    pub kind: BoundKind,
    pub mode: BoundMode,
    pub constant: f64,
    /// Samples per context (`n_i`, `k`, or the subset size).
    pub per_context: u64,
    /// `contexts * per_context` for the text-generation kinds, else `per_context`.
    pub total: u64,
    pub formula_text: String,
}

fn ceil_count(value: f64, what: &str) -> Result<u64> {
    let c = value.ceil();
    if !c.is_finite() || c >= u64::MAX as f64 {
        return Err(LabError::param(format!("{what} does not fit in 64 bits ({value})")));
    }
    Ok((c as u64).max(1))
}

fn positive_log(arg: f64, what: &str) -> Result<f64> {
    if !(arg > 1.0) {
        return Err(LabError::param(format!(
            "ln({what}) = ln({arg}) is not positive; the bound is vacuous for these parameters"
        )));
    }
    Ok(arg.ln())
}

fn total(contexts: u64, per_context: u64) -> Result<u64> {
    contexts
        .checked_mul(per_context)
        .ok_or_else(|| LabError::param("total sample count overflows 64 bits"))
}

/// Per-context sample count for next-token generation over `m` contexts.
///
/// * big-O: `ceil(c * V / eps^2 * ln(m / delta))`
/// * exact: `ceil(V^2 / (2 eps^2) * ln(2 V m / delta))`, i.e. per-token
///   accuracy `eps / V`, Hoeffding, a union bound over `V` tokens and
///   `delta_i = delta / m`.
pub fn textgen_samples_per_context(params: &BoundParams, mode: BoundMode) -> Result<BoundResult> {
    params.validate()?;
    let v = params.vocab_size as f64;
    let m = params.contexts as f64;
    let eps = params.epsilon;
    let delta = params.delta;
    let (raw, text) = match mode {
        BoundMode::BigO => {
            let log = positive_log(m / delta, "m/delta")?;
            (
                params.constant * (v / (eps * eps)) * log,
                format!(
                    "n_i = ceil(c * V / eps^2 * ln(m / delta)) with c = {}, V = {}, m = {}, eps = {}, delta = {} (natural log)",
                    params.constant, params.vocab_size, params.contexts, eps, delta
                ),
            )
        }
        BoundMode::Exact => {
            let log = positive_log(2.0 * v * m / delta, "2Vm/delta")?;
            (
                v * v / (2.0 * eps * eps) * log,
                format!(
                    "n_i = ceil(V^2 / (2 eps^2) * ln(2 V m / delta)) with V = {}, m = {}, eps = {}, delta = {} (natural log, delta_i = delta/m)",
                    params.vocab_size, params.contexts, eps, delta
                ),
            )
        }
    };
    let per_context = ceil_count(raw, "n_i")?;
    Ok(BoundResult {
        kind: BoundKind::Textgen,
        mode,
        constant: match mode {
            BoundMode::BigO => params.constant,
            BoundMode::Exact => 1.0,
        },
        per_context,
        total: total(params.contexts, per_context)?,
        formula_text: text,
    })
}

/// `ceil(c * d / eps)`.
pub fn coreset_size(params: &BoundParams) -> Result<u64> {
    params.validate()?;
    ceil_count(params.constant * params.dim as f64 / params.epsilon, "coreset size")
}

/// `ceil(c / eps^2 * ln(1 / delta))`.
pub fn knn_context_size(params: &BoundParams) -> Result<u64> {
    params.validate()?;
    let eps = params.epsilon;
    ceil_count(
        params.constant / (eps * eps) * -params.delta.ln(),
        "k-NN context size",
    )
}

/// `ceil(c * l * ln V / eps^2 * ln(1 / delta))`.
pub fn bounded_textgen_size(params: &BoundParams) -> Result<u64> {
    params.validate()?;
    if params.vocab_size < 2 {
        return Err(LabError::param("vocab_size must be at least 2"));
    }
    let eps = params.epsilon;
    let lnv = (params.vocab_size as f64).ln();
    ceil_count(
        params.constant * params.length as f64 * lnv / (eps * eps) * -params.delta.ln(),
        "bounded text-generation context size",
    )
}

/// Extra error from estimating with a subset of `subset_size` samples:
/// `c / sqrt(subset_size)`.
pub fn subset_penalty(subset_size: u64, constant: f64) -> Result<f64> {
    if subset_size == 0 {
        return Err(LabError::param("subset size must be at least 1"));
    }
    if !(constant.is_finite() && constant >= 0.0) {
        return Err(LabError::param(format!("constant must be non-negative, got {constant}")));
    }
    Ok(constant / (subset_size as f64).sqrt())
}

/// Dispatches to the calculator for `kind`. Only [`BoundKind::Textgen`]
/// supports [`BoundMode::Exact`].
pub fn calculate(kind: BoundKind, params: &BoundParams, mode: BoundMode) -> Result<BoundResult> {
    if kind == BoundKind::Textgen {
        return textgen_samples_per_context(params, mode);
    }
    if mode == BoundMode::Exact {
        return Err(LabError::param(
            "exact mode is only defined for the textgen bound",
        ));
    }
    let c = params.constant;
    let (per_context, contexts, formula_text) = match kind {
        BoundKind::Coreset => (
            coreset_size(params)?,
            1,
            format!("|D'| = ceil(c * d / eps) with c = {c}, d = {}, eps = {}", params.dim, params.epsilon),
        ),
        BoundKind::Knn => (
            knn_context_size(params)?,
            1,
            format!(
                "k = ceil(c / eps^2 * ln(1 / delta)) with c = {c}, eps = {}, delta = {} (natural log)",
                params.epsilon, params.delta
            ),
        ),
        BoundKind::BoundedTextgen => (
            bounded_textgen_size(params)?,
            params.contexts,
            format!(
                "k = ceil(c * l * ln V / eps^2 * ln(1 / delta)) with c = {c}, l = {}, V = {}, eps = {}, delta = {} (natural log)",
                params.length, params.vocab_size, params.epsilon, params.delta
            ),
        ),
        BoundKind::Textgen => unreachable!(),
    };
    Ok(BoundResult {
        kind,
        mode,
        constant: c,
        per_context,
        total: total(contexts, per_context)?,
        formula_text,
    })
}
