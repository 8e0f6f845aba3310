//! Finite categorical distributions over a vocabulary, sampling, empirical
//! estimation and the L1 metric.
//!
//! All bound checks in this crate measure distance with the plain L1 sum
//! `Σ_v |p(v) - q(v)|`. The conventional total variation distance is half of
//! that and is available through [`Categorical::tv_distance`].

use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::{LabError, Result};

/// Absolute tolerance on the probability sum.
pub const SUM_TOLERANCE: f64 = 1e-9;

/// An ordered set of distinct tokens. Token `i` is identified by index `i`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn new<I, S>(tokens: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let tokens: Vec<String> = tokens.into_iter().map(Into::into).collect();
        if tokens.is_empty() {
            return Err(LabError::EmptyInput("vocabulary"));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(LabError::param(format!("duplicate token {t:?} in vocabulary")));
            }
        }
        Ok(Self { tokens, index })
    }

    /// Vocabulary whose tokens are the decimal ids `0..size`.
    pub fn indexed(size: usize) -> Result<Self> {
        Self::new((0..size).map(|i| i.to_string()))
    }

    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    pub fn token(&self, index: usize) -> Option<&str> {
        self.tokens.get(index).map(String::as_str)
    }

    pub fn index_of(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

/// Probability vector over `V` outcomes.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct Categorical {
    probs: Vec<f64>,
}

impl Categorical {
    /// Validates and renormalizes `probs`.
    ///
    /// Entries must be finite and in `[0, 1]`, and their sum must be within
    /// [`SUM_TOLERANCE`] of one. Accepted vectors are divided by their sum.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(LabError::EmptyInput("probability vector"));
        }
        if let Some((i, p)) = probs
            .iter()
            .enumerate()
            .find(|(_, p)| !p.is_finite() || **p < 0.0 || **p > 1.0)
        {
            return Err(LabError::InvalidDistribution(format!(
                "entry {i} = {p} is outside [0, 1]"
            )));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(LabError::InvalidDistribution(format!(
                "probabilities sum to {sum}, not 1"
            )));
        }
        let probs = probs.into_iter().map(|p| p / sum).collect();
        Ok(Self { probs })
    }

    /// Normalizes non-negative weights into a distribution.
    pub fn from_weights(weights: &[f64]) -> Result<Self> {
        if weights.is_empty() {
            return Err(LabError::EmptyInput("weight vector"));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(LabError::InvalidDistribution(
                "weights must be finite and non-negative".into(),
            ));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(LabError::InvalidDistribution("weights sum to zero".into()));
        }
        Ok(Self {
            probs: weights.iter().map(|w| w / total).collect(),
        })
    }

    /// Frequency estimate from outcome counts.
    pub fn from_counts(counts: &[u64]) -> Result<Self> {
        let n: u64 = counts.iter().sum();
        if n == 0 {
            return Err(LabError::EmptyInput("samples"));
        }
        let n = n as f64;
        Ok(Self {
            probs: counts.iter().map(|&c| c as f64 / n).collect(),
        })
    }

    pub fn uniform(size: usize) -> Result<Self> {
        if size == 0 {
            return Err(LabError::EmptyInput("probability vector"));
        }
        Ok(Self {
            probs: vec![1.0 / size as f64; size],
        })
    }

    pub fn point_mass(size: usize, index: usize) -> Result<Self> {
        if index >= size {
            return Err(LabError::IndexOutOfRange { index, size });
        }
        let mut probs = vec![0.0; size];
        probs[index] = 1.0;
        Ok(Self { probs })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob(&self, index: usize) -> f64 {
        self.probs[index]
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn l1_distance(&self, other: &Categorical) -> Result<f64> {
        l1_distance(self, other)
    }

    /// Half the L1 distance.
    pub fn tv_distance(&self, other: &Categorical) -> Result<f64> {
        Ok(l1_distance(self, other)? / 2.0)
    }

    /// `(1 - weight) * self + weight * other`.
    pub fn mix(&self, other: &Categorical, weight: f64) -> Result<Categorical> {
        check_same_len(self.len(), other.len())?;
        if !(0.0..=1.0).contains(&weight) {
            return Err(LabError::param(format!("mixture weight {weight} outside [0, 1]")));
        }
        Ok(Categorical {
            probs: self
                .probs
                .iter()
                .zip(&other.probs)
                .map(|(p, q)| (1.0 - weight) * p + weight * q)
                .collect(),
        })
    }

    /// Inverse-CDF sampler over this distribution.
    pub fn sampler(&self) -> InverseCdf {
        let mut acc = 0.0;
        let mut cdf: Vec<f64> = self
            .probs
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        // Pin the last support point to 1 so rounding never drops mass off
        // the end of the table.
        if let Some(last) = self.probs.iter().rposition(|&p| p > 0.0) {
            for c in &mut cdf[last..] {
                *c = 1.0;
            }
        }
        InverseCdf { cdf }
    }
}

/// Cumulative table for inverse-CDF sampling.
#[derive(Debug, Clone)]
pub struct InverseCdf {
    cdf: Vec<f64>,
}

impl InverseCdf {
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        // First index whose cumulative mass exceeds u; zero-mass outcomes
        // share their predecessor's cumulative value and are never chosen.
        self.cdf.partition_point(|&c| c <= u)
    }
}

fn check_same_len(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(LabError::Dimension { expected, got });
    }
    Ok(())
}

/// `Σ_v |p(v) - q(v)|`, in `[0, 2]`.
pub fn l1_distance(p: &Categorical, q: &Categorical) -> Result<f64> {
    check_same_len(p.len(), q.len())?;
    Ok(p.probs.iter().zip(&q.probs).map(|(a, b)| (a - b).abs()).sum())
}

/// Frequency of each token index among `samples`.
pub fn empirical_distribution(samples: &[usize], vocab: &Vocabulary) -> Result<Categorical> {
    empirical_over(samples, vocab.size())
}

pub(crate) fn empirical_over(samples: &[usize], size: usize) -> Result<Categorical> {
    if samples.is_empty() {
        return Err(LabError::EmptyInput("samples"));
    }
    let mut counts = vec![0u64; size];
    for &s in samples {
        *counts
            .get_mut(s)
            .ok_or(LabError::IndexOutOfRange { index: s, size })? += 1;
    }
    Categorical::from_counts(&counts)
}

/// `n` i.i.d. draws from `dist`.
pub fn sample_tokens<R: Rng + ?Sized>(dist: &Categorical, n: usize, rng: &mut R) -> Result<Vec<usize>> {
    if n == 0 {
        return Err(LabError::param("sample count must be at least 1"));
    }
    let sampler = dist.sampler();
    Ok((0..n).map(|_| sampler.draw(rng)).collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Context {
    pub id: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<Vec<String>>,
}

impl Context {
    pub fn new(id: usize) -> Self {
        Self { id, label: None }
    }
}

/// Ground-truth next-token distributions, one per context.
#[derive(Debug, Clone)]
pub struct SyntheticTask {
    vocab: Vocabulary,
    contexts: Vec<Context>,
    dists: Vec<Categorical>,
}

impl SyntheticTask {
    pub fn new(vocab: Vocabulary, contexts: Vec<Context>, dists: Vec<Categorical>) -> Result<Self> {
        if contexts.is_empty() {
            return Err(LabError::EmptyInput("contexts"));
        }
        check_same_len(contexts.len(), dists.len())?;
        for d in &dists {
            check_same_len(vocab.size(), d.len())?;
        }
        let mut ids: Vec<usize> = contexts.iter().map(|c| c.id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(LabError::param("context ids must be unique"));
        }
        Ok(Self {
            vocab,
            contexts,
            dists,
        })
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn contexts(&self) -> &[Context] {
        &self.contexts
    }

    pub fn dists(&self) -> &[Categorical] {
        &self.dists
    }

    pub fn dist(&self, context_id: usize) -> Option<&Categorical> {
        self.contexts
            .iter()
            .position(|c| c.id == context_id)
            .map(|i| &self.dists[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Context, &Categorical)> {
        self.contexts.iter().zip(&self.dists)
    }
}

/// Symmetric Dirichlet draw: independent `Gamma(concentration, 1)` weights,
/// normalized. Large concentrations approach the uniform distribution; small
/// ones concentrate mass on a few outcomes.
pub fn dirichlet<R: Rng + ?Sized>(size: usize, concentration: f64, rng: &mut R) -> Result<Categorical> {
    if !(concentration.is_finite() && concentration > 0.0) {
        return Err(LabError::param(format!(
            "concentration must be a positive finite number, got {concentration}"
        )));
    }
    if size == 0 {
        return Err(LabError::EmptyInput("probability vector"));
    }
    let gamma = Gamma::new(concentration, 1.0)
        .map_err(|e| LabError::param(format!("gamma({concentration}): {e}")))?;
    let weights: Vec<f64> = (0..size).map(|_| gamma.sample(rng)).collect();
    let total: f64 = weights.iter().sum();
    if total > 0.0 && total.is_finite() {
        return Categorical::from_weights(&weights);
    }
    // Every weight underflowed, which only happens for tiny concentrations;
    // the limiting distribution is a point mass on a uniformly chosen outcome.
    Categorical::point_mass(size, rng.random_range(0..size))
}

/// Random task with `contexts` contexts over a vocabulary of `vocab_size`
/// indexed tokens.
pub fn random_task<R: Rng + ?Sized>(
    vocab_size: usize,
    contexts: usize,
    concentration: f64,
    rng: &mut R,
) -> Result<SyntheticTask> {
    if vocab_size < 2 {
        return Err(LabError::param("vocabulary size must be at least 2"));
    }
    if contexts == 0 {
        return Err(LabError::param("need at least one context"));
    }
    let dists = (0..contexts)
        .map(|_| dirichlet(vocab_size, concentration, rng))
        .collect::<Result<Vec<_>>>()?;
    SyntheticTask::new(
        Vocabulary::indexed(vocab_size)?,
        (0..contexts).map(Context::new).collect(),
        dists,
    )
}
