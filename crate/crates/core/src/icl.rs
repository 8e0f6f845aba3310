//! The idealized in-context learner.
//!
//! Given a prompt of examples, the oracle returns exactly what an ideal
//! learner would infer from them: the empirical next-token (or sequence)
//! distribution for generation, and a logistic model fitted to the examples
//! for classification. An [`EtaModel`] then degrades that answer by mixing in
//! the uniform distribution, standing in for the approximation error of a
//! real model.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::classify::{predict_prob, train_logistic, LabeledDataset, LinearModel, TrainConfig};
use crate::dist::{empirical_over, Categorical, Context, Vocabulary};
use crate::{LabError, Result};

/// Largest `V^l` that [`icl_sequence_dist`] materializes by default.
pub const DEFAULT_SEQUENCE_LIMIT: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EtaKind {
    #[default]
    None,
    UniformMix,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(try_from = "RawEta")]
pub struct EtaModel {
    eta: f64,
    kind: EtaKind,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEta {
    #[serde(default)]
    eta: f64,
    #[serde(default)]
    kind: Option<EtaKind>,
}

impl TryFrom<RawEta> for EtaModel {
    type Error = LabError;

    fn try_from(raw: RawEta) -> Result<Self> {
        match raw.kind {
            Some(EtaKind::UniformMix) => EtaModel::uniform_mix(raw.eta),
            Some(EtaKind::None) if raw.eta != 0.0 => {
                Err(LabError::param("eta must be 0 when kind is none"))
            }
            Some(EtaKind::None) => Ok(EtaModel::none()),
            // {"eta": x} alone means a uniform mixture when x > 0.
            None if raw.eta == 0.0 => Ok(EtaModel::none()),
            None => EtaModel::uniform_mix(raw.eta),
        }
    }
}

impl EtaModel {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn uniform_mix(eta: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&eta) {
            return Err(LabError::param(format!("eta must be in [0, 1), got {eta}")));
        }
        Ok(Self {
            eta,
            kind: EtaKind::UniformMix,
        })
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn kind(&self) -> EtaKind {
        self.kind
    }

    /// `(1 - eta) * p + eta * uniform`.
    pub fn apply(&self, p: &Categorical) -> Result<Categorical> {
        match self.kind {
            EtaKind::None => Ok(p.clone()),
            EtaKind::UniformMix => p.mix(&Categorical::uniform(p.len())?, self.eta),
        }
    }

    /// `(1 - eta) * p + eta / 2` for a binary probability.
    pub fn apply_prob(&self, p: f64) -> f64 {
        match self.kind {
            EtaKind::None => p,
            EtaKind::UniformMix => (1.0 - self.eta) * p + self.eta * 0.5,
        }
    }
}

/// Prompt examples grouped by context id. `T` is a token index for
/// next-token prompts and a token sequence for fixed-length generation.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct IclPromptSamples<T> {
    per_context: BTreeMap<usize, Vec<T>>,
}

pub type TokenPrompt = IclPromptSamples<usize>;
pub type SequencePrompt = IclPromptSamples<Vec<usize>>;

impl<T> IclPromptSamples<T> {
    pub fn new() -> Self {
        Self {
            per_context: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, context_id: usize, samples: Vec<T>) {
        self.per_context.insert(context_id, samples);
    }

    pub fn samples(&self, context_id: usize) -> Option<&[T]> {
        self.per_context.get(&context_id).map(Vec::as_slice)
    }

    pub fn context_ids(&self) -> impl Iterator<Item = usize> + '_ {
        self.per_context.keys().copied()
    }

    fn require(&self, context_id: usize) -> Result<&[T]> {
        match self.per_context.get(&context_id) {
            Some(v) if !v.is_empty() => Ok(v),
            _ => Err(LabError::MissingContext(context_id)),
        }
    }
}

impl<T> FromIterator<(usize, Vec<T>)> for IclPromptSamples<T> {
    fn from_iter<I: IntoIterator<Item = (usize, Vec<T>)>>(iter: I) -> Self {
        Self {
            per_context: iter.into_iter().collect(),
        }
    }
}

/// Next-token distribution the oracle produces for `context`.
pub fn icl_textgen_dist(
    prompt: &TokenPrompt,
    context: &Context,
    vocab: &Vocabulary,
    eta: &EtaModel,
) -> Result<Categorical> {
    let samples = prompt.require(context.id)?;
    eta.apply(&empirical_over(samples, vocab.size())?)
}

/// The classification oracle after it has been prompted with a subset: a
/// logistic model fitted to the subset, answered through the eta mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct IclClassifier {
    local: LinearModel,
    eta: EtaModel,
}

impl IclClassifier {
    pub fn prompt(subset: &LabeledDataset, cfg: &TrainConfig, eta: &EtaModel) -> Result<Self> {
        Ok(Self {
            local: train_logistic(subset, cfg)?,
            eta: *eta,
        })
    }

    pub fn local_model(&self) -> &LinearModel {
        &self.local
    }

    pub fn prob(&self, query: &[f64]) -> Result<f64> {
        Ok(self.eta.apply_prob(predict_prob(&self.local, query)?))
    }
}

/// Probability of label 1 at `query` from a logistic model fitted to
/// `subset`, mixed towards 1/2 by `eta`.
pub fn icl_classify_prob(
    subset: &LabeledDataset,
    query: &[f64],
    cfg: &TrainConfig,
    eta: &EtaModel,
) -> Result<f64> {
    if query.len() != subset.dim() {
        return Err(LabError::Dimension {
            expected: subset.dim(),
            got: query.len(),
        });
    }
    IclClassifier::prompt(subset, cfg, eta)?.prob(query)
}

/// Dense distribution over all `V^l` length-`l` sequences.
///
/// Outcome indices are mixed-radix with the first token most significant, so
/// sequence `(t_0, .., t_{l-1})` lives at `Σ t_i V^(l-1-i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceDistribution {
    vocab_size: usize,
    length: usize,
    dist: Categorical,
}

/// `V^l`, or a size error when it exceeds `limit`.
pub fn sequence_space(vocab_size: usize, length: usize, limit: usize) -> Result<usize> {
    if length == 0 {
        return Err(LabError::param("sequence length must be at least 1"));
    }
    let outcomes = (vocab_size as u128).checked_pow(length as u32).unwrap_or(u128::MAX);
    if outcomes > limit as u128 {
        return Err(LabError::SizeLimit { outcomes, limit });
    }
    Ok(outcomes as usize)
}

impl SequenceDistribution {
    pub fn new(vocab_size: usize, length: usize, dist: Categorical) -> Result<Self> {
        let space = sequence_space(vocab_size, length, usize::MAX)?;
        if dist.len() != space {
            return Err(LabError::Dimension {
                expected: space,
                got: dist.len(),
            });
        }
        Ok(Self {
            vocab_size,
            length,
            dist,
        })
    }

    pub fn encode(&self, seq: &[usize]) -> Result<usize> {
        encode_sequence(seq, self.vocab_size, self.length)
    }

    pub fn decode(&self, index: usize) -> Vec<usize> {
        decode_sequence(index, self.vocab_size, self.length)
    }

    pub fn prob(&self, seq: &[usize]) -> Result<f64> {
        Ok(self.dist.prob(self.encode(seq)?))
    }

    pub fn as_categorical(&self) -> &Categorical {
        &self.dist
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn length(&self) -> usize {
        self.length
    }

    /// Marginal distribution of the token at `position`.
    pub fn marginal(&self, position: usize) -> Result<Categorical> {
        if position >= self.length {
            return Err(LabError::IndexOutOfRange {
                index: position,
                size: self.length,
            });
        }
        let stride = self.vocab_size.pow((self.length - 1 - position) as u32);
        let mut probs = vec![0.0; self.vocab_size];
        for (i, p) in self.dist.probs().iter().enumerate() {
            probs[(i / stride) % self.vocab_size] += p;
        }
        Categorical::from_weights(&probs)
    }
}

pub fn encode_sequence(seq: &[usize], vocab_size: usize, length: usize) -> Result<usize> {
    if seq.len() != length {
        return Err(LabError::Dimension {
            expected: length,
            got: seq.len(),
        });
    }
    seq.iter().try_fold(0usize, |acc, &t| {
        if t >= vocab_size {
            return Err(LabError::IndexOutOfRange {
                index: t,
                size: vocab_size,
            });
        }
        Ok(acc * vocab_size + t)
    })
}

pub fn decode_sequence(mut index: usize, vocab_size: usize, length: usize) -> Vec<usize> {
    let mut seq = vec![0; length];
    for slot in seq.iter_mut().rev() {
        *slot = index % vocab_size;
        index /= vocab_size;
    }
    seq
}

/// Empirical distribution over whole length-`l` sequences in the prompt for
/// `context`, mixed with the uniform distribution over `V^l` by `eta`.
/// Refuses when `V^l` exceeds `limit` rather than approximating.
pub fn icl_sequence_dist(
    prompt: &SequencePrompt,
    context: &Context,
    vocab: &Vocabulary,
    length: usize,
    eta: &EtaModel,
    limit: usize,
) -> Result<SequenceDistribution> {
    let v = vocab.size();
    let space = sequence_space(v, length, limit)?;
    let samples = prompt.require(context.id)?;
    let encoded = samples
        .iter()
        .map(|s| encode_sequence(s, v, length))
        .collect::<Result<Vec<_>>>()?;
    let dist = eta.apply(&empirical_over(&encoded, space)?)?;
    SequenceDistribution::new(v, length, dist)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classify::LabeledPoint;
    use crate::dist::{l1_distance, sample_tokens};
    use crate::rng::stream;
    use proptest::prelude::*;

    fn vocab(n: usize) -> Vocabulary {
        Vocabulary::indexed(n).unwrap()
    }

    #[test]
    fn eta_validation() {
        assert!(EtaModel::uniform_mix(1.0).is_err());
        assert!(EtaModel::uniform_mix(-0.1).is_err());
        assert_eq!(EtaModel::none().eta(), 0.0);
        let e: EtaModel = serde_json::from_str(r#"{"eta": 0.2, "kind": "uniform_mix"}"#).unwrap();
        assert_eq!((e.eta(), e.kind()), (0.2, EtaKind::UniformMix));
        assert!(serde_json::from_str::<EtaModel>(r#"{"eta": 0.2, "kind": "none"}"#).is_err());
        let bare: EtaModel = serde_json::from_str(r#"{"eta": 0.1}"#).unwrap();
        assert_eq!(bare.kind(), EtaKind::UniformMix);
    }

    #[test]
    fn textgen_oracle_examples() {
        let c = Context::new(0);
        let prompt: TokenPrompt = [(0, vec![0, 0, 1, 1])].into_iter().collect();
        let d = icl_textgen_dist(&prompt, &c, &vocab(2), &EtaModel::none()).unwrap();
        assert_eq!(d.probs(), &[0.5, 0.5]);

        let prompt: TokenPrompt = [(0, vec![0, 0, 0])].into_iter().collect();
        let eta = EtaModel::uniform_mix(0.2).unwrap();
        let d = icl_textgen_dist(&prompt, &c, &vocab(2), &eta).unwrap();
        assert!((d.prob(0) - 0.9).abs() < 1e-15 && (d.prob(1) - 0.1).abs() < 1e-15);

        let err = icl_textgen_dist(&prompt, &Context::new(7), &vocab(2), &eta).unwrap_err();
        assert!(matches!(err, LabError::MissingContext(7)));
        let mut empty = TokenPrompt::new();
        empty.insert(0, vec![]);
        assert!(icl_textgen_dist(&empty, &c, &vocab(2), &eta).is_err());
    }

    #[test]
    fn classify_oracle_examples() {
        let subset = LabeledDataset::new(
            [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]
                .iter()
                .map(|x| LabeledPoint::new(x.to_vec(), 1).unwrap())
                .collect(),
        )
        .unwrap();
        let cfg = TrainConfig::default();
        let q = [0.3, 0.3];
        let p = icl_classify_prob(&subset, &q, &cfg, &EtaModel::none()).unwrap();
        assert!(p > 0.5);
        assert_eq!(p, icl_classify_prob(&subset, &q, &cfg, &EtaModel::none()).unwrap());
        assert!(icl_classify_prob(&subset, &[0.0], &cfg, &EtaModel::none()).is_err());

        let eta = EtaModel::uniform_mix(0.2).unwrap();
        assert!((eta.apply_prob(1.0) - 0.9).abs() < 1e-15);
    }

    #[test]
    fn sequence_oracle_examples() {
        let c = Context::new(3);
        let prompt: SequencePrompt =
            [(3, vec![vec![0, 0], vec![0, 0], vec![1, 1], vec![1, 1]])].into_iter().collect();
        let d = icl_sequence_dist(&prompt, &c, &vocab(2), 2, &EtaModel::none(), DEFAULT_SEQUENCE_LIMIT).unwrap();
        assert_eq!(d.prob(&[0, 0]).unwrap(), 0.5);
        assert_eq!(d.prob(&[1, 1]).unwrap(), 0.5);
        assert_eq!(d.prob(&[0, 1]).unwrap(), 0.0);

        let same: SequencePrompt = [(3, vec![vec![1, 0, 2]; 5])].into_iter().collect();
        let d = icl_sequence_dist(&same, &c, &vocab(3), 3, &EtaModel::none(), DEFAULT_SEQUENCE_LIMIT).unwrap();
        assert_eq!(d.prob(&[1, 0, 2]).unwrap(), 1.0);
        assert_eq!(d.decode(d.encode(&[1, 0, 2]).unwrap()), vec![1, 0, 2]);
    }

    #[test]
    fn length_one_sequences_reduce_to_tokens() {
        let c = Context::new(0);
        let toks = vec![2, 0, 1, 2, 2, 0];
        let tp: TokenPrompt = [(0, toks.clone())].into_iter().collect();
        let sp: SequencePrompt = [(0, toks.iter().map(|&t| vec![t]).collect())].into_iter().collect();
        let eta = EtaModel::uniform_mix(0.3).unwrap();
        let a = icl_textgen_dist(&tp, &c, &vocab(3), &eta).unwrap();
        let b = icl_sequence_dist(&sp, &c, &vocab(3), 1, &eta, DEFAULT_SEQUENCE_LIMIT).unwrap();
        assert_eq!(&a, b.as_categorical());
    }

    #[test]
    fn explosion_limit_is_enforced() {
        let c = Context::new(0);
        let sp: SequencePrompt = [(0, vec![vec![0; 7]])].into_iter().collect();
        let err = icl_sequence_dist(&sp, &c, &vocab(10), 7, &EtaModel::none(), DEFAULT_SEQUENCE_LIMIT).unwrap_err();
        assert!(matches!(err, LabError::SizeLimit { outcomes: 10_000_000, .. }));
        assert!(err.to_string().contains("smaller vocabulary"));
        let wrong_len: SequencePrompt = [(0, vec![vec![0, 1, 0]])].into_iter().collect();
        assert!(icl_sequence_dist(&wrong_len, &c, &vocab(2), 2, &EtaModel::none(), 100).is_err());
    }

    proptest! {
        #[test]
        fn oracle_outputs_are_distributions_within_two_eta(
            v in 2usize..12,
            n in 1usize..60,
            eta in 0.0f64..0.999,
            seed in any::<u64>(),
        ) {
            let truth = crate::dist::dirichlet(v, 0.5, &mut stream(seed, 0)).unwrap();
            let samples = sample_tokens(&truth, n, &mut stream(seed, 1)).unwrap();
            let prompt: TokenPrompt = [(0, samples.clone())].into_iter().collect();
            let c = Context::new(0);
            let e = EtaModel::uniform_mix(eta).unwrap();
            let out = icl_textgen_dist(&prompt, &c, &vocab(v), &e).unwrap();
            prop_assert!((out.probs().iter().sum::<f64>() - 1.0).abs() <= 1e-9);
            prop_assert!(out.probs().iter().all(|&p| p >= 0.0));
            let phat = empirical_over(&samples, v).unwrap();
            prop_assert!(l1_distance(&out, &phat).unwrap() <= 2.0 * eta + 1e-12);
            let exact = icl_textgen_dist(&prompt, &c, &vocab(v), &EtaModel::none()).unwrap();
            prop_assert_eq!(l1_distance(&exact, &phat).unwrap(), 0.0);
        }

        #[test]
        fn first_token_marginal_matches_token_oracle(
            v in 2usize..5,
            l in 1usize..4,
            raw in proptest::collection::vec(any::<u32>(), 1..40),
        ) {
            let seqs: Vec<Vec<usize>> = raw
                .iter()
                .map(|r| decode_sequence(*r as usize % v.pow(l as u32), v, l))
                .collect();
            let firsts: Vec<usize> = seqs.iter().map(|s| s[0]).collect();
            let c = Context::new(0);
            let sp: SequencePrompt = [(0, seqs)].into_iter().collect();
            let tp: TokenPrompt = [(0, firsts)].into_iter().collect();
            let joint = icl_sequence_dist(&sp, &c, &vocab(v), l, &EtaModel::none(), 1000).unwrap();
            let tok = icl_textgen_dist(&tp, &c, &vocab(v), &EtaModel::none()).unwrap();
            prop_assert!(l1_distance(&joint.marginal(0).unwrap(), &tok).unwrap() < 1e-12);
        }
    }
}
