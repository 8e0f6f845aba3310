use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::synth::PlantedTask;
use super::{
    log_log_slope, median, run_experiment, BoundReport, ExperimentConfig, ExperimentKind, FormulaEcho,
    SweepPoint, SweepSummary, TrialResult,
};
use crate::bounds::{self, BoundKind, BoundMode};
use crate::classify::{knn_indices, predict_prob, select_coreset, train_logistic, LabeledDataset};
use crate::dist::{l1_distance, random_task, sample_tokens, Vocabulary};
use crate::icl::{
    decode_sequence, icl_sequence_dist, icl_textgen_dist, sequence_space, IclClassifier, SequencePrompt,
    TokenPrompt,
};
use crate::rng::{stream, LabRng};
use crate::{LabError, Result};

/// Per-context sample counts above this are refused; they are not desk scale.
const MAX_SAMPLES_PER_CONTEXT: u64 = 100_000_000;

const DEFAULT_SUBSET_GRID: [u64; 4] = [100, 1_000, 10_000, 100_000];

const THRESHOLD_NOTE: &str =
    "failure threshold is epsilon + 2*eta: the uniform-mix oracle moves at most 2*eta in L1 from what it was shown";

struct TrialOutcome {
    sup_error: f64,
    reason: Option<String>,
    diverged: bool,
    /// Errors at each evaluated size, aligned with the experiment's size list.
    by_size: Vec<f64>,
}

fn expect_kind(cfg: &ExperimentConfig, kind: ExperimentKind) -> Result<()> {
    if cfg.kind != kind {
        return Err(LabError::param(format!(
            "config kind is {} but the {} experiment was requested",
            cfg.kind.as_str(),
            kind.as_str()
        )));
    }
    cfg.validate()
}

fn run_trials<F>(cfg: &ExperimentConfig, trial: F) -> Result<Vec<TrialOutcome>>
where
    F: Fn(&mut LabRng) -> Result<TrialOutcome> + Sync,
{
    (0..cfg.trials)
        .into_par_iter()
        .map(|t| trial(&mut stream(cfg.seed, t as u64)))
        .collect()
}

fn to_results(outcomes: &[TrialOutcome], threshold: f64) -> Vec<TrialResult> {
    outcomes
        .iter()
        .enumerate()
        .map(|(i, o)| TrialResult {
            trial_index: i,
            sup_error: o.sup_error,
            failed: o.diverged || o.sup_error > threshold,
            reason: o.reason.clone(),
        })
        .collect()
}

fn sweep_summary(sizes: &[u64], outcomes: &[TrialOutcome], wanted: &[u64]) -> Option<SweepSummary> {
    if wanted.is_empty() {
        return None;
    }
    let points: Vec<SweepPoint> = wanted
        .iter()
        .map(|&s| {
            let col = sizes.iter().position(|&x| x == s).expect("sweep size evaluated");
            let errors: Vec<f64> = outcomes.iter().map(|o| o.by_size[col]).collect();
            SweepPoint {
                size: s,
                median_error: median(&errors),
                errors,
            }
        })
        .collect();
    let xs: Vec<f64> = points.iter().map(|p| p.size as f64).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.median_error).collect();
    Some(SweepSummary {
        log_log_slope: log_log_slope(&xs, &ys),
        points,
    })
}

/// `first` followed by `rest`, without repeats.
fn size_list(first: u64, rest: &[u64]) -> Vec<u64> {
    let mut out = vec![first];
    for &s in rest {
        if !out.contains(&s) {
            out.push(s);
        }
    }
    out
}

fn per_context_count(n: u64) -> Result<usize> {
    if n > MAX_SAMPLES_PER_CONTEXT {
        return Err(LabError::param(format!(
            "{n} samples per context exceeds the experiment limit of {MAX_SAMPLES_PER_CONTEXT}; \
             use a larger epsilon, smaller vocabulary, or sample_override"
        )));
    }
    Ok(n as usize)
}

/// Next-token generation: per trial, a fresh random task, `n_i` samples per
/// context, the oracle's distribution from those samples, and the largest L1
/// error over contexts.
pub fn run_textgen_experiment(cfg: &ExperimentConfig) -> Result<BoundReport> {
    expect_kind(cfg, ExperimentKind::Textgen)?;
    let p = &cfg.params;
    let bound = bounds::textgen_samples_per_context(p, cfg.mode)?;
    let n = cfg.sample_override.unwrap_or(bound.per_context);
    let count = per_context_count(n)?;
    let vocab_size = usize::try_from(p.vocab_size).map_err(|_| LabError::param("vocab_size too large"))?;
    let vocab = Vocabulary::indexed(vocab_size)?;

    let outcomes = run_trials(cfg, |rng| {
        let task = random_task(vocab_size, p.contexts as usize, cfg.concentration, rng)?;
        let mut sup = 0.0f64;
        for (ctx, truth) in task.iter() {
            let mut prompt = TokenPrompt::new();
            prompt.insert(ctx.id, sample_tokens(truth, count, rng)?);
            let oracle = icl_textgen_dist(&prompt, ctx, &vocab, &cfg.eta)?;
            sup = sup.max(l1_distance(&oracle, truth)?);
        }
        Ok(TrialOutcome {
            sup_error: sup,
            reason: None,
            diverged: false,
            by_size: vec![sup],
        })
    })?;

    let mut notes = vec![THRESHOLD_NOTE.to_string()];
    if cfg.sample_override.is_some() {
        notes.push(format!("sample size overridden: {n} instead of {}", bound.per_context));
    }
    let threshold = cfg.threshold();
    Ok(BoundReport::assemble(
        cfg,
        FormulaEcho {
            bound: Some(BoundKind::Textgen),
            mode: cfg.mode,
            constant: bound.constant,
            computed_size: Some(bound.per_context),
            used_size: n,
            formula_text: bound.formula_text,
        },
        to_results(&outcomes, threshold),
        None,
        notes,
    ))
}

/// Fixed-length generation: per trial, random ground truths over all `V^l`
/// sequences, `k` sampled sequences per context, and the largest joint L1
/// error over contexts.
pub fn run_bounded_textgen_experiment(cfg: &ExperimentConfig) -> Result<BoundReport> {
    expect_kind(cfg, ExperimentKind::BoundedTextgen)?;
    let p = &cfg.params;
    let vocab_size = usize::try_from(p.vocab_size).map_err(|_| LabError::param("vocab_size too large"))?;
    let length = p.length as usize;
    let space = sequence_space(vocab_size, length, cfg.sequence_limit)?;
    let bound = bounds::calculate(BoundKind::BoundedTextgen, p, BoundMode::BigO)?;
    let k = cfg.sample_override.unwrap_or(bound.per_context);
    let count = per_context_count(k)?;
    let vocab = Vocabulary::indexed(vocab_size)?;

    let outcomes = run_trials(cfg, |rng| {
        let task = random_task(space, p.contexts as usize, cfg.concentration, rng)?;
        let mut sup = 0.0f64;
        for (ctx, truth) in task.iter() {
            let seqs = sample_tokens(truth, count, rng)?
                .into_iter()
                .map(|i| decode_sequence(i, vocab_size, length))
                .collect();
            let mut prompt = SequencePrompt::new();
            prompt.insert(ctx.id, seqs);
            let oracle = icl_sequence_dist(&prompt, ctx, &vocab, length, &cfg.eta, cfg.sequence_limit)?;
            sup = sup.max(l1_distance(oracle.as_categorical(), truth)?);
        }
        Ok(TrialOutcome {
            sup_error: sup,
            reason: None,
            diverged: false,
            by_size: vec![sup],
        })
    })?;

    let mut notes = vec![THRESHOLD_NOTE.to_string()];
    if cfg.sample_override.is_some() {
        notes.push(format!("sample size overridden: {k} instead of {}", bound.per_context));
    }
    let threshold = cfg.threshold();
    Ok(BoundReport::assemble(
        cfg,
        FormulaEcho {
            bound: Some(BoundKind::BoundedTextgen),
            mode: BoundMode::BigO,
            constant: p.constant,
            computed_size: Some(bound.per_context),
            used_size: k,
            formula_text: bound.formula_text,
        },
        to_results(&outcomes, threshold),
        None,
        notes,
    ))
}

/// Resolves the main subset size (calculator, override, clipped to `N`) and
/// checks the sweep sizes.
fn subset_sizes(cfg: &ExperimentConfig, computed: u64, notes: &mut Vec<String>) -> Result<Vec<u64>> {
    let n = cfg.data.points as u64;
    let mut main = cfg.sample_override.unwrap_or(computed);
    if cfg.sample_override.is_some() {
        notes.push(format!("sample size overridden: {main} instead of {computed}"));
    }
    if main > n {
        notes.push(format!("subset size {main} clipped to the dataset size {n}"));
        main = n;
    }
    if let Some(s) = cfg.sweep.iter().find(|&&s| s > n) {
        return Err(LabError::param(format!("sweep size {s} exceeds the dataset size {n}")));
    }
    Ok(size_list(main, &cfg.sweep))
}

fn vacuous_reason(data: &LabeledDataset) -> Option<String> {
    data.is_single_class()
        .then(|| "single-class dataset: the subset guarantee is vacuous".to_string())
}

fn diverged(e: LabError, sizes: usize) -> Result<TrialOutcome> {
    match e {
        LabError::Divergence { .. } => Ok(TrialOutcome {
            sup_error: 1.0,
            reason: Some(e.to_string()),
            diverged: true,
            by_size: vec![1.0; sizes],
        }),
        other => Err(other),
    }
}

/// Coreset classification: per trial, a planted task, the full-data model
/// (the fine-tuned reference), a coreset of each requested size, and the sup
/// over evaluation points of the oracle's probability gap to the reference.
pub fn run_coreset_experiment(cfg: &ExperimentConfig) -> Result<BoundReport> {
    expect_kind(cfg, ExperimentKind::Coreset)?;
    let p = &cfg.params;
    let computed = bounds::coreset_size(p)?;
    let mut notes = vec![THRESHOLD_NOTE.to_string()];
    let sizes = subset_sizes(cfg, computed, &mut notes)?;
    let dim = p.dim as usize;

    let outcomes = run_trials(cfg, |rng| {
        let task = PlantedTask::new(dim, cfg.data, rng)?;
        let data = task.sample_dataset(cfg.data.points, rng)?;
        let mut eval = task.sample_points(cfg.eval_points, rng);
        eval.extend(data.points().iter().map(|pt| pt.x.clone()));
        let reference = match train_logistic(&data, &cfg.train) {
            Ok(m) => m,
            Err(e) => return diverged(e, sizes.len()),
        };
        let reference_probs = eval
            .iter()
            .map(|x| predict_prob(&reference, x))
            .collect::<Result<Vec<_>>>()?;
        let mut by_size = Vec::with_capacity(sizes.len());
        for &s in &sizes {
            let coreset = select_coreset(&data, s as usize, cfg.coreset_strategy, rng)?;
            let oracle = match IclClassifier::prompt(&coreset, &cfg.train, &cfg.eta) {
                Ok(o) => o,
                Err(e) => return diverged(e, sizes.len()),
            };
            let mut worst = 0.0f64;
            for (x, r) in eval.iter().zip(&reference_probs) {
                worst = worst.max((oracle.prob(x)? - r).abs());
            }
            by_size.push(worst);
        }
        Ok(TrialOutcome {
            sup_error: by_size[0],
            reason: vacuous_reason(&data),
            diverged: false,
            by_size,
        })
    })?;

    notes.push(format!(
        "sup over {} sampled points plus the dataset; a lower bound on the supremum over R^d",
        cfg.eval_points
    ));
    let threshold = cfg.threshold();
    Ok(BoundReport::assemble(
        cfg,
        FormulaEcho {
            bound: Some(BoundKind::Coreset),
            mode: BoundMode::BigO,
            constant: p.constant,
            computed_size: Some(computed),
            used_size: sizes[0],
            formula_text: format!(
                "|D'| = ceil(c * d / eps) with c = {}, d = {}, eps = {}",
                p.constant, p.dim, p.epsilon
            ),
        },
        to_results(&outcomes, threshold),
        sweep_summary(&sizes, &outcomes, &cfg.sweep),
        notes,
    ))
}

/// Local k-NN classification: per trial, a planted task and `eval_points`
/// queries; each query is answered by the oracle prompted with its `k`
/// nearest neighbours and compared with the planted probability.
pub fn run_knn_experiment(cfg: &ExperimentConfig) -> Result<BoundReport> {
    expect_kind(cfg, ExperimentKind::Knn)?;
    let p = &cfg.params;
    let computed = bounds::knn_context_size(p)?;
    let mut notes = vec![THRESHOLD_NOTE.to_string()];
    let sizes = subset_sizes(cfg, computed, &mut notes)?;
    let k_max = *sizes.iter().max().expect("non-empty") as usize;
    let dim = p.dim as usize;

    let outcomes = run_trials(cfg, |rng| {
        let task = PlantedTask::new(dim, cfg.data, rng)?;
        let data = task.sample_dataset(cfg.data.points, rng)?;
        let queries = task.sample_points(cfg.eval_points, rng);
        let mut by_size = vec![0.0f64; sizes.len()];
        for q in &queries {
            // Neighbour lists for smaller k are prefixes of the largest one.
            let nearest = knn_indices(&data, q, k_max)?;
            let truth = task.true_prob(q);
            for (slot, &k) in by_size.iter_mut().zip(&sizes) {
                let subset = data.subset(&nearest[..k as usize])?;
                let oracle = match IclClassifier::prompt(&subset, &cfg.train, &cfg.eta) {
                    Ok(o) => o,
                    Err(e) => return diverged(e, sizes.len()),
                };
                *slot = slot.max((oracle.prob(q)? - truth).abs());
            }
        }
        Ok(TrialOutcome {
            sup_error: by_size[0],
            reason: vacuous_reason(&data),
            diverged: false,
            by_size,
        })
    })?;

    notes.push(format!("error is the max over {} queries per trial", cfg.eval_points));
    let threshold = cfg.threshold();
    Ok(BoundReport::assemble(
        cfg,
        FormulaEcho {
            bound: Some(BoundKind::Knn),
            mode: BoundMode::BigO,
            constant: p.constant,
            computed_size: Some(computed),
            used_size: sizes[0],
            formula_text: format!(
                "k = ceil(c / eps^2 * ln(1 / delta)) with c = {}, eps = {}, delta = {} (natural log)",
                p.constant, p.epsilon, p.delta
            ),
        },
        to_results(&outcomes, threshold),
        sweep_summary(&sizes, &outcomes, &cfg.sweep),
        notes,
    ))
}

/// Single-context estimation error as a function of the subset size. Each
/// trial draws one ground truth and evaluates every size in the grid
/// (`sweep`, default 10^2..10^5); a trial fails when the error at the largest
/// size exceeds the threshold plus `c / sqrt(n)`.
pub fn run_subset_penalty_experiment(cfg: &ExperimentConfig) -> Result<BoundReport> {
    expect_kind(cfg, ExperimentKind::SubsetPenalty)?;
    let p = &cfg.params;
    let mut grid = if cfg.sweep.is_empty() {
        DEFAULT_SUBSET_GRID.to_vec()
    } else {
        cfg.sweep.clone()
    };
    grid.sort_unstable();
    grid.dedup();
    let counts = grid.iter().map(|&n| per_context_count(n)).collect::<Result<Vec<_>>>()?;
    let n_max = *grid.last().expect("non-empty grid");
    let penalty = bounds::subset_penalty(n_max, p.constant)?;
    let vocab_size = usize::try_from(p.vocab_size).map_err(|_| LabError::param("vocab_size too large"))?;
    let vocab = Vocabulary::indexed(vocab_size)?;

    let outcomes = run_trials(cfg, |rng| {
        let task = random_task(vocab_size, 1, cfg.concentration, rng)?;
        let (ctx, truth) = task.iter().next().expect("one context");
        let mut by_size = Vec::with_capacity(counts.len());
        for &n in &counts {
            let mut prompt = TokenPrompt::new();
            prompt.insert(ctx.id, sample_tokens(truth, n, rng)?);
            by_size.push(l1_distance(&icl_textgen_dist(&prompt, ctx, &vocab, &cfg.eta)?, truth)?);
        }
        Ok(TrialOutcome {
            sup_error: *by_size.last().expect("non-empty"),
            reason: None,
            diverged: false,
            by_size,
        })
    })?;

    let threshold = cfg.threshold() + penalty;
    Ok(BoundReport::assemble(
        cfg,
        FormulaEcho {
            bound: None,
            mode: BoundMode::BigO,
            constant: p.constant,
            computed_size: None,
            used_size: n_max,
            formula_text: format!(
                "penalty = c / sqrt(n) with c = {}; failure when L1 at n = {n_max} exceeds epsilon + 2*eta + {penalty}",
                p.constant
            ),
        },
        to_results(&outcomes, threshold),
        sweep_summary(&grid, &outcomes, &grid),
        vec![THRESHOLD_NOTE.to_string()],
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationStep {
    pub constant: f64,
    pub failure_rate: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    /// Smallest power of two whose pilot run passed.
    pub constant: f64,
    pub steps: Vec<CalibrationStep>,
}

/// Tries constants `1, 2, 4, .., 2^max_power` on `pilot` and returns the
/// first that passes the failure-rate test.
pub fn calibrate_constant(pilot: &ExperimentConfig, max_power: u32) -> Result<Calibration> {
    if pilot.mode == BoundMode::Exact {
        return Err(LabError::param("exact mode has no constant to calibrate"));
    }
    let mut steps = Vec::new();
    for power in 0..=max_power {
        let constant = 2f64.powi(power as i32);
        let mut cfg = pilot.clone();
        cfg.params.constant = constant;
        let report = run_experiment(&cfg)?;
        steps.push(CalibrationStep {
            constant,
            failure_rate: report.failure_rate,
            pass: report.pass,
        });
        if report.pass {
            return Ok(Calibration { constant, steps });
        }
    }
    Err(LabError::param(format!(
        "no constant up to 2^{max_power} passed the pilot run"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bounds::BoundParams;
    use crate::icl::EtaModel;

    fn textgen(v: u64, m: u64, trials: usize) -> ExperimentConfig {
        let params = BoundParams {
            vocab_size: v,
            contexts: m,
            epsilon: 0.2,
            delta: 0.05,
            ..Default::default()
        };
        ExperimentConfig::new(ExperimentKind::Textgen, params, trials, 17)
    }

    #[test]
    fn undersampling_fails_almost_always() {
        let mut cfg = textgen(20, 10, 50);
        cfg.sample_override = Some(1);
        let r = run_textgen_experiment(&cfg).unwrap();
        assert!(r.failure_rate > 0.95, "{}", r.failure_rate);
        assert!(!r.pass);
        assert!(r.notes.iter().any(|n| n.contains("overridden")));
    }

    #[test]
    fn huge_sample_is_nearly_exact() {
        // Binary L1 error is 2|p_hat - p|, sd <= 2 * 0.5 / 1000 = 0.001.
        let mut cfg = textgen(2, 1, 5);
        cfg.params.epsilon = 0.1;
        cfg.sample_override = Some(1_000_000);
        let r = run_textgen_experiment(&cfg).unwrap();
        assert!(r.per_trial.iter().all(|t| t.sup_error < 0.01));
    }

    #[test]
    fn kind_mismatch_is_rejected() {
        let cfg = textgen(5, 1, 1);
        assert!(run_knn_experiment(&cfg).is_err());
        assert!(run_subset_penalty_experiment(&cfg).is_err());
    }

    #[test]
    fn length_one_matches_textgen_on_the_same_seed() {
        let mut a = textgen(6, 3, 8);
        a.sample_override = Some(40);
        let mut b = a.clone();
        b.kind = ExperimentKind::BoundedTextgen;
        b.params.length = 1;
        let ra = run_textgen_experiment(&a).unwrap();
        let rb = run_bounded_textgen_experiment(&b).unwrap();
        assert_eq!(ra.per_trial, rb.per_trial);
    }

    #[test]
    fn bounded_textgen_k1_fails() {
        let mut cfg = textgen(5, 1, 40);
        cfg.kind = ExperimentKind::BoundedTextgen;
        cfg.params.length = 2;
        cfg.sample_override = Some(1);
        let r = run_bounded_textgen_experiment(&cfg).unwrap();
        assert!(r.failure_rate > 0.95);
    }

    #[test]
    fn explosion_limit_applies_to_experiments() {
        let mut cfg = textgen(10, 1, 1);
        cfg.kind = ExperimentKind::BoundedTextgen;
        cfg.params.length = 7;
        assert!(matches!(
            run_bounded_textgen_experiment(&cfg),
            Err(LabError::SizeLimit { .. })
        ));
    }

    fn classification(kind: ExperimentKind, trials: usize) -> ExperimentConfig {
        let params = BoundParams {
            dim: 3,
            epsilon: 0.25,
            delta: 0.05,
            ..Default::default()
        };
        let mut cfg = ExperimentConfig::new(kind, params, trials, 5);
        cfg.data.points = 300;
        cfg.eval_points = 200;
        cfg
    }

    #[test]
    fn full_coreset_reproduces_the_reference() {
        let mut cfg = classification(ExperimentKind::Coreset, 3);
        cfg.sample_override = Some(300);
        let r = run_coreset_experiment(&cfg).unwrap();
        assert!(r.per_trial.iter().all(|t| t.sup_error < 1e-6));
    }

    #[test]
    fn oversized_sweep_is_rejected() {
        let mut cfg = classification(ExperimentKind::Coreset, 1);
        cfg.sweep = vec![10, 301];
        assert!(run_coreset_experiment(&cfg).is_err());
    }

    #[test]
    fn knn_with_everything_equals_full_model_error() {
        let mut cfg = classification(ExperimentKind::Knn, 2);
        cfg.sample_override = Some(300);
        cfg.eval_points = 5;
        let r = run_knn_experiment(&cfg).unwrap();
        for (t, trial) in r.per_trial.iter().enumerate() {
            let mut rng = stream(cfg.seed, t as u64);
            let task = PlantedTask::new(3, cfg.data, &mut rng).unwrap();
            let data = task.sample_dataset(300, &mut rng).unwrap();
            let queries = task.sample_points(5, &mut rng);
            let full = train_logistic(&data, &cfg.train).unwrap();
            let baseline = queries
                .iter()
                .map(|q| (predict_prob(&full, q).unwrap() - task.true_prob(q)).abs())
                .fold(0.0, f64::max);
            assert!((trial.sup_error - baseline).abs() < 1e-6, "{} vs {baseline}", trial.sup_error);
        }
    }

    #[test]
    fn eta_shifts_knn_errors_by_at_most_half_eta() {
        let mut cfg = classification(ExperimentKind::Knn, 3);
        cfg.sample_override = Some(64);
        cfg.eval_points = 10;
        let base = run_knn_experiment(&cfg).unwrap();
        cfg.eta = EtaModel::uniform_mix(0.3).unwrap();
        let mixed = run_knn_experiment(&cfg).unwrap();
        for (a, b) in base.per_trial.iter().zip(&mixed.per_trial) {
            assert!(b.sup_error <= a.sup_error + 0.15 + 1e-12);
        }
        assert_eq!(mixed.threshold, 0.25 + 0.6);
    }

    #[test]
    fn subset_penalty_rejects_zero_size() {
        let mut cfg = textgen(10, 1, 1);
        cfg.kind = ExperimentKind::SubsetPenalty;
        cfg.sweep = vec![0, 10];
        assert!(run_subset_penalty_experiment(&cfg).is_err());
    }

    #[test]
    fn calibration_stops_at_first_passing_constant() {
        let mut cfg = textgen(4, 1, 40);
        cfg.kind = ExperimentKind::BoundedTextgen;
        cfg.params.length = 2;
        let cal = calibrate_constant(&cfg, 6).unwrap();
        assert!(cal.steps.last().unwrap().pass);
        assert!(cal.steps[..cal.steps.len() - 1].iter().all(|s| !s.pass));
        assert_eq!(cal.constant, 2f64.powi(cal.steps.len() as i32 - 1));
    }
}
