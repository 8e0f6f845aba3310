//! Monte Carlo experiments that check each sample-size bound against its
//! `(epsilon, delta)` guarantee, and the JSON/CSV reports they produce.
//!
//! Every trial draws from its own random stream derived from the root seed,
//! so a report is a pure function of its configuration regardless of how many
//! threads ran the trials.

mod experiments;
pub mod synth;

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bounds::{BoundKind, BoundMode, BoundParams};
use crate::classify::{CoresetStrategy, TrainConfig};
use crate::icl::{EtaModel, DEFAULT_SEQUENCE_LIMIT};
use crate::{LabError, Result};

pub use experiments::{
    calibrate_constant, run_bounded_textgen_experiment, run_coreset_experiment, run_knn_experiment,
    run_subset_penalty_experiment, run_textgen_experiment, Calibration,
};
pub use synth::DataConfig;

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "ICL_LAB_THREADS";

/// Two-sided 95% normal quantile.
pub const Z_95: f64 = 1.96;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Textgen,
    BoundedTextgen,
    Coreset,
    Knn,
    SubsetPenalty,
}

impl ExperimentKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ExperimentKind::Textgen => "textgen",
            ExperimentKind::BoundedTextgen => "bounded_textgen",
            ExperimentKind::Coreset => "coreset",
            ExperimentKind::Knn => "knn",
            ExperimentKind::SubsetPenalty => "subset_penalty",
        }
    }
}

impl std::str::FromStr for ExperimentKind {
    type Err = LabError;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "textgen" => Ok(ExperimentKind::Textgen),
            "bounded_textgen" => Ok(ExperimentKind::BoundedTextgen),
            "coreset" => Ok(ExperimentKind::Coreset),
            "knn" => Ok(ExperimentKind::Knn),
            "subset_penalty" => Ok(ExperimentKind::SubsetPenalty),
            other => Err(LabError::param(format!("unknown experiment kind {other:?}"))),
        }
    }
}

fn default_eval_points() -> usize {
    10_000
}

fn default_concentration() -> f64 {
    1.0
}

fn default_sequence_limit() -> usize {
    DEFAULT_SEQUENCE_LIMIT
}

/// Configuration of one experiment. Only `kind`, `params`, `trials` and
/// `seed` are required in JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub params: BoundParams,
    /// Only meaningful for `textgen`.
    #[serde(default)]
    pub mode: BoundMode,
    pub trials: usize,
    pub seed: u64,
    #[serde(default)]
    pub eta: EtaModel,
    /// Evaluation points for `coreset` (added to the dataset itself) and the
    /// number of queries for `knn`.
    #[serde(default = "default_eval_points")]
    pub eval_points: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_path: Option<PathBuf>,
    /// Dirichlet concentration of the ground-truth distributions.
    #[serde(default = "default_concentration")]
    pub concentration: f64,
    /// Replaces the calculator's sample size (n_i, k, or coreset size).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_override: Option<u64>,
    /// Extra sizes to evaluate: coreset sizes, k values, or subset sizes.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sweep: Vec<u64>,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub coreset_strategy: CoresetStrategy,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "default_sequence_limit")]
    pub sequence_limit: usize,
}

impl ExperimentConfig {
    pub fn new(kind: ExperimentKind, params: BoundParams, trials: usize, seed: u64) -> Self {
        Self {
            kind,
            params,
            mode: BoundMode::default(),
            trials,
            seed,
            eta: EtaModel::none(),
            eval_points: default_eval_points(),
            output_path: None,
            concentration: default_concentration(),
            sample_override: None,
            sweep: Vec::new(),
            data: DataConfig::default(),
            coreset_strategy: CoresetStrategy::default(),
            train: TrainConfig::default(),
            sequence_limit: default_sequence_limit(),
        }
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| LabError::param(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.train.validate()?;
        self.data.validate()?;
        if self.trials == 0 {
            return Err(LabError::param("trials must be at least 1"));
        }
        if self.sample_override == Some(0) {
            return Err(LabError::param("sample_override must be at least 1"));
        }
        if self.sweep.contains(&0) {
            return Err(LabError::param("sweep sizes must be at least 1"));
        }
        if !(self.concentration.is_finite() && self.concentration > 0.0) {
            return Err(LabError::param("concentration must be positive"));
        }
        if matches!(self.kind, ExperimentKind::Coreset | ExperimentKind::Knn) && self.eval_points == 0 {
            return Err(LabError::param("eval_points must be at least 1"));
        }
        if self.mode == BoundMode::Exact && self.kind != ExperimentKind::Textgen {
            return Err(LabError::param("exact mode is only defined for textgen"));
        }
        Ok(())
    }

    /// Failure threshold `epsilon + 2 eta`: the uniform-mix oracle can move
    /// at most `2 eta` in L1 away from what it was shown.
    pub fn threshold(&self) -> f64 {
        self.params.epsilon + 2.0 * self.eta.eta()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial_index: usize,
    pub sup_error: f64,
    pub failed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

/// The sample-size formula as resolved for this run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FormulaEcho {
    pub bound: Option<BoundKind>,
    pub mode: BoundMode,
    pub constant: f64,
    /// Calculator output before any override or clipping.
    pub computed_size: Option<u64>,
    /// Size actually used per context / per query / per coreset.
    pub used_size: u64,
    pub formula_text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub size: u64,
    pub median_error: f64,
    pub errors: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub points: Vec<SweepPoint>,
    /// Least-squares slope of ln(median error) against ln(size).
    pub log_log_slope: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub config: ExperimentConfig,
    pub formula: FormulaEcho,
    pub threshold: f64,
    pub trials: usize,
    pub failures: usize,
    pub failure_rate: f64,
    pub delta_target: f64,
    pub ci_halfwidth: f64,
    pub pass: bool,
    pub median_sup_error: f64,
    pub max_sup_error: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSummary>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
    pub per_trial: Vec<TrialResult>,
}

/// `1.96 * sqrt(r (1 - r) / n)`.
pub fn ci_halfwidth(rate: f64, trials: usize) -> f64 {
    Z_95 * (rate * (1.0 - rate) / trials as f64).sqrt()
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Least-squares slope of `ln y` on `ln x`; `None` with fewer than two
/// points or any non-positive value.
pub fn log_log_slope(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() || xs.len() < 2 || xs.iter().chain(ys).any(|v| !(*v > 0.0)) {
        return None;
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

impl BoundReport {
    pub(crate) fn assemble(
        config: &ExperimentConfig,
        formula: FormulaEcho,
        per_trial: Vec<TrialResult>,
        sweep: Option<SweepSummary>,
        notes: Vec<String>,
    ) -> Self {
        let trials = per_trial.len();
        let failures = per_trial.iter().filter(|t| t.failed).count();
        let failure_rate = failures as f64 / trials as f64;
        let ci = ci_halfwidth(failure_rate, trials);
        let delta = config.params.delta;
        let errors: Vec<f64> = per_trial.iter().map(|t| t.sup_error).collect();
        Self {
            config: config.clone(),
            formula,
            threshold: config.threshold(),
            trials,
            failures,
            failure_rate,
            delta_target: delta,
            ci_halfwidth: ci,
            pass: failure_rate <= delta + ci,
            median_sup_error: median(&errors),
            max_sup_error: errors.iter().copied().fold(0.0, f64::max),
            sweep,
            notes,
            per_trial,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["trial_index", "sup_error", "failed"])?;
        for t in &self.per_trial {
            w.write_record([
                t.trial_index.to_string(),
                t.sup_error.to_string(),
                t.failed.to_string(),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| LabError::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    /// Writes `path` (JSON) and the same path with a `.csv` extension.
    /// Returns the CSV path.
    pub fn write(&self, path: &Path) -> Result<PathBuf> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, self.to_json()?)?;
        let csv_path = path.with_extension("csv");
        fs::write(&csv_path, self.to_csv()?)?;
        Ok(csv_path)
    }
}

/// Worker count from [`THREADS_ENV`], if set to a positive integer.
pub fn threads_from_env() -> Option<usize> {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
}

/// Runs the experiment selected by `cfg.kind`, with the worker count from
/// [`THREADS_ENV`] when set.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<BoundReport> {
    run_experiment_with_threads(cfg, threads_from_env())
}

/// Runs the experiment on a pool of `threads` workers (rayon's default when
/// `None`). The report does not depend on the worker count.
pub fn run_experiment_with_threads(cfg: &ExperimentConfig, threads: Option<usize>) -> Result<BoundReport> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| LabError::param(format!("thread pool: {e}")))?;
    pool.install(|| match cfg.kind {
        ExperimentKind::Textgen => run_textgen_experiment(cfg),
        ExperimentKind::BoundedTextgen => run_bounded_textgen_experiment(cfg),
        ExperimentKind::Coreset => run_coreset_experiment(cfg),
        ExperimentKind::Knn => run_knn_experiment(cfg),
        ExperimentKind::SubsetPenalty => run_subset_penalty_experiment(cfg),
    })
}
