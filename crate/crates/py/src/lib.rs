//! Python bindings: the calculators, distributions, prompt helpers, logistic
//! trainer and experiment runner of `icl_lab`.
//!
//! Experiment configs and reports cross the boundary as JSON strings, in the
//! same schema the command line reads and writes.

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use icl_lab::bounds::{self, BoundMode, BoundParams};
use icl_lab::classify::{self, LabeledDataset, LabeledPoint, LinearModel, TrainConfig};
use icl_lab::dist::{self, Categorical as CoreCategorical, Vocabulary};
use icl_lab::harness::{self, ExperimentConfig};
use icl_lab::prompt::{self, ExamplePair, PromptConfig};
use icl_lab::rng::seeded;
use icl_lab::LabError;

fn to_py(e: LabError) -> PyErr {
    if e.is_io() {
        PyIOError::new_err(e.to_string())
    } else {
        PyValueError::new_err(e.to_string())
    }
}

fn parse_mode(mode: &str) -> PyResult<BoundMode> {
    match mode.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
        "bigo" => Ok(BoundMode::BigO),
        "exact" => Ok(BoundMode::Exact),
        other => Err(PyValueError::new_err(format!("mode must be 'bigo' or 'exact', got {other:?}"))),
    }
}

/// Output of the text-generation calculator.
#[pyclass(name = "BoundResult", frozen, get_all)]
struct PyBoundResult {
    mode: String,
    constant: f64,
    per_context: u64,
    total: u64,
    formula_text: String,
}

#[pymethods]
impl PyBoundResult {
    fn __repr__(&self) -> String {
        format!(
            "BoundResult(mode={:?}, per_context={}, total={})",
            self.mode, self.per_context, self.total
        )
    }
}

#[pyfunction]
#[pyo3(signature = (vocab_size, contexts, epsilon, delta, mode = "bigo", constant = 1.0))]
fn textgen_samples_per_context(
    vocab_size: u64,
    contexts: u64,
    epsilon: f64,
    delta: f64,
    mode: &str,
    constant: f64,
) -> PyResult<PyBoundResult> {
    let params = BoundParams {
        vocab_size,
        contexts,
        epsilon,
        delta,
        constant,
        ..Default::default()
    };
    let r = bounds::textgen_samples_per_context(&params, parse_mode(mode)?).map_err(to_py)?;
    Ok(PyBoundResult {
        mode: r.mode.to_string(),
        constant: r.constant,
        per_context: r.per_context,
        total: r.total,
        formula_text: r.formula_text,
    })
}

#[pyfunction]
#[pyo3(signature = (dim, epsilon, constant = 1.0))]
fn coreset_size(dim: u64, epsilon: f64, constant: f64) -> PyResult<u64> {
    let params = BoundParams {
        dim,
        epsilon,
        constant,
        ..Default::default()
    };
    bounds::coreset_size(&params).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (epsilon, delta, constant = 1.0))]
fn knn_context_size(epsilon: f64, delta: f64, constant: f64) -> PyResult<u64> {
    let params = BoundParams {
        epsilon,
        delta,
        constant,
        ..Default::default()
    };
    bounds::knn_context_size(&params).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (vocab_size, length, epsilon, delta, constant = 1.0))]
fn bounded_textgen_size(vocab_size: u64, length: u64, epsilon: f64, delta: f64, constant: f64) -> PyResult<u64> {
    let params = BoundParams {
        vocab_size,
        length,
        epsilon,
        delta,
        constant,
        ..Default::default()
    };
    bounds::bounded_textgen_size(&params).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (size, constant = 1.0))]
fn subset_penalty(size: u64, constant: f64) -> PyResult<f64> {
    bounds::subset_penalty(size, constant).map_err(to_py)
}

/// A validated probability vector.
#[pyclass(name = "Categorical", frozen)]
struct PyCategorical {
    inner: CoreCategorical,
}

#[pymethods]
impl PyCategorical {
    #[new]
    fn new(probs: Vec<f64>) -> PyResult<Self> {
        Ok(Self {
            inner: CoreCategorical::new(probs).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn uniform(size: usize) -> PyResult<Self> {
        Ok(Self {
            inner: CoreCategorical::uniform(size).map_err(to_py)?,
        })
    }

    #[getter]
    fn probs(&self) -> Vec<f64> {
        self.inner.probs().to_vec()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn l1_distance(&self, other: &PyCategorical) -> PyResult<f64> {
        self.inner.l1_distance(&other.inner).map_err(to_py)
    }

    fn tv_distance(&self, other: &PyCategorical) -> PyResult<f64> {
        self.inner.tv_distance(&other.inner).map_err(to_py)
    }

    /// `n` token indices drawn with a generator seeded by `seed`.
    fn sample(&self, n: usize, seed: u64) -> PyResult<Vec<usize>> {
        dist::sample_tokens(&self.inner, n, &mut seeded(seed)).map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!("Categorical({:?})", self.inner.probs())
    }
}

#[pyfunction]
fn l1_distance(p: Vec<f64>, q: Vec<f64>) -> PyResult<f64> {
    let p = CoreCategorical::new(p).map_err(to_py)?;
    let q = CoreCategorical::new(q).map_err(to_py)?;
    dist::l1_distance(&p, &q).map_err(to_py)
}

#[pyfunction]
fn empirical_distribution(samples: Vec<usize>, vocab_size: usize) -> PyResult<PyCategorical> {
    let vocab = Vocabulary::indexed(vocab_size).map_err(to_py)?;
    Ok(PyCategorical {
        inner: dist::empirical_distribution(&samples, &vocab).map_err(to_py)?,
    })
}

fn pairs_from(pairs: Vec<(String, String)>) -> Vec<ExamplePair> {
    pairs.into_iter().map(|(i, o)| ExamplePair::new(i, o)).collect()
}

#[pyfunction]
#[pyo3(signature = (pairs, query, separator = "[SEP]", joiner = " ", trailing_separator = true))]
fn build_prompt(
    pairs: Vec<(String, String)>,
    query: &str,
    separator: &str,
    joiner: &str,
    trailing_separator: bool,
) -> PyResult<String> {
    let cfg = PromptConfig {
        separator: separator.to_string(),
        pair_joiner: joiner.to_string(),
        trailing_separator_before_query: trailing_separator,
    };
    prompt::build_prompt(&pairs_from(pairs), query, &cfg).map_err(to_py)
}

#[pyfunction]
fn cosine_similarity(a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
    prompt::cosine_similarity(&a, &b).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (text, dim = 1024))]
fn embed_text(text: &str, dim: usize) -> PyResult<Vec<f64>> {
    prompt::embed_text(text, dim).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (pairs, query, k, dim = 1024))]
fn similarity_select(pairs: Vec<(String, String)>, query: &str, k: usize, dim: usize) -> PyResult<Vec<(String, String)>> {
    let chosen = prompt::similarity_select(&pairs_from(pairs), query, k, dim).map_err(to_py)?;
    Ok(chosen.into_iter().map(|p| (p.input_text, p.output_text)).collect())
}

fn dataset(xs: Vec<Vec<f64>>, ys: Vec<u8>) -> PyResult<LabeledDataset> {
    if xs.len() != ys.len() {
        return Err(PyValueError::new_err(format!(
            "got {} points but {} labels",
            xs.len(),
            ys.len()
        )));
    }
    let points = xs
        .into_iter()
        .zip(ys)
        .map(|(x, y)| LabeledPoint::new(x, y))
        .collect::<Result<Vec<_>, _>>()
        .map_err(to_py)?;
    LabeledDataset::new(points).map_err(to_py)
}

/// Fits a logistic model; returns `(weights, bias)`.
#[pyfunction]
#[pyo3(signature = (xs, ys, learning_rate = 1.0, max_iters = 2000, grad_tolerance = 1e-7, l2_reg = 1e-3))]
fn train_logistic(
    xs: Vec<Vec<f64>>,
    ys: Vec<u8>,
    learning_rate: f64,
    max_iters: usize,
    grad_tolerance: f64,
    l2_reg: f64,
) -> PyResult<(Vec<f64>, f64)> {
    let cfg = TrainConfig {
        learning_rate,
        max_iters,
        grad_tolerance,
        l2_reg,
    };
    let m = classify::train_logistic(&dataset(xs, ys)?, &cfg).map_err(to_py)?;
    Ok((m.weights, m.bias))
}

#[pyfunction]
fn predict_prob(weights: Vec<f64>, bias: f64, x: Vec<f64>) -> PyResult<f64> {
    classify::predict_prob(&LinearModel { weights, bias }, &x).map_err(to_py)
}

/// Indices of the `k` nearest points to `query`, nearest first.
#[pyfunction]
fn knn_indices(xs: Vec<Vec<f64>>, query: Vec<f64>, k: usize) -> PyResult<Vec<usize>> {
    let ys = vec![0; xs.len()];
    classify::knn_indices(&dataset(xs, ys)?, &query, k).map_err(to_py)
}

/// Runs an experiment from its JSON config and returns the JSON report.
/// The interpreter lock is released while trials run.
#[pyfunction]
#[pyo3(signature = (config_json, threads = None))]
fn run_experiment(py: Python<'_>, config_json: &str, threads: Option<usize>) -> PyResult<String> {
    let cfg: ExperimentConfig =
        serde_json::from_str(config_json).map_err(|e| PyValueError::new_err(format!("config: {e}")))?;
    let threads = threads.or_else(harness::threads_from_env);
    let report = py
        .detach(|| harness::run_experiment_with_threads(&cfg, threads))
        .map_err(to_py)?;
    report.to_json().map_err(to_py)
}

#[pymodule]
#[pyo3(name = "icl_lab")]
fn icl_lab_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyBoundResult>()?;
    m.add_class::<PyCategorical>()?;
    m.add_function(wrap_pyfunction!(textgen_samples_per_context, m)?)?;
    m.add_function(wrap_pyfunction!(coreset_size, m)?)?;
    m.add_function(wrap_pyfunction!(knn_context_size, m)?)?;
    m.add_function(wrap_pyfunction!(bounded_textgen_size, m)?)?;
    m.add_function(wrap_pyfunction!(subset_penalty, m)?)?;
    m.add_function(wrap_pyfunction!(l1_distance, m)?)?;
    m.add_function(wrap_pyfunction!(empirical_distribution, m)?)?;
    m.add_function(wrap_pyfunction!(build_prompt, m)?)?;
    m.add_function(wrap_pyfunction!(cosine_similarity, m)?)?;
    m.add_function(wrap_pyfunction!(embed_text, m)?)?;
    m.add_function(wrap_pyfunction!(similarity_select, m)?)?;
    m.add_function(wrap_pyfunction!(train_logistic, m)?)?;
    m.add_function(wrap_pyfunction!(predict_prob, m)?)?;
    m.add_function(wrap_pyfunction!(knn_indices, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mode_names() {
        assert!(matches!(parse_mode("bigo"), Ok(BoundMode::BigO)));
        assert!(matches!(parse_mode("big_o"), Ok(BoundMode::BigO)));
        assert!(matches!(parse_mode("Exact"), Ok(BoundMode::Exact)));
    }
}
