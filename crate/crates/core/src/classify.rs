//! Binary logistic regression trained by full-batch gradient descent, subset
//! selection (coresets and k nearest neighbours), and the sup-norm gap between
//! two classifiers' predicted probabilities.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{LabError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledPoint {
    pub x: Vec<f64>,
    /// 0 or 1.
    pub y: u8,
}

impl LabeledPoint {
    pub fn new(x: Vec<f64>, y: u8) -> Result<Self> {
        if y > 1 {
            return Err(LabError::param(format!("label must be 0 or 1, got {y}")));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(LabError::param("point coordinates must be finite"));
        }
        Ok(Self { x, y })
    }

    /// Label as `-1` / `+1`.
    fn sign(&self) -> f64 {
        if self.y == 1 {
            1.0
        } else {
            -1.0
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledDataset {
    points: Vec<LabeledPoint>,
    dim: usize,
}

impl LabeledDataset {
    pub fn new(points: Vec<LabeledPoint>) -> Result<Self> {
        let first = points.first().ok_or(LabError::EmptyInput("dataset"))?;
        let dim = first.x.len();
        if dim == 0 {
            return Err(LabError::param("points must have at least one coordinate"));
        }
        if let Some(p) = points.iter().find(|p| p.x.len() != dim) {
            return Err(LabError::Dimension {
                expected: dim,
                got: p.x.len(),
            });
        }
        Ok(Self { points, dim })
    }

    pub fn points(&self) -> &[LabeledPoint] {
        &self.points
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// True when every label is the same; subset guarantees are vacuous then.
    pub fn is_single_class(&self) -> bool {
        let y0 = self.points[0].y;
        self.points.iter().all(|p| p.y == y0)
    }

    /// Points at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let points = indices
            .iter()
            .map(|&i| {
                self.points.get(i).cloned().ok_or(LabError::IndexOutOfRange {
                    index: i,
                    size: self.points.len(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(points)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LinearModel {
    pub fn zeros(dim: usize) -> Self {
        Self {
            weights: vec![0.0; dim],
            bias: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn logit(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.weights.len() {
            return Err(LabError::Dimension {
                expected: self.weights.len(),
                got: x.len(),
            });
        }
        Ok(dot(&self.weights, x) + self.bias)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Overflow-free logistic function.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^{-t})` without overflow.
fn log1p_exp_neg(t: f64) -> f64 {
    (-t).max(0.0) + (-t.abs()).exp().ln_1p()
}

/// `P(y = 1 | x) = sigmoid(w.x + b)`.
pub fn predict_prob(model: &LinearModel, x: &[f64]) -> Result<f64> {
    Ok(sigmoid(model.logit(x)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub max_iters: usize,
    pub grad_tolerance: f64,
    /// Ridge penalty `l2_reg / 2 * |w|^2`; the bias is not penalized.
    pub l2_reg: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1.0,
            max_iters: 2000,
            grad_tolerance: 1e-7,
            l2_reg: 1e-3,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(LabError::param("learning_rate must be positive"));
        }
        if !(self.grad_tolerance.is_finite() && self.grad_tolerance > 0.0) {
            return Err(LabError::param("grad_tolerance must be positive"));
        }
        if !(self.l2_reg.is_finite() && self.l2_reg >= 0.0) {
            return Err(LabError::param("l2_reg must be non-negative"));
        }
        Ok(())
    }
}

/// Mean logistic loss `1/N Σ ln(1 + exp(-s_i (w.x_i + b)))` with labels
/// mapped to `s_i ∈ {-1, +1}`, plus the ridge term, and its gradient
/// `(∂/∂w, ∂/∂b)`.
pub fn loss_and_gradient(
    model: &LinearModel,
    data: &LabeledDataset,
    l2_reg: f64,
) -> Result<(f64, Vec<f64>, f64)> {
    if model.dim() != data.dim() {
        return Err(LabError::Dimension {
            expected: data.dim(),
            got: model.dim(),
        });
    }
    let n = data.len() as f64;
    let mut loss = 0.0;
    let mut grad_w = vec![0.0; data.dim()];
    let mut grad_b = 0.0;
    for p in data.points() {
        let s = p.sign();
        let margin = s * (dot(&model.weights, &p.x) + model.bias);
        loss += log1p_exp_neg(margin);
        // d/dz ln(1 + e^{-s z}) = -s * sigmoid(-s z)
        let g = -s * sigmoid(-margin);
        for (gw, xi) in grad_w.iter_mut().zip(&p.x) {
            *gw += g * xi;
        }
        grad_b += g;
    }
    loss /= n;
    grad_b /= n;
    for (gw, w) in grad_w.iter_mut().zip(&model.weights) {
        *gw = *gw / n + l2_reg * w;
    }
    loss += 0.5 * l2_reg * dot(&model.weights, &model.weights);
    Ok((loss, grad_w, grad_b))
}

pub fn loss(model: &LinearModel, data: &LabeledDataset, l2_reg: f64) -> Result<f64> {
    loss_and_gradient(model, data, l2_reg).map(|(l, _, _)| l)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainTrace {
    pub model: LinearModel,
    /// Loss after each accepted step, starting with the initial loss.
    pub losses: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub final_learning_rate: f64,
}

impl TrainTrace {
    pub fn initial_loss(&self) -> f64 {
        self.losses[0]
    }

    pub fn final_loss(&self) -> f64 {
        *self.losses.last().unwrap()
    }
}

const MAX_HALVINGS: usize = 30;

/// Gradient descent from `w = 0, b = 0`. A step that would raise the loss is
/// retried with the learning rate halved (at most 30 times); the reduced rate
/// carries over to later iterations. Stops when the gradient norm drops below
/// `grad_tolerance`, after `max_iters` steps, or when no halving helps.
pub fn train_logistic_traced(data: &LabeledDataset, cfg: &TrainConfig) -> Result<TrainTrace> {
    cfg.validate()?;
    let mut model = LinearModel::zeros(data.dim());
    let (mut current, mut gw, mut gb) = loss_and_gradient(&model, data, cfg.l2_reg)?;
    let mut losses = vec![current];
    let mut lr = cfg.learning_rate;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < cfg.max_iters {
        let grad_norm = (dot(&gw, &gw) + gb * gb).sqrt();
        if grad_norm < cfg.grad_tolerance {
            converged = true;
            break;
        }
        iterations += 1;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let candidate = LinearModel {
                weights: model.weights.iter().zip(&gw).map(|(w, g)| w - lr * g).collect(),
                bias: model.bias - lr * gb,
            };
            let next = loss_and_gradient(&candidate, data, cfg.l2_reg)?;
            if !next.0.is_finite() {
                return Err(LabError::Divergence { iteration: iterations });
            }
            if next.0 <= current {
                accepted = Some((candidate, next));
                break;
            }
            lr /= 2.0;
        }
        match accepted {
            Some((m, (l, w, b))) => {
                model = m;
                current = l;
                gw = w;
                gb = b;
                losses.push(current);
            }
            // No descent direction at floating-point resolution.
            None => {
                converged = true;
                break;
            }
        }
    }

    Ok(TrainTrace {
        model,
        losses,
        iterations,
        converged,
        final_learning_rate: lr,
    })
}

pub fn train_logistic(data: &LabeledDataset, cfg: &TrainConfig) -> Result<LinearModel> {
    train_logistic_traced(data, cfg).map(|t| t.model)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoresetStrategy {
    #[default]
    Uniform,
    /// Importance sampling with weight `1 + |x| * proximity`, where proximity
    /// is `1 / (1 + dist)` to the hyperplane bisecting the two class means.
    Sensitivity,
}

/// Importance weights used by [`CoresetStrategy::Sensitivity`].
pub fn sensitivity_scores(data: &LabeledDataset) -> Vec<f64> {
    let d = data.dim();
    let mut means = [vec![0.0; d], vec![0.0; d]];
    let mut counts = [0usize; 2];
    for p in data.points() {
        let c = p.y as usize;
        counts[c] += 1;
        for (m, x) in means[c].iter_mut().zip(&p.x) {
            *m += x;
        }
    }
    let reference = if counts[0] > 0 && counts[1] > 0 {
        for (c, m) in means.iter_mut().enumerate() {
            m.iter_mut().for_each(|v| *v /= counts[c] as f64);
        }
        let w: Vec<f64> = means[1].iter().zip(&means[0]).map(|(a, b)| a - b).collect();
        let wn = norm(&w);
        (wn > 0.0).then(|| {
            let mid: Vec<f64> = means[1].iter().zip(&means[0]).map(|(a, b)| (a + b) / 2.0).collect();
            let b = -dot(&w, &mid);
            (w, b, wn)
        })
    } else {
        None
    };
    data.points()
        .iter()
        .map(|p| {
            let proximity = match &reference {
                Some((w, b, wn)) => 1.0 / (1.0 + ((dot(w, &p.x) + b) / wn).abs()),
                None => 1.0,
            };
            1.0 + norm(&p.x) * proximity
        })
        .collect()
}

/// Subset of `size` distinct points, returned in dataset order.
pub fn select_coreset<R: Rng + ?Sized>(
    data: &LabeledDataset,
    size: usize,
    strategy: CoresetStrategy,
    rng: &mut R,
) -> Result<LabeledDataset> {
    let n = data.len();
    if size == 0 || size > n {
        return Err(LabError::param(format!(
            "coreset size must be in [1, {n}], got {size}"
        )));
    }
    if size == n {
        return Ok(data.clone());
    }
    let mut picked = match strategy {
        CoresetStrategy::Uniform => index::sample(rng, n, size).into_vec(),
        CoresetStrategy::Sensitivity => {
            let scores = sensitivity_scores(data);
            index::sample_weighted(rng, n, |i| scores[i], size)
                .map_err(|e| LabError::param(format!("weighted sampling failed: {e}")))?
                .into_vec()
        }
    };
    picked.sort_unstable();
    data.subset(&picked)
}

/// Indices of the `k` points nearest to `query` in Euclidean distance,
/// nearest first; equal distances go to the lower index.
pub fn knn_indices(data: &LabeledDataset, query: &[f64], k: usize) -> Result<Vec<usize>> {
    let n = data.len();
    if k == 0 || k > n {
        return Err(LabError::param(format!("k must be in [1, {n}], got {k}")));
    }
    if query.len() != data.dim() {
        return Err(LabError::Dimension {
            expected: data.dim(),
            got: query.len(),
        });
    }
    let mut keyed: Vec<(f64, usize)> = data
        .points()
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let d2: f64 = p.x.iter().zip(query).map(|(a, b)| (a - b) * (a - b)).sum();
            (d2, i)
        })
        .collect();
    let by_key = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < n {
        keyed.select_nth_unstable_by(k - 1, by_key);
        keyed.truncate(k);
    }
    keyed.sort_unstable_by(by_key);
    Ok(keyed.into_iter().map(|(_, i)| i).collect())
}

pub fn knn_select(data: &LabeledDataset, query: &[f64], k: usize) -> Result<LabeledDataset> {
    data.subset(&knn_indices(data, query, k)?)
}

/// `max_x |sigmoid(a.x + a_b) - sigmoid(b.x + b_b)|` over `eval_points`, a
/// lower bound on the supremum over all of `R^d`.
pub fn sup_prob_error(a: &LinearModel, b: &LinearModel, eval_points: &[Vec<f64>]) -> Result<f64> {
    if eval_points.is_empty() {
        return Err(LabError::EmptyInput("evaluation points"));
    }
    eval_points.iter().try_fold(0.0f64, |acc, x| {
        Ok(acc.max((predict_prob(a, x)? - predict_prob(b, x)?).abs()))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn ds(points: &[(&[f64], u8)]) -> LabeledDataset {
        LabeledDataset::new(
            points
                .iter()
                .map(|(x, y)| LabeledPoint::new(x.to_vec(), *y).unwrap())
                .collect(),
        )
        .unwrap()
    }

    fn random_dataset(n: usize, d: usize, seed: u64) -> LabeledDataset {
        let mut rng = seeded(seed);
        LabeledDataset::new(
            (0..n)
                .map(|_| {
                    let x: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
                    let y = u8::from(rng.random::<f64>() < sigmoid(x[0] - 0.5 * x[d - 1]));
                    LabeledPoint::new(x, y).unwrap()
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn sigmoid_examples() {
        let zero = LinearModel::zeros(2);
        assert_eq!(predict_prob(&zero, &[3.0, -1.0]).unwrap(), 0.5);
        let m = LinearModel { weights: vec![1.0], bias: 0.0 };
        assert!((predict_prob(&m, &[3f64.ln()]).unwrap() - 0.75).abs() < 1e-15);
        assert!((predict_prob(&m, &[1000.0]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(predict_prob(&m, &[-1000.0]).unwrap(), 0.0);
        assert!(predict_prob(&m, &[1.0, 2.0]).is_err());
    }

    #[test]
    fn dataset_validation() {
        assert!(LabeledPoint::new(vec![1.0], 2).is_err());
        assert!(LabeledPoint::new(vec![f64::INFINITY], 1).is_err());
        assert!(LabeledDataset::new(vec![]).is_err());
        let mixed = vec![
            LabeledPoint::new(vec![1.0], 0).unwrap(),
            LabeledPoint::new(vec![1.0, 2.0], 1).unwrap(),
        ];
        assert!(matches!(
            LabeledDataset::new(mixed),
            Err(LabError::Dimension { expected: 1, got: 2 })
        ));
    }

    #[test]
    fn separable_points_are_classified() {
        let data = ds(&[(&[-1.0], 0), (&[1.0], 1)]);
        let cfg = TrainConfig { l2_reg: 1e-3, ..Default::default() };
        let m = train_logistic(&data, &cfg).unwrap();
        assert!(predict_prob(&m, &[-1.0]).unwrap() < 0.5);
        assert!(predict_prob(&m, &[1.0]).unwrap() > 0.5);
    }

    #[test]
    fn symmetric_data_gives_zero_bias() {
        let data = ds(&[
            (&[-2.0, 0.5], 0),
            (&[2.0, -0.5], 1),
            (&[-0.5, 1.0], 1),
            (&[0.5, -1.0], 0),
            (&[-1.0, -1.5], 0),
            (&[1.0, 1.5], 1),
        ]);
        let m = train_logistic(&data, &TrainConfig::default()).unwrap();
        assert!(m.bias.abs() < 1e-6, "bias {}", m.bias);
    }

    #[test]
    fn zero_iterations_returns_initialization() {
        let data = random_dataset(20, 3, 1);
        let cfg = TrainConfig { max_iters: 0, ..Default::default() };
        assert_eq!(train_logistic(&data, &cfg).unwrap(), LinearModel::zeros(3));
    }

    #[test]
    fn loss_never_increases() {
        let data = random_dataset(200, 4, 2);
        // A deliberately oversized step forces the halving path.
        let cfg = TrainConfig { learning_rate: 50.0, max_iters: 300, ..Default::default() };
        let t = train_logistic_traced(&data, &cfg).unwrap();
        assert!(t.losses.windows(2).all(|w| w[1] <= w[0]));
        assert!(t.final_loss() <= t.initial_loss());
        assert!(t.final_learning_rate < 50.0);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let data = random_dataset(50, 3, 3);
        let model = LinearModel { weights: vec![0.3, -0.7, 1.1], bias: 0.2 };
        let l2 = 0.05;
        let (_, gw, gb) = loss_and_gradient(&model, &data, l2).unwrap();
        let h = 1e-5;
        for j in 0..=3 {
            let bump = |delta: f64| {
                let mut m = model.clone();
                if j < 3 {
                    m.weights[j] += delta;
                } else {
                    m.bias += delta;
                }
                loss(&m, &data, l2).unwrap()
            };
            let fd = (bump(h) - bump(-h)) / (2.0 * h);
            let an = if j < 3 { gw[j] } else { gb };
            assert!((fd - an).abs() <= 1e-5 * an.abs().max(1e-3), "coord {j}: {fd} vs {an}");
        }
    }

    #[test]
    fn coreset_edge_cases() {
        let data = random_dataset(30, 2, 4);
        for s in [CoresetStrategy::Uniform, CoresetStrategy::Sensitivity] {
            assert_eq!(select_coreset(&data, 30, s, &mut seeded(0)).unwrap(), data);
            assert!(select_coreset(&data, 31, s, &mut seeded(0)).is_err());
            assert!(select_coreset(&data, 0, s, &mut seeded(0)).is_err());
            let a = select_coreset(&data, 1, s, &mut seeded(9)).unwrap();
            let b = select_coreset(&data, 1, s, &mut seeded(9)).unwrap();
            assert_eq!(a, b);
            assert_eq!(a.len(), 1);
            let c = select_coreset(&data, 12, s, &mut seeded(9)).unwrap();
            assert_eq!(c.len(), 12);
            let mut xs: Vec<_> = c.points().iter().map(|p| format!("{:?}", p.x)).collect();
            xs.dedup();
            assert_eq!(xs.len(), 12);
        }
    }

    #[test]
    fn sensitivity_favours_points_near_the_boundary() {
        let data = ds(&[(&[-3.0], 0), (&[-0.1], 0), (&[0.1], 1), (&[3.0], 1)]);
        let s = sensitivity_scores(&data);
        // |x| * 1/(1+dist): 3/4, 0.1/1.1, 0.1/1.1, 3/4
        assert!((s[0] - 1.75).abs() < 1e-12 && (s[1] - (1.0 + 0.1 / 1.1)).abs() < 1e-12);
        let single = ds(&[(&[2.0], 1), (&[1.0], 1)]);
        assert_eq!(sensitivity_scores(&single), vec![3.0, 2.0]);
        assert!(single.is_single_class());
    }

    #[test]
    fn knn_examples() {
        let data = ds(&[(&[3.0, 0.0], 0), (&[0.0, 1.0], 1), (&[-2.0, 0.0], 0)]);
        let got = knn_select(&data, &[0.0, 0.0], 2).unwrap();
        assert_eq!(got.points()[0].x, vec![0.0, 1.0]);
        assert_eq!(got.points()[1].x, vec![-2.0, 0.0]);
        assert_eq!(knn_select(&data, &[0.0, 0.0], 3).unwrap().len(), 3);
        assert!(knn_select(&data, &[0.0, 0.0], 4).is_err());
        assert!(knn_select(&data, &[0.0], 1).is_err());

        let dupes = ds(&[(&[5.0], 0), (&[1.0], 0), (&[1.0], 1), (&[-1.0], 1)]);
        assert_eq!(knn_indices(&dupes, &[0.0], 1).unwrap(), vec![1]);
        assert_eq!(knn_indices(&dupes, &[0.0], 3).unwrap(), vec![1, 2, 3]);
    }

    #[test]
    fn sup_error_examples() {
        let a = LinearModel { weights: vec![1.0, -1.0], bias: 0.3 };
        let pts = vec![vec![0.0, 1.0], vec![2.0, 2.0]];
        assert_eq!(sup_prob_error(&a, &a, &pts).unwrap(), 0.0);

        let b = LinearModel { bias: a.bias + 9f64.ln(), ..a.clone() };
        // a.x + b_a = -ln 3 at x = (0, ln 3 + 0.3)
        let x = vec![vec![0.0, 3f64.ln() + 0.3]];
        assert!((sup_prob_error(&a, &b, &x).unwrap() - 0.5).abs() < 1e-12);
        assert!(sup_prob_error(&a, &b, &[]).is_err());
    }

    #[test]
    fn sup_error_grows_with_the_evaluation_set() {
        let mut rng = seeded(5);
        let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
        let a = LinearModel { weights: (0..3).map(|_| normal()).collect(), bias: normal() };
        let b = LinearModel { weights: (0..3).map(|_| normal()).collect(), bias: normal() };
        let pts: Vec<Vec<f64>> = (0..10_000).map(|_| (0..3).map(|_| normal()).collect()).collect();
        let full = sup_prob_error(&a, &b, &pts).unwrap();
        for chunk in pts.chunks(100).take(20) {
            assert!(sup_prob_error(&a, &b, chunk).unwrap() <= full);
        }
        assert!((0.0..1.0).contains(&full));
    }

    proptest! {
        #[test]
        fn knn_is_order_invariant(
            coords in proptest::collection::vec((-5i32..5, -5i32..5), 1..40),
            k_frac in 0.0f64..1.0,
            seed in any::<u64>(),
        ) {
            // Distinct points, so the tie rule never applies.
            let mut uniq = coords.clone();
            uniq.sort();
            uniq.dedup();
            let pts: Vec<LabeledPoint> = uniq
                .iter()
                .map(|&(a, b)| LabeledPoint::new(vec![a as f64 + 0.1 * b as f64, b as f64], 0).unwrap())
                .collect();
            let k = 1 + ((pts.len() - 1) as f64 * k_frac) as usize;
            let data = LabeledDataset::new(pts.clone()).unwrap();
            let mut shuffled = pts;
            use rand::seq::SliceRandom;
            shuffled.shuffle(&mut seeded(seed));
            let sdata = LabeledDataset::new(shuffled).unwrap();
            let q = [0.37, -0.21];
            let key = |d: &LabeledDataset| {
                let mut v: Vec<String> = d.points().iter().map(|p| format!("{:?}", p.x)).collect();
                v.sort();
                v
            };
            prop_assert_eq!(key(&knn_select(&data, &q, k).unwrap()), key(&knn_select(&sdata, &q, k).unwrap()));
        }
    }
}
