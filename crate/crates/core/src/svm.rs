//! Multiclass linear SVM, one-vs-rest, trained with a seeded stochastic
//! subgradient solver.
//!
//! Each binary subproblem minimizes
//!
//! ```text
//! J(w, b) = (lambda / 2) * |w|^2 + (1 / n) * sum_i c_i * max(0, 1 - s_i * (w . x_i + b))
//! ```
//!
//! with `s_i = +1` for the positive class and `-1` otherwise, and `c_i = 1`
//! unless class balancing is requested. The bias is not regularized.
//!
//! The solver runs Pegasos steps (`eta_t = 1 / (lambda * t)`, projection onto
//! the ball that must contain the optimum) over a fresh seeded permutation
//! each epoch and keeps a polynomial-decay average of the weight iterates,
//! which behaves like suffix averaging without storing the trajectory. The
//! bias takes unregularized stochastic steps scaled by the mean squared row
//! norm, clipped to the interval that must contain the optimal bias, and at
//! every epoch checkpoint it is re-solved exactly for the averaged weights (the
//! one-dimensional hinge problem is piecewise linear). A checkpoint replaces
//! the retained solution only if it lowers `J`, so the retained objective
//! never increases.
//!
//! All binary problems of one model share the same sampling sequence. With
//! two classes this makes the second problem an exact mirror of the first.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SvmError {
    #[error("training error: {0}")]
    Train(String),
    #[error("input error: {0}")]
    Input(String),
    #[error("shape error: expected dimension {expected}, got {actual}")]
    Shape { expected: usize, actual: usize },
    #[error("model file error: {0}")]
    Format(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassWeight {
    /// Every sample weighs 1.
    #[default]
    Uniform,
    /// Positives and negatives of each binary problem carry equal total weight.
    Balanced,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmConfig {
    pub lambda: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Relative objective change between consecutive checkpoints below which
    /// a binary problem is reported as converged.
    pub tolerance: f64,
    #[serde(default)]
    pub class_weight: ClassWeight,
}

impl Default for SvmConfig {
    fn default() -> Self {
        Self {
            lambda: 1e-2,
            epochs: 30,
            seed: 0,
            tolerance: 1e-3,
            class_weight: ClassWeight::Uniform,
        }
    }
}

/// Default regularization grid searched on the validation split.
pub const LAMBDA_GRID: [f64; 5] = [1e-4, 1e-3, 1e-2, 1e-1, 1.0];

impl SvmConfig {
    fn validate(&self) -> Result<(), SvmError> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(SvmError::Input(format!("lambda must be > 0, got {}", self.lambda)));
        }
        if self.epochs == 0 {
            return Err(SvmError::Input("epochs must be positive".into()));
        }
        Ok(())
    }
}

/// Solution of one binary subproblem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinaryFit {
    pub weights: Vec<f64>,
    pub bias: f64,
    /// Objective of the retained solution after each epoch.
    pub objective_trace: Vec<f64>,
    /// Objective of the raw averaged checkpoint after each epoch.
    pub checkpoint_trace: Vec<f64>,
    pub converged: bool,
}

impl BinaryFit {
    pub fn objective(&self) -> f64 {
        *self.objective_trace.last().expect("at least one epoch")
    }

    pub fn decision(&self, x: &[f64]) -> f64 {
        dot(&self.weights, x) + self.bias
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    /// Label ids, ascending. Decision column `k` belongs to `classes[k]`.
    pub classes: Vec<usize>,
    /// Optional human-readable names, parallel to `classes`.
    #[serde(default)]
    pub class_names: Vec<String>,
    pub dim: usize,
    pub config: SvmConfig,
    pub fits: Vec<BinaryFit>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub label: usize,
    pub decisions: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `J(w, b)` for one binary problem.
pub fn objective(x: &[Vec<f64>], signs: &[f64], costs: &[f64], lambda: f64, w: &[f64], b: f64) -> f64 {
    let n = x.len() as f64;
    let loss: f64 = x
        .iter()
        .zip(signs)
        .zip(costs)
        .map(|((xi, &s), &c)| c * (1.0 - s * (dot(w, xi) + b)).max(0.0))
        .sum();
    0.5 * lambda * dot(w, w) + loss / n
}

/// Exact minimizer over `b` of the hinge term for fixed margins `m_i = w . x_i`.
///
/// The objective is convex and piecewise linear in `b`; every sample
/// contributes one kink at which the slope rises by its cost. When the slope is
/// exactly zero on an interval the midpoint is returned, which keeps the
/// answer sign-symmetric under `(s, m) -> (-s, -m)`.
pub fn optimal_bias(margins: &[f64], signs: &[f64], costs: &[f64]) -> f64 {
    let mut kinks: Vec<(f64, f64)> = margins
        .iter()
        .zip(signs)
        .zip(costs)
        .map(|((&m, &s), &c)| (s - m, c))
        .collect();
    kinks.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut slope: f64 = -signs
        .iter()
        .zip(costs)
        .filter(|(&s, _)| s > 0.0)
        .map(|(_, &c)| c)
        .sum::<f64>();
    if slope >= 0.0 {
        // no positives: any b at or below the smallest kink is optimal
        return kinks.first().map(|k| k.0).unwrap_or(0.0);
    }
    for (j, &(k, c)) in kinks.iter().enumerate() {
        slope += c;
        if slope > 0.0 {
            return k;
        }
        if slope == 0.0 {
            let next = kinks.get(j + 1).map(|k| k.0).unwrap_or(k);
            return 0.5 * (k + next);
        }
    }
    kinks.last().map(|k| k.0).unwrap_or(0.0)
}

fn sample_costs(signs: &[f64], weighting: ClassWeight) -> Vec<f64> {
    match weighting {
        ClassWeight::Uniform => vec![1.0; signs.len()],
        ClassWeight::Balanced => {
            let n = signs.len() as f64;
            let pos = signs.iter().filter(|&&s| s > 0.0).count() as f64;
            let neg = n - pos;
            signs
                .iter()
                .map(|&s| if s > 0.0 { n / (2.0 * pos) } else { n / (2.0 * neg) })
                .collect()
        }
    }
}

/// Sampling order for every epoch, shared by all binary problems.
fn epoch_orders(n: usize, epochs: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..epochs)
        .map(|_| {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            order
        })
        .collect()
}

/// Decay parameter of the iterate average.
const AVERAGING_DECAY: f64 = 3.0;

fn train_binary_with_orders(
    x: &[Vec<f64>],
    signs: &[f64],
    cfg: &SvmConfig,
    orders: &[Vec<usize>],
) -> BinaryFit {
    let d = x[0].len();
    let lambda = cfg.lambda;
    let costs = sample_costs(signs, cfg.class_weight);
    let max_cost = costs.iter().cloned().fold(0.0, f64::max);
    // |w*|^2 <= 2 J(0, 0) / lambda <= 2 max_cost / lambda
    let radius = (2.0 * max_cost / lambda).sqrt();
    // an optimal bias sits at a kink s_i - w.x_i, so |b*| <= 1 + radius * max|x|
    let max_norm = x.iter().map(|r| dot(r, r)).fold(0.0, f64::max).sqrt();
    let bias_bound = 1.0 + radius * max_norm;

    // The bias acts like a constant feature of typical row norm, so its steps
    // keep pace with the weights instead of lagging by |x|^2.
    let mean_sq = x.iter().map(|r| dot(r, r)).sum::<f64>() / x.len() as f64;
    let bias_gain = mean_sq.max(1.0);

    let mut w = vec![0.0; d];
    let mut b = 0.0;
    let mut w_avg = vec![0.0; d];
    let mut margins = vec![0.0; x.len()];

    let mut best_w = vec![0.0; d];
    let mut best_b = optimal_bias(&margins, signs, &costs);
    let mut best_j = objective(x, signs, &costs, lambda, &best_w, best_b);

    let mut objective_trace = Vec::with_capacity(orders.len());
    let mut checkpoint_trace = Vec::with_capacity(orders.len());
    let mut converged = false;
    let mut t = 0usize;

    for order in orders {
        for &i in order {
            t += 1;
            let eta = 1.0 / (lambda * t as f64);
            let xi = &x[i];
            let s = signs[i];
            let violated = s * (dot(&w, xi) + b) < 1.0;
            let shrink = 1.0 - eta * lambda;
            for wj in w.iter_mut() {
                *wj *= shrink;
            }
            if violated {
                let step = eta * s * costs[i];
                for (wj, &xj) in w.iter_mut().zip(xi) {
                    *wj += step * xj;
                }
                b = (b + step * bias_gain).clamp(-bias_bound, bias_bound);
            }
            let norm = dot(&w, &w).sqrt();
            if norm > radius {
                let f = radius / norm;
                for wj in w.iter_mut() {
                    *wj *= f;
                }
            }
            let rho = (AVERAGING_DECAY + 1.0) / (t as f64 + AVERAGING_DECAY);
            for (a, &wj) in w_avg.iter_mut().zip(&w) {
                *a += rho * (wj - *a);
            }
        }

        for (m, xi) in margins.iter_mut().zip(x) {
            *m = dot(&w_avg, xi);
        }
        let b_avg = optimal_bias(&margins, signs, &costs);
        let j = objective(x, signs, &costs, lambda, &w_avg, b_avg);
        checkpoint_trace.push(j);
        let prev = best_j;
        if j < best_j {
            best_j = j;
            best_w.copy_from_slice(&w_avg);
            best_b = b_avg;
        }
        converged = (prev - best_j).abs() <= cfg.tolerance * best_j.abs().max(f64::MIN_POSITIVE);
        objective_trace.push(best_j);
    }

    BinaryFit {
        weights: best_w,
        bias: best_b,
        objective_trace,
        checkpoint_trace,
        converged,
    }
}

fn validate_inputs(x: &[Vec<f64>], n_labels: usize) -> Result<usize, SvmError> {
    if x.len() < 2 {
        return Err(SvmError::Train(format!("need at least 2 samples, got {}", x.len())));
    }
    if x.len() != n_labels {
        return Err(SvmError::Input(format!(
            "{} samples but {} labels",
            x.len(),
            n_labels
        )));
    }
    let d = x[0].len();
    if d == 0 {
        return Err(SvmError::Input("zero-dimensional features".into()));
    }
    for (i, row) in x.iter().enumerate() {
        if row.len() != d {
            return Err(SvmError::Shape {
                expected: d,
                actual: row.len(),
            });
        }
        if let Some(j) = row.iter().position(|v| !v.is_finite()) {
            return Err(SvmError::Input(format!("non-finite feature at row {i}, column {j}")));
        }
    }
    Ok(d)
}

/// Trains a single binary problem. `positive[i]` marks the positive samples.
pub fn train_binary(x: &[Vec<f64>], positive: &[bool], cfg: &SvmConfig) -> Result<BinaryFit, SvmError> {
    cfg.validate()?;
    validate_inputs(x, positive.len())?;
    if positive.iter().all(|&p| p) || positive.iter().all(|&p| !p) {
        return Err(SvmError::Train("binary problem needs both classes".into()));
    }
    let signs: Vec<f64> = positive.iter().map(|&p| if p { 1.0 } else { -1.0 }).collect();
    let orders = epoch_orders(x.len(), cfg.epochs, cfg.seed);
    Ok(train_binary_with_orders(x, &signs, cfg, &orders))
}

/// Trains one binary problem per distinct label.
pub fn train(x: &[Vec<f64>], y: &[usize], cfg: &SvmConfig) -> Result<SvmModel, SvmError> {
    cfg.validate()?;
    let dim = validate_inputs(x, y.len())?;
    let mut classes: Vec<usize> = y.to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(SvmError::Train(format!(
            "need at least 2 distinct labels, got {}",
            classes.len()
        )));
    }
    let orders = epoch_orders(x.len(), cfg.epochs, cfg.seed);
    let fits = classes
        .par_iter()
        .map(|&c| {
            let signs: Vec<f64> = y.iter().map(|&l| if l == c { 1.0 } else { -1.0 }).collect();
            train_binary_with_orders(x, &signs, cfg, &orders)
        })
        .collect();
    Ok(SvmModel {
        classes,
        class_names: Vec::new(),
        dim,
        config: cfg.clone(),
        fits,
    })
}

impl SvmModel {
    pub fn with_class_names(mut self, names: impl Fn(usize) -> String) -> Self {
        self.class_names = self.classes.iter().map(|&c| names(c)).collect();
        self
    }

    pub fn decisions(&self, x: &[f64]) -> Result<Vec<f64>, SvmError> {
        if x.len() != self.dim {
            return Err(SvmError::Shape {
                expected: self.dim,
                actual: x.len(),
            });
        }
        Ok(self.fits.iter().map(|f| f.decision(x)).collect())
    }

    pub fn predict(&self, x: &[f64]) -> Result<Prediction, SvmError> {
        let decisions = self.decisions(x)?;
        let k = argmax_first(&decisions);
        Ok(Prediction {
            label: self.classes[k],
            decisions,
        })
    }

    pub fn predict_all(&self, x: &[Vec<f64>]) -> Result<Vec<usize>, SvmError> {
        x.iter().map(|r| self.predict(r).map(|p| p.label)).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, SvmError> {
        let model: SvmModel = serde_json::from_str(s).map_err(|e| SvmError::Format(e.to_string()))?;
        if model.fits.len() != model.classes.len() {
            return Err(SvmError::Format("one fit per class required".into()));
        }
        if let Some(f) = model.fits.iter().find(|f| f.weights.len() != model.dim) {
            return Err(SvmError::Format(format!(
                "weight vector of length {} in a model of dimension {}",
                f.weights.len(),
                model.dim
            )));
        }
        Ok(model)
    }
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax_first(values: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = k;
        }
    }
    best
}

pub fn accuracy(model: &SvmModel, x: &[Vec<f64>], y: &[usize]) -> Result<f64, SvmError> {
    if x.is_empty() {
        return Ok(0.0);
    }
    let pred = model.predict_all(x)?;
    let hits = pred.iter().zip(y).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / x.len() as f64)
}

/// Picks the grid value with the best validation accuracy; ties go to the
/// smallest lambda.
pub fn select_lambda(
    x_train: &[Vec<f64>],
    y_train: &[usize],
    x_val: &[Vec<f64>],
    y_val: &[usize],
    grid: &[f64],
    base: &SvmConfig,
) -> Result<(f64, Vec<(f64, f64)>), SvmError> {
    if grid.is_empty() {
        return Err(SvmError::Input("empty lambda grid".into()));
    }
    let mut sorted = grid.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let mut scores = Vec::with_capacity(sorted.len());
    let mut best: Option<(f64, f64)> = None;
    for &lambda in &sorted {
        let cfg = SvmConfig {
            lambda,
            ..base.clone()
        };
        let model = train(x_train, y_train, &cfg)?;
        let acc = accuracy(&model, x_val, y_val)?;
        scores.push((lambda, acc));
        if best.is_none_or(|(_, a)| acc > a) {
            best = Some((lambda, acc));
        }
    }
    Ok((best.expect("non-empty grid").0, scores))
}
