//! Classification and contrastive objectives with analytic gradients.
//!
//! The hierarchy contrastive loss for anchor `i` with positives `P(i)` and
//! candidates `C(i) = P(i) ∪ N(i)` is
//!
//! ```text
//! term_i = -1/|P(i)| Σ_{j∈P(i)} ln( w_j e^{s_ij/τ} / Σ_{k∈C(i)} w_k e^{s_ik/τ} )
//! ```
//!
//! with `s` the cosine similarity. Anchors without positives contribute
//! nothing and the batch loss is the sum over anchors.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hierarchy::Level;
use crate::pairing::{PairSelection, Strategy};

pub const DEFAULT_TEMPERATURE: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierHead {
    pub level: Level,
    /// `num_classes × d`
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeadGrads {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub input: Array2<f64>,
}

impl ClassifierHead {
    pub fn seeded(level: Level, num_classes: usize, d: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0 / (d as f64).sqrt()).expect("positive std");
        ClassifierHead {
            level,
            weight: Array2::from_shape_fn((num_classes, d), |_| normal.sample(&mut rng)),
            bias: Array1::zeros(num_classes),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.weight.nrows()
    }

    pub fn logits(&self, h: &Array2<f64>) -> Array2<f64> {
        let mut z = h.dot(&self.weight.t());
        z += &self.bias;
        z
    }

    pub fn backward(&self, h: &Array2<f64>, grad_logits: &Array2<f64>) -> HeadGrads {
        HeadGrads {
            weight: grad_logits.t().dot(h),
            bias: grad_logits.sum_axis(Axis(0)),
            input: grad_logits.dot(&self.weight),
        }
    }

    /// Row-wise argmax; ties go to the lower class index.
    pub fn predict(&self, h: &Array2<f64>) -> Vec<usize> {
        self.logits(h)
            .rows()
            .into_iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (k, &v)| {
                        if v > best.1 {
                            (k, v)
                        } else {
                            best
                        }
                    })
                    .0
            })
            .collect()
    }
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + values.map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Mean negative log-softmax at the gold index. An empty batch gives 0.
pub fn cross_entropy(logits: ArrayView2<f64>, gold: &[usize]) -> f64 {
    assert_eq!(logits.nrows(), gold.len(), "one gold index per row");
    if gold.is_empty() {
        return 0.0;
    }
    let total: f64 = logits
        .rows()
        .into_iter()
        .zip(gold)
        .map(|(row, &y)| log_sum_exp(row.iter().copied()) - row[y])
        .sum();
    total / gold.len() as f64
}

/// Loss and its gradient with respect to the logits.
pub fn cross_entropy_with_grad(logits: ArrayView2<f64>, gold: &[usize]) -> (f64, Array2<f64>) {
    let loss = cross_entropy(logits, gold);
    let n = gold.len().max(1) as f64;
    let mut grad = Array2::zeros(logits.raw_dim());
    for ((row, mut g), &y) in logits.rows().into_iter().zip(grad.rows_mut()).zip(gold) {
        let lse = log_sum_exp(row.iter().copied());
        for (k, (&z, gk)) in row.iter().zip(g.iter_mut()).enumerate() {
            let p = (z - lse).exp();
            *gk = (p - if k == y { 1.0 } else { 0.0 }) / n;
        }
    }
    (loss, grad)
}

/// Unit-normalized rows and the original norms; zero rows stay zero.
fn normalize_rows(v: &Array2<f64>) -> (Array2<f64>, Array1<f64>) {
    let norms = v.map_axis(Axis(1), |r| r.dot(&r).sqrt());
    let mut u = v.clone();
    for (mut row, &n) in u.rows_mut().into_iter().zip(norms.iter()) {
        if n > 0.0 {
            row /= n;
        } else {
            row.fill(0.0);
        }
    }
    (u, norms)
}

/// Pairwise cosine similarity; a zero vector has similarity 0 with anything.
pub fn cosine_matrix(v: &Array2<f64>) -> Array2<f64> {
    let (u, _) = normalize_rows(v);
    u.dot(&u.t())
}

/// Standard supervised contrastive loss: same-label rows are positives and
/// every other row is in the denominator. Summed over anchors that have at
/// least one positive.
pub fn supcon_reference<T: PartialEq>(
    vectors: &Array2<f64>,
    labels: &[T],
    tau: f64,
) -> Result<f64> {
    if vectors.nrows() < 2 || labels.len() != vectors.nrows() {
        return Err(Error::Usage(format!(
            "supcon needs >= 2 rows with one label each (rows {}, labels {})",
            vectors.nrows(),
            labels.len()
        )));
    }
    check_tau(tau)?;
    let s = cosine_matrix(vectors);
    let n = labels.len();
    let mut loss = 0.0;
    for i in 0..n {
        let pos: Vec<usize> = (0..n)
            .filter(|&j| j != i && labels[j] == labels[i])
            .collect();
        if pos.is_empty() {
            continue;
        }
        let lse = log_sum_exp((0..n).filter(|&k| k != i).map(|k| s[[i, k]] / tau));
        let mean: f64 = pos.iter().map(|&j| s[[i, j]] / tau - lse).sum::<f64>() / pos.len() as f64;
        loss -= mean;
    }
    Ok(loss)
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "temperature must be positive, got {tau}"
        )))
    }
}

/// Weighted hierarchy contrastive loss.
pub fn hier_contrastive(vectors: &Array2<f64>, sel: &PairSelection, tau: f64) -> f64 {
    hier_contrastive_impl(vectors, sel, tau, false).0
}

/// Loss and its gradient with respect to the (unnormalized) vectors.
pub fn hier_contrastive_with_grad(
    vectors: &Array2<f64>,
    sel: &PairSelection,
    tau: f64,
) -> (f64, Array2<f64>) {
    let (loss, grad) = hier_contrastive_impl(vectors, sel, tau, true);
    (loss, grad.expect("gradient requested"))
}

fn hier_contrastive_impl(
    vectors: &Array2<f64>,
    sel: &PairSelection,
    tau: f64,
    want_grad: bool,
) -> (f64, Option<Array2<f64>>) {
    let n = vectors.nrows();
    assert_eq!(sel.len(), n, "selection built over a different batch");
    assert!(tau > 0.0, "temperature must be positive");
    let (u, norms) = normalize_rows(vectors);
    let s = u.dot(&u.t());
    let mut grad_s = want_grad.then(|| Array2::<f64>::zeros((n, n)));
    let mut loss = 0.0;
    let mut cand: Vec<(usize, f64)> = Vec::with_capacity(n);
    for i in 0..n {
        let pos = &sel.positives[i];
        if pos.is_empty() {
            continue;
        }
        cand.clear();
        for &k in pos.iter().chain(&sel.negatives[i]) {
            let w = sel.weights[i][&k];
            cand.push((k, w.ln() + s[[i, k]] / tau));
        }
        let lse = log_sum_exp(cand.iter().map(|c| c.1));
        let inv_p = 1.0 / pos.len() as f64;
        let term: f64 = -inv_p * cand[..pos.len()].iter().map(|c| c.1 - lse).sum::<f64>();
        loss += term;
        if let Some(gs) = grad_s.as_mut() {
            for (idx, &(k, logit)) in cand.iter().enumerate() {
                let p = (logit - lse).exp();
                let target = if idx < pos.len() { inv_p } else { 0.0 };
                gs[[i, k]] += (p - target) / tau;
            }
        }
    }
    let grad = grad_s.map(|gs| {
        let gu = (&gs + &gs.t()).dot(&u);
        let mut gv = Array2::zeros((n, vectors.ncols()));
        for i in 0..n {
            if norms[i] > 0.0 {
                let ui = u.row(i);
                let gui = gu.row(i);
                let radial = ui.dot(&gui);
                gv.row_mut(i).assign(&((&gui - &(&ui * radial)) / norms[i]));
            }
        }
        gv
    });
    (loss, grad)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContrastiveConfig {
    pub temperature: f64,
    pub strategy: Strategy,
    pub beta: f64,
}

impl ContrastiveConfig {
    pub fn validate(&self) -> Result<()> {
        check_tau(self.temperature)?;
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::Config(format!(
                "beta must be non-negative, got {}",
                self.beta
            )));
        }
        self.strategy.validate()
    }
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        ContrastiveConfig {
            temperature: DEFAULT_TEMPERATURE,
            strategy: Strategy::default(),
            beta: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub ce_l1: f64,
    pub ce_l2: f64,
    pub scl: f64,
    pub beta: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn new(ce_l1: f64, ce_l2: f64, scl: f64, beta: f64) -> Self {
        LossBreakdown {
            ce_l1,
            ce_l2,
            scl,
            beta,
            total: ce_l1 + ce_l2 + beta * scl,
        }
    }
}

pub fn combined_loss(
    l1_logits: ArrayView2<f64>,
    l2_logits: ArrayView2<f64>,
    gold_l1: &[usize],
    gold_l2: &[usize],
    scl: f64,
    beta: f64,
) -> LossBreakdown {
    LossBreakdown::new(
        cross_entropy(l1_logits, gold_l1),
        cross_entropy(l2_logits, gold_l2),
        scl,
        beta,
    )
}
