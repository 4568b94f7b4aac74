//! Self-training label disambiguation: per-sample confidence weights and the
//! weighted losses of the four strategies (PRODEN, LW, CAVL, CORR).
//!
//! Weight updates are data for the loss step: no gradient flows through them.
//! All updates operate on the (possibly debiased) logits they are handed.
//!
//! Per-strategy weight invariants, enforced on every loss call:
//! - support of the candidate row is inside the candidate set;
//! - PRODEN/LW/CORR candidate rows sum to 1, CAVL rows are one-hot;
//! - LW additionally keeps a non-candidate row summing to 1 over the
//!   complement (all zeros when the complement is empty).

use serde::{Deserialize, Serialize};

use crate::datagen::{CandidateSet, TrainView};
use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::numeric::{log_softmax, sigmoid, softmax, softplus, subset_softmax};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Proden,
    Lw,
    Cavl,
    Corr,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrategyConfig {
    pub strategy: Strategy,
    /// LW non-candidate loss coefficient.
    #[serde(default = "default_one")]
    pub beta: f64,
    /// CORR consistency coefficient.
    #[serde(default = "default_one")]
    pub lambda: f64,
    /// Number of noisy views CORR averages over.
    #[serde(default = "default_views")]
    pub corr_views: usize,
    /// Scale of the additive Gaussian feature noise that stands in for
    /// augmentation.
    #[serde(default = "default_noise")]
    pub corr_noise_sigma: f64,
    /// Floor applied to weights before logs.
    #[serde(default = "default_floor")]
    pub weight_floor: f64,
    /// Ablation: score CAVL on raw logits instead of probabilities.
    #[serde(default)]
    pub cavl_on_logits: bool,
    /// Ablation: use KL(w || softmax(z)) instead of the table-literal
    /// KL(softmax(z) || w).
    #[serde(default)]
    pub corr_kl_swapped: bool,
}

fn default_one() -> f64 {
    1.0
}

fn default_views() -> usize {
    2
}

fn default_noise() -> f64 {
    0.1
}

fn default_floor() -> f64 {
    1e-8
}

impl StrategyConfig {
    pub fn new(strategy: Strategy) -> Self {
        Self {
            strategy,
            beta: default_one(),
            lambda: default_one(),
            corr_views: default_views(),
            corr_noise_sigma: default_noise(),
            weight_floor: default_floor(),
            cavl_on_logits: false,
            corr_kl_swapped: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.beta < 0.0 {
            return Err(Error::Config("beta must be >= 0".into()));
        }
        if self.lambda < 0.0 {
            return Err(Error::Config("lambda must be >= 0".into()));
        }
        if self.corr_views < 2 {
            return Err(Error::Config("corr_views must be >= 2".into()));
        }
        if self.weight_floor <= 0.0 {
            return Err(Error::Config("weight_floor must be positive".into()));
        }
        Ok(())
    }
}

/// One sample's updated weights: the candidate row and, for LW, the
/// non-candidate row.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightRow {
    pub cand: Vec<f64>,
    pub non: Option<Vec<f64>>,
}

/// Dense per-sample, per-class confidence weights.
#[derive(Clone, Debug, PartialEq)]
pub struct ConfidenceWeights {
    strategy: Strategy,
    w: Mat,
    w_non: Option<Mat>,
}

impl ConfidenceWeights {
    pub fn strategy(&self) -> Strategy {
        self.strategy
    }

    pub fn matrix(&self) -> &Mat {
        &self.w
    }

    pub fn non_matrix(&self) -> Option<&Mat> {
        self.w_non.as_ref()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.w.row(i)
    }

    pub fn non_row(&self, i: usize) -> Option<&[f64]> {
        self.w_non.as_ref().map(|m| m.row(i))
    }

    pub fn set_row(&mut self, i: usize, row: WeightRow) {
        self.w.row_mut(i).copy_from_slice(&row.cand);
        if let (Some(m), Some(non)) = (self.w_non.as_mut(), row.non) {
            m.row_mut(i).copy_from_slice(&non);
        }
    }

    /// Checks the common row invariant for sample `i`: support inside the
    /// candidate set, nonnegative, summing to 1. CAVL rows are additionally
    /// one-hot once updated, but start uniform like everyone else, so
    /// one-hotness is not enforced here.
    pub fn check_row(&self, i: usize, s: &CandidateSet, tol: f64) -> Result<()> {
        let row = self.w.row(i);
        let mut sum = 0.0;
        for (j, &v) in row.iter().enumerate() {
            if !s.contains(j) && v != 0.0 {
                return Err(Error::Contract(format!(
                    "sample {i}: weight on non-candidate class {j}"
                )));
            }
            if v < 0.0 {
                return Err(Error::Contract(format!("sample {i}: negative weight")));
            }
            sum += v;
        }
        if (sum - 1.0).abs() > tol {
            return Err(Error::Contract(format!(
                "sample {i}: candidate weights sum to {sum}, expected 1"
            )));
        }
        if let Some(non) = self.non_row(i) {
            let mut sum = 0.0;
            for (j, &v) in non.iter().enumerate() {
                if s.contains(j) && v != 0.0 {
                    return Err(Error::Contract(format!(
                        "sample {i}: non-candidate weight on candidate class {j}"
                    )));
                }
                sum += v;
            }
            let expect = if s.len() == s.num_classes() { 0.0 } else { 1.0 };
            if (sum - expect).abs() > tol {
                return Err(Error::Contract(format!(
                    "sample {i}: non-candidate weights sum to {sum}, expected {expect}"
                )));
            }
        }
        Ok(())
    }
}

/// Uniform weights over each candidate set; LW also gets uniform weights over
/// each complement.
pub fn init_weights(view: &TrainView<'_>, strategy: Strategy) -> ConfidenceWeights {
    let n = view.num_samples();
    let c = view.num_classes();
    let mut w = Mat::zeros(n, c);
    for (i, s) in view.candidates.iter().enumerate() {
        let u = 1.0 / s.len() as f64;
        let row = w.row_mut(i);
        for j in s.members() {
            row[j] = u;
        }
    }
    let w_non = (strategy == Strategy::Lw).then(|| {
        let mut m = Mat::zeros(n, c);
        for (i, s) in view.candidates.iter().enumerate() {
            let outside = c - s.len();
            if outside > 0 {
                let u = 1.0 / outside as f64;
                let row = m.row_mut(i);
                for j in s.non_members() {
                    row[j] = u;
                }
            }
        }
        m
    });
    ConfidenceWeights { strategy, w, w_non }
}

/// One strategy update for one sample.
///
/// `z_uni` are the (debiased) logits used for disambiguation; CORR ignores it
/// and requires `views_z`, the per-view debiased logits. Ties in CAVL break to
/// the lowest class index.
pub fn update_weights(
    cfg: &StrategyConfig,
    z_uni: &[f64],
    views_z: Option<&[&[f64]]>,
    s: &CandidateSet,
) -> Result<WeightRow> {
    if s.is_empty() {
        return Err(Error::Contract("empty candidate set".into()));
    }
    if z_uni.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation("non-finite logits in weight update".into()));
    }
    let c = s.num_classes();
    if z_uni.len() != c {
        return Err(Error::Structural("logit length != class count".into()));
    }
    match cfg.strategy {
        Strategy::Proden => Ok(WeightRow {
            cand: subset_softmax(z_uni, s),
            non: None,
        }),
        Strategy::Lw => {
            let cand = subset_softmax(z_uni, s);
            let complement = CandidateSet::from_members(c, s.non_members());
            let non = if complement.is_empty() {
                vec![0.0; c]
            } else {
                subset_softmax(z_uni, &complement)
            };
            Ok(WeightRow {
                cand,
                non: Some(non),
            })
        }
        Strategy::Cavl => {
            let scores: Vec<f64> = if cfg.cavl_on_logits {
                z_uni.iter().map(|&z| (z - 1.0).abs() * z).collect()
            } else {
                softmax(z_uni)
                    .iter()
                    .map(|&p| (p - 1.0).abs() * p)
                    .collect()
            };
            let mut best = usize::MAX;
            let mut best_score = f64::NEG_INFINITY;
            for j in s.members() {
                if scores[j] > best_score {
                    best_score = scores[j];
                    best = j;
                }
            }
            let mut cand = vec![0.0; c];
            cand[best] = 1.0;
            Ok(WeightRow { cand, non: None })
        }
        Strategy::Corr => {
            let views = views_z
                .ok_or_else(|| Error::Contract("CORR update requires per-view logits".into()))?;
            if views.len() < 2 {
                return Err(Error::Contract("CORR update requires >= 2 views".into()));
            }
            // geometric mean of exp(z) across views == exp of the mean logit
            let mut avg = vec![0.0; c];
            for v in views {
                if v.len() != c {
                    return Err(Error::Structural("view logit length != class count".into()));
                }
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(Error::Validation("non-finite view logits".into()));
                }
                for (a, x) in avg.iter_mut().zip(*v) {
                    *a += x;
                }
            }
            let inv = 1.0 / views.len() as f64;
            for a in &mut avg {
                *a *= inv;
            }
            Ok(WeightRow {
                cand: subset_softmax(&avg, s),
                non: None,
            })
        }
    }
}

/// Weighted strategy loss over a batch plus its exact logit gradient.
///
/// `z` holds one row per batch position, `ids` maps positions to dataset
/// sample indices (for weights and candidate sets). Returns the mean
/// per-sample loss and dLoss/dz including the 1/B factor. For CORR this
/// scores a single view; the trainer averages across views.
pub fn strategy_loss(
    cfg: &StrategyConfig,
    z: &Mat,
    ids: &[usize],
    weights: &ConfidenceWeights,
    candidates: &[CandidateSet],
) -> Result<(f64, Mat)> {
    if z.rows() != ids.len() {
        return Err(Error::Structural("batch rows != id count".into()));
    }
    let b = ids.len();
    let c = z.cols();
    let mut grad = Mat::zeros(b, c);
    let mut total = 0.0;
    let inv_b = 1.0 / b as f64;
    for (pos, &i) in ids.iter().enumerate() {
        let s = &candidates[i];
        weights.check_row(i, s, 1e-9)?;
        let zi = z.row(pos);
        let w = weights.row(i);
        let (loss_i, grad_i) = match cfg.strategy {
            Strategy::Proden | Strategy::Cavl => weighted_ce(zi, w),
            Strategy::Lw => {
                let (mut loss, mut g) = weighted_ce_subset(zi, w, s);
                let w_non = weights.non_row(i).expect("LW carries non-candidate weights");
                for j in s.non_members() {
                    loss += cfg.beta * w_non[j] * softplus(zi[j]);
                    g[j] += cfg.beta * w_non[j] * sigmoid(zi[j]);
                }
                (loss, g)
            }
            Strategy::Corr => corr_view_loss(cfg, zi, w, s),
        };
        total += loss_i;
        for (gv, g) in grad.row_mut(pos).iter_mut().zip(&grad_i) {
            *gv = g * inv_b;
        }
    }
    Ok((total * inv_b, grad))
}

/// sum_j w_j * (-log softmax_j(z)) and its gradient, sum over all classes.
fn weighted_ce(z: &[f64], w: &[f64]) -> (f64, Vec<f64>) {
    let logp = log_softmax(z);
    let p: Vec<f64> = logp.iter().map(|&l| l.exp()).collect();
    let w_sum: f64 = w.iter().sum();
    let loss = -w.iter().zip(&logp).map(|(wv, lv)| wv * lv).sum::<f64>();
    let grad = p
        .iter()
        .zip(w)
        .map(|(&pv, &wv)| w_sum * pv - wv)
        .collect();
    (loss, grad)
}

/// Same as `weighted_ce` but only candidate terms enter the sum (LW writes
/// the candidate part over S rather than all of Y; identical value since w is
/// zero off-support, kept separate for clarity of the gradient bookkeeping).
fn weighted_ce_subset(z: &[f64], w: &[f64], s: &CandidateSet) -> (f64, Vec<f64>) {
    let logp = log_softmax(z);
    let p: Vec<f64> = logp.iter().map(|&l| l.exp()).collect();
    let mut w_sum = 0.0;
    let mut loss = 0.0;
    for j in s.members() {
        w_sum += w[j];
        loss -= w[j] * logp[j];
    }
    let mut grad: Vec<f64> = p.iter().map(|&pv| w_sum * pv).collect();
    for j in s.members() {
        grad[j] -= w[j];
    }
    (loss, grad)
}

/// CORR per-view loss: lambda * KL + one-vs-all logistic on non-candidates.
fn corr_view_loss(cfg: &StrategyConfig, z: &[f64], w: &[f64], s: &CandidateSet) -> (f64, Vec<f64>) {
    let logp = log_softmax(z);
    let p: Vec<f64> = logp.iter().map(|&l| l.exp()).collect();
    let c = z.len();
    let mut loss = 0.0;
    let mut grad = vec![0.0; c];
    if cfg.corr_kl_swapped {
        // KL(w || p) with 0 log 0 = 0
        let mut kl = 0.0;
        let mut w_sum = 0.0;
        for j in 0..c {
            if w[j] > 0.0 {
                kl += w[j] * (w[j].ln() - logp[j]);
            }
            w_sum += w[j];
        }
        loss += cfg.lambda * kl;
        for j in 0..c {
            grad[j] += cfg.lambda * (w_sum * p[j] - w[j]);
        }
    } else {
        // table-literal direction: KL(p || w), w floored before the log
        let mut kl = 0.0;
        let mut a = vec![0.0; c];
        for j in 0..c {
            let wj = w[j].max(cfg.weight_floor);
            a[j] = logp[j] - wj.ln();
            kl += p[j] * a[j];
        }
        loss += cfg.lambda * kl;
        for j in 0..c {
            grad[j] += cfg.lambda * p[j] * (a[j] - kl);
        }
    }
    for j in s.non_members() {
        loss += softplus(z[j]);
        grad[j] += sigmoid(z[j]);
    }
    (loss, grad)
}
