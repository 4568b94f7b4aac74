//! Shared numerically-stable primitives: softmax family and logistic terms.
//!
//! Every place a log of a softmax appears goes through `log_softmax`; subset
//! normalization subtracts the subset max before exponentiating.

use crate::datagen::CandidateSet;

/// Stable softmax of a full logit row.
pub fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = z.iter().map(|&v| (v - m).exp()).collect();
    let denom: f64 = out.iter().sum();
    for v in &mut out {
        *v /= denom;
    }
    out
}

/// Stable log-softmax of a full logit row.
pub fn log_softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + z.iter().map(|&v| (v - m).exp()).sum::<f64>().ln();
    z.iter().map(|&v| v - lse).collect()
}

/// Softmax restricted to `subset`: zero outside, normalized to 1 over members.
pub fn subset_softmax(z: &[f64], subset: &CandidateSet) -> Vec<f64> {
    let m = subset
        .members()
        .map(|j| z[j])
        .fold(f64::NEG_INFINITY, f64::max);
    let mut out = vec![0.0; z.len()];
    let mut denom = 0.0;
    for j in subset.members() {
        let e = (z[j] - m).exp();
        out[j] = e;
        denom += e;
    }
    for j in subset.members() {
        out[j] /= denom;
    }
    out
}

/// log(1 + exp(x)) without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Logistic function, stable on both tails.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Standard normal via Box-Muller on two explicit uniform draws. Always
/// consumes exactly two draws so RNG stream layouts stay fixed.
pub fn standard_normal<R: rand::Rng + ?Sized>(rng: &mut R) -> f64 {
    let u1: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}
