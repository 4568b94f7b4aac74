//! Metrics: balanced top-1, per-class and Many/Medium/Few accuracy, class
//! distribution estimates, L2 distance to the oracle prior, and the
//! generalization-bound calculator.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datagen::TestSet;
use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::nncore::MlpModel;
use crate::numeric::softmax;
use crate::rebalance::PrototypeFeature;

/// Class-count buckets: many is `count > many_min`, few is `count < few_max`,
/// medium is the closed band between them.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupThresholds {
    pub many_min: usize,
    pub few_max: usize,
}

impl Default for GroupThresholds {
    fn default() -> Self {
        Self {
            many_min: 100,
            few_max: 20,
        }
    }
}

/// Mean per-class accuracy within each bucket; `None` marks an absent bucket.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupAccuracy {
    pub many: Option<f64>,
    pub medium: Option<f64>,
    pub few: Option<f64>,
}

/// Argmax with ties broken to the lowest class index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    let mut best_v = row[0];
    for (j, &v) in row.iter().enumerate().skip(1) {
        if v > best_v {
            best_v = v;
            best = j;
        }
    }
    best
}

/// Test-set predictions under an inference offset (`z - offset`).
pub fn predict(model: &MlpModel, features: &Mat, offset: &[f64]) -> Result<Vec<usize>> {
    let cache = model.forward(features)?;
    let z = crate::rebalance::debias(cache.logits(), offset)?;
    Ok((0..z.rows()).map(|r| argmax(z.row(r))).collect())
}

/// Balanced top-1, per-class accuracies, and group accuracies on a balanced
/// labeled test set. Groups bucket classes by their TRAINING counts.
pub fn balanced_metrics(
    model: &MlpModel,
    test: &TestSet,
    offset: &[f64],
    train_counts: &[usize],
    thresholds: GroupThresholds,
) -> Result<(f64, Vec<f64>, GroupAccuracy)> {
    let c = model.num_classes();
    if train_counts.len() != c {
        return Err(Error::Structural("train_counts length != class count".into()));
    }
    let preds = predict(model, &test.features, offset)?;
    let mut correct = vec![0usize; c];
    let mut total = vec![0usize; c];
    for (&pred, &label) in preds.iter().zip(&test.labels) {
        if label >= c {
            return Err(Error::Validation("test label out of class range".into()));
        }
        total[label] += 1;
        if pred == label {
            correct[label] += 1;
        }
    }
    if let Some(missing) = total.iter().position(|&t| t == 0) {
        return Err(Error::Validation(format!(
            "class {missing} absent from the test set"
        )));
    }
    let per_class: Vec<f64> = correct
        .iter()
        .zip(&total)
        .map(|(&c, &t)| c as f64 / t as f64)
        .collect();
    let balanced = per_class.iter().sum::<f64>() / c as f64;

    let mut buckets: [Vec<f64>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    for (class, &count) in train_counts.iter().enumerate() {
        let acc = per_class[class];
        if count > thresholds.many_min {
            buckets[0].push(acc);
        } else if count < thresholds.few_max {
            buckets[2].push(acc);
        } else {
            buckets[1].push(acc);
        }
    }
    let mean = |v: &Vec<f64>| {
        if v.is_empty() {
            None
        } else {
            Some(v.iter().sum::<f64>() / v.len() as f64)
        }
    };
    Ok((
        balanced,
        per_class,
        GroupAccuracy {
            many: mean(&buckets[0]),
            medium: mean(&buckets[1]),
            few: mean(&buckets[2]),
        },
    ))
}

/// Share of test predictions landing on each class.
pub fn prediction_histogram(model: &MlpModel, features: &Mat, offset: &[f64]) -> Result<Vec<f64>> {
    let preds = predict(model, features, offset)?;
    let mut counts = vec![0usize; model.num_classes()];
    for p in &preds {
        counts[*p] += 1;
    }
    let n = preds.len() as f64;
    Ok(counts.iter().map(|&c| c as f64 / n).collect())
}

/// Estimated class distribution from the prototype: `softmax(g(F; W))`.
pub fn class_distribution_prototype(model: &MlpModel, proto: &PrototypeFeature) -> Result<Vec<f64>> {
    let z = model.classifier_logits(proto.feature())?;
    Ok(softmax(&z))
}

/// Estimated class distribution from hard predictions over the training
/// features (the indicator definition, not mean softmax).
pub fn class_distribution_predictions(
    model: &MlpModel,
    train_features: &Mat,
    offset: &[f64],
) -> Result<Vec<f64>> {
    prediction_histogram(model, train_features, offset)
}

/// Euclidean distance between two probability vectors.
pub fn l2_distance(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::Validation("distribution lengths differ".into()));
    }
    for (name, v) in [("p", p), ("q", q)] {
        let sum: f64 = v.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::Validation(format!("{name} sums to {sum}, expected 1")));
        }
    }
    Ok(p.iter()
        .zip(q)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt())
}

/// Inputs of the sample-complexity bound on the distribution estimation error.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct BoundInputs {
    /// Training sample count.
    #[serde(rename = "N")]
    pub n: usize,
    /// Class count.
    #[serde(rename = "C")]
    pub c: usize,
    /// Natarajan dimension of the hypothesis space (user-supplied).
    pub d_h: usize,
    /// Ambiguity degree, must satisfy eta < 1.
    pub eta: f64,
    /// Confidence parameter in (0,1).
    pub delta: f64,
}

/// Evaluates
/// `4 / ((ln 2 - ln(1+eta)) N) * (d_H (ln 2N + 2 ln C) - ln delta + ln 2)`.
pub fn prop1_bound(b: &BoundInputs) -> Result<f64> {
    if !(0.0..1.0).contains(&b.eta) {
        return Err(Error::Validation(
            "eta must lie in [0,1): the small ambiguity degree condition".into(),
        ));
    }
    if !(0.0 < b.delta && b.delta < 1.0) {
        return Err(Error::Validation("delta must lie in (0,1)".into()));
    }
    if b.n == 0 {
        return Err(Error::Validation("N must be >= 1".into()));
    }
    if b.c < 2 {
        return Err(Error::Validation("C must be >= 2".into()));
    }
    if b.d_h == 0 {
        return Err(Error::Validation("d_H must be >= 1".into()));
    }
    let n = b.n as f64;
    let denom = (2.0_f64.ln() - (1.0 + b.eta).ln()) * n;
    let inner =
        b.d_h as f64 * ((2.0 * n).ln() + 2.0 * (b.c as f64).ln()) - b.delta.ln() + 2.0_f64.ln();
    Ok(4.0 / denom * inner)
}

/// One evaluated epoch of a training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    /// 1-based epoch number.
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub balanced_top1: f64,
    pub per_class_accuracy: Vec<f64>,
    pub groups: GroupAccuracy,
    /// Estimated class distribution from the prototype route.
    pub dist_proto: Vec<f64>,
    /// Estimated class distribution from hard training-set predictions.
    pub dist_pred: Vec<f64>,
    /// Diagnostic third series: mean softmax over the training set.
    pub dist_softmax: Vec<f64>,
    pub l2_proto: f64,
    pub l2_pred: f64,
}

impl EpochLog {
    /// Internal consistency: balanced top-1 is the unweighted mean of the
    /// per-class accuracies, distributions are normalized, L2 in [0, sqrt 2].
    pub fn check(&self) -> Result<()> {
        let mean =
            self.per_class_accuracy.iter().sum::<f64>() / self.per_class_accuracy.len() as f64;
        if (mean - self.balanced_top1).abs() > 1e-12 {
            return Err(Error::Contract("balanced_top1 != mean per-class accuracy".into()));
        }
        for dist in [&self.dist_proto, &self.dist_pred, &self.dist_softmax] {
            let sum: f64 = dist.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::Contract(format!("distribution sums to {sum}")));
            }
        }
        let max = std::f64::consts::SQRT_2 + 1e-12;
        if !(0.0..=max).contains(&self.l2_proto) || !(0.0..=max).contains(&self.l2_pred) {
            return Err(Error::Contract("l2 outside [0, sqrt(2)]".into()));
        }
        Ok(())
    }
}

/// Writes the metrics CSV: one row per eval epoch with the fixed column set
/// `epoch, lr, train_loss, balanced_top1, acc_class_0..C-1, acc_many,
/// acc_medium, acc_few, l2_proto, l2_pred, dist_proto_json, dist_pred_json`.
/// Absent groups serialize as empty cells.
pub fn write_metrics_csv(logs: &[EpochLog], num_classes: usize, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    let mut header: Vec<String> = vec![
        "epoch".into(),
        "lr".into(),
        "train_loss".into(),
        "balanced_top1".into(),
    ];
    for c in 0..num_classes {
        header.push(format!("acc_class_{c}"));
    }
    header.extend(
        ["acc_many", "acc_medium", "acc_few", "l2_proto", "l2_pred", "dist_proto_json", "dist_pred_json"]
            .map(String::from),
    );
    w.write_record(&header).map_err(csv_err)?;
    for log in logs {
        let mut rec: Vec<String> = vec![
            log.epoch.to_string(),
            fmt_f64(log.lr),
            fmt_f64(log.train_loss),
            fmt_f64(log.balanced_top1),
        ];
        for acc in &log.per_class_accuracy {
            rec.push(fmt_f64(*acc));
        }
        for g in [log.groups.many, log.groups.medium, log.groups.few] {
            rec.push(g.map(fmt_f64).unwrap_or_default());
        }
        rec.push(fmt_f64(log.l2_proto));
        rec.push(fmt_f64(log.l2_pred));
        rec.push(serde_json::to_string(&log.dist_proto)?);
        rec.push(serde_json::to_string(&log.dist_pred)?);
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

// serde_json's float formatting (shortest round-trip) keeps CSV output
// byte-stable and bit-faithful on reload.
fn fmt_f64(v: f64) -> String {
    serde_json::to_string(&v).unwrap_or_else(|_| v.to_string())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}
