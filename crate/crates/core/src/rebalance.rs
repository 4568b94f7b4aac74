//! Per-class logit offsets that debias disambiguation and, optionally,
//! inference.
//!
//! The dynamic offset comes from a momentum prototype feature pushed through
//! the classifier: `offset = log softmax(g(F; W))`. Constant baselines use
//! the oracle class prior instead. `debias` subtracts whichever offset the
//! active mode produced.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::nncore::MlpModel;
use crate::numeric::log_softmax;

const DIST_FLOOR: f64 = 1e-8;

/// Momentum-accumulated mean feature of the training stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrototypeFeature {
    f: Vec<f64>,
    m: f64,
    initialized: bool,
}

impl PrototypeFeature {
    /// Starts at zero, per the training procedure's initialization.
    pub fn new(dim: usize, m: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&m) {
            return Err(Error::Validation("momentum coefficient must be in [0,1]".into()));
        }
        Ok(Self {
            f: vec![0.0; dim],
            m,
            initialized: false,
        })
    }

    pub fn feature(&self) -> &[f64] {
        &self.f
    }

    pub fn momentum(&self) -> f64 {
        self.m
    }

    pub fn initialized(&self) -> bool {
        self.initialized
    }

    pub fn from_parts(f: Vec<f64>, m: f64, initialized: bool) -> Self {
        Self { f, m, initialized }
    }
}

/// `F <- m*F + (1-m) * mean(batch features)`.
pub fn update_prototype(proto: &mut PrototypeFeature, batch_features: &Mat) -> Result<()> {
    if batch_features.rows() == 0 {
        return Err(Error::Contract("prototype update from an empty batch".into()));
    }
    if batch_features.cols() != proto.f.len() {
        return Err(Error::Structural(format!(
            "batch feature dim {} != prototype dim {}",
            batch_features.cols(),
            proto.f.len()
        )));
    }
    let mean = batch_features.row_mean()?;
    for (fv, mv) in proto.f.iter_mut().zip(&mean) {
        *fv = proto.m * *fv + (1.0 - proto.m) * mv;
    }
    proto.initialized = true;
    Ok(())
}

/// Dynamic offset: `log softmax(g(F; W))`. Its exponential is the estimated
/// training class distribution.
pub fn records_offset(proto: &PrototypeFeature, model: &MlpModel) -> Result<Vec<f64>> {
    let logits = model.classifier_logits(&proto.f)?;
    Ok(log_softmax(&logits))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RebalanceTag {
    None,
    OracleLa,
    OracleLaPostHoc,
    TempOracleLa,
    EpochRecords,
    Records,
}

/// Which logits a train-time constant adjustment touches. The dynamic modes
/// always adjust only the disambiguation logits, and `WeightsOnly` makes the
/// constant modes match that wiring; adjusting the loss logits as well lets
/// the model compensate the offset and cancels the adjustment.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleScope {
    Both,
    LossOnly,
    #[default]
    WeightsOnly,
}

/// Test-time behavior: `Auto` picks the mode's default, `Raw` never subtracts,
/// `Adjusted` always subtracts the mode's final offset.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InferenceOffset {
    #[default]
    Auto,
    Raw,
    Adjusted,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RebalanceMode {
    pub tag: RebalanceTag,
    /// Oracle class prior; required by the oracle modes, injected by the
    /// harness (strategies never see it).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior: Option<Vec<f64>>,
    /// Scale on `log prior` for OracleLa.
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default)]
    pub oracle_scope: OracleScope,
    #[serde(default)]
    pub inference: InferenceOffset,
}

fn default_tau() -> f64 {
    1.0
}

impl RebalanceMode {
    pub fn new(tag: RebalanceTag) -> Self {
        Self {
            tag,
            prior: None,
            tau: default_tau(),
            oracle_scope: OracleScope::default(),
            inference: InferenceOffset::default(),
        }
    }

    pub fn needs_prior(&self) -> bool {
        matches!(
            self.tag,
            RebalanceTag::OracleLa | RebalanceTag::OracleLaPostHoc | RebalanceTag::TempOracleLa
        )
    }

    pub fn validate(&self, num_classes: usize) -> Result<()> {
        if self.needs_prior() {
            let prior = self.prior.as_ref().ok_or_else(|| {
                Error::Config("oracle rebalance mode without a class prior".into())
            })?;
            if prior.len() != num_classes {
                return Err(Error::Config("prior length != class count".into()));
            }
            if prior.iter().any(|&p| p <= 0.0) {
                return Err(Error::Config("prior entries must be strictly positive".into()));
            }
            let sum: f64 = prior.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::Config(format!("prior sums to {sum}, expected 1")));
            }
        }
        Ok(())
    }

    /// True when the train-time offset should also shift the loss logits.
    pub fn adjusts_loss(&self) -> bool {
        matches!(self.tag, RebalanceTag::OracleLa | RebalanceTag::TempOracleLa)
            && matches!(self.oracle_scope, OracleScope::Both | OracleScope::LossOnly)
    }

    /// True when the train-time offset should shift the disambiguation logits.
    pub fn adjusts_weights(&self) -> bool {
        match self.tag {
            RebalanceTag::None | RebalanceTag::OracleLaPostHoc => false,
            RebalanceTag::OracleLa | RebalanceTag::TempOracleLa => {
                matches!(self.oracle_scope, OracleScope::Both | OracleScope::WeightsOnly)
            }
            RebalanceTag::EpochRecords | RebalanceTag::Records => true,
        }
    }
}

/// Training-time offset of the active mode at the given epoch.
///
/// `latest_epoch_distribution` is the previous epoch's mean prediction
/// distribution (EpochRecords only; `None` in epoch 0).
pub fn offset_for(
    mode: &RebalanceMode,
    proto: &PrototypeFeature,
    model: &MlpModel,
    epoch: usize,
    total_epochs: usize,
    latest_epoch_distribution: Option<&[f64]>,
) -> Result<Vec<f64>> {
    let c = model.num_classes();
    mode.validate(c)?;
    match mode.tag {
        RebalanceTag::None | RebalanceTag::OracleLaPostHoc => Ok(vec![0.0; c]),
        RebalanceTag::OracleLa => {
            let prior = mode.prior.as_ref().expect("validated above");
            Ok(prior.iter().map(|&p| mode.tau * p.ln()).collect())
        }
        RebalanceTag::TempOracleLa => {
            let prior = mode.prior.as_ref().expect("validated above");
            let tau_t = if total_epochs > 1 {
                epoch as f64 / (total_epochs - 1) as f64
            } else {
                0.0
            };
            Ok(prior.iter().map(|&p| tau_t * p.ln()).collect())
        }
        RebalanceTag::EpochRecords => match latest_epoch_distribution {
            None => Ok(vec![0.0; c]),
            Some(dist) => {
                if dist.len() != c {
                    return Err(Error::Structural("epoch distribution length != C".into()));
                }
                Ok(log_of_floored(dist))
            }
        },
        RebalanceTag::Records => records_offset(proto, model),
    }
}

/// Floors, renormalizes, and logs a distribution.
pub fn log_of_floored(dist: &[f64]) -> Vec<f64> {
    let floored: Vec<f64> = dist.iter().map(|&p| p.max(DIST_FLOOR)).collect();
    let sum: f64 = floored.iter().sum();
    floored.iter().map(|&p| (p / sum).ln()).collect()
}

/// `z_uni = z - offset`, broadcast over the batch.
pub fn debias(z: &Mat, offset: &[f64]) -> Result<Mat> {
    if z.cols() != offset.len() {
        return Err(Error::Structural(format!(
            "offset length {} != logit width {}",
            offset.len(),
            z.cols()
        )));
    }
    let mut out = z.clone();
    for r in 0..out.rows() {
        for (v, o) in out.row_mut(r).iter_mut().zip(offset) {
            *v -= o;
        }
    }
    Ok(out)
}
