//! The training loop: epoch/batch iteration with a fixed six-step per-batch
//! ordering, strategy and rebalance wiring, and per-epoch metric logging.
//!
//! Each batch runs six steps in a fixed order:
//!
//! 1. compute the batch output `z` (plus noisy-view outputs for CORR),
//! 2. momentum-update the prototype feature from the batch features,
//! 3. compute the strategy loss with the weights as they stood before this
//!    batch (constant oracle adjustments may shift these logits),
//! 4. compute the debiased output `z_uni` for the disambiguation path,
//! 5. update the confidence weights of the batch samples from `z_uni`,
//! 6. apply the optimizer step from the step-3 gradients.
//!
//! RNG consumption per epoch is fixed: one shuffle (when enabled), then per
//! batch the CORR view noise (CORR only, row-major, two uniform draws per
//! normal). Rebalance modes never touch the stream, which is what makes
//! mode-to-mode trajectory comparisons meaningful.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datagen::{empirical_prior, PartialDataset, TestSet};
use crate::disambiguation::{
    init_weights, strategy_loss, update_weights, ConfidenceWeights, Strategy, StrategyConfig,
};
use crate::error::{Error, Result};
use crate::eval::{
    balanced_metrics, class_distribution_prototype, l2_distance, EpochLog, GroupThresholds,
};
use crate::mat::Mat;
use crate::nncore::{
    backward, lr_at, sgd_step, Activation, ForwardCache, Gradients, MlpModel, OptimizerState,
};
use crate::numeric::{softmax, standard_normal};
use crate::rebalance::{
    debias, log_of_floored, offset_for, records_offset, update_prototype, InferenceOffset,
    PrototypeFeature, RebalanceMode, RebalanceTag,
};

/// Network shape: hidden widths between the data dimension and the class
/// count. `final_bias = false` pins the classifier bias at zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub hidden: Vec<usize>,
    #[serde(default = "default_activation")]
    pub activation: Activation,
    #[serde(default = "default_true")]
    pub final_bias: bool,
}

fn default_activation() -> Activation {
    Activation::LeakyRelu
}

fn default_true() -> bool {
    true
}

impl ModelSpec {
    pub fn widths(&self, input_dim: usize, num_classes: usize) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.hidden.len() + 2);
        w.push(input_dim);
        w.extend_from_slice(&self.hidden);
        w.push(num_classes);
        w
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default)]
    pub weight_decay: f64,
    /// Momentum coefficient of the prototype feature.
    #[serde(default = "default_records_m")]
    pub records_m: f64,
    pub strategy: StrategyConfig,
    pub rebalance: RebalanceMode,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
    #[serde(default = "default_true")]
    pub shuffle: bool,
    /// Variant ordering: compute the loss after this batch's weight update.
    #[serde(default)]
    pub loss_uses_updated_weights: bool,
    #[serde(default)]
    pub group_thresholds: GroupThresholds,
    /// Extra model+prototype checkpoints every k epochs (the final state is
    /// always saved by the experiment layer).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint_every: Option<usize>,
}

fn default_momentum() -> f64 {
    0.9
}

fn default_records_m() -> f64 {
    0.9
}

fn default_eval_every() -> usize {
    1
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.records_m) {
            return Err(Error::Config("records_m must be in [0,1]".into()));
        }
        if self.eval_every == 0 {
            return Err(Error::Config("eval_every must be >= 1".into()));
        }
        self.strategy.validate()?;
        Ok(())
    }
}

/// The six per-batch steps, in the order they must occur.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BatchEvent {
    ComputeOutput,
    UpdatePrototype,
    ComputeLoss,
    ComputeDebiased,
    UpdateWeights,
    UpdateParams,
}

/// Instrumentation hooks; default impls are no-ops.
pub trait TrainObserver {
    fn on_batch_event(&mut self, _epoch: usize, _batch: usize, _event: BatchEvent) {}
    fn on_epoch_end(
        &mut self,
        _epoch: usize,
        _weights: &ConfidenceWeights,
        _model: &MlpModel,
        _proto: &PrototypeFeature,
    ) {
    }
}

pub struct NoopObserver;

impl TrainObserver for NoopObserver {}

/// Everything live at the end of training.
#[derive(Debug)]
pub struct TrainState {
    model: MlpModel,
    optimizer: OptimizerState,
    weights: ConfidenceWeights,
    prototype: PrototypeFeature,
    epoch: usize,
    rng: ChaCha8Rng,
    /// Mean softmax over the train set from the last finished epoch.
    last_epoch_distribution: Option<Vec<f64>>,
}

impl TrainState {
    pub fn model(&self) -> &MlpModel {
        &self.model
    }

    pub fn optimizer(&self) -> &OptimizerState {
        &self.optimizer
    }

    pub fn weights(&self) -> &ConfidenceWeights {
        &self.weights
    }

    pub fn prototype(&self) -> &PrototypeFeature {
        &self.prototype
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn rng(&self) -> &ChaCha8Rng {
        &self.rng
    }

    pub fn last_epoch_distribution(&self) -> Option<&[f64]> {
        self.last_epoch_distribution.as_deref()
    }

    /// Offset subtracted from test logits under the state's rebalance mode.
    pub fn inference_offset(&self, mode: &RebalanceMode) -> Result<Vec<f64>> {
        inference_offset(
            mode,
            &self.prototype,
            &self.model,
            self.last_epoch_distribution.as_deref(),
        )
    }
}

/// Test-time offset for a rebalance mode: the dynamic modes subtract their
/// final offset, post-hoc subtracts the prior, and the train-time oracle
/// modes test on raw logits. `Raw`/`Adjusted` override the default.
pub fn inference_offset(
    mode: &RebalanceMode,
    proto: &PrototypeFeature,
    model: &MlpModel,
    last_epoch_distribution: Option<&[f64]>,
) -> Result<Vec<f64>> {
    let c = model.num_classes();
    let zeros = vec![0.0; c];
    let mode_offset = || -> Result<Vec<f64>> {
        match mode.tag {
            RebalanceTag::None => Ok(zeros.clone()),
            RebalanceTag::OracleLa => {
                mode.validate(c)?;
                let prior = mode.prior.as_ref().expect("validated");
                Ok(prior.iter().map(|&p| mode.tau * p.ln()).collect())
            }
            RebalanceTag::OracleLaPostHoc | RebalanceTag::TempOracleLa => {
                mode.validate(c)?;
                let prior = mode.prior.as_ref().expect("validated");
                Ok(prior.iter().map(|&p| p.ln()).collect())
            }
            RebalanceTag::EpochRecords => Ok(last_epoch_distribution
                .map(log_of_floored)
                .unwrap_or_else(|| zeros.clone())),
            RebalanceTag::Records => records_offset(proto, model),
        }
    };
    match mode.inference {
        InferenceOffset::Raw => Ok(zeros),
        InferenceOffset::Adjusted => mode_offset(),
        InferenceOffset::Auto => match mode.tag {
            // the train-time oracle adjustments are already baked in
            RebalanceTag::None | RebalanceTag::OracleLa | RebalanceTag::TempOracleLa => Ok(zeros),
            _ => mode_offset(),
        },
    }
}

/// Runs the full training loop; see the module docs for the batch ordering.
pub fn run_training(
    ds: &PartialDataset,
    test: &TestSet,
    model_spec: &ModelSpec,
    cfg: &TrainConfig,
) -> Result<(TrainState, Vec<EpochLog>)> {
    run_training_observed(ds, test, model_spec, cfg, &mut NoopObserver)
}

pub fn run_training_observed(
    ds: &PartialDataset,
    test: &TestSet,
    model_spec: &ModelSpec,
    cfg: &TrainConfig,
    obs: &mut dyn TrainObserver,
) -> Result<(TrainState, Vec<EpochLog>)> {
    cfg.validate()?;
    let view = ds.train_view();
    let n = view.num_samples();
    let c = ds.num_classes();
    cfg.rebalance.validate(c)?;
    if n == 0 {
        return Err(Error::Validation("empty training set".into()));
    }

    let widths = model_spec.widths(ds.feature_dim(), c);
    let mut model = MlpModel::new(&widths, model_spec.activation, model_spec.final_bias, cfg.seed)?;
    let mut opt = OptimizerState::new(
        &model,
        cfg.momentum,
        cfg.weight_decay,
        cfg.base_lr,
        cfg.epochs,
    )?;
    let mut weights = init_weights(&view, cfg.strategy.strategy);
    let mut proto = PrototypeFeature::new(model.feature_dim(), cfg.records_m)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let oracle_prior = empirical_prior(ds);
    let is_corr = cfg.strategy.strategy == Strategy::Corr;

    let mut logs = Vec::new();
    let mut prev_epoch_dist: Option<Vec<f64>> = None;
    let mut indices: Vec<usize> = (0..n).collect();

    for epoch in 0..cfg.epochs {
        let lr = lr_at(epoch, &opt)?;
        if cfg.shuffle {
            indices.shuffle(&mut rng);
        }
        let mut softmax_sum = vec![0.0; c];
        let mut pred_counts = vec![0usize; c];
        let mut loss_sum = 0.0;

        for (batch_idx, chunk) in indices.chunks(cfg.batch_size).enumerate() {
            // (1) batch output, plus the CORR views
            let bf = view.features.gather_rows(chunk);
            let cache = model.forward(&bf)?;
            let mut view_caches: Vec<ForwardCache> = Vec::new();
            if is_corr {
                for _ in 0..cfg.strategy.corr_views {
                    let mut noisy = bf.clone();
                    for v in noisy.data_mut() {
                        *v += cfg.strategy.corr_noise_sigma * standard_normal(&mut rng);
                    }
                    view_caches.push(model.forward(&noisy)?);
                }
            }
            obs.on_batch_event(epoch, batch_idx, BatchEvent::ComputeOutput);
            abort_if_nonfinite(cache.logits(), chunk, epoch, batch_idx)?;

            for (pos, &_i) in chunk.iter().enumerate() {
                let p = softmax(cache.logits().row(pos));
                for (acc, pv) in softmax_sum.iter_mut().zip(&p) {
                    *acc += pv;
                }
                pred_counts[crate::eval::argmax(cache.logits().row(pos))] += 1;
            }

            // (2) prototype momentum update from the clean batch features
            update_prototype(&mut proto, cache.features())?;
            obs.on_batch_event(epoch, batch_idx, BatchEvent::UpdatePrototype);

            let loss_offset = if cfg.rebalance.adjusts_loss() {
                offset_for(
                    &cfg.rebalance,
                    &proto,
                    &model,
                    epoch,
                    cfg.epochs,
                    prev_epoch_dist.as_deref(),
                )?
            } else {
                vec![0.0; c]
            };

            let compute_loss = |weights: &ConfidenceWeights| -> Result<(f64, Gradients)> {
                if is_corr {
                    let inv_views = 1.0 / view_caches.len() as f64;
                    let mut total = 0.0;
                    let mut grads = Gradients::zeros_like(&model);
                    for vc in &view_caches {
                        let z_loss = debias(vc.logits(), &loss_offset)?;
                        let (l, g) =
                            strategy_loss(&cfg.strategy, &z_loss, chunk, weights, view.candidates)?;
                        total += l * inv_views;
                        let gv = backward(&model, vc, &g)?;
                        grads.add_scaled(&gv, inv_views)?;
                    }
                    Ok((total, grads))
                } else {
                    let z_loss = debias(cache.logits(), &loss_offset)?;
                    let (l, g) =
                        strategy_loss(&cfg.strategy, &z_loss, chunk, weights, view.candidates)?;
                    let grads = backward(&model, &cache, &g)?;
                    Ok((l, grads))
                }
            };

            let compute_z_uni = |proto: &PrototypeFeature, model: &MlpModel| -> Result<(Mat, Vec<Mat>)> {
                let w_offset = if cfg.rebalance.adjusts_weights() {
                    offset_for(
                        &cfg.rebalance,
                        proto,
                        model,
                        epoch,
                        cfg.epochs,
                        prev_epoch_dist.as_deref(),
                    )?
                } else {
                    vec![0.0; c]
                };
                let z_uni = debias(cache.logits(), &w_offset)?;
                let mut views_uni = Vec::with_capacity(view_caches.len());
                for vc in &view_caches {
                    views_uni.push(debias(vc.logits(), &w_offset)?);
                }
                Ok((z_uni, views_uni))
            };

            let apply_weight_updates =
                |weights: &mut ConfidenceWeights, z_uni: &Mat, views_uni: &[Mat]| -> Result<()> {
                    for (pos, &i) in chunk.iter().enumerate() {
                        let row = if is_corr {
                            let rows: Vec<&[f64]> =
                                views_uni.iter().map(|m| m.row(pos)).collect();
                            update_weights(
                                &cfg.strategy,
                                z_uni.row(pos),
                                Some(&rows),
                                &view.candidates[i],
                            )?
                        } else {
                            update_weights(
                                &cfg.strategy,
                                z_uni.row(pos),
                                None,
                                &view.candidates[i],
                            )?
                        };
                        weights.set_row(i, row);
                    }
                    Ok(())
                };

            let (loss, grads) = if cfg.loss_uses_updated_weights {
                // variant ordering: weights first, then the loss sees them
                let (z_uni, views_uni) = compute_z_uni(&proto, &model)?;
                obs.on_batch_event(epoch, batch_idx, BatchEvent::ComputeDebiased);
                apply_weight_updates(&mut weights, &z_uni, &views_uni)?;
                obs.on_batch_event(epoch, batch_idx, BatchEvent::UpdateWeights);
                let out = compute_loss(&weights)?;
                obs.on_batch_event(epoch, batch_idx, BatchEvent::ComputeLoss);
                out
            } else {
                // (3) loss with the pre-update weights
                let out = compute_loss(&weights)?;
                obs.on_batch_event(epoch, batch_idx, BatchEvent::ComputeLoss);
                // (4) debiased output for disambiguation
                let (z_uni, views_uni) = compute_z_uni(&proto, &model)?;
                obs.on_batch_event(epoch, batch_idx, BatchEvent::ComputeDebiased);
                // (5) weight updates from z_uni
                apply_weight_updates(&mut weights, &z_uni, &views_uni)?;
                obs.on_batch_event(epoch, batch_idx, BatchEvent::UpdateWeights);
                out
            };

            if !loss.is_finite() {
                return Err(nonfinite_error(cache.logits(), chunk, epoch, batch_idx));
            }
            loss_sum += loss * chunk.len() as f64;

            // (6) parameter update
            sgd_step(&mut model, &grads, &mut opt, lr)?;
            obs.on_batch_event(epoch, batch_idx, BatchEvent::UpdateParams);
        }

        let inv_n = 1.0 / n as f64;
        let dist_softmax: Vec<f64> = softmax_sum.iter().map(|&s| s * inv_n).collect();
        let dist_pred: Vec<f64> = pred_counts.iter().map(|&cnt| cnt as f64 * inv_n).collect();
        prev_epoch_dist = Some(dist_softmax.clone());

        obs.on_epoch_end(epoch, &weights, &model, &proto);

        if (epoch + 1) % cfg.eval_every == 0 || epoch + 1 == cfg.epochs {
            let offset = inference_offset(
                &cfg.rebalance,
                &proto,
                &model,
                prev_epoch_dist.as_deref(),
            )?;
            let (balanced_top1, per_class, groups) =
                balanced_metrics(&model, test, &offset, ds.counts(), cfg.group_thresholds)?;
            let dist_proto = class_distribution_prototype(&model, &proto)?;
            let log = EpochLog {
                epoch: epoch + 1,
                lr,
                train_loss: loss_sum * inv_n,
                balanced_top1,
                per_class_accuracy: per_class,
                groups,
                l2_proto: l2_distance(&dist_proto, &oracle_prior)?,
                l2_pred: l2_distance(&dist_pred, &oracle_prior)?,
                dist_proto,
                dist_pred: dist_pred.clone(),
                dist_softmax: dist_softmax.clone(),
            };
            log.check()?;
            logs.push(log);
        }
    }

    Ok((
        TrainState {
            model,
            optimizer: opt,
            weights,
            prototype: proto,
            epoch: cfg.epochs,
            rng,
            last_epoch_distribution: prev_epoch_dist,
        },
        logs,
    ))
}

fn abort_if_nonfinite(z: &Mat, chunk: &[usize], epoch: usize, batch: usize) -> Result<()> {
    if z.is_finite() {
        Ok(())
    } else {
        Err(nonfinite_error(z, chunk, epoch, batch))
    }
}

fn nonfinite_error(z: &Mat, chunk: &[usize], epoch: usize, batch: usize) -> Error {
    let mut ids: Vec<usize> = chunk
        .iter()
        .enumerate()
        .filter(|(pos, _)| z.row(*pos).iter().any(|v| !v.is_finite()))
        .map(|(_, &i)| i)
        .collect();
    if ids.is_empty() {
        ids = chunk.to_vec();
    }
    ids.truncate(8);
    Error::NonFinite {
        epoch,
        batch,
        sample_ids: ids,
    }
}
