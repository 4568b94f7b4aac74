//! Declarative experiment definitions and the end-to-end pipeline: dataset
//! synthesis, training, metric/checkpoint artifacts, and config sweeps.
//!
//! Every artifact embeds the fully resolved config and seed. Run directories
//! are named by a hash of the resolved config plus the seed, and an existing
//! directory is never overwritten unless forced.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::datagen::{self, empirical_prior, GeneratorConfig, PartialDataset, TestSet};
use crate::error::{Error, Result};
use crate::eval::{
    balanced_metrics, write_metrics_csv, EpochLog, GroupAccuracy,
};
use crate::nncore::{MlpModel, ModelCheckpoint};
use crate::rebalance::{PrototypeFeature, RebalanceMode};
use crate::trainer::{
    inference_offset, run_training, ModelSpec, TrainConfig, TrainState,
};

pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const CONFIG_FILE: &str = "config.json";
pub const SWEEP_SUMMARY_FILE: &str = "sweep_summary.csv";

/// One experiment: generator, model, training, strategy, and rebalance
/// settings plus the mandatory master seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub generator: GeneratorConfig,
    pub model: ModelSpec,
    pub train: TrainConfig,
    #[serde(default = "default_out_dir")]
    pub out_dir: String,
    pub seed: u64,
}

fn default_out_dir() -> String {
    "runs".into()
}

impl ExperimentConfig {
    /// Copies the master seed into the generator and trainer and injects the
    /// oracle prior where the rebalance mode requires it.
    pub fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = self.clone();
        cfg.generator.seed = cfg.seed;
        cfg.train.seed = cfg.seed;
        cfg.generator.validate()?;
        cfg.train.validate()?;
        if cfg.train.rebalance.needs_prior() && cfg.train.rebalance.prior.is_none() {
            let counts = datagen::planned_counts(&cfg.generator)?;
            let n: usize = counts.iter().sum();
            cfg.train.rebalance.prior =
                Some(counts.iter().map(|&c| c as f64 / n as f64).collect());
        }
        cfg.train.rebalance.validate(cfg.generator.num_classes)?;
        Ok(cfg)
    }

    /// Hex prefix of the SHA-256 of the resolved config JSON.
    pub fn hash(&self) -> Result<String> {
        let canon = serde_json::to_string(self)?;
        let digest = Sha256::digest(canon.as_bytes());
        let mut hex = String::with_capacity(12);
        for b in &digest[..6] {
            hex.push_str(&format!("{b:02x}"));
        }
        Ok(hex)
    }

    pub fn run_dir(&self) -> Result<PathBuf> {
        Ok(Path::new(&self.out_dir).join(format!("run-{}-s{}", self.hash()?, self.seed)))
    }
}

/// Full training checkpoint: resolved config, model, prototype, and the
/// harness-side state needed to re-score it later.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config: ExperimentConfig,
    pub model: ModelCheckpoint,
    pub prototype: PrototypeJson,
    pub train_counts: Vec<usize>,
    pub last_epoch_distribution: Option<Vec<f64>>,
    pub final_epoch: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PrototypeJson {
    pub f: Vec<f64>,
    pub m: f64,
    pub initialized: bool,
}

impl Checkpoint {
    pub fn from_state(config: &ExperimentConfig, state: &TrainState, counts: &[usize]) -> Self {
        Self {
            config: config.clone(),
            model: state.model().to_checkpoint(),
            prototype: PrototypeJson {
                f: state.prototype().feature().to_vec(),
                m: state.prototype().momentum(),
                initialized: state.prototype().initialized(),
            },
            train_counts: counts.to_vec(),
            last_epoch_distribution: state.last_epoch_distribution().map(<[f64]>::to_vec),
            final_epoch: state.epoch(),
        }
    }

    pub fn prototype(&self) -> PrototypeFeature {
        PrototypeFeature::from_parts(
            self.prototype.f.clone(),
            self.prototype.m,
            self.prototype.initialized,
        )
    }
}

/// Result of one full gen->train run.
pub struct RunArtifacts {
    pub run_dir: PathBuf,
    pub logs: Vec<EpochLog>,
    pub state: TrainState,
    pub dataset: PartialDataset,
    pub test: TestSet,
    pub config: ExperimentConfig,
}

impl RunArtifacts {
    pub fn final_log(&self) -> &EpochLog {
        self.logs.last().expect("training always logs the final epoch")
    }
}

/// Runs gen -> train in memory, without touching the filesystem.
pub fn run_experiment_in_memory(cfg: &ExperimentConfig) -> Result<RunArtifacts> {
    let cfg = cfg.resolve()?;
    let (ds, test) = datagen::synth_dataset(&cfg.generator)?;
    let (state, logs) = run_training(&ds, &test, &cfg.model, &cfg.train)?;
    Ok(RunArtifacts {
        run_dir: PathBuf::new(),
        logs,
        state,
        dataset: ds,
        test,
        config: cfg,
    })
}

/// Resolution variant for training on an already-loaded dataset: the
/// dataset's own generator settings replace the config's, and the oracle
/// prior comes from its actual counts.
pub fn resolve_for_dataset(cfg: &ExperimentConfig, ds: &PartialDataset) -> Result<ExperimentConfig> {
    let mut cfg = cfg.clone();
    cfg.generator = ds.meta().clone();
    cfg.train.seed = cfg.seed;
    cfg.train.validate()?;
    if cfg.train.rebalance.needs_prior() && cfg.train.rebalance.prior.is_none() {
        cfg.train.rebalance.prior = Some(empirical_prior(ds));
    }
    cfg.train.rebalance.validate(ds.num_classes())?;
    Ok(cfg)
}

/// Trains on a dataset loaded from disk and writes `metrics.csv`,
/// `checkpoint.json`, and the resolved `config.json` into the run directory
/// (the dataset files stay where they were generated).
pub fn train_on_dataset(
    cfg: &ExperimentConfig,
    ds: PartialDataset,
    test: TestSet,
    force: bool,
) -> Result<RunArtifacts> {
    let resolved = resolve_for_dataset(cfg, &ds)?;
    let run_dir = resolved.run_dir()?;
    prepare_dir(&run_dir, force)?;
    train_into_dir(resolved, ds, test, run_dir)
}

/// Full pipeline with artifacts on disk: dataset files, `metrics.csv`,
/// `checkpoint.json`, and the resolved `config.json` in the run directory.
pub fn run_experiment(cfg: &ExperimentConfig, force: bool) -> Result<RunArtifacts> {
    let resolved = cfg.resolve()?;
    let run_dir = resolved.run_dir()?;
    prepare_dir(&run_dir, force)?;
    let (ds, test) = datagen::synth_dataset(&resolved.generator)?;
    datagen::write_dataset(&ds, &test, &run_dir)?;
    train_into_dir(resolved, ds, test, run_dir)
}

/// Writes intermediate model+prototype checkpoints every k epochs.
struct PeriodicCheckpoints<'a> {
    every: usize,
    run_dir: &'a Path,
    config: &'a ExperimentConfig,
    counts: &'a [usize],
    error: Option<Error>,
}

impl crate::trainer::TrainObserver for PeriodicCheckpoints<'_> {
    fn on_epoch_end(
        &mut self,
        epoch: usize,
        _weights: &crate::disambiguation::ConfidenceWeights,
        model: &MlpModel,
        proto: &PrototypeFeature,
    ) {
        if self.error.is_some() || !(epoch + 1).is_multiple_of(self.every) {
            return;
        }
        let ck = Checkpoint {
            config: self.config.clone(),
            model: model.to_checkpoint(),
            prototype: PrototypeJson {
                f: proto.feature().to_vec(),
                m: proto.momentum(),
                initialized: proto.initialized(),
            },
            train_counts: self.counts.to_vec(),
            last_epoch_distribution: None,
            final_epoch: epoch + 1,
        };
        let path = self.run_dir.join(format!("checkpoint-epoch-{}.json", epoch + 1));
        if let Err(e) = serde_json::to_string_pretty(&ck)
            .map_err(Error::from)
            .and_then(|text| fs::write(path, text).map_err(Error::from))
        {
            self.error = Some(e);
        }
    }
}

fn train_into_dir(
    resolved: ExperimentConfig,
    ds: PartialDataset,
    test: TestSet,
    run_dir: PathBuf,
) -> Result<RunArtifacts> {
    let (state, logs) = match resolved.train.checkpoint_every {
        Some(every) if every > 0 => {
            let mut obs = PeriodicCheckpoints {
                every,
                run_dir: &run_dir,
                config: &resolved,
                counts: ds.counts(),
                error: None,
            };
            let out = crate::trainer::run_training_observed(
                &ds,
                &test,
                &resolved.model,
                &resolved.train,
                &mut obs,
            )?;
            if let Some(e) = obs.error {
                return Err(e);
            }
            out
        }
        _ => run_training(&ds, &test, &resolved.model, &resolved.train)?,
    };
    fs::write(
        run_dir.join(CONFIG_FILE),
        serde_json::to_string_pretty(&resolved)?,
    )?;
    write_metrics_csv(&logs, ds.num_classes(), &run_dir.join(METRICS_FILE))?;
    let ck = Checkpoint::from_state(&resolved, &state, ds.counts());
    fs::write(run_dir.join(CHECKPOINT_FILE), serde_json::to_string_pretty(&ck)?)?;
    Ok(RunArtifacts {
        run_dir,
        logs,
        state,
        dataset: ds,
        test,
        config: resolved,
    })
}

pub fn prepare_dir(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() {
        if !force {
            return Err(Error::Config(format!(
                "output directory {} already exists (use --force to overwrite)",
                dir.display()
            )));
        }
        fs::remove_dir_all(dir)?;
    }
    fs::create_dir_all(dir)?;
    Ok(())
}

/// Re-scored checkpoint metrics.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalReport {
    pub balanced_top1: f64,
    pub per_class_accuracy: Vec<f64>,
    pub groups: GroupAccuracy,
    pub offset: Vec<f64>,
    pub config: ExperimentConfig,
}

/// Scores a checkpoint against a test set under the checkpoint's rebalance
/// mode, with `inference` overriding the mode's test-time choice when given.
pub fn evaluate_checkpoint(
    ck: &Checkpoint,
    test: &TestSet,
    inference: Option<crate::rebalance::InferenceOffset>,
) -> Result<EvalReport> {
    let model = MlpModel::from_checkpoint(&ck.model)?;
    let proto = ck.prototype();
    let mut mode: RebalanceMode = ck.config.train.rebalance.clone();
    if let Some(choice) = inference {
        mode.inference = choice;
    }
    let offset = inference_offset(
        &mode,
        &proto,
        &model,
        ck.last_epoch_distribution.as_deref(),
    )?;
    let (balanced_top1, per_class_accuracy, groups) = balanced_metrics(
        &model,
        test,
        &offset,
        &ck.train_counts,
        ck.config.train.group_thresholds,
    )?;
    Ok(EvalReport {
        balanced_top1,
        per_class_accuracy,
        groups,
        offset,
        config: ck.config.clone(),
    })
}

// ---------------------------------------------------------------------------
// Sweeps

/// A sweep crosses every axis value with every other, overriding dotted paths
/// in the base config.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepConfig {
    pub base: ExperimentConfig,
    pub axes: Vec<SweepAxis>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepAxis {
    /// Dotted path into the experiment config, e.g. `train.records_m`.
    pub path: String,
    pub values: Vec<serde_json::Value>,
}

/// One expanded child: its label ("path=value,...") and full config.
pub fn expand_sweep(sweep: &SweepConfig) -> Result<Vec<(String, ExperimentConfig)>> {
    if sweep.axes.is_empty() {
        return Err(Error::Config("sweep has no axes".into()));
    }
    for axis in &sweep.axes {
        if axis.values.is_empty() {
            return Err(Error::Config(format!("sweep axis {} has no values", axis.path)));
        }
    }
    let mut out = Vec::new();
    let mut selection = vec![0usize; sweep.axes.len()];
    loop {
        let mut value = serde_json::to_value(&sweep.base)?;
        let mut label_parts = Vec::with_capacity(sweep.axes.len());
        for (axis, &pick) in sweep.axes.iter().zip(&selection) {
            let v = &axis.values[pick];
            set_by_path(&mut value, &axis.path, v.clone())?;
            label_parts.push(format!("{}={}", axis.path, compact(v)));
        }
        let cfg: ExperimentConfig = serde_json::from_value(value)?;
        out.push((label_parts.join(","), cfg));
        // odometer increment
        let mut k = sweep.axes.len();
        loop {
            if k == 0 {
                return Ok(out);
            }
            k -= 1;
            selection[k] += 1;
            if selection[k] < sweep.axes[k].values.len() {
                break;
            }
            selection[k] = 0;
        }
    }
}

fn compact(v: &serde_json::Value) -> String {
    match v {
        serde_json::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn set_by_path(root: &mut serde_json::Value, path: &str, v: serde_json::Value) -> Result<()> {
    let mut cur = root;
    let parts: Vec<&str> = path.split('.').collect();
    for (k, part) in parts.iter().enumerate() {
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("sweep path {path}: {part} is not an object")))?;
        if k + 1 == parts.len() {
            obj.insert((*part).to_string(), v);
            return Ok(());
        }
        cur = obj
            .entry((*part).to_string())
            .or_insert_with(|| serde_json::Value::Object(Default::default()));
    }
    unreachable!("paths always have at least one part")
}

/// Summary row of one sweep child.
#[derive(Clone, Debug, Serialize)]
pub struct SweepRow {
    pub label: String,
    pub run_dir: String,
    pub balanced_top1: f64,
    pub l2_proto: f64,
    pub l2_pred: f64,
    pub train_loss: f64,
}

/// Runs every child and writes `sweep_summary.csv` under `out_dir`.
pub fn run_sweep(sweep: &SweepConfig, out_dir: &Path, force: bool) -> Result<Vec<SweepRow>> {
    let children = expand_sweep(sweep)?;
    fs::create_dir_all(out_dir)?;
    let mut rows = Vec::with_capacity(children.len());
    for (label, mut cfg) in children {
        cfg.out_dir = out_dir.to_string_lossy().into_owned();
        let artifacts = run_experiment(&cfg, force)?;
        let last = artifacts.final_log();
        rows.push(SweepRow {
            label,
            run_dir: artifacts.run_dir.to_string_lossy().into_owned(),
            balanced_top1: last.balanced_top1,
            l2_proto: last.l2_proto,
            l2_pred: last.l2_pred,
            train_loss: last.train_loss,
        });
    }
    let mut w = csv::Writer::from_path(out_dir.join(SWEEP_SUMMARY_FILE))
        .map_err(|e| Error::Io(std::io::Error::other(e)))?;
    w.write_record(["label", "run_dir", "balanced_top1", "l2_proto", "l2_pred", "train_loss"])
        .map_err(|e| Error::Io(std::io::Error::other(e)))?;
    for row in &rows {
        w.write_record([
            row.label.clone(),
            row.run_dir.clone(),
            serde_json::to_string(&row.balanced_top1)?,
            serde_json::to_string(&row.l2_proto)?,
            serde_json::to_string(&row.l2_pred)?,
            serde_json::to_string(&row.train_loss)?,
        ])
        .map_err(|e| Error::Io(std::io::Error::other(e)))?;
    }
    w.flush()?;
    Ok(rows)
}

/// Prior derived from a dataset, for wiring oracle modes by hand.
pub fn oracle_prior(ds: &PartialDataset) -> Vec<f64> {
    empirical_prior(ds)
}

/// Hash of just the generator settings; dataset directories are named by it
/// so the same data can back many training configs.
pub fn generator_hash(g: &GeneratorConfig) -> Result<String> {
    let digest = Sha256::digest(serde_json::to_string(g)?.as_bytes());
    let mut hex = String::with_capacity(12);
    for b in &digest[..6] {
        hex.push_str(&format!("{b:02x}"));
    }
    Ok(hex)
}

/// Dumps nonzero confidence weights as `sample_id, class, weight` CSV rows.
pub fn dump_weights_csv(
    weights: &crate::disambiguation::ConfidenceWeights,
    path: &Path,
) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    w.write_record(["sample_id", "class", "weight"])
        .map_err(|e| Error::Io(std::io::Error::other(e)))?;
    let m = weights.matrix();
    for i in 0..m.rows() {
        for (class, &v) in m.row(i).iter().enumerate() {
            if v != 0.0 {
                w.write_record([
                    i.to_string(),
                    class.to_string(),
                    serde_json::to_string(&v)?,
                ])
                .map_err(|e| Error::Io(std::io::Error::other(e)))?;
            }
        }
    }
    w.flush()?;
    Ok(())
}
