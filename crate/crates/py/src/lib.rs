//! Python bindings: dataset synthesis, in-memory experiment runs, and the
//! bound/metric helpers. Configs cross the boundary as JSON strings, results
//! come back as typed objects.
//!
//! Build with `cargo build -p ltpll-py --release`; the importable module is
//! the produced `libltpll_py.so` renamed to `ltpll_py.so` (see
//! `python/smoke_test.py`, which does this automatically).

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use ltpll_core::datagen;
use ltpll_core::error::Error;
use ltpll_core::eval;
use ltpll_core::experiment::{run_experiment_in_memory, ExperimentConfig};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io(_) | Error::Json(_) => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

/// A synthesized long-tailed partial-label dataset plus its balanced test split.
#[pyclass]
struct Dataset {
    ds: datagen::PartialDataset,
    test: datagen::TestSet,
}

#[pymethods]
impl Dataset {
    /// Synthesizes from a generator config JSON object.
    #[new]
    fn new(generator_json: &str) -> PyResult<Self> {
        let cfg: datagen::GeneratorConfig = serde_json::from_str(generator_json)
            .map_err(|e| PyValueError::new_err(format!("generator config: {e}")))?;
        let (ds, test) = datagen::synth_dataset(&cfg).map_err(to_py)?;
        Ok(Self { ds, test })
    }

    /// Loads a directory written by `save` (or the CLI's `gen`).
    #[staticmethod]
    fn load(dir: &str) -> PyResult<Self> {
        let (ds, test) = datagen::load_dataset(std::path::Path::new(dir)).map_err(to_py)?;
        Ok(Self { ds, test })
    }

    fn save(&self, dir: &str) -> PyResult<()> {
        datagen::write_dataset(&self.ds, &self.test, std::path::Path::new(dir)).map_err(to_py)
    }

    #[getter]
    fn num_samples(&self) -> usize {
        self.ds.num_samples()
    }

    #[getter]
    fn num_classes(&self) -> usize {
        self.ds.num_classes()
    }

    #[getter]
    fn num_test_samples(&self) -> usize {
        self.test.num_samples()
    }

    #[getter]
    fn counts(&self) -> Vec<usize> {
        self.ds.counts().to_vec()
    }

    /// Analytic ambiguity degree of the generating process.
    #[getter]
    fn eta(&self) -> f64 {
        self.ds.eta()
    }

    /// Oracle class prior (harness-side information).
    fn empirical_prior(&self) -> Vec<f64> {
        datagen::empirical_prior(&self.ds)
    }

    fn candidate_sizes(&self) -> Vec<usize> {
        self.ds.candidates().iter().map(|s| s.len()).collect()
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset(samples={}, classes={}, eta={})",
            self.ds.num_samples(),
            self.ds.num_classes(),
            self.ds.eta()
        )
    }
}

/// Final metrics of one training run.
#[pyclass]
struct TrainOutcome {
    #[pyo3(get)]
    balanced_top1: f64,
    #[pyo3(get)]
    per_class_accuracy: Vec<f64>,
    #[pyo3(get)]
    train_loss: f64,
    #[pyo3(get)]
    l2_proto: f64,
    #[pyo3(get)]
    l2_pred: f64,
    #[pyo3(get)]
    estimated_distribution: Vec<f64>,
    #[pyo3(get)]
    epochs: usize,
    logs_json: String,
}

#[pymethods]
impl TrainOutcome {
    /// Full per-epoch logs as a JSON array.
    fn epoch_logs_json(&self) -> &str {
        &self.logs_json
    }

    fn __repr__(&self) -> String {
        format!(
            "TrainOutcome(balanced_top1={:.4}, l2_pred={:.4}, epochs={})",
            self.balanced_top1, self.l2_pred, self.epochs
        )
    }
}

/// Runs gen -> train -> eval in memory from an experiment config JSON object.
#[pyfunction]
fn run_experiment(config_json: &str) -> PyResult<TrainOutcome> {
    let cfg: ExperimentConfig = serde_json::from_str(config_json)
        .map_err(|e| PyValueError::new_err(format!("experiment config: {e}")))?;
    let artifacts = run_experiment_in_memory(&cfg).map_err(to_py)?;
    let last = artifacts.final_log();
    Ok(TrainOutcome {
        balanced_top1: last.balanced_top1,
        per_class_accuracy: last.per_class_accuracy.clone(),
        train_loss: last.train_loss,
        l2_proto: last.l2_proto,
        l2_pred: last.l2_pred,
        estimated_distribution: last.dist_proto.clone(),
        epochs: artifacts.config.train.epochs,
        logs_json: serde_json::to_string(&artifacts.logs)
            .map_err(|e| PyValueError::new_err(e.to_string()))?,
    })
}

/// Exponential-decay class counts: round(n_max * rho^(-c/(C-1))).
#[pyfunction]
fn longtail_counts(num_classes: usize, n_max: usize, rho: f64) -> PyResult<Vec<usize>> {
    datagen::longtail_counts(num_classes, n_max, rho).map_err(to_py)
}

/// The distribution-estimation error bound
/// 4/((ln 2 - ln(1+eta)) N) * (d_H (ln 2N + 2 ln C) - ln delta + ln 2).
#[pyfunction]
fn prop1_bound(n: usize, c: usize, d_h: usize, eta: f64, delta: f64) -> PyResult<f64> {
    eval::prop1_bound(&eval::BoundInputs {
        n,
        c,
        d_h,
        eta,
        delta,
    })
    .map_err(to_py)
}

/// Euclidean distance between two probability vectors.
#[pyfunction]
fn l2_distance(p: Vec<f64>, q: Vec<f64>) -> PyResult<f64> {
    eval::l2_distance(&p, &q).map_err(to_py)
}

/// Cosine schedule value: base_lr * 0.5 * (1 + cos(pi * epoch / total)).
#[pyfunction]
fn cosine_lr(epoch: usize, total_epochs: usize, base_lr: f64) -> PyResult<f64> {
    if epoch >= total_epochs {
        return Err(PyValueError::new_err("epoch out of range"));
    }
    Ok(base_lr * 0.5 * (1.0 + (std::f64::consts::PI * epoch as f64 / total_epochs as f64).cos()))
}

#[pymodule]
fn ltpll_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Dataset>()?;
    m.add_class::<TrainOutcome>()?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(longtail_counts, m)?)?;
    m.add_function(wrap_pyfunction!(prop1_bound, m)?)?;
    m.add_function(wrap_pyfunction!(l2_distance, m)?)?;
    m.add_function(wrap_pyfunction!(cosine_lr, m)?)?;
    Ok(())
}
