//! Desk-scale laboratory for long-tailed partial label learning (LT-PLL).
//!
//! The crate synthesizes long-tailed partially-labeled datasets, trains small
//! MLP classifiers with four self-training disambiguation strategies (PRODEN,
//! LW, CAVL, CORR), applies constant or dynamic rebalancing to the
//! disambiguation logits, and evaluates balanced accuracy, class-distribution
//! estimation error, and a sample-complexity bound on that error. Everything
//! is deterministic under a seed: same config, same bytes.
//!
//! Modules follow the pipeline:
//!
//! - [`datagen`]: worlds, candidate-set generation, dataset files;
//! - [`nncore`]: the MLP, exact backprop, momentum SGD, cosine schedule;
//! - [`disambiguation`]: confidence-weight updates and weighted losses;
//! - [`rebalance`]: the prototype feature and per-class logit offsets;
//! - [`trainer`]: the batch loop in a fixed six-step order;
//! - [`eval`]: metrics, distribution estimates, the bound calculator;
//! - [`experiment`]: declarative configs, run artifacts, sweeps.

pub mod datagen;
pub mod disambiguation;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod mat;
pub mod nncore;
pub mod numeric;
pub mod rebalance;
pub mod trainer;

pub use error::{Error, Result};
pub use mat::Mat;
