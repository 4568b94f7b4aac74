//! Error taxonomy shared across the crate.
//!
//! The variants map onto the CLI exit codes: `Config` and `Validation` are
//! user-input problems (exit 2), `NonFinite` is a runtime abort (exit 3),
//! `Io`/`Json` are I/O failures (exit 4). `Structural` and `Contract` flag
//! misuse of an API (wrong shapes, stale caches, broken invariants).

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A config file or experiment definition is invalid.
    #[error("config error: {0}")]
    Config(String),

    /// An argument violates a documented precondition.
    #[error("validation error: {0}")]
    Validation(String),

    /// Tensor/shape mismatch between coupled objects.
    #[error("structural error: {0}")]
    Structural(String),

    /// An API contract was broken (stale cache, invariant violation).
    #[error("contract error: {0}")]
    Contract(String),

    /// Training produced a non-finite loss; carries the abort site.
    #[error("non-finite loss at epoch {epoch}, batch {batch} (sample ids {sample_ids:?})")]
    NonFinite {
        epoch: usize,
        batch: usize,
        sample_ids: Vec<usize>,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
