//! Run configuration, dataset ingestion, training and evaluation loops, the
//! ablation-grid runner, and a synthetic corpus generator for smoke tests.
//!
//! A run directory holds `history.jsonl` (one record per epoch),
//! `best.mifw` (the selected parameters), `last.mifw` (final parameters plus
//! optimizer state) and `report.json` (test metrics). An ablation directory
//! holds one run directory per config under `runs/`, plus `table.csv` and
//! `report.json`.

mod ablate;
mod config;
mod dataset;
pub mod synth;
mod train;

pub use ablate::{ablate, render_table, table3_grid, AblationReport, TableRow, TABLE_HEADER};
pub use config::{Flags, LossKind, ModelSpec, OptKind, RunConfig};
pub use dataset::{ingest, load_batch, load_image, DatasetIndex, Layout, Sample, Split};
pub use train::{evaluate, init_model, run, train, HistoryRecord, RunReport, TrainOutcome};

use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("split `{0}` is missing")]
    MissingSplit(String),
    #[error("class `{class}` has no images in split `{split}`")]
    EmptyClass { split: String, class: String },
    #[error("cannot read image {path}: {reason}")]
    UnreadableImage { path: PathBuf, reason: String },
    #[error("dataset error: {0}")]
    Data(String),
    #[error("configuration mismatch: {0}")]
    ConfigMismatch(String),
    #[error("non-finite loss at epoch {epoch}, step {step}; state dumped to {dump}")]
    NonFiniteLoss { epoch: u32, step: u64, dump: PathBuf },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Nn(#[from] crate::nn::NnError),
    #[error(transparent)]
    Opt(#[from] crate::sfopt::OptError),
    #[error(transparent)]
    Augment(#[from] crate::augment::AugmentError),
    #[error(transparent)]
    Metrics(#[from] crate::metrics::MetricsError),
    #[error(transparent)]
    BinImg(#[from] crate::binimg::BinImgError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl HarnessError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;
