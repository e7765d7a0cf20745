//! Configuration, seeded sweep orchestration and result emission.

mod cell;
mod config;
mod csvio;
mod sweep;

use std::path::PathBuf;

use thiserror::Error;

pub use cell::{compare_cell, comparison_rows, run_cell, CellOutcome, CellRecord, DIAGNOSTIC_WINDOW};
pub use config::{
    cell_at, parse_config, sweep_cells, task_offset, ComparisonConfig, ConfigError, ExperimentConfig, SweepCell,
};
pub use csvio::{
    fmt_real, parse_csv, read_csv, render_csv, write_csv, ComparisonRow, CsvSchema, FitRow, GapRow, RunLogRow, SchemaId,
};
pub use sweep::{
    fit_gap_rows, fits_json, run_comparisons, run_sweep, write_sweep, FitSummary, SweepOutput, COMPLEXITY_TASKS,
};

/// Environment variable that overrides the requested worker count.
pub const PARALLEL_ENV: &str = "METABOUND_PARALLEL";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),

    #[error("cell (sigma={sigma}, n_train={n_train}, seed={seed_index}) failed: {source}")]
    Cell {
        sigma: f64,
        n_train: usize,
        seed_index: usize,
        #[source]
        source: crate::Error,
    },

    #[error(transparent)]
    Core(#[from] crate::Error),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: malformed csv: {message}", path.display())]
    Csv { path: PathBuf, message: String },

    #[error("thread pool: {0}")]
    Pool(String),
}

/// Runs `f` on a dedicated pool of `threads` workers.
pub fn with_parallelism<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T, HarnessError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| HarnessError::Pool(e.to_string()))?;
    Ok(pool.install(f))
}
