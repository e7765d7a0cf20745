//! Canonical CSV emission and parsing.
//!
//! Files are UTF-8 with LF line endings and a header row. Reals use the
//! shortest representation that round-trips to the same `f64`, so parsing an
//! emitted file and re-emitting it reproduces the bytes exactly. Absent
//! optional values are empty fields.

use std::cmp::Ordering;
use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::diagnostics::RateClass;
use crate::tasks::FamilyKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchemaId {
    Gap,
    Comparison,
    RunLog,
    Fit,
}

impl SchemaId {
    pub fn file_name(&self) -> &'static str {
        match self {
            SchemaId::Gap => "gaps.csv",
            SchemaId::Comparison => "comparison.csv",
            SchemaId::RunLog => "runlog.csv",
            SchemaId::Fit => "fits.csv",
        }
    }
}

/// A row type with a fixed column order and canonical sort.
pub trait CsvSchema: DeserializeOwned {
    const SCHEMA: SchemaId;
    const HEADER: &'static [&'static str];
    fn fields(&self) -> Vec<String>;
    fn canonical_cmp(&self, other: &Self) -> Ordering;
}

pub fn fmt_real(x: f64) -> String {
    format!("{x:?}")
}

fn fmt_opt_real(x: Option<f64>) -> String {
    x.map(fmt_real).unwrap_or_default()
}

fn fmt_opt<T: ToString>(x: Option<T>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

/// Header plus rows in canonical order.
pub fn render_csv<R: CsvSchema>(rows: &[R]) -> String {
    let mut order: Vec<&R> = rows.iter().collect();
    order.sort_by(|a, b| a.canonical_cmp(b));
    let mut out = R::HEADER.join(",");
    out.push('\n');
    for row in order {
        out.push_str(&row.fields().join(","));
        out.push('\n');
    }
    out
}

pub fn write_csv<R: CsvSchema>(path: &Path, rows: &[R]) -> Result<(), HarnessError> {
    fs::write(path, render_csv(rows)).map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn parse_csv<R: CsvSchema>(text: &str, origin: &Path) -> Result<Vec<R>, HarnessError> {
    let bad = |message: String| HarnessError::Csv {
        path: origin.to_path_buf(),
        message,
    };
    let mut reader = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| bad(e.to_string()))?;
    if header.iter().ne(R::HEADER.iter().copied()) {
        return Err(bad(format!(
            "header {:?} does not match schema {:?}",
            header.iter().collect::<Vec<_>>(),
            R::HEADER
        )));
    }
    reader
        .deserialize()
        .map(|r| r.map_err(|e| bad(e.to_string())))
        .collect()
}

pub fn read_csv<R: CsvSchema>(path: &Path) -> Result<Vec<R>, HarnessError> {
    let text = fs::read_to_string(path).map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_csv(&text, path)
}

/// One sweep cell in the gap table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapRow {
    pub family: FamilyKind,
    pub sigma: f64,
    pub n_train: usize,
    pub seed_index: usize,
    pub derived_seed: u64,
    pub mean_train_return: f64,
    pub mean_test_return: f64,
    pub epsilon_gen_signed: f64,
    pub epsilon_gen_abs: f64,
    pub hoeffding_radius_test: f64,
    pub subopt_gap: f64,
    pub meta_iters: usize,
    pub final_grad_norm: Option<f64>,
    pub rate_class: RateClass,
    pub meta_win_fraction: f64,
}

fn cell_order(a: (f64, usize, usize), b: (f64, usize, usize)) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2))
}

impl CsvSchema for GapRow {
    const SCHEMA: SchemaId = SchemaId::Gap;
    const HEADER: &'static [&'static str] = &[
        "family",
        "sigma",
        "n_train",
        "seed_index",
        "derived_seed",
        "mean_train_return",
        "mean_test_return",
        "epsilon_gen_signed",
        "epsilon_gen_abs",
        "hoeffding_radius_test",
        "subopt_gap",
        "meta_iters",
        "final_grad_norm",
        "rate_class",
        "meta_win_fraction",
    ];

    fn fields(&self) -> Vec<String> {
        vec![
            self.family.as_str().to_string(),
            fmt_real(self.sigma),
            self.n_train.to_string(),
            self.seed_index.to_string(),
            self.derived_seed.to_string(),
            fmt_real(self.mean_train_return),
            fmt_real(self.mean_test_return),
            fmt_real(self.epsilon_gen_signed),
            fmt_real(self.epsilon_gen_abs),
            fmt_real(self.hoeffding_radius_test),
            fmt_real(self.subopt_gap),
            self.meta_iters.to_string(),
            fmt_opt_real(self.final_grad_norm),
            self.rate_class.as_str().to_string(),
            fmt_real(self.meta_win_fraction),
        ]
    }

    fn canonical_cmp(&self, other: &Self) -> Ordering {
        cell_order(
            (self.sigma, self.n_train, self.seed_index),
            (other.sigma, other.n_train, other.seed_index),
        )
    }
}

/// One test task of one cell in the meta-versus-scratch comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub sigma: f64,
    pub n_train: usize,
    pub seed_index: usize,
    pub task_index: u64,
    pub final_return_meta: f64,
    pub final_return_scratch: f64,
    pub steps_to_target_meta: Option<usize>,
    pub steps_to_target_scratch: Option<usize>,
}

impl CsvSchema for ComparisonRow {
    const SCHEMA: SchemaId = SchemaId::Comparison;
    const HEADER: &'static [&'static str] = &[
        "sigma",
        "n_train",
        "seed_index",
        "task_index",
        "final_return_meta",
        "final_return_scratch",
        "steps_to_target_meta",
        "steps_to_target_scratch",
    ];

    fn fields(&self) -> Vec<String> {
        vec![
            fmt_real(self.sigma),
            self.n_train.to_string(),
            self.seed_index.to_string(),
            self.task_index.to_string(),
            fmt_real(self.final_return_meta),
            fmt_real(self.final_return_scratch),
            fmt_opt(self.steps_to_target_meta),
            fmt_opt(self.steps_to_target_scratch),
        ]
    }

    fn canonical_cmp(&self, other: &Self) -> Ordering {
        cell_order(
            (self.sigma, self.n_train, self.seed_index),
            (other.sigma, other.n_train, other.seed_index),
        )
        .then(self.task_index.cmp(&other.task_index))
    }
}

/// One meta-training iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLogRow {
    pub iteration: usize,
    pub meta_loss: f64,
    pub grad_norm: f64,
}

impl CsvSchema for RunLogRow {
    const SCHEMA: SchemaId = SchemaId::RunLog;
    const HEADER: &'static [&'static str] = &["iteration", "meta_loss", "grad_norm"];

    fn fields(&self) -> Vec<String> {
        vec![
            self.iteration.to_string(),
            fmt_real(self.meta_loss),
            fmt_real(self.grad_norm),
        ]
    }

    fn canonical_cmp(&self, other: &Self) -> Ordering {
        self.iteration.cmp(&other.iteration)
    }
}

/// One per-σ scaling fit. Numeric columns are empty when the fit failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRow {
    pub sigma: f64,
    pub complexity: f64,
    pub n_points: usize,
    pub fitted_exponent: Option<f64>,
    pub fitted_intercept: Option<f64>,
    pub r_squared: Option<f64>,
    pub constant_k: Option<f64>,
    pub status: String,
}

impl CsvSchema for FitRow {
    const SCHEMA: SchemaId = SchemaId::Fit;
    const HEADER: &'static [&'static str] = &[
        "sigma",
        "complexity",
        "n_points",
        "fitted_exponent",
        "fitted_intercept",
        "r_squared",
        "constant_k",
        "status",
    ];

    fn fields(&self) -> Vec<String> {
        vec![
            fmt_real(self.sigma),
            fmt_real(self.complexity),
            self.n_points.to_string(),
            fmt_opt_real(self.fitted_exponent),
            fmt_opt_real(self.fitted_intercept),
            fmt_opt_real(self.r_squared),
            fmt_opt_real(self.constant_k),
            self.status.clone(),
        ]
    }

    fn canonical_cmp(&self, other: &Self) -> Ordering {
        self.sigma.total_cmp(&other.sigma)
    }
}
