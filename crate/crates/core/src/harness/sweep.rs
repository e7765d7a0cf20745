use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::cell::{compare_cell, run_cell, CellRecord};
use super::config::{sweep_cells, ExperimentConfig, SweepCell};
use super::csvio::{render_csv, ComparisonRow, CsvSchema, FitRow, GapRow};
use super::{with_parallelism, HarnessError};
use crate::baselines::ComparisonReport;
use crate::bounds::{fit_bound_scaling, BoundFit};
use crate::error::Error;
use crate::tasks::{estimate_complexity, ComplexityEstimate, TaskRole, TaskSet};

/// Tasks sampled per σ to measure the complexity used in the fit.
pub const COMPLEXITY_TASKS: usize = 100;

/// Scaling fit for one σ. `complexity` is the optimal-return standard
/// deviation of the family at that σ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub sigma: f64,
    pub complexity: f64,
    pub fit: Option<BoundFit>,
    pub error: Option<String>,
}

impl FitSummary {
    pub fn row(&self) -> FitRow {
        let fit = self.fit.as_ref();
        FitRow {
            sigma: self.sigma,
            complexity: self.complexity,
            n_points: fit.map_or(0, |f| f.grid.len()),
            fitted_exponent: fit.map(|f| f.fitted_exponent),
            fitted_intercept: fit.map(|f| f.fitted_intercept),
            r_squared: fit.map(|f| f.r_squared),
            constant_k: fit.and_then(|f| f.constant_k),
            status: self.error.clone().unwrap_or_else(|| "ok".into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutput {
    /// In canonical (σ, N, seed) order.
    pub records: Vec<CellRecord>,
    pub complexities: Vec<(f64, ComplexityEstimate)>,
    pub fits: Vec<FitSummary>,
}

impl SweepOutput {
    pub fn gap_rows(&self) -> Vec<GapRow> {
        self.records.iter().map(CellRecord::gap_row).collect()
    }

    pub fn comparison_rows(&self) -> Vec<ComparisonRow> {
        self.records.iter().flat_map(CellRecord::comparison_rows).collect()
    }

    pub fn fits_json(&self) -> String {
        fits_json(&self.fits)
    }
}

pub fn fits_json(fits: &[FitSummary]) -> String {
    let mut s = serde_json::to_string_pretty(&serde_json::json!({ "fits": fits })).expect("fits serialize");
    s.push('\n');
    s
}

/// Groups gap rows by σ and fits `|ε_gen|` against N for each.
///
/// `complexity` supplies the complexity of each σ; a missing value makes
/// that σ's fit an error.
pub fn fit_gap_rows(rows: &[GapRow], complexity: impl Fn(f64) -> Option<f64>) -> Vec<FitSummary> {
    let mut by_sigma: BTreeMap<u64, BTreeMap<usize, Vec<(usize, f64)>>> = BTreeMap::new();
    let mut sigmas: BTreeMap<u64, f64> = BTreeMap::new();
    for r in rows {
        // Ordered key for non-negative floats.
        let key = r.sigma.to_bits();
        sigmas.insert(key, r.sigma);
        by_sigma
            .entry(key)
            .or_default()
            .entry(r.n_train)
            .or_default()
            .push((r.seed_index, r.epsilon_gen_abs));
    }
    by_sigma
        .into_iter()
        .map(|(key, grid)| {
            let sigma = sigmas[&key];
            let Some(c) = complexity(sigma) else {
                return FitSummary {
                    sigma,
                    complexity: f64::NAN,
                    fit: None,
                    error: Some(format!("no complexity available for sigma {sigma}")),
                };
            };
            let grid_rows: Vec<(usize, Vec<f64>)> = grid
                .into_iter()
                .map(|(n, mut gaps)| {
                    gaps.sort_by_key(|g| g.0);
                    (n, gaps.into_iter().map(|g| g.1).collect())
                })
                .collect();
            match fit_bound_scaling(&grid_rows, c) {
                Ok(fit) => FitSummary {
                    sigma,
                    complexity: c,
                    fit: Some(fit),
                    error: None,
                },
                Err(Error::InsufficientData(_)) => FitSummary {
                    sigma,
                    complexity: c,
                    fit: None,
                    error: Some("insufficient grid for fit".into()),
                },
                Err(e) => FitSummary {
                    sigma,
                    complexity: c,
                    fit: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect()
}

fn sort_records(records: &mut [CellRecord]) {
    records.sort_by(|a, b| {
        a.sigma
            .total_cmp(&b.sigma)
            .then(a.n_train.cmp(&b.n_train))
            .then(a.seed_index.cmp(&b.seed_index))
    });
}

/// Runs every cell on `parallelism` workers, then measures per-σ complexity
/// and fits the gap scaling. Output is independent of `parallelism`.
pub fn run_sweep(cfg: &ExperimentConfig, parallelism: usize) -> Result<SweepOutput, HarnessError> {
    cfg.validate()?;
    let cells = sweep_cells(cfg)?;
    with_parallelism(parallelism, || {
        let mut records: Vec<CellRecord> = cells
            .par_iter()
            .map(|c| run_cell(c, cfg).map(|o| o.record))
            .collect::<Result<_, _>>()?;
        sort_records(&mut records);
        if records.len() != cells.len() {
            return Err(HarnessError::Pool(format!(
                "{} cells scheduled but {} records collected",
                cells.len(),
                records.len()
            )));
        }
        let complexities: Vec<(f64, ComplexityEstimate)> = cfg
            .sigma_grid
            .iter()
            .map(|&s| {
                let set = TaskSet::sample(&cfg.family.with_sigma(s), 0, COMPLEXITY_TASKS, TaskRole::Train)?;
                Ok((s, estimate_complexity(&set)?))
            })
            .collect::<Result<_, Error>>()?;
        let gap_rows: Vec<GapRow> = records.iter().map(CellRecord::gap_row).collect();
        let fits = fit_gap_rows(&gap_rows, |s| {
            complexities
                .iter()
                .find(|(cs, _)| *cs == s)
                .map(|(_, c)| c.optimal_return_std)
        });
        Ok(SweepOutput {
            records,
            complexities,
            fits,
        })
    })?
}

/// Meta-trains and compares every cell, skipping gap measurement.
pub fn run_comparisons(
    cfg: &ExperimentConfig,
    parallelism: usize,
) -> Result<Vec<(SweepCell, ComparisonReport)>, HarnessError> {
    cfg.validate()?;
    let cells = sweep_cells(cfg)?;
    with_parallelism(parallelism, || {
        cells
            .par_iter()
            .map(|c| compare_cell(c, cfg).map(|r| (*c, r)))
            .collect::<Result<Vec<_>, _>>()
    })?
}

fn write_all(dir: &Path, files: &[(PathBuf, String)]) -> Result<(), HarnessError> {
    fs::create_dir_all(dir).map_err(|source| HarnessError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    for (path, body) in files {
        fs::write(path, body).map_err(|source| HarnessError::Io {
            path: path.clone(),
            source,
        })?;
    }
    Ok(())
}

/// Writes the gap, comparison and fit tables plus the fit JSON into `dir`.
/// On any failure, files already written by this call are removed.
pub fn write_sweep(out: &SweepOutput, dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    let fit_rows: Vec<FitRow> = out.fits.iter().map(FitSummary::row).collect();
    let files = vec![
        (dir.join(GapRow::SCHEMA.file_name()), render_csv(&out.gap_rows())),
        (
            dir.join(ComparisonRow::SCHEMA.file_name()),
            render_csv(&out.comparison_rows()),
        ),
        (dir.join(FitRow::SCHEMA.file_name()), render_csv(&fit_rows)),
        (dir.join("fits.json"), out.fits_json()),
    ];
    if let Err(e) = write_all(dir, &files) {
        for (path, _) in &files {
            let _ = fs::remove_file(path);
        }
        return Err(e);
    }
    Ok(files.into_iter().map(|(p, _)| p).collect())
}
