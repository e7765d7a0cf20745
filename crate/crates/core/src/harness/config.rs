use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::DEFAULT_TARGET_FRACTION;
use crate::bounds::DEFAULT_CONFIDENCE;
use crate::meta::MetaConfig;
use crate::seed::mix_seed;
use crate::tasks::TaskFamilySpec;

const TAG_TASK_OFFSET: u64 = 0x5441_534B;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("config parse error at `{path}`: {message}")]
    Parse { path: String, message: String },

    #[error("config invalid at `{path}`: {message}")]
    Invalid { path: String, message: String },
}

fn invalid(path: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        path: path.into(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComparisonConfig {
    pub lr: f64,
    pub budget: usize,
    #[serde(default = "default_target_fraction")]
    pub target_fraction: f64,
}

fn default_target_fraction() -> f64 {
    DEFAULT_TARGET_FRACTION
}
fn default_n_train_grid() -> Vec<usize> {
    vec![4, 8, 16, 32, 64, 128]
}
fn default_sigma_grid() -> Vec<f64> {
    vec![0.1, 0.5, 1.0]
}
fn default_n_test() -> usize {
    64
}
fn default_n_seeds() -> usize {
    20
}
fn default_confidence() -> f64 {
    DEFAULT_CONFIDENCE
}
fn default_output_dir() -> String {
    "results".into()
}

/// The N × σ × seed experimental design plus everything a cell needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Base family; `complexity_sigma` is overridden per cell by `sigma_grid`.
    pub family: TaskFamilySpec,
    pub meta: MetaConfig,
    #[serde(default = "default_n_train_grid")]
    pub n_train_grid: Vec<usize>,
    #[serde(default = "default_sigma_grid")]
    pub sigma_grid: Vec<f64>,
    #[serde(default = "default_n_test")]
    pub n_test: usize,
    #[serde(default = "default_n_seeds")]
    pub n_seeds: usize,
    pub master_seed: u64,
    pub comparison: ComparisonConfig,
    #[serde(default = "default_confidence")]
    pub confidence: f64,
    #[serde(default = "default_output_dir")]
    pub output_dir: String,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.family.validate().map_err(|e| invalid("family", e.to_string()))?;
        self.meta.validate().map_err(|e| invalid("meta", e.to_string()))?;

        check_grid("n_train_grid", &self.n_train_grid, |a, b| a.cmp(b))?;
        if self.n_train_grid.contains(&0) {
            return Err(invalid("n_train_grid", "training-set sizes must be at least 1"));
        }
        check_grid("sigma_grid", &self.sigma_grid, |a, b| a.total_cmp(b))?;
        if let Some(s) = self.sigma_grid.iter().find(|s| !(0.0..=1.0).contains(*s)) {
            return Err(invalid("sigma_grid", format!("sigma {s} outside [0, 1]")));
        }
        let smallest = self.n_train_grid[0];
        if self.meta.meta_batch > smallest {
            return Err(invalid(
                "meta.meta_batch",
                format!(
                    "meta_batch {} exceeds the smallest training set ({smallest})",
                    self.meta.meta_batch
                ),
            ));
        }
        if self.n_test == 0 {
            return Err(invalid("n_test", "must be at least 1"));
        }
        if self.n_seeds == 0 {
            return Err(invalid("n_seeds", "must be at least 1"));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(invalid(
                "confidence",
                format!("must lie in (0, 1), got {}", self.confidence),
            ));
        }
        let c = &self.comparison;
        if !(c.lr > 0.0 && c.lr.is_finite()) {
            return Err(invalid("comparison.lr", format!("must be positive, got {}", c.lr)));
        }
        if c.budget == 0 {
            return Err(invalid("comparison.budget", "must be at least 1"));
        }
        if !(c.target_fraction > 0.0 && c.target_fraction <= 1.0) {
            return Err(invalid(
                "comparison.target_fraction",
                format!("must lie in (0, 1], got {}", c.target_fraction),
            ));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

fn check_grid<T: std::fmt::Debug>(
    path: &str,
    grid: &[T],
    cmp: impl Fn(&T, &T) -> std::cmp::Ordering,
) -> Result<(), ConfigError> {
    use std::cmp::Ordering::*;
    if grid.is_empty() {
        return Err(invalid(path, "grid must not be empty"));
    }
    for w in grid.windows(2) {
        match cmp(&w[0], &w[1]) {
            Less => {}
            Equal => return Err(invalid(path, format!("duplicate grid value {:?}", w[0]))),
            Greater => {
                return Err(invalid(
                    path,
                    format!("grid must be ascending ({:?} before {:?})", w[0], w[1]),
                ))
            }
        }
    }
    Ok(())
}

/// Strict JSON parse followed by invariant validation.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| ConfigError::Parse {
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })?;
    cfg.validate()?;
    Ok(cfg)
}

/// One coordinate of the sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub sigma: f64,
    pub n_train: usize,
    pub seed_index: usize,
    pub sigma_index: usize,
    pub n_index: usize,
    /// `mix(master_seed, sigma_index, n_index, seed_index)`; keys the
    /// meta-batch stream.
    pub derived_seed: u64,
}

fn make_cell(cfg: &ExperimentConfig, sigma_index: usize, n_index: usize, seed_index: usize) -> SweepCell {
    SweepCell {
        sigma: cfg.sigma_grid[sigma_index],
        n_train: cfg.n_train_grid[n_index],
        seed_index,
        sigma_index,
        n_index,
        derived_seed: mix_seed(&[cfg.master_seed, sigma_index as u64, n_index as u64, seed_index as u64]),
    }
}

/// First task index of a replicate's block in the task index space.
///
/// Depends only on `(master_seed, seed_index)`, so cells sharing a replicate
/// see common task draws across σ and N. The 40-bit range leaves room for
/// `n_test + n_train` indices without overflow.
pub fn task_offset(cfg: &ExperimentConfig, seed_index: usize) -> u64 {
    mix_seed(&[cfg.master_seed, TAG_TASK_OFFSET, seed_index as u64]) >> 24
}

/// All cells in (σ, N, seed) order, with a seed-collision check.
pub fn sweep_cells(cfg: &ExperimentConfig) -> Result<Vec<SweepCell>, ConfigError> {
    let mut cells = Vec::with_capacity(cfg.sigma_grid.len() * cfg.n_train_grid.len() * cfg.n_seeds);
    let mut seen = HashSet::new();
    for si in 0..cfg.sigma_grid.len() {
        for ni in 0..cfg.n_train_grid.len() {
            for k in 0..cfg.n_seeds {
                let cell = make_cell(cfg, si, ni, k);
                if !seen.insert(cell.derived_seed) {
                    return Err(invalid(
                        "master_seed",
                        format!(
                            "derived seed collision at (sigma={}, n_train={}, seed={k})",
                            cell.sigma, cell.n_train
                        ),
                    ));
                }
                cells.push(cell);
            }
        }
    }
    Ok(cells)
}

/// The cell at the given grid values.
pub fn cell_at(
    cfg: &ExperimentConfig,
    sigma: f64,
    n_train: usize,
    seed_index: usize,
) -> Result<SweepCell, ConfigError> {
    let si = cfg
        .sigma_grid
        .iter()
        .position(|&s| s == sigma)
        .ok_or_else(|| invalid("sigma_grid", format!("sigma {sigma} is not in the grid")))?;
    let ni = cfg
        .n_train_grid
        .iter()
        .position(|&n| n == n_train)
        .ok_or_else(|| invalid("n_train_grid", format!("n_train {n_train} is not in the grid")))?;
    if seed_index >= cfg.n_seeds {
        return Err(invalid(
            "n_seeds",
            format!("seed index {seed_index} >= n_seeds {}", cfg.n_seeds),
        ));
    }
    Ok(make_cell(cfg, si, ni, seed_index))
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "family": {"family_kind": "perturbed_random", "n_states": 5, "n_actions": 3,
                   "discount": 0.9, "reward_range": [0.0, 1.0], "base_seed": 7},
        "meta": {"inner_lr": 0.5, "inner_steps": 1, "meta_batch": 4,
                 "schedule": {"base_rate": 0.5, "exponent": 0.0}, "max_iters": 10},
        "n_train_grid": [4], "sigma_grid": [0.5], "n_seeds": 1,
        "master_seed": 11,
        "comparison": {"lr": 0.5, "budget": 5}
    }"#;

    #[test]
    fn minimal_document_gets_defaults() {
        let cfg = parse_config(MINIMAL).unwrap();
        assert_eq!(cfg.n_test, 64);
        assert_eq!(cfg.confidence, 0.95);
        assert_eq!(cfg.comparison.target_fraction, 0.9);
        assert_eq!(cfg.meta.grad_tol, 1e-3);
        assert_eq!(parse_config(&cfg.to_json()).unwrap(), cfg);
    }

    #[test]
    fn unknown_field_is_named() {
        let text = MINIMAL.replace("\"n_train_grid\"", "\"n_trian_grid\"");
        let err = parse_config(&text).unwrap_err();
        assert!(err.to_string().contains("n_trian_grid"), "{err}");
    }

    #[test]
    fn nested_unknown_field_has_path() {
        let text = MINIMAL.replace("\"max_iters\"", "\"max_iter\"");
        match parse_config(&text).unwrap_err() {
            ConfigError::Parse { path, message } => {
                assert_eq!(path, "meta.max_iter");
                assert!(message.contains("max_iter"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn duplicate_sigma_rejected() {
        let text = MINIMAL.replace("[0.5]", "[0.5, 0.5]");
        let err = parse_config(&text).unwrap_err();
        assert!(
            matches!(&err, ConfigError::Invalid { path, message } if path == "sigma_grid" && message.contains("duplicate")),
            "{err}"
        );
    }

    #[test]
    fn descending_grid_rejected() {
        let text = MINIMAL.replace("[4]", "[8, 4]");
        assert!(parse_config(&text).is_err());
    }

    #[test]
    fn malformed_json_rejected() {
        assert!(matches!(parse_config("{"), Err(ConfigError::Parse { .. })));
    }

    #[test]
    fn batch_larger_than_smallest_train_set_rejected() {
        let text = MINIMAL.replace("\"meta_batch\": 4", "\"meta_batch\": 5");
        let err = parse_config(&text).unwrap_err();
        assert!(matches!(err, ConfigError::Invalid { ref path, .. } if path == "meta.meta_batch"));
    }

    #[test]
    fn cells_are_distinct_and_addressable() {
        let mut cfg = parse_config(MINIMAL).unwrap();
        cfg.sigma_grid = vec![0.0, 0.5, 1.0];
        cfg.n_train_grid = vec![4, 8, 16];
        cfg.n_seeds = 4;
        let cells = sweep_cells(&cfg).unwrap();
        assert_eq!(cells.len(), 36);
        let c = cell_at(&cfg, 0.5, 8, 3).unwrap();
        assert!(cells.contains(&c));
        assert!(cell_at(&cfg, 0.25, 8, 0).is_err());
    }
}
