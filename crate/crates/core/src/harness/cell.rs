use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{task_offset, ExperimentConfig, SweepCell};
use super::csvio::{ComparisonRow, GapRow, RunLogRow};
use super::HarnessError;
use crate::baselines::{compare_meta_vs_scratch, ComparisonReport};
use crate::bounds::{generalization_gap, suboptimality_gap_per_task, GapContext, GapReport};
use crate::diagnostics::{convergence_diagnostics, ConvergenceReport, RateClass};
use crate::mdp::{exact_policy_return, Mdp};
use crate::meta::{adapt, meta_train, MetaConfig, MetaState};
use crate::policy::PolicyParams;
use crate::tasks::{FamilyKind, TaskRole, TaskSet};
use crate::Result;

/// Window for per-cell convergence diagnostics (shortened for short runs).
pub const DIAGNOSTIC_WINDOW: usize = 10;

/// Everything measured for one sweep cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub family: FamilyKind,
    pub sigma: f64,
    pub n_train: usize,
    pub seed_index: usize,
    pub derived_seed: u64,
    pub gap: GapReport,
    /// Mean of `L(π*) - L(adapted π)` over the test tasks (never positive).
    pub subopt_gap: f64,
    /// `-subopt_gap`.
    pub regret: f64,
    pub meta_iters: usize,
    pub final_grad_norm: Option<f64>,
    pub convergence: Option<ConvergenceReport>,
    pub comparison: ComparisonReport,
}

impl CellRecord {
    pub fn gap_row(&self) -> GapRow {
        GapRow {
            family: self.family,
            sigma: self.sigma,
            n_train: self.n_train,
            seed_index: self.seed_index,
            derived_seed: self.derived_seed,
            mean_train_return: self.gap.mean_train_return,
            mean_test_return: self.gap.mean_test_return,
            epsilon_gen_signed: self.gap.epsilon_gen_signed,
            epsilon_gen_abs: self.gap.epsilon_gen_abs,
            hoeffding_radius_test: self.gap.hoeffding_radius_test,
            subopt_gap: self.subopt_gap,
            meta_iters: self.meta_iters,
            final_grad_norm: self.final_grad_norm,
            rate_class: self
                .convergence
                .as_ref()
                .map_or(RateClass::Undetermined, |c| c.rate_class),
            meta_win_fraction: self.comparison.meta_win_fraction,
        }
    }

    pub fn comparison_rows(&self) -> Vec<ComparisonRow> {
        comparison_rows(self.sigma, self.n_train, self.seed_index, &self.comparison)
    }
}

/// One row per test task of `report`, tagged with its cell coordinates.
pub fn comparison_rows(sigma: f64, n_train: usize, seed_index: usize, report: &ComparisonReport) -> Vec<ComparisonRow> {
    report
        .per_task
        .iter()
        .map(|t| ComparisonRow {
            sigma,
            n_train,
            seed_index,
            task_index: t.task_index,
            final_return_meta: t.final_return_meta,
            final_return_scratch: t.final_return_scratch,
            steps_to_target_meta: t.steps_to_target_meta,
            steps_to_target_scratch: t.steps_to_target_scratch,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellOutcome {
    pub record: CellRecord,
    pub state: MetaState,
}

impl CellOutcome {
    pub fn run_log(&self) -> Vec<RunLogRow> {
        self.state
            .loss_history
            .iter()
            .zip(&self.state.grad_norm_history)
            .enumerate()
            .map(|(i, (&l, &g))| RunLogRow {
                iteration: i,
                meta_loss: l,
                grad_norm: g,
            })
            .collect()
    }
}

/// Test tasks occupy `[offset, offset + n_test)` and training tasks follow,
/// so every N of a replicate shares one test set and nested training sets.
fn cell_tasks(cell: &SweepCell, cfg: &ExperimentConfig) -> Result<(TaskSet, TaskSet)> {
    let spec = cfg.family.with_sigma(cell.sigma);
    let offset = task_offset(cfg, cell.seed_index);
    let test = TaskSet::sample(&spec, offset, cfg.n_test, TaskRole::Test)?;
    let train = TaskSet::sample(&spec, offset + cfg.n_test as u64, cell.n_train, TaskRole::Train)?;
    Ok((train, test))
}

fn adapted_returns(tasks: &[&Mdp], params: &PolicyParams, meta: &MetaConfig) -> Result<(Vec<f64>, Vec<PolicyParams>)> {
    let pairs: Vec<(f64, PolicyParams)> = tasks
        .par_iter()
        .map(|t| {
            let adapted = adapt(t, params, meta.inner_lr, meta.inner_steps)?;
            Ok((exact_policy_return(t, &adapted)?.return_value, adapted))
        })
        .collect::<Result<_>>()?;
    Ok(pairs.into_iter().unzip())
}

fn with_coords<T>(cell: &SweepCell, r: Result<T>) -> std::result::Result<T, HarnessError> {
    r.map_err(|source| HarnessError::Cell {
        sigma: cell.sigma,
        n_train: cell.n_train,
        seed_index: cell.seed_index,
        source,
    })
}

fn run_cell_inner(cell: &SweepCell, cfg: &ExperimentConfig) -> Result<CellOutcome> {
    let (train, test) = cell_tasks(cell, cfg)?;
    let train_mdps = train.mdps();
    let test_mdps = test.mdps();
    let state = meta_train(&train_mdps, &cfg.meta, cell.derived_seed)?;

    let (train_returns, _) = adapted_returns(&train_mdps, &state.params, &cfg.meta)?;
    let (test_returns, test_adapted) = adapted_returns(&test_mdps, &state.params, &cfg.meta)?;
    let spec = &train.spec;
    let return_range = (
        spec.reward_range.0 / (1.0 - spec.discount),
        spec.reward_range.1 / (1.0 - spec.discount),
    );
    let gap = generalization_gap(
        &train_returns,
        &test_returns,
        &GapContext {
            sigma: cell.sigma,
            seed: cell.derived_seed,
            return_range,
            confidence: cfg.confidence,
        },
    )?;
    let subopt_gap = suboptimality_gap_per_task(&test_mdps, &test_adapted)?;

    let history = state.grad_norm_history.len();
    let convergence = if history >= 2 {
        Some(convergence_diagnostics(
            &state,
            cfg.meta.grad_tol,
            DIAGNOSTIC_WINDOW.min(history),
        )?)
    } else {
        None
    };
    let final_grad_norm = convergence
        .as_ref()
        .map(|c| c.final_grad_norm)
        .or_else(|| state.grad_norm_history.last().copied());

    let (comparison, _) = compare_meta_vs_scratch(
        &state.params,
        &test,
        cfg.comparison.lr,
        cfg.comparison.budget,
        cfg.comparison.target_fraction,
    )?;

    Ok(CellOutcome {
        record: CellRecord {
            family: cfg.family.family_kind,
            sigma: cell.sigma,
            n_train: cell.n_train,
            seed_index: cell.seed_index,
            derived_seed: cell.derived_seed,
            gap,
            subopt_gap,
            regret: -subopt_gap,
            meta_iters: state.iteration,
            final_grad_norm,
            convergence,
            comparison,
        },
        state,
    })
}

/// Split, meta-train, evaluate adapted returns, and compare against scratch
/// learners for one cell. Deterministic in `(cell, cfg)`.
pub fn run_cell(cell: &SweepCell, cfg: &ExperimentConfig) -> std::result::Result<CellOutcome, HarnessError> {
    with_coords(cell, run_cell_inner(cell, cfg))
}

/// Meta-train then run only the baseline comparison.
pub fn compare_cell(cell: &SweepCell, cfg: &ExperimentConfig) -> std::result::Result<ComparisonReport, HarnessError> {
    with_coords(
        cell,
        (|| {
            let (train, test) = cell_tasks(cell, cfg)?;
            let state = meta_train(&train.mdps(), &cfg.meta, cell.derived_seed)?;
            let (report, _) = compare_meta_vs_scratch(
                &state.params,
                &test,
                cfg.comparison.lr,
                cfg.comparison.budget,
                cfg.comparison.target_fraction,
            )?;
            Ok(report)
        })(),
    )
}
