//! Per-task learners trained from scratch and the meta-versus-scratch
//! adaptation comparison.
//!
//! The baseline is exact policy-gradient descent on the same policy class
//! with the same step size; only the initialization differs.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{exact_policy_gradient, exact_policy_return, value_iteration, Mdp};
use crate::policy::PolicyParams;
use crate::stats::median;
use crate::tasks::{TaskSet, OPTIMAL_TOL};

pub const DEFAULT_TARGET_FRACTION: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitOrigin {
    MetaInit,
    ScratchInit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningCurve {
    /// Exact return after each step; entry 0 is the initial policy.
    pub returns: Vec<f64>,
    pub task_index: u64,
    pub origin: InitOrigin,
}

/// `steps` exact gradient steps on `L = -J` from `init`.
pub fn scratch_train(task: &Mdp, init: &PolicyParams, lr: f64, steps: usize) -> Result<Vec<f64>> {
    if !(lr > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "learning rate must be positive, got {lr}"
        )));
    }
    let mut params = init.clone();
    let mut returns = Vec::with_capacity(steps + 1);
    returns.push(exact_policy_return(task, &params)?.return_value);
    for step in 0..steps {
        let g = exact_policy_gradient(task, &params)?;
        params.logits.add_scaled(lr, &g);
        let j = exact_policy_return(task, &params)?.return_value;
        if !j.is_finite() || !params.logits.is_finite() {
            return Err(Error::Divergence {
                iteration: step,
                detail: format!("non-finite return {j}"),
            });
        }
        returns.push(j);
    }
    Ok(returns)
}

/// First index whose return reaches `target`.
pub fn steps_to_target(returns: &[f64], target: f64) -> Option<usize> {
    returns.iter().position(|&r| r >= target)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskComparison {
    pub task_index: u64,
    pub final_return_meta: f64,
    pub final_return_scratch: f64,
    pub steps_to_target_meta: Option<usize>,
    pub steps_to_target_scratch: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    /// Sorted by task index.
    pub per_task: Vec<TaskComparison>,
    /// Share of tasks where the meta start ends ahead; ties count one half.
    pub meta_win_fraction: f64,
    pub target_fraction: f64,
    pub budget: usize,
}

impl ComparisonReport {
    /// Median steps-to-target, counting runs that never reach it as
    /// `budget + 1`.
    pub fn median_steps(&self, origin: InitOrigin) -> f64 {
        let steps: Vec<f64> = self
            .per_task
            .iter()
            .map(|t| match origin {
                InitOrigin::MetaInit => t.steps_to_target_meta,
                InitOrigin::ScratchInit => t.steps_to_target_scratch,
            })
            .map(|s| s.unwrap_or(self.budget + 1) as f64)
            .collect();
        median(&steps)
    }
}

pub fn compare_meta_vs_scratch(
    meta_params: &PolicyParams,
    test: &TaskSet,
    lr: f64,
    budget: usize,
    target_fraction: f64,
) -> Result<(ComparisonReport, Vec<LearningCurve>)> {
    if budget == 0 {
        return Err(Error::InvalidArgument("budget must be at least 1".into()));
    }
    if !(target_fraction > 0.0 && target_fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "target_fraction must lie in (0, 1], got {target_fraction}"
        )));
    }
    if test.is_empty() {
        return Err(Error::InsufficientData("comparison needs at least one task".into()));
    }
    let scratch_init = PolicyParams::zeros(meta_params.n_states(), meta_params.n_actions());
    let results: Vec<(TaskComparison, [LearningCurve; 2])> = test
        .tasks
        .par_iter()
        .map(|t| {
            let target = target_fraction * value_iteration(&t.mdp, OPTIMAL_TOL)?.start_value(&t.mdp);
            let meta = scratch_train(&t.mdp, meta_params, lr, budget)?;
            let scratch = scratch_train(&t.mdp, &scratch_init, lr, budget)?;
            let cmp = TaskComparison {
                task_index: t.task_index,
                final_return_meta: *meta.last().expect("curve is non-empty"),
                final_return_scratch: *scratch.last().expect("curve is non-empty"),
                steps_to_target_meta: steps_to_target(&meta, target),
                steps_to_target_scratch: steps_to_target(&scratch, target),
            };
            let curves = [
                LearningCurve {
                    returns: meta,
                    task_index: t.task_index,
                    origin: InitOrigin::MetaInit,
                },
                LearningCurve {
                    returns: scratch,
                    task_index: t.task_index,
                    origin: InitOrigin::ScratchInit,
                },
            ];
            Ok((cmp, curves))
        })
        .collect::<Result<_>>()?;
    let mut per_task = Vec::with_capacity(results.len());
    let mut curves = Vec::with_capacity(2 * results.len());
    for (cmp, pair) in results {
        per_task.push(cmp);
        curves.extend(pair);
    }
    per_task.sort_by_key(|t| t.task_index);
    let wins: f64 = per_task
        .iter()
        .map(|t| {
            if t.final_return_meta > t.final_return_scratch {
                1.0
            } else if t.final_return_meta == t.final_return_scratch {
                0.5
            } else {
                0.0
            }
        })
        .sum();
    let report = ComparisonReport {
        meta_win_fraction: wins / per_task.len() as f64,
        per_task,
        target_fraction,
        budget,
    };
    Ok((report, curves))
}
