//! MAML-style meta-training with exact inner-loop gradients.
//!
//! Inner adaptation runs `inner_steps` steps of exact gradient descent on
//! `L = -J`. The outer loop descends the post-adaptation loss with step size
//! `base_rate / (t + 1)^exponent`. In `full` mode the meta-gradient is
//! back-propagated through the inner steps with Hessian-vector products
//! taken as central differences of exact gradients.

use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{exact_policy_gradient, exact_policy_return, Mdp};
use crate::policy::{PolicyParams, Table};
use crate::seed::stream;

/// Step for finite-difference Hessian-vector products (along a unit direction).
pub const HVP_STEP: f64 = 1e-5;
/// Window of gradient norms averaged by the training stop rule.
pub const CONVERGENCE_WINDOW: usize = 10;

const TAG_META_BATCH: u64 = 0x4D42;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schedule {
    pub base_rate: f64,
    pub exponent: f64,
}

impl Schedule {
    pub fn constant(rate: f64) -> Self {
        Self {
            base_rate: rate,
            exponent: 0.0,
        }
    }

    /// Step size at (0-based) iteration `t`.
    pub fn rate(&self, t: usize) -> f64 {
        self.base_rate / ((t + 1) as f64).powf(self.exponent)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetaMode {
    FirstOrder,
    Full,
}

fn default_mode() -> MetaMode {
    MetaMode::FirstOrder
}

fn default_grad_tol() -> f64 {
    1e-3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetaConfig {
    pub inner_lr: f64,
    pub inner_steps: usize,
    pub meta_batch: usize,
    pub schedule: Schedule,
    #[serde(default = "default_mode")]
    pub mode: MetaMode,
    pub max_iters: usize,
    #[serde(default = "default_grad_tol")]
    pub grad_tol: f64,
}

impl MetaConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: String| Err(Error::InvalidArgument(format!("{field}: {msg}")));
        if !(self.inner_lr > 0.0 && self.inner_lr.is_finite()) {
            return bad("inner_lr", format!("must be positive, got {}", self.inner_lr));
        }
        if self.meta_batch == 0 {
            return bad("meta_batch", "must be at least 1".into());
        }
        if !(self.schedule.base_rate > 0.0 && self.schedule.base_rate.is_finite()) {
            return bad(
                "schedule.base_rate",
                format!("must be positive, got {}", self.schedule.base_rate),
            );
        }
        if !(self.schedule.exponent >= 0.0 && self.schedule.exponent.is_finite()) {
            return bad(
                "schedule.exponent",
                format!("must be non-negative, got {}", self.schedule.exponent),
            );
        }
        if !(self.grad_tol > 0.0) {
            return bad("grad_tol", format!("must be positive, got {}", self.grad_tol));
        }
        Ok(())
    }
}

/// Evolving state of meta-training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaState {
    pub params: PolicyParams,
    pub iteration: usize,
    /// Meta-loss of the sampled batch at the parameters before each update.
    pub loss_history: Vec<f64>,
    /// Euclidean norm of each applied meta-gradient.
    pub grad_norm_history: Vec<f64>,
    /// Number of per-iteration batch streams consumed.
    pub rng_cursor: u64,
}

/// Exact gradient of the loss `L = -J`.
fn loss_gradient(task: &Mdp, params: &PolicyParams) -> Result<Table> {
    Ok(exact_policy_gradient(task, params)?.scaled(-1.0))
}

/// Parameters after each inner step: `[θ_0, θ_1, ..., θ_K]`.
fn adapt_path(task: &Mdp, params: &PolicyParams, inner_lr: f64, inner_steps: usize) -> Result<Vec<PolicyParams>> {
    let mut path = Vec::with_capacity(inner_steps + 1);
    path.push(params.clone());
    for _ in 0..inner_steps {
        let mut next = path.last().expect("path is non-empty").clone();
        let g = exact_policy_gradient(task, &next)?;
        next.logits.add_scaled(inner_lr, &g);
        path.push(next);
    }
    Ok(path)
}

/// `inner_steps` exact gradient-descent steps on the task loss.
pub fn adapt(task: &Mdp, params: &PolicyParams, inner_lr: f64, inner_steps: usize) -> Result<PolicyParams> {
    Ok(adapt_path(task, params, inner_lr, inner_steps)?
        .pop()
        .expect("path is non-empty"))
}

/// Hessian of `J` applied to `v`, by central differences of exact gradients.
fn hessian_vector(task: &Mdp, params: &PolicyParams, v: &Table) -> Result<Table> {
    let norm = v.l2_norm();
    if norm == 0.0 {
        return Ok(Table::zeros(v.n_states, v.n_actions));
    }
    let dir = v.scaled(1.0 / norm);
    let mut plus = params.clone();
    plus.logits.add_scaled(HVP_STEP, &dir);
    let mut minus = params.clone();
    minus.logits.add_scaled(-HVP_STEP, &dir);
    let mut hv = exact_policy_gradient(task, &plus)?;
    hv.add_scaled(-1.0, &exact_policy_gradient(task, &minus)?);
    Ok(hv.scaled(norm / (2.0 * HVP_STEP)))
}

/// Post-adaptation loss of one task and its meta-gradient.
pub fn task_meta_objective(task: &Mdp, params: &PolicyParams, cfg: &MetaConfig) -> Result<(f64, Table)> {
    let path = adapt_path(task, params, cfg.inner_lr, cfg.inner_steps)?;
    let adapted = path.last().expect("path is non-empty");
    let loss = exact_policy_return(task, adapted)?.loss_value;
    let mut grad = loss_gradient(task, adapted)?;
    if cfg.mode == MetaMode::Full {
        // θ_{k+1} = θ_k + α ∇J(θ_k) has Jacobian I + α H_J(θ_k) (symmetric),
        // so the chain rule runs backwards through the stored path.
        for theta in path[..cfg.inner_steps].iter().rev() {
            let hv = hessian_vector(task, theta, &grad)?;
            grad.add_scaled(cfg.inner_lr, &hv);
        }
    }
    Ok((loss, grad))
}

/// Per-task objectives evaluated in parallel, reduced in task order.
fn batch_objective(tasks: &[&Mdp], params: &PolicyParams, cfg: &MetaConfig) -> Result<(f64, Table)> {
    if tasks.is_empty() {
        return Err(Error::InsufficientData("meta objective needs at least one task".into()));
    }
    let parts: Vec<(f64, Table)> = tasks
        .par_iter()
        .map(|t| task_meta_objective(t, params, cfg))
        .collect::<Result<_>>()?;
    let n = parts.len() as f64;
    let mut loss = 0.0;
    let mut grad = Table::zeros(params.n_states(), params.n_actions());
    for (l, g) in &parts {
        loss += l;
        grad.add_scaled(1.0, g);
    }
    Ok((loss / n, grad.scaled(1.0 / n)))
}

/// Mean post-adaptation loss over `tasks`.
pub fn meta_loss(tasks: &[&Mdp], params: &PolicyParams, cfg: &MetaConfig) -> Result<f64> {
    if tasks.is_empty() {
        return Err(Error::InsufficientData("meta loss needs at least one task".into()));
    }
    let losses: Vec<f64> = tasks
        .par_iter()
        .map(|t| {
            let adapted = adapt(t, params, cfg.inner_lr, cfg.inner_steps)?;
            Ok(exact_policy_return(t, &adapted)?.loss_value)
        })
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// Gradient of [`meta_loss`] in the meta-parameters (first-order or full).
pub fn meta_gradient(tasks: &[&Mdp], params: &PolicyParams, cfg: &MetaConfig) -> Result<Table> {
    Ok(batch_objective(tasks, params, cfg)?.1)
}

/// Meta-batch indices for iteration `t`: drawn without replacement from a
/// stream keyed by `(seed, t)`, returned in ascending order.
pub fn batch_indices(seed: u64, t: usize, n_tasks: usize, batch: usize) -> Vec<usize> {
    if batch >= n_tasks {
        return (0..n_tasks).collect();
    }
    let mut rng = stream(&[seed, TAG_META_BATCH, t as u64]);
    let mut idx = sample(&mut rng, n_tasks, batch).into_vec();
    idx.sort_unstable();
    idx
}

fn windowed_mean(history: &[f64], window: usize) -> Option<f64> {
    if window == 0 || history.len() < window {
        return None;
    }
    let tail = &history[history.len() - window..];
    Some(tail.iter().sum::<f64>() / window as f64)
}

/// Runs meta-training from zero logits.
pub fn meta_train(train: &[&Mdp], cfg: &MetaConfig, seed: u64) -> Result<MetaState> {
    cfg.validate()?;
    let first = train
        .first()
        .ok_or_else(|| Error::InsufficientData("training set is empty".into()))?;
    if cfg.meta_batch > train.len() {
        return Err(Error::InvalidArgument(format!(
            "meta_batch {} exceeds training set size {}",
            cfg.meta_batch,
            train.len()
        )));
    }
    let mut state = MetaState {
        params: PolicyParams::zeros(first.n_states, first.n_actions),
        iteration: 0,
        loss_history: Vec::new(),
        grad_norm_history: Vec::new(),
        rng_cursor: 0,
    };
    for t in 0..cfg.max_iters {
        let batch: Vec<&Mdp> = batch_indices(seed, t, train.len(), cfg.meta_batch)
            .into_iter()
            .map(|i| train[i])
            .collect();
        state.rng_cursor += 1;
        let (loss, grad) = batch_objective(&batch, &state.params, cfg)?;
        let grad_norm = grad.l2_norm();
        if !loss.is_finite() || !grad_norm.is_finite() {
            return Err(Error::Divergence {
                iteration: t,
                detail: format!("non-finite meta-loss {loss} or gradient norm {grad_norm}"),
            });
        }
        state.params.logits.add_scaled(-cfg.schedule.rate(t), &grad);
        if !state.params.logits.is_finite() {
            return Err(Error::Divergence {
                iteration: t,
                detail: "parameters became non-finite".into(),
            });
        }
        state.loss_history.push(loss);
        state.grad_norm_history.push(grad_norm);
        state.iteration = t + 1;
        if windowed_mean(&state.grad_norm_history, CONVERGENCE_WINDOW).is_some_and(|m| m < cfg.grad_tol) {
            break;
        }
    }
    Ok(state)
}

/// Robbins–Monro verdict for a power schedule `c / (t + 1)^p`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleVerdict {
    Valid,
    /// `p <= 0.5`: the rates are not square-summable.
    SquaredRatesNotSummable,
    /// `p > 1`: the rates themselves are summable.
    RatesSummable,
}

impl ScheduleVerdict {
    pub fn is_valid(&self) -> bool {
        *self == ScheduleVerdict::Valid
    }

    pub fn reason(&self) -> &'static str {
        match self {
            ScheduleVerdict::Valid => "rates diverge and squared rates converge",
            ScheduleVerdict::SquaredRatesNotSummable => "squared rates not summable",
            ScheduleVerdict::RatesSummable => "rates summable (insufficient total step)",
        }
    }
}

/// `Σ c/(t+1)^p` diverges iff `p <= 1`; `Σ c²/(t+1)^{2p}` converges iff `p > 1/2`.
pub fn validate_schedule(schedule: &Schedule) -> Result<ScheduleVerdict> {
    if !(schedule.base_rate > 0.0) || !(schedule.exponent >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "schedule needs base_rate > 0 and exponent >= 0, got {schedule:?}"
        )));
    }
    Ok(if schedule.exponent <= 0.5 {
        ScheduleVerdict::SquaredRatesNotSummable
    } else if schedule.exponent > 1.0 {
        ScheduleVerdict::RatesSummable
    } else {
        ScheduleVerdict::Valid
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::fixtures::bandit;

    fn cfg(steps: usize, mode: MetaMode) -> MetaConfig {
        MetaConfig {
            inner_lr: 1.0,
            inner_steps: steps,
            meta_batch: 1,
            schedule: Schedule::constant(0.05),
            mode,
            max_iters: 10,
            grad_tol: 1e-3,
        }
    }

    #[test]
    fn zero_steps_is_identity() {
        let m = bandit(&[1.0, 0.0], 0.0);
        let p = PolicyParams::from_deterministic(&[1], 2, 0.7);
        assert_eq!(adapt(&m, &p, 0.5, 0).unwrap(), p);
    }

    #[test]
    fn zero_reward_adaptation_is_identity() {
        let m = bandit(&[0.0, 0.0], 0.5);
        let p = PolicyParams::from_deterministic(&[1], 2, 0.7);
        assert_eq!(adapt(&m, &p, 0.5, 5).unwrap(), p);
    }

    #[test]
    fn one_bandit_step() {
        let m = bandit(&[1.0, 0.0], 0.0);
        let p = adapt(&m, &PolicyParams::zeros(1, 2), 1.0, 1).unwrap();
        assert!((p.logits.values[0] - 0.25).abs() < 1e-15);
        assert!((p.logits.values[1] + 0.25).abs() < 1e-15);
    }

    #[test]
    fn empty_task_list_rejected() {
        let p = PolicyParams::zeros(1, 2);
        assert!(matches!(
            meta_loss(&[], &p, &cfg(0, MetaMode::Full)),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn meta_loss_is_mean_invariant_under_duplication() {
        let a = bandit(&[1.0, 0.0], 0.3);
        let b = bandit(&[0.2, 0.9], 0.3);
        let p = PolicyParams::zeros(1, 2);
        let c = cfg(2, MetaMode::FirstOrder);
        let once = meta_loss(&[&a, &b], &p, &c).unwrap();
        let twice = meta_loss(&[&a, &b, &a, &b], &p, &c).unwrap();
        assert!((once - twice).abs() < 1e-15);
    }

    #[test]
    fn modes_coincide_without_inner_steps() {
        let a = bandit(&[1.0, 0.0, 0.4], 0.3);
        let p = PolicyParams::from_deterministic(&[2], 3, 0.4);
        let fo = meta_gradient(&[&a], &p, &cfg(0, MetaMode::FirstOrder)).unwrap();
        let full = meta_gradient(&[&a], &p, &cfg(0, MetaMode::Full)).unwrap();
        assert_eq!(fo, full);
    }

    #[test]
    fn zero_iterations_returns_initial_state() {
        let a = bandit(&[1.0, 0.0], 0.3);
        let mut c = cfg(1, MetaMode::Full);
        c.max_iters = 0;
        let s = meta_train(&[&a], &c, 9).unwrap();
        assert_eq!(s.params, PolicyParams::zeros(1, 2));
        assert!(s.loss_history.is_empty() && s.grad_norm_history.is_empty());
        assert_eq!(s.iteration, 0);
    }

    #[test]
    fn oversized_batch_rejected() {
        let a = bandit(&[1.0, 0.0], 0.3);
        let mut c = cfg(1, MetaMode::Full);
        c.meta_batch = 2;
        assert!(matches!(meta_train(&[&a], &c, 0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn huge_step_reports_divergence() {
        let a = bandit(&[1e300, 0.0], 0.0);
        let mut c = cfg(0, MetaMode::FirstOrder);
        c.schedule = Schedule::constant(1e300);
        let err = meta_train(&[&a], &c, 0).unwrap_err();
        assert!(matches!(err, Error::Divergence { iteration: 0, .. }), "{err:?}");
    }

    #[test]
    fn batches_are_sorted_distinct_and_seeded() {
        let b = batch_indices(3, 7, 20, 5);
        assert_eq!(b.len(), 5);
        assert!(b.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(b, batch_indices(3, 7, 20, 5));
        assert_eq!(batch_indices(3, 7, 4, 4), vec![0, 1, 2, 3]);
    }

    #[test]
    fn schedule_examples() {
        let v = |p| {
            validate_schedule(&Schedule {
                base_rate: 1.0,
                exponent: p,
            })
            .unwrap()
        };
        assert_eq!(v(1.0), ScheduleVerdict::Valid);
        assert_eq!(v(0.5), ScheduleVerdict::SquaredRatesNotSummable);
        assert_eq!(v(0.5).reason(), "squared rates not summable");
        assert_eq!(v(1.2), ScheduleVerdict::RatesSummable);
        assert_eq!(v(1.2).reason(), "rates summable (insufficient total step)");
    }
}
