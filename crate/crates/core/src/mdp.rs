//! Finite discounted MDPs: validation, exact policy evaluation, value
//! iteration and exact softmax policy gradients.
//!
//! Performance is the infinite-horizon discounted return from the start
//! distribution, and the loss is its negation (`L = -J`). Policy evaluation
//! is an exact dense linear solve up to [`DIRECT_SOLVE_MAX_STATES`] states and
//! a fixed-point iteration to residual [`ITERATIVE_RESIDUAL`] beyond that.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{deterministic_probabilities, PolicyParams, Table};

pub const PROBABILITY_TOLERANCE: f64 = 1e-9;
pub const DIRECT_SOLVE_MAX_STATES: usize = 64;
pub const ITERATIVE_RESIDUAL: f64 = 1e-10;

/// A finite MDP. Arrays are dense and row-major:
/// `transitions[(s * n_actions + a) * n_states + s']` and
/// `rewards[s * n_actions + a]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Mdp {
    pub n_states: usize,
    pub n_actions: usize,
    pub transitions: Vec<f64>,
    pub rewards: Vec<f64>,
    pub discount: f64,
    pub start_dist: Vec<f64>,
    /// Declared bounds `[r_min, r_max]` on every reward.
    pub reward_range: (f64, f64),
}

impl Mdp {
    #[inline]
    pub fn transition_row(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.n_actions + a) * self.n_states;
        &self.transitions[start..start + self.n_states]
    }

    #[inline]
    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.rewards[s * self.n_actions + a]
    }

    /// `max(|r_min|, |r_max|) / (1 - discount)`, the bound on any return.
    pub fn return_bound(&self) -> f64 {
        let (lo, hi) = self.reward_range;
        lo.abs().max(hi.abs()) / (1.0 - self.discount)
    }

    /// The interval every discounted return lies in.
    pub fn return_range(&self) -> (f64, f64) {
        let (lo, hi) = self.reward_range;
        (lo / (1.0 - self.discount), hi / (1.0 - self.discount))
    }

    fn check_policy_shape(&self, n_states: usize, n_actions: usize) -> Result<()> {
        if n_states != self.n_states || n_actions != self.n_actions {
            return Err(Error::Dimension(format!(
                "policy shape ({n_states}, {n_actions}) does not match mdp ({}, {})",
                self.n_states, self.n_actions
            )));
        }
        Ok(())
    }
}

/// One violated MDP constraint.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    Shape {
        field: &'static str,
        expected: usize,
        found: usize,
    },
    EmptySpace,
    RowSum {
        s: usize,
        a: usize,
        sum: f64,
    },
    NegativeProbability {
        s: usize,
        a: usize,
        next: usize,
        value: f64,
    },
    NonFinite {
        field: &'static str,
        index: usize,
    },
    StartSum {
        sum: f64,
    },
    NegativeStart {
        s: usize,
        value: f64,
    },
    RewardRange {
        lo: f64,
        hi: f64,
    },
    RewardOutOfRange {
        s: usize,
        a: usize,
        value: f64,
    },
    Discount {
        value: f64,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Shape { field, expected, found } => {
                write!(f, "{field} has {found} entries, expected {expected}")
            }
            Violation::EmptySpace => write!(f, "state and action counts must be positive"),
            Violation::RowSum { s, a, sum } => {
                write!(f, "row sum {sum} ≠ 1 at (s={s},a={a})")
            }
            Violation::NegativeProbability { s, a, next, value } => {
                write!(f, "negative probability {value} at (s={s},a={a},s'={next})")
            }
            Violation::NonFinite { field, index } => {
                write!(f, "non-finite value in {field} at index {index}")
            }
            Violation::StartSum { sum } => write!(f, "start distribution sums to {sum} ≠ 1"),
            Violation::NegativeStart { s, value } => {
                write!(f, "negative start probability {value} at s={s}")
            }
            Violation::RewardRange { lo, hi } => {
                write!(f, "reward range [{lo}, {hi}] is empty or non-finite")
            }
            Violation::RewardOutOfRange { s, a, value } => {
                write!(f, "reward {value} outside declared range at (s={s},a={a})")
            }
            Violation::Discount { value } => {
                write!(f, "discount must be < 1 and ≥ 0 (got {value})")
            }
        }
    }
}

/// Outcome of [`validate_mdp`]; empty `violations` means valid.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Validation {
    pub violations: Vec<Violation>,
}

impl Validation {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn into_result(self) -> Result<()> {
        if self.is_valid() {
            return Ok(());
        }
        let msgs: Vec<String> = self.violations.iter().map(|v| v.to_string()).collect();
        Err(Error::InvalidMdp(msgs.join("; ")))
    }
}

pub fn validate_mdp(mdp: &Mdp) -> Validation {
    let mut violations = Vec::new();
    let (ns, na) = (mdp.n_states, mdp.n_actions);
    if ns == 0 || na == 0 {
        violations.push(Violation::EmptySpace);
    }
    let shapes = [
        ("transitions", ns * na * ns, mdp.transitions.len()),
        ("rewards", ns * na, mdp.rewards.len()),
        ("start_dist", ns, mdp.start_dist.len()),
    ];
    for (field, expected, found) in shapes {
        if expected != found {
            violations.push(Violation::Shape { field, expected, found });
        }
    }
    if !(0.0..1.0).contains(&mdp.discount) {
        violations.push(Violation::Discount { value: mdp.discount });
    }
    let (lo, hi) = mdp.reward_range;
    if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
        violations.push(Violation::RewardRange { lo, hi });
    }
    if !violations.is_empty() {
        // Index-level checks below assume consistent shapes.
        return Validation { violations };
    }

    for s in 0..ns {
        for a in 0..na {
            let row = mdp.transition_row(s, a);
            let mut sum = 0.0;
            for (next, &p) in row.iter().enumerate() {
                if !p.is_finite() {
                    violations.push(Violation::NonFinite {
                        field: "transitions",
                        index: (s * na + a) * ns + next,
                    });
                } else if p < 0.0 {
                    violations.push(Violation::NegativeProbability { s, a, next, value: p });
                }
                sum += p;
            }
            if !((sum - 1.0).abs() <= PROBABILITY_TOLERANCE) {
                violations.push(Violation::RowSum { s, a, sum });
            }
            let r = mdp.reward(s, a);
            if !r.is_finite() {
                violations.push(Violation::NonFinite {
                    field: "rewards",
                    index: s * na + a,
                });
            } else if r < lo || r > hi {
                violations.push(Violation::RewardOutOfRange { s, a, value: r });
            }
        }
    }
    let mut start_sum = 0.0;
    for (s, &p) in mdp.start_dist.iter().enumerate() {
        if !p.is_finite() {
            violations.push(Violation::NonFinite {
                field: "start_dist",
                index: s,
            });
        } else if p < 0.0 {
            violations.push(Violation::NegativeStart { s, value: p });
        }
        start_sum += p;
    }
    if !((start_sum - 1.0).abs() <= PROBABILITY_TOLERANCE) {
        violations.push(Violation::StartSum { sum: start_sum });
    }
    Validation { violations }
}

/// Exact evaluation of one policy on one MDP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    /// Expected discounted return `J` from the start distribution.
    pub return_value: f64,
    pub state_values: Vec<f64>,
    /// `-return_value`.
    pub loss_value: f64,
}

/// Policy-averaged transition matrix and reward vector.
fn policy_dynamics(mdp: &Mdp, probs: &[f64]) -> (DMatrix<f64>, DVector<f64>) {
    let (ns, na) = (mdp.n_states, mdp.n_actions);
    let mut p_pi = DMatrix::<f64>::zeros(ns, ns);
    let mut r_pi = DVector::<f64>::zeros(ns);
    for s in 0..ns {
        for a in 0..na {
            let w = probs[s * na + a];
            if w == 0.0 {
                continue;
            }
            r_pi[s] += w * mdp.reward(s, a);
            for (next, &p) in mdp.transition_row(s, a).iter().enumerate() {
                p_pi[(s, next)] += w * p;
            }
        }
    }
    (p_pi, r_pi)
}

/// Solves `x = b + discount * M x` for `x`, where `M` is `p_pi` or its
/// transpose.
fn solve_discounted(p_pi: &DMatrix<f64>, b: &DVector<f64>, discount: f64, transpose: bool) -> Result<DVector<f64>> {
    let n = b.len();
    let m = if transpose { p_pi.transpose() } else { p_pi.clone() };
    if n <= DIRECT_SOLVE_MAX_STATES {
        let a = DMatrix::<f64>::identity(n, n) - m * discount;
        return a
            .lu()
            .solve(b)
            .ok_or_else(|| Error::Numeric("singular Bellman system".into()));
    }
    // gamma-contraction in the sup norm (row-stochastic case) or l1 norm
    // (column-stochastic case); both bound the iteration count below.
    let max_iters = if discount == 0.0 {
        1
    } else {
        let scale = b.amax().max(1.0) / (1.0 - discount);
        ((ITERATIVE_RESIDUAL / scale).ln() / discount.ln()).ceil() as usize + 1000
    };
    let mut x = b.clone();
    for _ in 0..max_iters {
        let next = b + &m * &x * discount;
        let residual = (&next - &x).amax();
        x = next;
        if residual <= ITERATIVE_RESIDUAL {
            return Ok(x);
        }
    }
    Err(Error::Numeric(format!(
        "Bellman iteration did not reach residual {ITERATIVE_RESIDUAL} in {max_iters} sweeps"
    )))
}

fn check_probs(mdp: &Mdp, probs: &[f64]) -> Result<()> {
    if probs.len() != mdp.n_states * mdp.n_actions {
        return Err(Error::Dimension(format!(
            "policy table has {} entries, mdp needs {}",
            probs.len(),
            mdp.n_states * mdp.n_actions
        )));
    }
    Ok(())
}

/// Exact evaluation of a stochastic policy given as a (state, action)
/// probability table.
pub fn evaluate_policy(mdp: &Mdp, probs: &[f64]) -> Result<EvalResult> {
    check_probs(mdp, probs)?;
    let (p_pi, r_pi) = policy_dynamics(mdp, probs);
    let v = solve_discounted(&p_pi, &r_pi, mdp.discount, false)?;
    let return_value: f64 = mdp.start_dist.iter().zip(v.iter()).map(|(p, v)| p * v).sum();
    Ok(EvalResult {
        return_value,
        state_values: v.iter().copied().collect(),
        loss_value: -return_value,
    })
}

/// Exact discounted return of the softmax policy `params`.
pub fn exact_policy_return(mdp: &Mdp, params: &PolicyParams) -> Result<EvalResult> {
    mdp.check_policy_shape(params.n_states(), params.n_actions())?;
    evaluate_policy(mdp, &params.probabilities())
}

/// Exact return of a deterministic policy (one action per state).
pub fn evaluate_deterministic(mdp: &Mdp, actions: &[usize]) -> Result<EvalResult> {
    if actions.len() != mdp.n_states || actions.iter().any(|&a| a >= mdp.n_actions) {
        return Err(Error::Dimension("deterministic policy does not fit mdp".into()));
    }
    evaluate_policy(mdp, &deterministic_probabilities(actions, mdp.n_actions))
}

/// `Q(s, a) = r(s, a) + discount * sum_s' P(s'|s, a) V(s')`.
pub fn q_values(mdp: &Mdp, values: &[f64]) -> Table {
    let mut q = Table::zeros(mdp.n_states, mdp.n_actions);
    for s in 0..mdp.n_states {
        for a in 0..mdp.n_actions {
            let ev: f64 = mdp.transition_row(s, a).iter().zip(values).map(|(p, v)| p * v).sum();
            q.set(s, a, mdp.reward(s, a) + mdp.discount * ev);
        }
    }
    q
}

/// Optimal values and a greedy deterministic policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimalSolution {
    pub values: Vec<f64>,
    /// Greedy action per state, lowest index on ties.
    pub policy: Vec<usize>,
    pub iterations: usize,
}

impl OptimalSolution {
    /// Start-distribution-weighted optimal value.
    pub fn start_value(&self, mdp: &Mdp) -> f64 {
        mdp.start_dist.iter().zip(&self.values).map(|(p, v)| p * v).sum()
    }
}

fn greedy(q: &Table) -> (Vec<f64>, Vec<usize>) {
    let mut values = Vec::with_capacity(q.n_states);
    let mut policy = Vec::with_capacity(q.n_states);
    for s in 0..q.n_states {
        let (best_a, best) =
            q.row(s).iter().enumerate().fold(
                (0, f64::NEG_INFINITY),
                |(ba, bv), (a, &v)| {
                    if v > bv {
                        (a, v)
                    } else {
                        (ba, bv)
                    }
                },
            );
        values.push(best);
        policy.push(best_a);
    }
    (values, policy)
}

/// Value iteration stopped once the Bellman optimality residual is at most
/// `tol * (1 - discount) / discount`, which keeps the value error below `tol`.
pub fn value_iteration(mdp: &Mdp, tol: f64) -> Result<OptimalSolution> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance must be positive, got {tol}")));
    }
    validate_mdp(mdp).into_result()?;
    let gamma = mdp.discount;
    let mut values = vec![0.0; mdp.n_states];
    let threshold = if gamma == 0.0 {
        f64::INFINITY
    } else {
        tol * (1.0 - gamma) / gamma
    };
    let bound = mdp.return_bound().max(1.0);
    let max_iters = if gamma == 0.0 {
        2
    } else {
        ((threshold / (2.0 * bound)).ln() / gamma.ln()).ceil().max(1.0) as usize + 100
    };
    for it in 1..=max_iters {
        let (next, _) = greedy(&q_values(mdp, &values));
        let residual = next.iter().zip(&values).fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
        values = next;
        if residual <= threshold {
            // Q-values of the returned V, so the greedy policy matches it.
            let (_, policy) = greedy(&q_values(mdp, &values));
            return Ok(OptimalSolution {
                values,
                policy,
                iterations: it,
            });
        }
    }
    Err(Error::Numeric(format!(
        "value iteration did not converge in {max_iters} sweeps"
    )))
}

/// Exact gradient of `J` in the logits:
/// `dJ/dθ(s,a) = d(s) π(a|s) (Q(s,a) - V(s))`, with `d` the unnormalised
/// discounted state occupancy from the start distribution.
pub fn exact_policy_gradient(mdp: &Mdp, params: &PolicyParams) -> Result<Table> {
    mdp.check_policy_shape(params.n_states(), params.n_actions())?;
    let probs = params.probabilities();
    let (p_pi, r_pi) = policy_dynamics(mdp, &probs);
    let v = solve_discounted(&p_pi, &r_pi, mdp.discount, false)?;
    let rho = DVector::from_column_slice(&mdp.start_dist);
    let occupancy = solve_discounted(&p_pi, &rho, mdp.discount, true)?;
    let values: Vec<f64> = v.iter().copied().collect();
    let q = q_values(mdp, &values);
    let na = mdp.n_actions;
    let mut grad = Table::zeros(mdp.n_states, na);
    for s in 0..mdp.n_states {
        for a in 0..na {
            let pi = probs[s * na + a];
            grad.set(s, a, occupancy[s] * pi * (q.get(s, a) - values[s]));
        }
    }
    Ok(grad)
}

/// Central finite-difference estimate of the gradient of `J`.
pub fn finite_diff_gradient(mdp: &Mdp, params: &PolicyParams, step: f64) -> Result<Table> {
    if !(step > 0.0) {
        return Err(Error::InvalidArgument(format!("step must be positive, got {step}")));
    }
    mdp.check_policy_shape(params.n_states(), params.n_actions())?;
    let mut grad = Table::zeros(params.n_states(), params.n_actions());
    let mut probe = params.clone();
    for i in 0..params.logits.values.len() {
        let base = params.logits.values[i];
        probe.logits.values[i] = base + step;
        let up = exact_policy_return(mdp, &probe)?.return_value;
        probe.logits.values[i] = base - step;
        let down = exact_policy_return(mdp, &probe)?.return_value;
        probe.logits.values[i] = base;
        grad.values[i] = (up - down) / (2.0 * step);
    }
    Ok(grad)
}


#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;

    #[test]
    fn trivial_mdp_is_valid() {
        assert!(validate_mdp(&single_state(0.0, 0.9)).is_valid());
    }

    #[test]
    fn short_row_reported_with_indices() {
        let mut m = single_state(0.0, 0.9);
        m.transitions = vec![0.5];
        let v = validate_mdp(&m);
        assert_eq!(v.violations, vec![Violation::RowSum { s: 0, a: 0, sum: 0.5 }]);
        assert_eq!(v.violations[0].to_string(), "row sum 0.5 ≠ 1 at (s=0,a=0)");
    }

    #[test]
    fn unit_discount_rejected() {
        let mut m = single_state(0.0, 0.9);
        m.discount = 1.0;
        let v = validate_mdp(&m);
        assert!(matches!(v.violations[..], [Violation::Discount { .. }]));
        assert!(v.violations[0].to_string().starts_with("discount must be < 1"));
    }

    #[test]
    fn negative_probability_and_reward_range_reported() {
        let mut m = chain(0.5);
        m.transitions[0] = 1.5;
        m.transitions[1] = -0.5;
        m.rewards[2] = 3.0;
        let v = validate_mdp(&m);
        assert!(v.violations.contains(&Violation::NegativeProbability {
            s: 0,
            a: 0,
            next: 1,
            value: -0.5
        }));
        assert!(v
            .violations
            .contains(&Violation::RewardOutOfRange { s: 1, a: 0, value: 3.0 }));
    }

    #[test]
    fn geometric_series_return() {
        let res = exact_policy_return(&single_state(1.0, 0.9), &PolicyParams::zeros(1, 1)).unwrap();
        assert!((res.return_value - 10.0).abs() < 1e-12);
        assert_eq!(res.loss_value, -res.return_value);
    }

    #[test]
    fn chain_closed_form() {
        let m = chain(0.5);
        let res = evaluate_deterministic(&m, &[1, 0]).unwrap();
        assert!((res.state_values[0] - 1.0).abs() < 1e-12);
        assert!((res.state_values[1] - 2.0).abs() < 1e-12);
        assert!((res.return_value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn chain_value_iteration() {
        let m = chain(0.5);
        let sol = value_iteration(&m, 1e-12).unwrap();
        assert_eq!(sol.policy, vec![1, 0]);
        assert!((sol.values[0] - 1.0).abs() < 1e-11);
        assert!((sol.values[1] - 2.0).abs() < 1e-11);
    }

    #[test]
    fn myopic_bandit_value_iteration() {
        let sol = value_iteration(&bandit(&[1.0, 0.0], 0.0), 1e-9).unwrap();
        assert_eq!(sol.policy, vec![0]);
        assert_eq!(sol.values, vec![1.0]);
    }

    #[test]
    fn tie_breaks_to_lowest_index() {
        let sol = value_iteration(&bandit(&[0.5, 0.5, 0.5], 0.3), 1e-9).unwrap();
        assert_eq!(sol.policy, vec![0]);
    }

    #[test]
    fn bandit_gradient_identity() {
        let m = bandit(&[1.0, 0.0], 0.0);
        let g = exact_policy_gradient(&m, &PolicyParams::zeros(1, 2)).unwrap();
        assert!((g.values[0] - 0.25).abs() < 1e-15);
        assert!((g.values[1] + 0.25).abs() < 1e-15);
        let fd = finite_diff_gradient(&m, &PolicyParams::zeros(1, 2), 1e-5).unwrap();
        assert!((fd.values[0] - 0.25).abs() < 1e-8);
        assert!((fd.values[1] + 0.25).abs() < 1e-8);
    }

    #[test]
    fn zero_reward_gradients_vanish() {
        let mut m = chain(0.9);
        m.rewards = vec![0.0; 4];
        let params = PolicyParams::from_logits(Table::from_values(2, 2, vec![0.3, -1.0, 2.0, 0.1]).unwrap()).unwrap();
        assert!(exact_policy_gradient(&m, &params).unwrap().sup_norm() == 0.0);
        assert!(finite_diff_gradient(&m, &params, 1e-5).unwrap().sup_norm() <= 1e-10);
    }

    #[test]
    fn shape_mismatch_is_dimension_error() {
        let err = exact_policy_return(&chain(0.5), &PolicyParams::zeros(3, 2)).unwrap_err();
        assert!(matches!(err, Error::Dimension(_)));
    }

    #[test]
    fn iterative_solver_agrees_with_direct() {
        // A 70-state ring exercises the iterative branch.
        let n = 70;
        let mut transitions = vec![0.0; n * n];
        for s in 0..n {
            transitions[s * n + (s + 1) % n] = 0.7;
            transitions[s * n + s] = 0.3;
        }
        let rewards: Vec<f64> = (0..n).map(|s| (s % 7) as f64 / 7.0).collect();
        let mdp = Mdp {
            n_states: n,
            n_actions: 1,
            transitions,
            rewards: rewards.clone(),
            discount: 0.8,
            start_dist: vec![1.0 / n as f64; n],
            reward_range: (0.0, 1.0),
        };
        let iterative = exact_policy_return(&mdp, &PolicyParams::zeros(n, 1)).unwrap();
        // V(s) = r(s) + 0.8 (0.3 V(s) + 0.7 V(s+1)) summed over the ring:
        // mean V = mean r / (1 - 0.8).
        let mean_r: f64 = rewards.iter().sum::<f64>() / n as f64;
        assert!((iterative.return_value - mean_r / 0.2).abs() < 1e-8);
    }
}
