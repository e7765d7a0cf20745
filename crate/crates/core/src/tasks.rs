//! Seeded task distributions over finite MDPs.
//!
//! A family is a convex-mixture perturbation of one base MDP; the knob
//! `complexity_sigma` interpolates between a single repeated task (0) and
//! independently drawn tasks (1). Each task is a pure function of
//! `(spec, task_index)`.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{validate_mdp, value_iteration, Mdp};
use crate::seed::stream;

// Field tags keep streams for different quantities independent.
const TAG_BASE_TRANSITIONS: u64 = 1;
const TAG_BASE_REWARDS: u64 = 2;
const TAG_TASK_TRANSITIONS: u64 = 3;
const TAG_TASK_REWARDS: u64 = 4;
const TAG_BASE_GOAL: u64 = 5;
const TAG_TASK_GOAL: u64 = 6;

pub const GRID_SIDE: usize = 5;
pub const GRID_STATES: usize = GRID_SIDE * GRID_SIDE;
pub const GRID_ACTIONS: usize = 4;
/// Probability that a grid move succeeds; otherwise the agent stays put.
pub const GRID_MOVE_SUCCESS: f64 = 0.9;

/// Value-iteration tolerance used when optimal returns are needed.
pub const OPTIMAL_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyKind {
    PerturbedRandom,
    PerturbedGridworld,
}

impl FamilyKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            FamilyKind::PerturbedRandom => "perturbed_random",
            FamilyKind::PerturbedGridworld => "perturbed_gridworld",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskFamilySpec {
    pub family_kind: FamilyKind,
    pub n_states: usize,
    pub n_actions: usize,
    pub discount: f64,
    /// Variability knob in `[0, 1]`.
    #[serde(default)]
    pub complexity_sigma: f64,
    pub reward_range: (f64, f64),
    pub base_seed: u64,
}

impl TaskFamilySpec {
    /// Checks the family invariants, naming the offending field.
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: String| Err(Error::InvalidArgument(format!("{field}: {msg}")));
        if self.n_states == 0 {
            return bad("n_states", "must be at least 1".into());
        }
        if self.n_actions == 0 {
            return bad("n_actions", "must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.discount) {
            return bad("discount", format!("must lie in [0, 1), got {}", self.discount));
        }
        if !(0.0..=1.0).contains(&self.complexity_sigma) {
            return bad(
                "complexity_sigma",
                format!("must lie in [0, 1], got {}", self.complexity_sigma),
            );
        }
        let (lo, hi) = self.reward_range;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return bad("reward_range", format!("[{lo}, {hi}] must be finite with lo < hi"));
        }
        if self.family_kind == FamilyKind::PerturbedGridworld
            && (self.n_states != GRID_STATES || self.n_actions != GRID_ACTIONS)
        {
            return bad(
                "family_kind",
                format!("perturbed_gridworld requires n_states = {GRID_STATES} and n_actions = {GRID_ACTIONS}"),
            );
        }
        Ok(())
    }

    pub fn with_sigma(&self, sigma: f64) -> Self {
        Self {
            complexity_sigma: sigma,
            ..self.clone()
        }
    }

    fn span(&self) -> f64 {
        self.reward_range.1 - self.reward_range.0
    }
}

/// One draw from the flat Dirichlet over `n` outcomes.
fn dirichlet_row(rng: &mut ChaCha8Rng, n: usize, out: &mut Vec<f64>) {
    let start = out.len();
    let mut total = 0.0;
    for _ in 0..n {
        let x: f64 = Exp1.sample(rng);
        total += x;
        out.push(x);
    }
    for x in &mut out[start..] {
        *x /= total;
    }
}

fn random_transitions(rng: &mut ChaCha8Rng, ns: usize, na: usize) -> Vec<f64> {
    let mut t = Vec::with_capacity(ns * na * ns);
    for _ in 0..ns * na {
        dirichlet_row(rng, ns, &mut t);
    }
    t
}

/// Uniform start distribution over states.
fn uniform_start(ns: usize) -> Vec<f64> {
    vec![1.0 / ns as f64; ns]
}

/// Draws the base MDP a `perturbed_random` family is built around.
pub fn base_mdp(spec: &TaskFamilySpec) -> Mdp {
    match spec.family_kind {
        FamilyKind::PerturbedRandom => {
            let (ns, na) = (spec.n_states, spec.n_actions);
            let transitions = random_transitions(&mut stream(&[spec.base_seed, TAG_BASE_TRANSITIONS]), ns, na);
            let (lo, hi) = spec.reward_range;
            let mut rng = stream(&[spec.base_seed, TAG_BASE_REWARDS]);
            let rewards = (0..ns * na).map(|_| lo + (hi - lo) * rng.random::<f64>()).collect();
            Mdp {
                n_states: ns,
                n_actions: na,
                transitions,
                rewards,
                discount: spec.discount,
                start_dist: uniform_start(ns),
                reward_range: spec.reward_range,
            }
        }
        FamilyKind::PerturbedGridworld => {
            let goal = base_goal(spec);
            gridworld(spec, goal, spec.reward_range.1)
        }
    }
}

fn base_goal(spec: &TaskFamilySpec) -> usize {
    stream(&[spec.base_seed, TAG_BASE_GOAL]).random_range(0..GRID_STATES)
}

fn grid_step(state: usize, action: usize) -> usize {
    let (r, c) = (state / GRID_SIDE, state % GRID_SIDE);
    let (r, c) = match action {
        0 if r > 0 => (r - 1, c),
        1 if r + 1 < GRID_SIDE => (r + 1, c),
        2 if c > 0 => (r, c - 1),
        3 if c + 1 < GRID_SIDE => (r, c + 1),
        _ => (r, c),
    };
    r * GRID_SIDE + c
}

/// 5x5 grid, actions up/down/left/right. Occupying the goal pays
/// `goal_reward` for every action; all other cells pay `r_min`.
fn gridworld(spec: &TaskFamilySpec, goal: usize, goal_reward: f64) -> Mdp {
    let (ns, na) = (GRID_STATES, GRID_ACTIONS);
    let mut transitions = vec![0.0; ns * na * ns];
    let mut rewards = vec![spec.reward_range.0; ns * na];
    for s in 0..ns {
        for a in 0..na {
            let row = &mut transitions[(s * na + a) * ns..(s * na + a + 1) * ns];
            row[grid_step(s, a)] += GRID_MOVE_SUCCESS;
            row[s] += 1.0 - GRID_MOVE_SUCCESS;
            if s == goal {
                rewards[s * na + a] = goal_reward;
            }
        }
    }
    Mdp {
        n_states: ns,
        n_actions: na,
        transitions,
        rewards,
        discount: spec.discount,
        start_dist: uniform_start(ns),
        reward_range: spec.reward_range,
    }
}

/// The task at `task_index` of the family described by `spec`.
///
/// `perturbed_random`: `P_i = (1 - σ) P_base + σ P_i^rand` and
/// `R_i = clamp(R_base + σ ε_i)`, with `ε_i` uniform on `±span/2`.
/// `perturbed_gridworld`: with probability σ the goal moves to a uniformly
/// drawn cell, and the goal reward is `clamp(r_max + σ ε_i)`.
pub fn sample_task(spec: &TaskFamilySpec, task_index: u64) -> Mdp {
    let sigma = spec.complexity_sigma;
    let (lo, hi) = spec.reward_range;
    let half_span = spec.span() / 2.0;
    let mut reward_rng = stream(&[spec.base_seed, task_index, TAG_TASK_REWARDS]);
    match spec.family_kind {
        FamilyKind::PerturbedRandom => {
            let mut mdp = base_mdp(spec);
            let (ns, na) = (spec.n_states, spec.n_actions);
            let noise = random_transitions(&mut stream(&[spec.base_seed, task_index, TAG_TASK_TRANSITIONS]), ns, na);
            for (p, q) in mdp.transitions.iter_mut().zip(&noise) {
                *p = (1.0 - sigma) * *p + sigma * q;
            }
            for r in &mut mdp.rewards {
                let eps = reward_rng.random_range(-half_span..=half_span);
                *r = (*r + sigma * eps).clamp(lo, hi);
            }
            mdp
        }
        FamilyKind::PerturbedGridworld => {
            let mut goal_rng = stream(&[spec.base_seed, task_index, TAG_TASK_GOAL]);
            let relocate = goal_rng.random::<f64>() < sigma;
            let random_goal = goal_rng.random_range(0..GRID_STATES);
            let goal = if relocate { random_goal } else { base_goal(spec) };
            let eps = reward_rng.random_range(-half_span..=half_span);
            gridworld(spec, goal, (hi + sigma * eps).clamp(lo, hi))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskRole {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexedTask {
    pub task_index: u64,
    pub mdp: Mdp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSet {
    pub spec: TaskFamilySpec,
    pub tasks: Vec<IndexedTask>,
    pub role_tag: TaskRole,
}

impl TaskSet {
    /// Samples tasks `first_index .. first_index + count`.
    pub fn sample(spec: &TaskFamilySpec, first_index: u64, count: usize, role: TaskRole) -> Result<Self> {
        spec.validate()?;
        let last = first_index
            .checked_add(count as u64)
            .ok_or_else(|| Error::InvalidArgument("task index range overflows u64".into()))?;
        let tasks = (first_index..last)
            .into_par_iter()
            .map(|i| IndexedTask {
                task_index: i,
                mdp: sample_task(spec, i),
            })
            .collect();
        Ok(Self {
            spec: spec.clone(),
            tasks,
            role_tag: role,
        })
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn mdps(&self) -> Vec<&Mdp> {
        self.tasks.iter().map(|t| &t.mdp).collect()
    }

    pub fn indices(&self) -> Vec<u64> {
        self.tasks.iter().map(|t| t.task_index).collect()
    }

    /// Checks index ordering and per-task validity.
    pub fn validate(&self) -> Result<()> {
        if self.tasks.windows(2).any(|w| w[0].task_index >= w[1].task_index) {
            return Err(Error::InvalidArgument(
                "task indices must be unique and ascending".into(),
            ));
        }
        for t in &self.tasks {
            validate_mdp(&t.mdp)
                .into_result()
                .map_err(|e| Error::InvalidMdp(format!("task {}: {e}", t.task_index)))?;
        }
        Ok(())
    }
}

/// Train tasks use indices `[0, n_train)`, test tasks `[n_train, n_train + n_test)`.
pub fn make_split(spec: &TaskFamilySpec, n_train: usize, n_test: usize) -> Result<(TaskSet, TaskSet)> {
    if n_train == 0 || n_test == 0 {
        return Err(Error::InvalidArgument("n_train and n_test must be at least 1".into()));
    }
    let train = TaskSet::sample(spec, 0, n_train, TaskRole::Train)?;
    let test = TaskSet::sample(spec, n_train as u64, n_test, TaskRole::Test)?;
    Ok((train, test))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexityEstimate {
    /// Sample standard deviation of optimal start-weighted returns.
    pub optimal_return_std: f64,
    /// Mean over unordered task pairs of the per-(s, a) L1 distance between
    /// transition rows.
    pub mean_transition_divergence: f64,
    pub n_tasks_used: usize,
}

/// `(1 / (S A)) * sum |P_i - P_j|` over all transition entries.
pub fn transition_divergence(a: &Mdp, b: &Mdp) -> f64 {
    let total: f64 = a
        .transitions
        .iter()
        .zip(&b.transitions)
        .map(|(x, y)| (x - y).abs())
        .sum();
    total / (a.n_states * a.n_actions) as f64
}

pub fn estimate_complexity(tasks: &TaskSet) -> Result<ComplexityEstimate> {
    estimate_complexity_of(&tasks.mdps())
}

pub fn estimate_complexity_of(mdps: &[&Mdp]) -> Result<ComplexityEstimate> {
    let n = mdps.len();
    if n < 2 {
        return Err(Error::InsufficientData(format!(
            "complexity needs at least 2 tasks, got {n}"
        )));
    }
    let optimal: Vec<f64> = mdps
        .par_iter()
        .map(|m| value_iteration(m, OPTIMAL_TOL).map(|sol| sol.start_value(m)))
        .collect::<Result<_>>()?;
    let mean = optimal.iter().sum::<f64>() / n as f64;
    let var = optimal.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;

    let row_sums: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| (i + 1..n).map(|j| transition_divergence(mdps[i], mdps[j])).sum::<f64>())
        .collect();
    let pairs = (n * (n - 1) / 2) as f64;
    Ok(ComplexityEstimate {
        optimal_return_std: var.sqrt(),
        mean_transition_divergence: row_sums.iter().sum::<f64>() / pairs,
        n_tasks_used: n,
    })
}
