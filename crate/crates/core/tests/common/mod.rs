#![allow(dead_code)]

use metabound::harness::{parse_config, ExperimentConfig};
use metabound::{Mdp, PolicyParams, Table};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};

/// Rows drawn from a flat Dirichlet, rewards uniform on [0, 1].
pub fn random_mdp(rng: &mut ChaCha8Rng, n_states: usize, n_actions: usize, discount: f64) -> Mdp {
    let mut transitions = Vec::with_capacity(n_states * n_actions * n_states);
    for _ in 0..n_states * n_actions {
        transitions.extend(simplex(rng, n_states));
    }
    let rewards = (0..n_states * n_actions).map(|_| rng.random::<f64>()).collect();
    Mdp {
        n_states,
        n_actions,
        transitions,
        rewards,
        discount,
        start_dist: simplex(rng, n_states),
        reward_range: (0.0, 1.0),
    }
}

pub fn simplex(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| Exp1.sample(rng)).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|x| x / total).collect()
}

pub fn random_params(rng: &mut ChaCha8Rng, n_states: usize, n_actions: usize, scale: f64) -> PolicyParams {
    let values = (0..n_states * n_actions)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            scale * z
        })
        .collect();
    PolicyParams::from_logits(Table::from_values(n_states, n_actions, values).unwrap()).unwrap()
}

/// Small perturbed_random family used by the end-to-end checks.
pub fn benchmark_config(sigma_grid: &[f64], n_train_grid: &[usize], n_seeds: usize) -> ExperimentConfig {
    let text = format!(
        r#"{{
  "family": {{"family_kind": "perturbed_random", "n_states": 5, "n_actions": 3, "discount": 0.9,
             "reward_range": [0.0, 1.0], "base_seed": 2024}},
  "meta": {{"inner_lr": 1.0, "inner_steps": 3, "meta_batch": 4,
           "schedule": {{"base_rate": 1.0, "exponent": 0.6}}, "mode": "first_order",
           "max_iters": 500, "grad_tol": 1e-3}},
  "n_train_grid": {n_train_grid:?},
  "sigma_grid": {sigma_grid:?},
  "n_seeds": {n_seeds},
  "master_seed": 7,
  "comparison": {{"lr": 1.0, "budget": 5}}
}}"#
    );
    parse_config(&text).unwrap()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
