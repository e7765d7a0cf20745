mod common;

use common::{random_mdp, random_params};
use metabound::mdp::exact_policy_gradient;
use metabound::meta::{adapt, meta_gradient, meta_loss, meta_train, MetaConfig, MetaMode, Schedule};
use metabound::seed::stream;
use metabound::tasks::{sample_task, FamilyKind, TaskFamilySpec};
use metabound::{Mdp, PolicyParams};

fn config(mode: MetaMode, inner_steps: usize) -> MetaConfig {
    MetaConfig {
        inner_lr: 0.4,
        inner_steps,
        meta_batch: 3,
        schedule: Schedule::constant(0.2),
        mode,
        max_iters: 50,
        grad_tol: 1e-3,
    }
}

fn numeric_meta_gradient(tasks: &[&Mdp], params: &PolicyParams, cfg: &MetaConfig) -> metabound::Table {
    let h = 1e-5;
    let mut out = params.logits.clone();
    for s in 0..params.n_states() {
        for a in 0..params.n_actions() {
            let mut up = params.logits.clone();
            up.set(s, a, up.get(s, a) + h);
            let mut down = params.logits.clone();
            down.set(s, a, down.get(s, a) - h);
            let lu = meta_loss(tasks, &PolicyParams::from_logits(up).unwrap(), cfg).unwrap();
            let ld = meta_loss(tasks, &PolicyParams::from_logits(down).unwrap(), cfg).unwrap();
            out.set(s, a, (lu - ld) / (2.0 * h));
        }
    }
    out
}

#[test]
fn full_meta_gradient_matches_finite_differences() {
    let mut rng = stream(&[31]);
    for i in 0..20 {
        let s = 1 + i % 4;
        let tasks: Vec<Mdp> = (0..3).map(|_| random_mdp(&mut rng, s, 3, 0.85)).collect();
        let refs: Vec<&Mdp> = tasks.iter().collect();
        let params = random_params(&mut rng, s, 3, 0.7);
        let cfg = config(MetaMode::Full, 1 + i % 3);
        let exact = meta_gradient(&refs, &params, &cfg).unwrap();
        let fd = numeric_meta_gradient(&refs, &params, &cfg);
        let err = exact.relative_error(&fd);
        assert!(err <= 1e-4, "instance {i}: {err:e}");
    }
}

#[test]
fn first_order_drops_curvature_but_agrees_at_zero_steps() {
    let mut rng = stream(&[32]);
    let tasks: Vec<Mdp> = (0..3).map(|_| random_mdp(&mut rng, 4, 3, 0.9)).collect();
    let refs: Vec<&Mdp> = tasks.iter().collect();
    let params = random_params(&mut rng, 4, 3, 0.5);
    let full = meta_gradient(&refs, &params, &config(MetaMode::Full, 0)).unwrap();
    let fo = meta_gradient(&refs, &params, &config(MetaMode::FirstOrder, 0)).unwrap();
    assert!(full.relative_error(&fo) <= 1e-12);

    let full = meta_gradient(&refs, &params, &config(MetaMode::Full, 2)).unwrap();
    let fo = meta_gradient(&refs, &params, &config(MetaMode::FirstOrder, 2)).unwrap();
    assert!(full.relative_error(&fo) > 1e-6);
}

#[test]
fn adaptation_improves_return_for_small_steps() {
    let mut rng = stream(&[33]);
    let mdp = random_mdp(&mut rng, 5, 3, 0.9);
    let params = random_params(&mut rng, 5, 3, 0.5);
    let before = metabound::mdp::exact_policy_return(&mdp, &params).unwrap().return_value;
    let adapted = adapt(&mdp, &params, 0.1, 3).unwrap();
    let after = metabound::mdp::exact_policy_return(&mdp, &adapted)
        .unwrap()
        .return_value;
    assert!(after > before);
}

#[test]
fn training_is_deterministic_in_seed() {
    let mut rng = stream(&[34]);
    let tasks: Vec<Mdp> = (0..6).map(|_| random_mdp(&mut rng, 3, 2, 0.9)).collect();
    let refs: Vec<&Mdp> = tasks.iter().collect();
    let cfg = config(MetaMode::Full, 1);
    let a = meta_train(&refs, &cfg, 5).unwrap();
    let b = meta_train(&refs, &cfg, 5).unwrap();
    assert_eq!(a, b);
    let c = meta_train(&refs, &cfg, 6).unwrap();
    assert_ne!(a.loss_history, c.loss_history);
}

#[test]
fn zero_variability_reduces_to_single_task_ascent() {
    let spec = TaskFamilySpec {
        family_kind: FamilyKind::PerturbedRandom,
        n_states: 4,
        n_actions: 3,
        discount: 0.9,
        complexity_sigma: 0.0,
        reward_range: (0.0, 1.0),
        base_seed: 8,
    };
    let tasks: Vec<Mdp> = (0..4).map(|i| sample_task(&spec, i)).collect();
    let refs: Vec<&Mdp> = tasks.iter().collect();
    let cfg = MetaConfig {
        meta_batch: 2,
        max_iters: 100,
        grad_tol: 1e-12,
        ..config(MetaMode::FirstOrder, 0)
    };
    let state = meta_train(&refs, &cfg, 1).unwrap();

    let mut theta = PolicyParams::zeros(4, 3);
    for t in 0..100 {
        let g = exact_policy_gradient(&tasks[0], &theta).unwrap();
        theta.logits.add_scaled(cfg.schedule.rate(t), &g);
    }
    assert!(state.params.logits.relative_error(&theta.logits) <= 1e-2);
}
