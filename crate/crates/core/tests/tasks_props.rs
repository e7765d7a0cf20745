use metabound::mdp::validate_mdp;
use metabound::tasks::{
    estimate_complexity, make_split, sample_task, transition_divergence, FamilyKind, TaskFamilySpec, TaskRole, TaskSet,
};
use proptest::prelude::*;

fn random_family(sigma: f64) -> TaskFamilySpec {
    TaskFamilySpec {
        family_kind: FamilyKind::PerturbedRandom,
        n_states: 5,
        n_actions: 3,
        discount: 0.9,
        complexity_sigma: sigma,
        reward_range: (0.0, 1.0),
        base_seed: 2024,
    }
}

fn grid_family(sigma: f64) -> TaskFamilySpec {
    TaskFamilySpec {
        family_kind: FamilyKind::PerturbedGridworld,
        n_states: 25,
        n_actions: 4,
        ..random_family(sigma)
    }
}

#[test]
fn divergence_grows_with_sigma() {
    let mut last = -1.0;
    for sigma in [0.0, 0.1, 0.3, 0.6, 1.0] {
        let spec = random_family(sigma);
        let base = sample_task(&spec.with_sigma(0.0), 0);
        let d: f64 = (0..20)
            .map(|i| transition_divergence(&base, &sample_task(&spec, i)))
            .sum::<f64>()
            / 20.0;
        assert!(d > last, "sigma {sigma}: {d} <= {last}");
        last = d;
    }
}

#[test]
fn complexity_higher_for_wider_family() {
    for make in [random_family as fn(f64) -> TaskFamilySpec, grid_family] {
        let low = TaskSet::sample(&make(0.1), 0, 100, TaskRole::Train).unwrap();
        let high = TaskSet::sample(&make(1.0), 0, 100, TaskRole::Train).unwrap();
        let c_low = estimate_complexity(&low).unwrap();
        let c_high = estimate_complexity(&high).unwrap();
        assert!(c_high.optimal_return_std > c_low.optimal_return_std);
        assert_eq!(c_high.n_tasks_used, 100);
    }
}

#[test]
fn zero_sigma_tasks_are_identical() {
    for spec in [random_family(0.0), grid_family(0.0)] {
        let a = sample_task(&spec, 3);
        let b = sample_task(&spec, 77);
        assert_eq!(a, b);
        assert_eq!(
            estimate_complexity(&TaskSet::sample(&spec, 0, 5, TaskRole::Test).unwrap())
                .unwrap()
                .optimal_return_std,
            0.0
        );
    }
}

#[test]
fn split_is_disjoint_and_reproducible() {
    let spec = random_family(0.5);
    let (train, test) = make_split(&spec, 8, 16).unwrap();
    let (train2, test2) = make_split(&spec, 8, 16).unwrap();
    assert_eq!(train, train2);
    assert_eq!(test, test2);
    let tr = train.indices();
    assert!(test.indices().iter().all(|i| !tr.contains(i)));
    assert_eq!((train.len(), test.len()), (8, 16));
}

#[test]
fn gridworld_rejects_wrong_shape() {
    let mut spec = grid_family(0.5);
    spec.n_states = 16;
    assert!(spec.validate().is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn sampled_tasks_are_valid(sigma in 0.0f64..=1.0, index in any::<u64>(), grid in any::<bool>()) {
        let spec = if grid { grid_family(sigma) } else { random_family(sigma) };
        let mdp = sample_task(&spec, index);
        prop_assert!(validate_mdp(&mdp).is_valid());
        prop_assert_eq!(&mdp, &sample_task(&spec, index));
    }
}
