use metabound::bounds::{
    bernstein_interval, bernstein_radius, fit_bound_scaling, hoeffding_interval, hoeffding_radius, rademacher_estimate,
};
use metabound::seed::stream;
use proptest::prelude::*;
use rand::Rng;

#[test]
fn intervals_cover_bernoulli_mean() {
    let mut rng = stream(&[808]);
    let (mut hoeff, mut bern) = (0, 0);
    for _ in 0..2000 {
        let draws: Vec<f64> = (0..50).map(|_| (rng.random::<f64>() < 0.3) as u8 as f64).collect();
        hoeff += hoeffding_interval(&draws, 1.0, 0.95).unwrap().contains(0.3) as usize;
        bern += bernstein_interval(&draws, 1.0, 0.95).unwrap().contains(0.3) as usize;
    }
    assert!(hoeff >= 1900, "hoeffding covered {hoeff}/2000");
    assert!(bern >= 1900, "bernstein covered {bern}/2000");
}

#[test]
fn hoeffding_radius_closed_form() {
    let r = hoeffding_radius(100, 1.0, 0.95).unwrap();
    assert!((r - (40f64.ln() / 200.0).sqrt()).abs() < 1e-15);
    assert!((hoeffding_radius(100, 2.0, 0.95).unwrap() - 2.0 * r).abs() < 1e-15);
}

#[test]
fn rademacher_of_sign_class() {
    // Columns are +x and -x for x all ones: value is E|sum of signs| / n = 0.375 at n = 4.
    let matrix: Vec<Vec<f64>> = (0..4).map(|_| vec![1.0, -1.0]).collect();
    let est = rademacher_estimate(&matrix, 10_000, 1).unwrap();
    assert!((est.value - 0.375).abs() <= 3.0 * est.std_error, "{est:?}");
    let other = rademacher_estimate(&matrix, 10_000, 2).unwrap();
    let se = (est.std_error.powi(2) + other.std_error.powi(2)).sqrt();
    assert!((est.value - other.value).abs() <= 4.0 * se);
}

#[test]
fn rademacher_of_shattering_class_is_one() {
    let n = 6;
    let matrix: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..1u32 << n)
                .map(|mask| if mask >> i & 1 == 1 { 1.0 } else { -1.0 })
                .collect()
        })
        .collect();
    let est = rademacher_estimate(&matrix, 500, 3).unwrap();
    assert!((est.value - 1.0).abs() < 1e-12);
}

#[test]
fn planted_scaling_recovered() {
    let ns = [4usize, 8, 16, 32, 64, 128];
    for b in [-0.25, -0.5, -1.0] {
        let rows: Vec<_> = ns.iter().map(|&n| (n, vec![1.3 * (n as f64).powf(b); 4])).collect();
        let fit = fit_bound_scaling(&rows, 1.0).unwrap();
        assert!((fit.fitted_exponent - b).abs() <= 1e-9);
        assert!((fit.fitted_intercept - 1.3f64.ln()).abs() <= 1e-9);
        assert!(fit.r_squared > 1.0 - 1e-12);
    }
    let c = 0.8;
    let rows: Vec<_> = ns
        .iter()
        .map(|&n| (n, vec![0.7 * (c * (n as f64).ln() / n as f64).sqrt(); 2]))
        .collect();
    let k = fit_bound_scaling(&rows, c).unwrap().constant_k.unwrap();
    assert!((k - 0.7).abs() <= 1e-9);
}

#[test]
fn fit_needs_three_grid_points() {
    let rows = [(8, vec![0.1, 0.2]), (16, vec![0.05])];
    assert!(matches!(
        fit_bound_scaling(&rows, 1.0),
        Err(metabound::Error::InsufficientData(_))
    ));
}

proptest! {
    #[test]
    fn radii_shrink_with_n(n in 2usize..5000, w in 0.01f64..10.0, var in 0.0f64..1.0) {
        let h1 = hoeffding_radius(n, w, 0.95).unwrap();
        let h2 = hoeffding_radius(4 * n, w, 0.95).unwrap();
        prop_assert!((h1 / h2 - 2.0).abs() < 1e-12);
        let v = var * w * w / 4.0;
        prop_assert!(bernstein_radius(4 * n, v, w, 0.95).unwrap() < bernstein_radius(n, v, w, 0.95).unwrap());
    }

    #[test]
    fn interval_contains_sample_mean(xs in prop::collection::vec(0.0f64..1.0, 2..200)) {
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        prop_assert!(hoeffding_interval(&xs, 1.0, 0.9).unwrap().contains(m));
        prop_assert!(bernstein_interval(&xs, 1.0, 0.9).unwrap().contains(m));
    }
}
