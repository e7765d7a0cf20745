//! Generalization gaps, suboptimality, concentration radii, empirical
//! Rademacher complexity and the `sqrt(C ln N / N)` scaling fit.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{evaluate_deterministic, exact_policy_return, value_iteration, Mdp};
use crate::policy::PolicyParams;
use crate::seed::stream;
use crate::stats::{fit_line, mean, sample_variance};
use crate::tasks::OPTIMAL_TOL;

/// Gaps below this are raised to it before taking logarithms.
pub const GAP_FLOOR: f64 = 1e-9;
pub const DEFAULT_CONFIDENCE: f64 = 0.95;
/// Slack allowed when checking returns against their theoretical range.
const RANGE_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapContext {
    pub sigma: f64,
    pub seed: u64,
    /// Interval every return lies in (reward range divided by `1 - γ`).
    pub return_range: (f64, f64),
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub n_train: usize,
    pub mean_train_return: f64,
    pub mean_test_return: f64,
    /// `mean_test_return - mean_train_return`.
    pub epsilon_gen_signed: f64,
    pub epsilon_gen_abs: f64,
    /// Hoeffding radius of the test-set mean.
    pub hoeffding_radius_test: f64,
    pub sigma: f64,
    pub seed: u64,
}

fn check_returns(name: &str, xs: &[f64], (lo, hi): (f64, f64)) -> Result<()> {
    if xs.is_empty() {
        return Err(Error::InsufficientData(format!("{name} returns are empty")));
    }
    let slack = RANGE_SLACK * (1.0 + lo.abs().max(hi.abs()));
    if let Some(x) = xs.iter().find(|&&x| !(x >= lo - slack && x <= hi + slack)) {
        return Err(Error::InvalidArgument(format!(
            "{name} return {x} outside [{lo}, {hi}]"
        )));
    }
    Ok(())
}

/// Test-expectation minus train-average of the returns.
pub fn generalization_gap(train_returns: &[f64], test_returns: &[f64], ctx: &GapContext) -> Result<GapReport> {
    check_returns("train", train_returns, ctx.return_range)?;
    check_returns("test", test_returns, ctx.return_range)?;
    let mean_train = mean(train_returns);
    let mean_test = mean(test_returns);
    let signed = mean_test - mean_train;
    let width = ctx.return_range.1 - ctx.return_range.0;
    let radius = if width > 0.0 {
        hoeffding_radius(test_returns.len(), width, ctx.confidence)?
    } else {
        0.0
    };
    Ok(GapReport {
        n_train: train_returns.len(),
        mean_train_return: mean_train,
        mean_test_return: mean_test,
        epsilon_gen_signed: signed,
        epsilon_gen_abs: signed.abs(),
        hoeffding_radius_test: radius,
        sigma: ctx.sigma,
        seed: ctx.seed,
    })
}

/// Mean over tasks of `L(τ, π*_τ) - L(τ, π_τ)` with per-task policies.
///
/// Never positive up to solver tolerance, since `π*` minimises the loss.
pub fn suboptimality_gap_per_task(tasks: &[&Mdp], params: &[PolicyParams]) -> Result<f64> {
    if tasks.is_empty() {
        return Err(Error::InsufficientData("suboptimality needs at least one task".into()));
    }
    if tasks.len() != params.len() {
        return Err(Error::Dimension(format!(
            "{} tasks but {} policies",
            tasks.len(),
            params.len()
        )));
    }
    let diffs: Vec<f64> = tasks
        .par_iter()
        .zip(params)
        .map(|(m, p)| {
            let opt = value_iteration(m, OPTIMAL_TOL)?;
            let l_star = evaluate_deterministic(m, &opt.policy)?.loss_value;
            let l_hat = exact_policy_return(m, p)?.loss_value;
            Ok(l_star - l_hat)
        })
        .collect::<Result<_>>()?;
    Ok(mean(&diffs))
}

/// Suboptimality of one shared policy across `tasks`. Its negation is the
/// regret.
pub fn suboptimality_gap(tasks: &[&Mdp], params: &PolicyParams) -> Result<f64> {
    suboptimality_gap_per_task(tasks, &vec![params.clone(); tasks.len()])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntervalMethod {
    Hoeffding,
    EmpiricalBernstein,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationInterval {
    pub center: f64,
    pub radius: f64,
    pub confidence: f64,
    pub method: IntervalMethod,
}

impl ConcentrationInterval {
    pub fn contains(&self, x: f64) -> bool {
        (x - self.center).abs() <= self.radius
    }
}

fn check_interval_args(range_width: f64, confidence: f64) -> Result<()> {
    if !(range_width > 0.0 && range_width.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "range width must be positive, got {range_width}"
        )));
    }
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "confidence must lie in (0, 1), got {confidence}"
        )));
    }
    Ok(())
}

/// `range_width * sqrt(ln(2 / (1 - confidence)) / (2 n))`.
pub fn hoeffding_radius(n: usize, range_width: f64, confidence: f64) -> Result<f64> {
    check_interval_args(range_width, confidence)?;
    if n == 0 {
        return Err(Error::InsufficientData("no samples".into()));
    }
    Ok(range_width * ((2.0 / (1.0 - confidence)).ln() / (2.0 * n as f64)).sqrt())
}

pub fn hoeffding_interval(samples: &[f64], range_width: f64, confidence: f64) -> Result<ConcentrationInterval> {
    let radius = hoeffding_radius(samples.len(), range_width, confidence)?;
    Ok(ConcentrationInterval {
        center: mean(samples),
        radius,
        confidence,
        method: IntervalMethod::Hoeffding,
    })
}

/// Empirical Bernstein radius (Maurer–Pontil form):
/// `sqrt(2 V ln(3/δ) / n) + 3 b ln(3/δ) / n` with `δ = 1 - confidence` and
/// `V` the unbiased sample variance.
pub fn bernstein_radius(n: usize, variance: f64, range_width: f64, confidence: f64) -> Result<f64> {
    check_interval_args(range_width, confidence)?;
    if n < 2 {
        return Err(Error::InsufficientData(format!(
            "empirical Bernstein needs at least 2 samples, got {n}"
        )));
    }
    let log_term = (3.0 / (1.0 - confidence)).ln();
    let n = n as f64;
    Ok((2.0 * variance * log_term / n).sqrt() + 3.0 * range_width * log_term / n)
}

pub fn bernstein_interval(samples: &[f64], range_width: f64, confidence: f64) -> Result<ConcentrationInterval> {
    let radius = bernstein_radius(samples.len(), sample_variance(samples), range_width, confidence)?;
    Ok(ConcentrationInterval {
        center: mean(samples),
        radius,
        confidence,
        method: IntervalMethod::EmpiricalBernstein,
    })
}

/// Monte-Carlo estimate of the empirical Rademacher complexity with its
/// standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RademacherEstimate {
    pub value: f64,
    pub std_error: f64,
    pub n_draws: usize,
}

/// `E_σ max_h (1/n) Σ_i σ_i loss[i][h]`, averaged over `n_sign_draws` sign
/// vectors from the stream keyed by `seed`. Rows are samples, columns
/// hypotheses.
pub fn rademacher_estimate(loss_matrix: &[Vec<f64>], n_sign_draws: usize, seed: u64) -> Result<RademacherEstimate> {
    let n = loss_matrix.len();
    let n_h = loss_matrix.first().map_or(0, Vec::len);
    if n == 0 || n_h == 0 {
        return Err(Error::InsufficientData("loss matrix is empty".into()));
    }
    if loss_matrix.iter().any(|row| row.len() != n_h) {
        return Err(Error::Dimension("loss matrix rows differ in length".into()));
    }
    if n_sign_draws == 0 {
        return Err(Error::InvalidArgument("need at least one sign draw".into()));
    }
    let mut rng = stream(&[seed, 0x5241_4445]);
    let mut signs = vec![0.0; n];
    let mut sups = Vec::with_capacity(n_sign_draws);
    for _ in 0..n_sign_draws {
        for s in &mut signs {
            *s = if rng.random::<bool>() { 1.0 } else { -1.0 };
        }
        let sup = (0..n_h)
            .map(|h| signs.iter().zip(loss_matrix).map(|(s, row)| s * row[h]).sum::<f64>())
            .fold(f64::NEG_INFINITY, f64::max);
        sups.push(sup / n as f64);
    }
    Ok(RademacherEstimate {
        value: mean(&sups),
        std_error: (sample_variance(&sups) / n_sign_draws as f64).sqrt(),
        n_draws: n_sign_draws,
    })
}

pub fn empirical_rademacher(loss_matrix: &[Vec<f64>], n_sign_draws: usize, seed: u64) -> Result<f64> {
    Ok(rademacher_estimate(loss_matrix, n_sign_draws, seed)?.value)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub n: usize,
    pub mean_gap: f64,
    pub std_gap: f64,
    pub n_seeds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundFit {
    /// Ascending in `n`.
    pub grid: Vec<GridPoint>,
    /// Slope of `ln mean_gap` against `ln N`.
    pub fitted_exponent: f64,
    pub fitted_intercept: f64,
    pub r_squared: f64,
    /// Least-squares `k` in `mean_gap ≈ k sqrt(C ln N / N)`; `None` when the
    /// model column is identically zero (e.g. `C = 0`).
    pub constant_k: Option<f64>,
}

/// Fits the scaling of mean gap against training-set size.
///
/// `rows` pairs each `N` with its per-seed gap values. Mean gaps are floored
/// at [`GAP_FLOOR`] before the log-log regression.
pub fn fit_bound_scaling(rows: &[(usize, Vec<f64>)], complexity: f64) -> Result<BoundFit> {
    let mut sorted: Vec<&(usize, Vec<f64>)> = rows.iter().collect();
    sorted.sort_by_key(|r| r.0);
    if sorted.windows(2).any(|w| w[0].0 == w[1].0) {
        return Err(Error::InvalidArgument("grid values of N must be distinct".into()));
    }
    if sorted.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "insufficient grid for fit: need at least 3 distinct N, got {}",
            sorted.len()
        )));
    }
    if let Some(r) = sorted.iter().find(|r| r.0 == 0 || r.1.is_empty()) {
        return Err(Error::InvalidArgument(format!("grid row N={} is empty or zero", r.0)));
    }
    let grid: Vec<GridPoint> = sorted
        .iter()
        .map(|(n, gaps)| GridPoint {
            n: *n,
            mean_gap: mean(gaps).max(GAP_FLOOR),
            std_gap: sample_variance(gaps).sqrt(),
            n_seeds: gaps.len(),
        })
        .collect();
    let xs: Vec<f64> = grid.iter().map(|g| (g.n as f64).ln()).collect();
    let ys: Vec<f64> = grid.iter().map(|g| g.mean_gap.ln()).collect();
    let line = fit_line(&xs, &ys).ok_or_else(|| Error::Numeric("degenerate log-log fit".into()))?;
    let model: Vec<f64> = grid
        .iter()
        .map(|g| {
            let n = g.n as f64;
            (complexity * n.ln() / n).sqrt()
        })
        .collect();
    let mm: f64 = model.iter().map(|m| m * m).sum();
    let constant_k =
        (mm > 0.0 && mm.is_finite()).then(|| model.iter().zip(&grid).map(|(m, g)| m * g.mean_gap).sum::<f64>() / mm);
    Ok(BoundFit {
        grid,
        fitted_exponent: line.slope,
        fitted_intercept: line.intercept,
        r_squared: line.r_squared,
        constant_k,
    })
}
