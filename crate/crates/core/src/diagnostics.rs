//! Convergence classification of meta-training runs.
//!
//! The excess loss is `e_t = loss_t - min(loss) + δ`, where `δ >= 0` absorbs
//! the gap between the last observed loss and the true limit. `δ` is chosen
//! per model (log-linear or log-log) to maximise the fit's R²; `δ = 0`
//! recovers the plain `loss_t - min(loss)` definition. Time is 1-based.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::meta::MetaState;
use crate::stats::{fit_line, fit_quadratic, LineFit};

/// Minimum R² for a fit to classify a run.
pub const R2_THRESHOLD: f64 = 0.98;
/// Superlinear when the fitted log-excess slope at the end of the run is at
/// least this many times steeper than at the start.
pub const SUPERLINEAR_STEEPENING: f64 = 2.0;

const OFFSET_GRID: usize = 240;
const OFFSET_REFINE: usize = 80;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateClass {
    Linear,
    Sublinear,
    Superlinear,
    Undetermined,
}

impl RateClass {
    pub fn as_str(&self) -> &'static str {
        match self {
            RateClass::Linear => "linear",
            RateClass::Sublinear => "sublinear",
            RateClass::Superlinear => "superlinear",
            RateClass::Undetermined => "undetermined",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub converged: bool,
    pub rate_class: RateClass,
    /// Slope of the winning fit: per-iteration log-rate for linear and
    /// superlinear (initial slope), log-log exponent for sublinear.
    pub fitted_rate: f64,
    pub window: usize,
    /// Mean gradient norm over the last `window` iterations.
    pub final_grad_norm: f64,
}

#[derive(Debug, Clone, Copy)]
enum Axis {
    Iteration,
    LogIteration,
}

fn fit_with_offset(losses: &[f64], min: f64, delta: f64, axis: Axis) -> Option<LineFit> {
    let mut xs = Vec::with_capacity(losses.len());
    let mut ys = Vec::with_capacity(losses.len());
    for (i, &l) in losses.iter().enumerate() {
        let e = l - min + delta;
        if e > 0.0 {
            let t = (i + 1) as f64;
            xs.push(match axis {
                Axis::Iteration => t,
                Axis::LogIteration => t.ln(),
            });
            ys.push(e.ln());
        }
    }
    if xs.len() < 3 {
        return None;
    }
    fit_line(&xs, &ys)
}

/// Best fit over the asymptote offset: a coarse log-spaced grid then a
/// local refinement around the winner.
fn best_offset_fit(losses: &[f64], axis: Axis) -> Option<LineFit> {
    let min = losses.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = losses.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = max - min;
    let mut best = fit_with_offset(losses, min, 0.0, axis);
    if !(span > 0.0) {
        return best;
    }
    let better = |cand: Option<LineFit>, cur: Option<LineFit>| match (cand, cur) {
        (Some(c), Some(b)) if c.r_squared > b.r_squared => Some(c),
        (Some(c), None) => Some(c),
        (_, b) => b,
    };
    let (lo, hi) = ((span * 1e-12).ln(), span.ln());
    let step = (hi - lo) / OFFSET_GRID as f64;
    let mut best_u = None;
    for k in 0..=OFFSET_GRID {
        let u = lo + step * k as f64;
        let cand = fit_with_offset(losses, min, u.exp(), axis);
        let prev = best;
        best = better(cand, best);
        if best != prev {
            best_u = Some(u);
        }
    }
    if let Some(u0) = best_u {
        let fine = 2.0 * step / OFFSET_REFINE as f64;
        for k in 0..=OFFSET_REFINE {
            let u = u0 - step + fine * k as f64;
            best = better(fit_with_offset(losses, min, u.exp(), axis), best);
        }
    }
    best
}

/// Superlinear test: quadratic in `t` of the log excess (plain offset) whose
/// slope steepens by [`SUPERLINEAR_STEEPENING`] across the run.
fn superlinear_slope(losses: &[f64]) -> Option<f64> {
    let min = losses.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (i, &l) in losses.iter().enumerate() {
        let e = l - min;
        if e > 0.0 {
            xs.push((i + 1) as f64);
            ys.push(e.ln());
        }
    }
    if xs.len() < 4 {
        return None;
    }
    let ([_, c1, c2], r2) = fit_quadratic(&xs, &ys)?;
    let (t0, t1) = (xs[0], xs[xs.len() - 1]);
    let (s0, s1) = (c1 + 2.0 * c2 * t0, c1 + 2.0 * c2 * t1);
    (r2 >= R2_THRESHOLD && s0 < 0.0 && s1 <= SUPERLINEAR_STEEPENING * s0).then_some(s0)
}

/// Classifies the decay of a loss sequence.
pub fn classify_rate(losses: &[f64]) -> (RateClass, f64) {
    if losses.len() < 3 || losses.iter().any(|l| !l.is_finite()) {
        return (RateClass::Undetermined, 0.0);
    }
    if let Some(slope) = superlinear_slope(losses) {
        return (RateClass::Superlinear, slope);
    }
    let accept = |f: Option<LineFit>| f.filter(|f| f.r_squared >= R2_THRESHOLD && f.slope < 0.0);
    let linear = accept(best_offset_fit(losses, Axis::Iteration));
    let sublinear = accept(best_offset_fit(losses, Axis::LogIteration));
    match (linear, sublinear) {
        (Some(l), Some(s)) if s.r_squared > l.r_squared => (RateClass::Sublinear, s.slope),
        (Some(l), _) => (RateClass::Linear, l.slope),
        (None, Some(s)) => (RateClass::Sublinear, s.slope),
        (None, None) => (RateClass::Undetermined, 0.0),
    }
}

pub fn convergence_diagnostics(state: &MetaState, grad_tol: f64, window: usize) -> Result<ConvergenceReport> {
    diagnose_history(&state.loss_history, &state.grad_norm_history, grad_tol, window)
}

/// Same as [`convergence_diagnostics`] on bare loss and gradient-norm series.
pub fn diagnose_history(losses: &[f64], grad_norms: &[f64], grad_tol: f64, window: usize) -> Result<ConvergenceReport> {
    let n = grad_norms.len();
    if window < 2 {
        return Err(Error::InvalidArgument(format!(
            "window must be at least 2, got {window}"
        )));
    }
    if window > n || losses.len() != n {
        return Err(Error::InsufficientData(format!(
            "window {window} exceeds history length {n}"
        )));
    }
    let final_grad_norm = grad_norms[n - window..].iter().sum::<f64>() / window as f64;
    let (rate_class, fitted_rate) = classify_rate(losses);
    Ok(ConvergenceReport {
        converged: final_grad_norm < grad_tol,
        rate_class,
        fitted_rate,
        window,
        final_grad_norm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::PolicyParams;

    fn state(losses: Vec<f64>, grads: Vec<f64>) -> MetaState {
        MetaState {
            params: PolicyParams::zeros(1, 1),
            iteration: losses.len(),
            loss_history: losses,
            grad_norm_history: grads,
            rng_cursor: 0,
        }
    }

    #[test]
    fn geometric_decay_is_linear() {
        let losses: Vec<f64> = (1..=40).map(|t| 2f64.powi(-t) + 1.0).collect();
        let (class, rate) = classify_rate(&losses);
        assert_eq!(class, RateClass::Linear);
        assert!(
            (rate + std::f64::consts::LN_2).abs() <= 0.05 * std::f64::consts::LN_2,
            "{rate}"
        );
    }

    #[test]
    fn harmonic_decay_is_sublinear() {
        let losses: Vec<f64> = (1..=200).map(|t| 1.0 / t as f64 + 1.0).collect();
        let (class, rate) = classify_rate(&losses);
        assert_eq!(class, RateClass::Sublinear);
        assert!((rate + 1.0).abs() <= 0.05, "{rate}");
    }

    #[test]
    fn doubly_exponential_decay_is_superlinear() {
        let losses: Vec<f64> = (1..=6).map(|t| (-(1.6f64.powi(t))).exp() + 1.0).collect();
        assert_eq!(classify_rate(&losses).0, RateClass::Superlinear);
    }

    #[test]
    fn noise_is_undetermined() {
        let losses = vec![1.0, 3.0, 0.5, 2.5, 0.9, 3.1, 0.2, 2.0];
        assert_eq!(classify_rate(&losses).0, RateClass::Undetermined);
    }

    #[test]
    fn tiny_gradients_converge() {
        let s = state(vec![1.0; 20], vec![1e-6; 20]);
        let r = convergence_diagnostics(&s, 1e-3, 5).unwrap();
        assert!(r.converged);
        assert!(r.final_grad_norm < 1e-3);
        assert_eq!(r.rate_class, RateClass::Undetermined);
    }

    #[test]
    fn window_longer_than_history_rejected() {
        let s = state(vec![1.0; 3], vec![1.0; 3]);
        assert!(matches!(
            convergence_diagnostics(&s, 1e-3, 4),
            Err(Error::InsufficientData(_))
        ));
    }
}
