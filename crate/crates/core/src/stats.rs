//! Small least-squares helpers.

use nalgebra::{Matrix3, Vector3};

/// Ordinary least-squares line `y = intercept + slope * x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineFit {
    pub intercept: f64,
    pub slope: f64,
    pub r_squared: f64,
}

/// Fits a line; `None` for fewer than two points or constant `x`.
pub fn fit_line(x: &[f64], y: &[f64]) -> Option<LineFit> {
    let n = x.len();
    if n < 2 || n != y.len() {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (xi, yi) in x.iter().zip(y) {
        let (dx, dy) = (xi - mx, yi - my);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = x
        .iter()
        .zip(y)
        .map(|(xi, yi)| (yi - intercept - slope * xi).powi(2))
        .sum();
    let r_squared = if syy == 0.0 {
        1.0
    } else {
        (1.0 - ss_res / syy).clamp(0.0, 1.0)
    };
    Some(LineFit {
        intercept,
        slope,
        r_squared,
    })
}

/// Quadratic least squares `y = c0 + c1 x + c2 x^2`; returns the
/// coefficients and R².
pub fn fit_quadratic(x: &[f64], y: &[f64]) -> Option<([f64; 3], f64)> {
    let n = x.len();
    if n < 3 || n != y.len() {
        return None;
    }
    // Centre and scale x for conditioning, then map coefficients back.
    let mx = x.iter().sum::<f64>() / n as f64;
    let sx = x.iter().map(|v| (v - mx).abs()).fold(0.0, f64::max);
    if sx == 0.0 {
        return None;
    }
    let mut ata = Matrix3::<f64>::zeros();
    let mut aty = Vector3::<f64>::zeros();
    for (xi, yi) in x.iter().zip(y) {
        let u = (xi - mx) / sx;
        let row = Vector3::new(1.0, u, u * u);
        ata += row * row.transpose();
        aty += row * *yi;
    }
    let b = ata.lu().solve(&aty)?;
    let (b0, b1, b2) = (b[0], b[1], b[2]);
    let c2 = b2 / (sx * sx);
    let c1 = b1 / sx - 2.0 * b2 * mx / (sx * sx);
    let c0 = b0 - b1 * mx / sx + b2 * mx * mx / (sx * sx);
    let my = y.iter().sum::<f64>() / n as f64;
    let (mut ss_res, mut ss_tot) = (0.0, 0.0);
    for (xi, yi) in x.iter().zip(y) {
        let u = (xi - mx) / sx;
        ss_res += (yi - (b0 + b1 * u + b2 * u * u)).powi(2);
        ss_tot += (yi - my).powi(2);
    }
    let r2 = if ss_tot == 0.0 {
        1.0
    } else {
        (1.0 - ss_res / ss_tot).clamp(0.0, 1.0)
    };
    Some(([c0, c1, c2], r2))
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance; zero for fewer than two samples.
pub fn sample_variance(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64
}

/// Median of a non-empty slice (mean of the middle pair for even lengths).
pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_line() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 - 0.5 * v).collect();
        let f = fit_line(&x, &y).unwrap();
        assert!((f.slope + 0.5).abs() < 1e-14);
        assert!((f.intercept - 2.0).abs() < 1e-14);
        assert_eq!(f.r_squared, 1.0);
    }

    #[test]
    fn exact_quadratic() {
        let x: Vec<f64> = (0..10).map(|v| v as f64 + 3.0).collect();
        let y: Vec<f64> = x.iter().map(|v| 1.0 - 0.3 * v - 0.05 * v * v).collect();
        let (c, r2) = fit_quadratic(&x, &y).unwrap();
        assert!((c[0] - 1.0).abs() < 1e-9);
        assert!((c[1] + 0.3).abs() < 1e-9);
        assert!((c[2] + 0.05).abs() < 1e-10);
        assert!(r2 > 1.0 - 1e-12);
    }

    #[test]
    fn medians() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
