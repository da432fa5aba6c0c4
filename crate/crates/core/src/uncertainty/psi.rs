//! Deviation bounds, Bernstein-type lower/upper envelopes and their coverage level.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviationBound {
    pub epsilon: f64,
    pub horizon: usize,
    pub kappa: usize,
    /// Row-norm factor; 1 for Boolean features.
    pub theta: f64,
    pub delta_inf: f64,
}

/// `Theta * [sqrt(ln(2 kappa / eps) / (2N)) + ln(2 kappa / eps) / (3N)]`.
pub fn deviation_bound(horizon: usize, kappa: usize, epsilon: f64, theta: f64) -> Result<DeviationBound> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::Input(format!("epsilon must lie in (0, 1), got {epsilon}")));
    }
    if horizon == 0 || kappa == 0 {
        return Err(Error::Input("deviation bound needs N >= 1 and kappa >= 1".into()));
    }
    if !(theta > 0.0) {
        return Err(Error::Input(format!("row-norm factor must be > 0, got {theta}")));
    }
    let n = horizon as f64;
    let lg = (2.0 * kappa as f64 / epsilon).ln();
    Ok(DeviationBound {
        epsilon,
        horizon,
        kappa,
        theta,
        delta_inf: theta * ((lg / (2.0 * n)).sqrt() + lg / (3.0 * n)),
    })
}

/// Roots in `mu` of `|nu - mu| = sqrt(2 y mu (1 - mu) / N) + y / (3N)` below
/// and above `nu`, with the boundary branches at `y / (3N)` and `1 - y / (3N)`.
pub fn psi_bounds(nu: f64, horizon: usize, y: f64) -> Result<(f64, f64)> {
    if !(0.0..=1.0).contains(&nu) {
        return Err(Error::Input(format!("nu must lie in [0, 1], got {nu}")));
    }
    if horizon == 0 {
        return Err(Error::Input("N must be >= 1".into()));
    }
    if !(y > 1.0) {
        return Err(Error::Input(format!("y must be > 1, got {y}")));
    }
    let n = horizon as f64;
    let denom = n + 2.0 * y;
    let lower = if nu > y / (3.0 * n) {
        let disc = 2.0 * n * nu * y + y * y / 3.0 - (2.0 * y / n) * (y / 3.0 - nu * n).powi(2);
        (n * nu + 2.0 * y / 3.0 - checked_sqrt(disc)?) / denom
    } else {
        0.0
    };
    let upper = if nu < 1.0 - y / (3.0 * n) {
        let disc = 2.0 * n * nu * y + 5.0 * y * y / 3.0 - (2.0 * y / n) * (y / 3.0 + nu * n).powi(2);
        (n * nu + 4.0 * y / 3.0 + checked_sqrt(disc)?) / denom
    } else {
        1.0
    };
    Ok((lower.clamp(0.0, 1.0), upper.clamp(0.0, 1.0)))
}

fn checked_sqrt(disc: f64) -> Result<f64> {
    // rounding can push an exact zero slightly negative
    if disc < -1e-9 * (1.0 + disc.abs()) {
        return Err(Error::Numerical(format!("negative discriminant {disc:e} in psi bounds")));
    }
    Ok(disc.max(0.0).sqrt())
}

/// `1 - 2 kappa e (y [ln((y-1) N) + 2] + 2) e^{-y}`.
pub fn coverage_level(y: f64, kappa: usize, horizon: usize) -> Result<f64> {
    if !(y > 1.0) {
        return Err(Error::Input(format!("y must be > 1, got {y}")));
    }
    if horizon == 0 || kappa == 0 {
        return Err(Error::Input("coverage level needs N >= 1 and kappa >= 1".into()));
    }
    Ok(level(y, kappa as f64, horizon as f64))
}

fn level(y: f64, kappa: f64, n: f64) -> f64 {
    let inner = y * (((y - 1.0) * n).ln() + 2.0) + 2.0;
    1.0 - 2.0 * kappa * std::f64::consts::E * inner * (-y).exp()
}

const Y_MAX: f64 = 700.0;

/// Smallest `y` on the increasing branch of `coverage_level` reaching `target`.
pub fn coverage_inverse(target: f64, kappa: usize, horizon: usize) -> Result<f64> {
    if !(target < 1.0) || target.is_nan() {
        return Err(Error::Unachievable(format!("coverage level {target} must be < 1")));
    }
    if horizon == 0 || kappa == 0 {
        return Err(Error::Input("coverage level needs N >= 1 and kappa >= 1".into()));
    }
    let (kf, nf) = (kappa as f64, horizon as f64);
    let f = |y: f64| level(y, kf, nf);
    let lo = turning_point(kf, nf);
    if f(Y_MAX) < target {
        return Err(Error::Unachievable(format!(
            "coverage level {target} needs y > {Y_MAX} (kappa = {kappa}, N = {horizon})"
        )));
    }
    if f(lo) >= target {
        return Ok(lo);
    }
    let (mut a, mut b) = (lo, Y_MAX);
    while b - a > 1e-12 * b {
        let mid = 0.5 * (a + b);
        if f(mid) >= target {
            b = mid;
        } else {
            a = mid;
        }
    }
    Ok(b)
}

/// Minimizer of the level over `y > 1`; the level increases to the right of it.
fn turning_point(kappa: f64, n: f64) -> f64 {
    let f = |y: f64| level(y, kappa, n);
    // coarse log-spaced scan, then golden-section refinement
    let mut best = (f64::INFINITY, 1.0 + 1e-9);
    let steps = 4000;
    for i in 0..=steps {
        let y = 1.0 + 1e-9 * (Y_MAX / 1e-9f64).powf(i as f64 / steps as f64);
        let v = f(y);
        if v < best.0 {
            best = (v, y);
        }
    }
    let ratio = (Y_MAX / 1e-9f64).powf(1.0 / steps as f64);
    let (mut a, mut b) = (
        1.0 + (best.1 - 1.0) / ratio,
        (1.0 + (best.1 - 1.0) * ratio).min(Y_MAX),
    );
    let g = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..200 {
        let c = b - g * (b - a);
        let d = a + g * (b - a);
        if f(c) < f(d) {
            b = d;
        } else {
            a = c;
        }
    }
    0.5 * (a + b)
}
