//! Condition numbers, deviation and risk bounds, and confidence intervals.

mod confint;
mod psi;
mod theta;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::Result;

pub use confint::{confint_linear, ConfintProgram, Interval};
pub use psi::{coverage_inverse, coverage_level, deviation_bound, psi_bounds, DeviationBound};
pub use theta::{box_max_upper, gram_blocks, theta_1_lower, theta_2, theta_inf, theta_p, PNorm};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskBound {
    pub p: PNorm,
    pub bound: f64,
    pub deviation: DeviationBound,
    pub theta_p: f64,
    /// Certified lower bound on `theta_1`, not its exact value.
    pub theta_1_lower: f64,
}

/// `delta_inf / sqrt(theta_p * theta_1)` with the certified `theta_1` lower bound.
pub fn risk_bound(
    blocks: &[DMatrix<f64>],
    horizon: usize,
    kappa: usize,
    epsilon: f64,
    p: PNorm,
) -> Result<RiskBound> {
    let deviation = deviation_bound(horizon, kappa, epsilon, 1.0)?;
    let t1 = theta_1_lower(blocks)?;
    let tp = if p == PNorm::L1 { t1 } else { theta_p(blocks, p)? };
    Ok(RiskBound {
        p,
        bound: deviation.delta_inf / (tp * t1).sqrt(),
        deviation,
        theta_p: tp,
        theta_1_lower: t1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_risk_composition() {
        let a = vec![DMatrix::<f64>::identity(3, 3)];
        for p in [PNorm::L1, PNorm::L2, PNorm::Inf] {
            let r = risk_bound(&a, 100, 3, 0.1, p).unwrap();
            let want = r.deviation.delta_inf / (r.theta_p * r.theta_1_lower).sqrt();
            assert_eq!(r.bound, want);
        }
    }
}
