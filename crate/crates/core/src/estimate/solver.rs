//! First-order methods over one location block: monotone accelerated
//! projected gradient and projected extragradient.

use crate::error::{Error, Result};
use crate::linalg::{dist2, dot};

use super::StepRule;

/// Per-iteration shrink factor of the backtracking curvature estimate.
const LIPSCHITZ_DECAY: f64 = 0.9;

pub(crate) struct Problem<'a> {
    /// Objective; `None` outside the domain.
    pub value: &'a dyn Fn(&[f64]) -> Option<f64>,
    /// Objective and gradient; `None` outside the domain.
    pub value_grad: &'a dyn Fn(&[f64], &mut [f64]) -> Option<f64>,
    pub project: &'a dyn Fn(&[f64]) -> Result<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub(crate) struct Outcome {
    pub x: Vec<f64>,
    pub trace: Vec<f64>,
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

pub(crate) struct Settings {
    pub max_iter: usize,
    pub tol: f64,
    pub rule: StepRule,
    pub restart: bool,
    pub lipschitz: f64,
}

/// Gradient-mapping residual `L |x - P(x - g/L)|` at `x`.
fn mapping_residual(p: &Problem, x: &[f64], l: f64, g: &mut [f64]) -> Result<f64> {
    if (p.value_grad)(x, g).is_none() {
        return Ok(f64::INFINITY);
    }
    let step: Vec<f64> = x.iter().zip(g.iter()).map(|(a, b)| a - b / l).collect();
    let z = (p.project)(&step)?;
    Ok(l * dist2(x, &z))
}

/// Minimizes a smooth convex function over the set behind `project`,
/// starting from a feasible in-domain point.
pub(crate) fn accelerated(p: &Problem, x0: Vec<f64>, s: &Settings) -> Result<Outcome> {
    let n = x0.len();
    let mut x = x0;
    let mut g = vec![0.0; n];
    let mut fx = (p.value)(&x)
        .ok_or_else(|| Error::Initialization("starting point is outside the objective domain".into()))?;
    let mut l = s.lipschitz.max(1e-12);
    let mut trace = vec![fx];
    let mut x_prev = x.clone();
    let mut y = x.clone();
    let mut t = 1.0f64;
    let mut residual = mapping_residual(p, &x, l, &mut g)?;
    if residual <= s.tol || n == 0 {
        return Ok(Outcome {
            x,
            trace,
            residual,
            iterations: 0,
            converged: true,
        });
    }
    let mut step = vec![0.0; n];
    let mut iterations = 0;
    for it in 1..=s.max_iter {
        iterations = it;
        let fy = match (p.value_grad)(&y, &mut g) {
            Some(v) => v,
            None => {
                // extrapolation left the domain: restart from x
                y.copy_from_slice(&x);
                t = 1.0;
                (p.value_grad)(&y, &mut g).expect("accepted iterate is in the domain")
            }
        };
        let mut z;
        let mut fz;
        let mut tries = 0;
        if s.rule == StepRule::BacktrackingArmijo {
            // let the curvature estimate shrink again after a sharp region
            l = (l * LIPSCHITZ_DECAY).max(s.lipschitz.min(l) * 1e-6);
        }
        loop {
            for i in 0..n {
                step[i] = y[i] - g[i] / l;
            }
            z = (p.project)(&step)?;
            fz = (p.value)(&z);
            let ok = match (s.rule, fz) {
                (_, None) => false,
                (StepRule::FixedLipschitz, Some(_)) => true,
                (StepRule::BacktrackingArmijo, Some(v)) => {
                    let d: Vec<f64> = z.iter().zip(&y).map(|(a, b)| a - b).collect();
                    let bound = fy + dot(&g, &d) + 0.5 * l * dot(&d, &d);
                    v <= bound + 1e-12 * (1.0 + fy.abs())
                }
            };
            if ok {
                break;
            }
            l *= 2.0;
            tries += 1;
            if tries > 60 {
                return Err(Error::LineSearch(format!(
                    "no acceptable step after {tries} halvings (L = {l:.3e})"
                )));
            }
        }
        let fz = fz.expect("accepted step is in the domain");
        let map_res = l * dist2(&y, &z);
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        // a plain projected-gradient step from x descends in exact
        // arithmetic; accepting it keeps the iteration moving once value
        // differences fall below rounding
        let from_x = y == x;
        let improved = fz <= fx || from_x;
        let x_new = if improved { z.clone() } else { x.clone() };
        let fx_new = if improved { fz } else { fx };
        // momentum: y = x_new + (t/t') (z - x_new) + ((t-1)/t') (x_new - x)
        let mut restart = !improved && s.restart;
        if s.restart && improved {
            // gradient-based adaptive restart
            let v: f64 = (0..n).map(|i| (y[i] - z[i]) * (z[i] - x[i])).sum();
            restart = v > 0.0;
        }
        x_prev.copy_from_slice(&x);
        x = x_new;
        fx = fx_new;
        trace.push(fx);
        if restart {
            t = 1.0;
            y.copy_from_slice(&x);
        } else {
            for i in 0..n {
                y[i] = x[i] + (t / t_next) * (z[i] - x[i]) + ((t - 1.0) / t_next) * (x[i] - x_prev[i]);
            }
            t = t_next;
        }
        if map_res <= s.tol || it % 25 == 0 {
            residual = mapping_residual(p, &x, l, &mut g)?;
            if residual <= s.tol {
                return Ok(Outcome {
                    x,
                    trace,
                    residual,
                    iterations: it,
                    converged: true,
                });
            }
        }
    }
    residual = mapping_residual(p, &x, l, &mut g)?;
    Ok(Outcome {
        x,
        trace,
        residual,
        converged: residual <= s.tol,
        iterations,
    })
}

/// Projected extragradient for a monotone field `F` (given by `field`).
/// The trace records the natural residual `|x - P(x - gamma F(x))| / gamma`.
pub(crate) fn extragradient(
    field: &dyn Fn(&[f64], &mut [f64]),
    project: &dyn Fn(&[f64]) -> Result<Vec<f64>>,
    x0: Vec<f64>,
    gamma0: f64,
    max_iter: usize,
    tol: f64,
) -> Result<Outcome> {
    let n = x0.len();
    let mut x = x0;
    let mut fx = vec![0.0; n];
    let mut fy = vec![0.0; n];
    let mut gamma = gamma0;
    let mut trace = Vec::new();
    let mut residual = f64::INFINITY;
    let mut step = vec![0.0; n];
    for it in 0..=max_iter {
        field(&x, &mut fx);
        let mut halvings = 0;
        let y = loop {
            for i in 0..n {
                step[i] = x[i] - gamma * fx[i];
            }
            let y = project(&step)?;
            residual = dist2(&x, &y) / gamma;
            if residual <= tol || it == max_iter {
                break y;
            }
            field(&y, &mut fy);
            let df = dist2(&fy, &fx);
            if gamma * df <= 0.9 * dist2(&y, &x) {
                break y;
            }
            gamma *= 0.5;
            halvings += 1;
            if halvings > 80 {
                return Err(Error::LineSearch(format!(
                    "extragradient step collapsed to {gamma:.3e} at iteration {it}"
                )));
            }
        };
        trace.push(residual);
        if residual <= tol {
            return Ok(Outcome {
                x,
                trace,
                residual,
                iterations: it,
                converged: true,
            });
        }
        if it == max_iter {
            break;
        }
        let _ = y;
        for i in 0..n {
            step[i] = x[i] - gamma * fy[i];
        }
        x = project(&step)?;
    }
    Ok(Outcome {
        x,
        trace,
        residual,
        iterations: max_iter,
        converged: false,
    })
}
