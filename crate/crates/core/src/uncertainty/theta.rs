//! Condition numbers `theta_p[A] = min g^T A g / |g|_p^2` of block-diagonal
//! PSD matrices.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::constraints::FeasibleSet;
use crate::error::{Error, Result};
use crate::linalg::sym_eigenvalues;
use crate::stats::SuffStats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PNorm {
    L1,
    L2,
    Inf,
}

/// Gram blocks of every `(k, p)` sub-problem restricted to its free
/// coordinates, in `(k, p)` order. Blocks with no free coordinate are skipped.
pub fn gram_blocks(stats: &SuffStats, set: Option<&FeasibleSet>) -> Vec<DMatrix<f64>> {
    let spec = stats.spec();
    let r = spec.reduced_len();
    let mut out = Vec::new();
    for k in 0..spec.locations() {
        for p in 1..=spec.categories() {
            let idx: Vec<usize> = (0..r)
                .filter(|&j| set.is_none_or(|s| !s.fixed()[spec.slot(k, j, p)]))
                .collect();
            if !idx.is_empty() {
                out.push(crate::linalg::submatrix(stats.gram(), r, &idx));
            }
        }
    }
    out
}

pub fn theta_2(blocks: &[DMatrix<f64>]) -> f64 {
    blocks
        .iter()
        .map(|a| sym_eigenvalues(a).first().copied().unwrap_or(f64::INFINITY))
        .fold(f64::INFINITY, f64::min)
}

/// `min_i min {x^T A x : |x|_inf <= 1, x_i = 1}` minimized over blocks.
pub fn theta_inf(blocks: &[DMatrix<f64>]) -> f64 {
    let mut best = f64::INFINITY;
    for a in dedup(blocks) {
        for i in 0..a.nrows() {
            best = best.min(box_qp(a, i));
        }
    }
    best
}

fn dedup(blocks: &[DMatrix<f64>]) -> Vec<&DMatrix<f64>> {
    let mut out: Vec<&DMatrix<f64>> = Vec::new();
    for b in blocks {
        if !out.iter().any(|o| *o == b) {
            out.push(b);
        }
    }
    out
}

fn quad(a: &DMatrix<f64>, x: &DVector<f64>) -> f64 {
    (x.transpose() * a * x)[(0, 0)]
}

/// Convex box QP with one coordinate pinned at 1, by cyclic coordinate
/// descent from several starts followed by an exact solve on the detected
/// active set.
fn box_qp(a: &DMatrix<f64>, pin: usize) -> f64 {
    let n = a.nrows();
    let starts: Vec<DVector<f64>> = vec![
        DVector::zeros(n),
        DVector::from_fn(n, |j, _| -a[(j, pin)].signum()),
        DVector::from_element(n, 1.0),
        DVector::from_element(n, -1.0),
    ];
    let mut best = f64::INFINITY;
    for mut x in starts {
        x[pin] = 1.0;
        for _ in 0..20_000 {
            let mut change = 0.0f64;
            for j in 0..n {
                if j == pin || a[(j, j)] <= 0.0 {
                    continue;
                }
                let off: f64 = (0..n).filter(|&l| l != j).map(|l| a[(j, l)] * x[l]).sum();
                let v = (-off / a[(j, j)]).clamp(-1.0, 1.0);
                change = change.max((v - x[j]).abs());
                x[j] = v;
            }
            if change < 1e-15 {
                break;
            }
        }
        let polished = polish(a, pin, &x);
        best = best.min(quad(a, &x)).min(polished.map_or(f64::INFINITY, |p| quad(a, &p)));
    }
    best.max(0.0)
}

/// Re-solves the stationarity system with coordinates at the bounds held
/// fixed; returns the point only if it stays inside the box.
fn polish(a: &DMatrix<f64>, pin: usize, x: &DVector<f64>) -> Option<DVector<f64>> {
    let n = a.nrows();
    let free: Vec<usize> = (0..n)
        .filter(|&j| j != pin && x[j].abs() < 1.0 - 1e-9 && a[(j, j)] > 0.0)
        .collect();
    if free.is_empty() {
        return None;
    }
    let aff = DMatrix::from_fn(free.len(), free.len(), |i, j| a[(free[i], free[j])]);
    let rhs = DVector::from_fn(free.len(), |i, _| {
        -(0..n)
            .filter(|l| !free.contains(l))
            .map(|l| a[(free[i], l)] * x[l])
            .sum::<f64>()
    });
    let sol = aff.cholesky()?.solve(&rhs);
    let mut out = x.clone();
    for (i, &j) in free.iter().enumerate() {
        if sol[i].abs() > 1.0 + 1e-12 {
            return None;
        }
        out[j] = sol[i].clamp(-1.0, 1.0);
    }
    Some(out)
}

/// Upper bound on `max {x^T Q x : |x|_inf <= 1}` from a certified feasible
/// point of the dual of the semidefinite relaxation: `sum_i lambda_i` with
/// `Diag(lambda) - Q` PSD.
pub fn box_max_upper(q: &DMatrix<f64>) -> Result<f64> {
    let n = q.nrows();
    if n == 0 {
        return Ok(0.0);
    }
    let rank = ((2.0 * n as f64).sqrt().ceil() as usize + 1).min(n.max(1));
    // deterministic spread of initial unit vectors
    let mut v = DMatrix::from_fn(n, rank, |i, j| ((i * 7 + j * 13 + 1) as f64 * 0.618_033_988_75).fract() - 0.5);
    for i in 0..n {
        let nr = v.row(i).norm();
        v.row_mut(i).scale_mut(1.0 / nr);
    }
    let mut prev = f64::NEG_INFINITY;
    for _ in 0..5000 {
        for i in 0..n {
            let mut g = DVector::zeros(rank);
            for j in 0..n {
                if j != i {
                    g += v.row(j).transpose() * q[(i, j)];
                }
            }
            let ng = g.norm();
            if ng > 1e-300 {
                v.set_row(i, &(g / ng).transpose());
            }
        }
        let val = (q * &v).component_mul(&v).sum();
        if (val - prev).abs() <= 1e-14 * val.abs().max(1.0) {
            break;
        }
        prev = val;
    }
    let qv = q * &v;
    let mut lambda: Vec<f64> = (0..n).map(|i| qv.row(i).dot(&v.row(i))).collect();
    let mut s = -q.clone();
    for i in 0..n {
        s[(i, i)] += lambda[i];
    }
    let min_ev = sym_eigenvalues(&s)[0];
    let scale = q.amax().max(1e-300);
    let shift = (-min_ev).max(0.0) + 1e-12 * scale * n as f64;
    lambda.iter_mut().for_each(|l| *l += shift);
    Ok(lambda.iter().sum())
}

/// Certified lower bound on `theta_1`: `1 / sum_blocks box_max_upper(A_b^{-1})`.
pub fn theta_1_lower(blocks: &[DMatrix<f64>]) -> Result<f64> {
    let mut total = 0.0;
    let uniq = dedup(blocks);
    for a in &uniq {
        let count = blocks.iter().filter(|b| *b == *a).count() as f64;
        let inv = (*a)
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Singular(format!("{}x{} Gram block is not positive definite", a.nrows(), a.ncols())))?
            .inverse();
        let sym = (&inv + inv.transpose()) * 0.5;
        total += count * box_max_upper(&sym)?;
    }
    if total <= 0.0 {
        return Err(Error::Singular("no coordinates".into()));
    }
    Ok(1.0 / total)
}

pub fn theta_p(blocks: &[DMatrix<f64>], p: PNorm) -> Result<f64> {
    match p {
        PNorm::L2 => Ok(theta_2(blocks)),
        PNorm::Inf => Ok(theta_inf(blocks)),
        PNorm::L1 => theta_1_lower(blocks),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_values() {
        let a = vec![DMatrix::<f64>::identity(3, 3)];
        assert!((theta_2(&a) - 1.0).abs() < 1e-12);
        assert!((theta_inf(&a) - 1.0).abs() < 1e-12);
        let t1 = theta_1_lower(&a).unwrap();
        assert!(t1 > 0.0 && t1 <= 1.0 / 3.0 + 1e-12);
        assert!(t1 >= 2.0 / std::f64::consts::PI / 3.0);
    }

    #[test]
    fn diagonal_theta2() {
        let a = vec![DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 3.0]))];
        assert!((theta_2(&a) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn singular_theta1_errors() {
        let a = vec![DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0])];
        assert!(matches!(theta_1_lower(&a), Err(Error::Singular(_))));
    }

    #[test]
    fn blocks_combine() {
        // theta_1 of diag blocks: 1 / sum of per-block reciprocal values
        let one = DMatrix::<f64>::identity(1, 1);
        let t = theta_1_lower(&[one.clone(), one.clone() * 2.0]).unwrap();
        assert!((t - 1.0 / (1.0 + 0.5)).abs() < 1e-9);
        assert!((theta_inf(&[one.clone(), one * 2.0]) - 1.0).abs() < 1e-12);
    }
}
