//! Projection onto non-increasing convex sequences.
//!
//! The cone `{x : x_{s-1} - 2 x_s + x_{s+1} >= 0, x_{d-1} >= x_d}` equals the
//! set of convex, non-increasing sequences (a convex sequence whose last
//! difference is non-positive has all differences non-positive). The
//! projection `x = v + C^T lambda` is recovered from the dual NNLS problem
//! `min_{lambda >= 0} |C^T lambda + v|^2`.

use nalgebra::{DMatrix, DVector};

/// Rows of the constraint matrix `C` for a curve of length `d`, as sparse
/// `(index, weight)` lists.
fn cone_rows(d: usize) -> Vec<Vec<(usize, f64)>> {
    let mut rows = Vec::new();
    for s in 1..d.saturating_sub(1) {
        rows.push(vec![(s - 1, 1.0), (s, -2.0), (s + 1, 1.0)]);
    }
    if d >= 2 {
        rows.push(vec![(d - 2, 1.0), (d - 1, -1.0)]);
    }
    rows
}

/// Euclidean projection of `curve` onto non-increasing convex sequences.
pub fn shape_project(curve: &[f64]) -> Vec<f64> {
    let mut out = curve.to_vec();
    project_masked(&mut out, &vec![false; curve.len()]);
    out
}

/// Largest violation of non-increase or convexity (0 if none).
pub fn shape_violation(curve: &[f64]) -> f64 {
    let d = curve.len();
    let mut worst = 0.0f64;
    for s in 0..d.saturating_sub(1) {
        worst = worst.max(curve[s + 1] - curve[s]);
    }
    for s in 1..d.saturating_sub(1) {
        worst = worst.max(-(curve[s - 1] - 2.0 * curve[s] + curve[s + 1]));
    }
    worst
}

/// Projects in place with `fixed` entries held at zero.
pub(crate) fn project_masked(x: &mut [f64], fixed: &[bool]) {
    let d = x.len();
    let free: Vec<usize> = (0..d).filter(|&i| !fixed[i]).collect();
    for i in 0..d {
        if fixed[i] {
            x[i] = 0.0;
        }
    }
    if free.is_empty() || d < 2 {
        return;
    }
    if shape_violation(x) == 0.0 {
        return;
    }
    let mut pos = vec![usize::MAX; d];
    for (c, &i) in free.iter().enumerate() {
        pos[i] = c;
    }
    // columns of E = C_F^T; rows touching no free entry are dropped
    let cols: Vec<Vec<(usize, f64)>> = cone_rows(d)
        .into_iter()
        .map(|row| {
            row.into_iter()
                .filter(|&(i, _)| !fixed[i])
                .map(|(i, w)| (pos[i], w))
                .collect::<Vec<_>>()
        })
        .filter(|c| !c.is_empty())
        .collect();
    let n = free.len();
    let mut e = DMatrix::<f64>::zeros(n, cols.len());
    for (j, c) in cols.iter().enumerate() {
        for &(i, w) in c {
            e[(i, j)] = w;
        }
    }
    let f = DVector::from_iterator(n, free.iter().map(|&i| -x[i]));
    let lambda = nnls(&e, &f);
    let shift = &e * lambda;
    for (c, &i) in free.iter().enumerate() {
        x[i] += shift[c];
    }
}

/// Lawson-Hanson active-set solver for `min |E l - f|^2, l >= 0`.
pub(crate) fn nnls(e: &DMatrix<f64>, f: &DVector<f64>) -> DVector<f64> {
    let m = e.ncols();
    let mut lambda = DVector::zeros(m);
    let mut passive = vec![false; m];
    let scale = e.amax().max(1.0) * f.amax().max(1.0);
    let tol = 1e-13 * scale * m.max(1) as f64;
    let solve_passive = |passive: &[bool]| -> DVector<f64> {
        let idx: Vec<usize> = (0..m).filter(|&j| passive[j]).collect();
        let sub = e.select_columns(&idx);
        let sol = sub
            .clone()
            .svd(true, true)
            .solve(f, 1e-14)
            .unwrap_or_else(|_| DVector::zeros(idx.len()));
        let mut full = DVector::zeros(m);
        for (c, &j) in idx.iter().enumerate() {
            full[j] = sol[c];
        }
        full
    };
    for _ in 0..3 * m + 10 {
        let w = e.transpose() * (f - e * &lambda);
        let cand = (0..m)
            .filter(|&j| !passive[j] && w[j] > tol)
            .max_by(|&a, &b| w[a].total_cmp(&w[b]));
        let Some(j) = cand else { break };
        passive[j] = true;
        loop {
            let s = solve_passive(&passive);
            if (0..m).filter(|&i| passive[i]).all(|i| s[i] > 0.0) {
                lambda = s;
                break;
            }
            let mut alpha = f64::INFINITY;
            for i in (0..m).filter(|&i| passive[i] && s[i] <= 0.0) {
                alpha = alpha.min(lambda[i] / (lambda[i] - s[i]));
            }
            lambda = &lambda + (s - &lambda) * alpha;
            for i in 0..m {
                if passive[i] && lambda[i] <= tol {
                    passive[i] = false;
                    lambda[i] = 0.0;
                }
            }
            if !passive.iter().any(|&p| p) {
                break;
            }
        }
    }
    lambda
}
