//! Small dense helpers shared by the solvers.

use nalgebra::{DMatrix, SymmetricEigen};

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

pub fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Neumaier-compensated running sum. Likelihood totals over long horizons
/// need it: near the optimum a step changes the objective by less than the
/// rounding error of a plain sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    #[inline]
    pub fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.carry += (self.sum - t) + v;
        } else {
            self.carry += (v - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

/// Largest eigenvalue of a symmetric PSD matrix given as `y = A x`, by power
/// iteration from a fixed start. Returns an upper estimate padded by 1%.
pub fn power_lambda_max(n: usize, mut apply: impl FnMut(&[f64], &mut [f64])) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let mut x: Vec<f64> = (0..n).map(|i| 1.0 + (i % 7) as f64 * 0.1).collect();
    let mut y = vec![0.0; n];
    let nx = norm2(&x);
    x.iter_mut().for_each(|v| *v /= nx);
    let mut lambda = 0.0;
    for _ in 0..500 {
        apply(&x, &mut y);
        let ny = norm2(&y);
        if ny == 0.0 {
            return 0.0;
        }
        let next = dot(&x, &y);
        x.iter_mut().zip(&y).for_each(|(a, b)| *a = b / ny);
        if (next - lambda).abs() <= 1e-10 * next.abs() {
            lambda = next;
            break;
        }
        lambda = next;
    }
    lambda * 1.01
}

/// Eigenvalues of a symmetric matrix, ascending.
pub fn sym_eigenvalues(a: &DMatrix<f64>) -> Vec<f64> {
    let mut ev: Vec<f64> = SymmetricEigen::new(a.clone()).eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

/// Principal submatrix on `idx` of a row-major `n x n` matrix.
pub fn submatrix(a: &[f64], n: usize, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), idx.len(), |i, j| a[idx[i] * n + idx[j]])
}
