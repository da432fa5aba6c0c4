//! Slow, independent reference computations used by the integration tests
//! and the acceptance suite. Nothing here calls the library's solvers.

#![allow(dead_code)]

use mbp_core::{Atom, Coord, EventPanel, FeasibleSet, Link, ModelSpec, ParamVector};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Dense feature vector of time `t` in the reduced layout, built by direct
/// lookup of the lagged states.
pub fn dense_features(panel: &EventPanel, t: i64) -> Vec<f64> {
    let spec = panel.spec();
    let (kk, m, d) = (spec.locations(), spec.categories(), spec.depth());
    let mut phi = vec![0.0; spec.reduced_len()];
    phi[0] = 1.0;
    for l in 0..kk {
        for s in 1..=d {
            let q = panel.state(t - s as i64, l) as usize;
            phi[1 + (l * d + s - 1) * (m + 1) + q] = 1.0;
        }
    }
    phi
}

/// `(A, a_{k,p})` as dense sums over t, divided by N.
pub fn dense_moments(panel: &EventPanel, k: usize, p: usize) -> (DMatrix<f64>, DVector<f64>) {
    let r = panel.spec().reduced_len();
    let mut a = DMatrix::zeros(r, r);
    let mut b = DVector::zeros(r);
    let n = panel.horizon();
    for t in 1..=n as i64 {
        let phi = DVector::from_vec(dense_features(panel, t));
        a += &phi * phi.transpose();
        if panel.state(t, k) as usize == p {
            b += &phi;
        }
    }
    (a / n as f64, b / n as f64)
}

/// Solves `A x = b` restricted to the coordinates in `free` (others zero).
pub fn normal_equations(a: &DMatrix<f64>, b: &DVector<f64>, free: &[usize]) -> Vec<f64> {
    let n = free.len();
    let sub = DMatrix::from_fn(n, n, |i, j| a[(free[i], free[j])]);
    let rhs = DVector::from_fn(n, |i, _| b[free[i]]);
    let x = sub.lu().solve(&rhs).expect("nonsingular normal equations");
    let mut out = vec![0.0; a.nrows()];
    for (i, &j) in free.iter().enumerate() {
        out[j] = x[i];
    }
    out
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending.
pub fn jacobi_eigenvalues(a: &DMatrix<f64>) -> Vec<f64> {
    let n = a.nrows();
    let mut m = a.clone();
    for _ in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[(i, j)] * m[(i, j)])
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if m[(p, q)].abs() < 1e-300 {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * m[(p, q)]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m[(k, p)], m[(k, q)]);
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let (mpk, mqk) = (m[(p, k)], m[(q, k)]);
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| m[(i, i)]).collect();
    ev.sort_by(f64::total_cmp);
    ev
}

/// Exact `min {x^T A x : |x|_inf <= 1, x_pin = 1}` by enumerating which
/// coordinates sit at -1, +1 or inside the box and solving each stationarity
/// system. `A` must be positive definite.
pub fn box_qp_exact(a: &DMatrix<f64>, pin: usize) -> f64 {
    let n = a.nrows();
    let others: Vec<usize> = (0..n).filter(|&j| j != pin).collect();
    let mut best = f64::INFINITY;
    let patterns = 3usize.pow(others.len() as u32);
    let mut x = DVector::zeros(n);
    for code in 0..patterns {
        let mut c = code;
        let mut free = Vec::new();
        x.fill(0.0);
        x[pin] = 1.0;
        for &j in &others {
            match c % 3 {
                0 => free.push(j),
                1 => x[j] = 1.0,
                _ => x[j] = -1.0,
            }
            c /= 3;
        }
        if !free.is_empty() {
            let sub = DMatrix::from_fn(free.len(), free.len(), |i, j| a[(free[i], free[j])]);
            let rhs = DVector::from_fn(free.len(), |i, _| {
                -(0..n).filter(|l| !free.contains(l)).map(|l| a[(free[i], l)] * x[l]).sum::<f64>()
            });
            let Some(sol) = sub.lu().solve(&rhs) else { continue };
            if sol.iter().any(|v| v.abs() > 1.0 + 1e-12) {
                continue;
            }
            for (i, &j) in free.iter().enumerate() {
                x[j] = sol[i];
            }
        }
        best = best.min((x.transpose() * a * &x)[(0, 0)]);
    }
    best
}

/// Exact `min_i box_qp_exact(A, i)`.
pub fn theta_inf_exact(a: &DMatrix<f64>) -> f64 {
    (0..a.nrows()).map(|i| box_qp_exact(a, i)).fold(f64::INFINITY, f64::min)
}

/// Exact `theta_1 = 1 / max {x^T A^{-1} x : |x|_inf <= 1}`; the max of a
/// convex quadratic over the box sits at a vertex.
pub fn theta_1_exact(a: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    let inv = a.clone().try_inverse().expect("invertible");
    let mut best = 0.0f64;
    let mut x = DVector::zeros(n);
    for code in 0..(1u64 << n) {
        for i in 0..n {
            x[i] = if code >> i & 1 == 1 { 1.0 } else { -1.0 };
        }
        best = best.max((x.transpose() * &inv * &x)[(0, 0)]);
    }
    1.0 / best
}

/// Linear inequalities `g^T x <= h`.
#[derive(Debug, Clone)]
pub struct Polytope {
    pub g: Vec<Vec<f64>>,
    pub h: Vec<f64>,
}

impl Polytope {
    pub fn new() -> Self {
        Polytope { g: Vec::new(), h: Vec::new() }
    }

    pub fn le(&mut self, row: Vec<f64>, rhs: f64) {
        self.g.push(row);
        self.h.push(rhs);
    }

    pub fn ge(&mut self, row: Vec<f64>, rhs: f64) {
        self.g.push(row.into_iter().map(|v| -v).collect());
        self.h.push(-rhs);
    }

    pub fn eq(&mut self, row: Vec<f64>, rhs: f64) {
        self.le(row.clone(), rhs);
        self.ge(row, rhs);
    }

    pub fn violation(&self, x: &[f64]) -> f64 {
        self.g
            .iter()
            .zip(&self.h)
            .map(|(g, h)| g.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() - h)
            .fold(0.0, f64::max)
    }
}

fn subsets(m: usize, max: usize, f: &mut dyn FnMut(&[usize])) {
    fn rec(start: usize, m: usize, max: usize, cur: &mut Vec<usize>, f: &mut dyn FnMut(&[usize])) {
        f(cur);
        if cur.len() == max {
            return;
        }
        for i in start..m {
            cur.push(i);
            rec(i + 1, m, max, cur, f);
            cur.pop();
        }
    }
    rec(0, m, max, &mut Vec::new(), f);
}

/// Euclidean projection onto a polytope by enumerating active sets and
/// checking the KKT conditions of each candidate.
pub fn project_active_set(y: &[f64], poly: &Polytope) -> Vec<f64> {
    let n = y.len();
    let yv = DVector::from_column_slice(y);
    let mut best: Option<(f64, Vec<f64>)> = None;
    subsets(poly.g.len(), n, &mut |s| {
        let x = if s.is_empty() {
            yv.clone()
        } else {
            let gs = DMatrix::from_fn(s.len(), n, |i, j| poly.g[s[i]][j]);
            let rhs = &gs * &yv - DVector::from_fn(s.len(), |i, _| poly.h[s[i]]);
            let Some(lambda) = (&gs * gs.transpose()).lu().solve(&rhs) else { return };
            if lambda.iter().any(|&l| l < -1e-10) {
                return;
            }
            &yv - gs.transpose() * lambda
        };
        let xs = x.as_slice();
        if poly.violation(xs) > 1e-10 {
            return;
        }
        let dist = (&x - &yv).norm_squared();
        if best.as_ref().is_none_or(|b| dist < b.0 - 1e-14) {
            best = Some((dist, xs.to_vec()));
        }
    });
    best.expect("nonempty polytope").1
}

/// `(min, max)` of `c^T x` over a bounded polytope by vertex enumeration.
pub fn lp_range(c: &[f64], poly: &Polytope) -> Option<(f64, f64)> {
    let n = c.len();
    let mut out: Option<(f64, f64)> = None;
    subsets(poly.g.len(), n, &mut |s| {
        if s.len() != n {
            return;
        }
        let gs = DMatrix::from_fn(n, n, |i, j| poly.g[s[i]][j]);
        if gs.determinant().abs() < 1e-12 {
            return;
        }
        let Some(x) = gs.lu().solve(&DVector::from_fn(n, |i, _| poly.h[s[i]])) else { return };
        if poly.violation(x.as_slice()) > 1e-9 {
            return;
        }
        let v: f64 = c.iter().zip(x.iter()).map(|(a, b)| a * b).sum();
        out = Some(out.map_or((v, v), |(lo, hi)| (lo.min(v), hi.max(v))));
    });
    out
}

/// Rows of the basic polytope of one location written out as linear
/// inequalities: every choice of `q` per `(l, s)` gives one lower and one
/// upper row. Returns rows over the flat layout.
pub fn basic_polytope_rows(spec: &ModelSpec, rho: f64, poly: &mut Polytope) {
    let (kk, m, d) = (spec.locations(), spec.categories(), spec.depth());
    let kappa = spec.kappa();
    let groups: Vec<(usize, usize)> = (0..kk).flat_map(|l| (1..=d).map(move |s| (l, s))).collect();
    let choices = (m + 1).pow(groups.len() as u32);
    let idx = |c: Coord| spec.index(c).unwrap();
    for k in 0..kk {
        for code in 0..choices {
            let mut qs = Vec::with_capacity(groups.len());
            let mut c = code;
            for _ in &groups {
                qs.push(c % (m + 1));
                c /= m + 1;
            }
            // upper: sum_p b(p) + sum_g sum_p beta_g(p, q_g) <= 1 - rho
            let mut up = vec![0.0; kappa];
            for p in 1..=m {
                up[idx(Coord::Baseline { k, p })] += 1.0;
                for (&(l, s), &q) in groups.iter().zip(&qs) {
                    up[idx(Coord::Interaction { k, l, s, q, p })] += 1.0;
                }
            }
            poly.le(up, 1.0 - rho);
            // lower, per p: b(p) + sum_g beta_g(p, q_g) >= rho
            for p in 1..=m {
                let mut lo = vec![0.0; kappa];
                lo[idx(Coord::Baseline { k, p })] += 1.0;
                for (&(l, s), &q) in groups.iter().zip(&qs) {
                    lo[idx(Coord::Interaction { k, l, s, q, p })] += 1.0;
                }
                poly.ge(lo, rho);
            }
        }
    }
}

/// Flat indices of the ground-state interactions `beta(p, 0)`.
pub fn ground_slots(spec: &ModelSpec) -> Vec<usize> {
    let mut out = Vec::new();
    for k in 0..spec.locations() {
        for l in 0..spec.locations() {
            for s in 1..=spec.depth() {
                for p in 1..=spec.categories() {
                    out.push(spec.index(Coord::Interaction { k, l, s, q: 0, p }).unwrap());
                }
            }
        }
    }
    out.sort_unstable();
    out
}

/// Central finite-difference gradient.
pub fn fd_gradient(f: &dyn Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|i| {
            xp[i] = x[i] + h;
            let fp = f(&xp);
            xp[i] = x[i] - h;
            let fm = f(&xp);
            xp[i] = x[i];
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

/// Stationary distribution of a finite Markov chain by power iteration.
pub fn stationary(p: &DMatrix<f64>) -> DVector<f64> {
    let n = p.nrows();
    let mut pi = DVector::from_element(n, 1.0 / n as f64);
    for _ in 0..100_000 {
        let next = p.transpose() * &pi;
        if (&next - &pi).amax() < 1e-16 {
            return next;
        }
        pi = next;
    }
    pi
}

/// Panel of independent draws with per-location category probabilities;
/// the ground state keeps at least 0.3.
pub fn iid_panel(spec: ModelSpec, n: usize, rng: &mut ChaCha8Rng) -> EventPanel {
    let m = spec.categories();
    let kk = spec.locations();
    // per-location category probabilities, ground state at least 0.3
    let probs: Vec<Vec<f64>> = (0..kk)
        .map(|_| {
            let w: Vec<f64> = (0..m).map(|_| rng.random_range(0.1..1.0)).collect();
            let total: f64 = w.iter().sum();
            let scale = rng.random_range(0.2..0.7) / total;
            w.into_iter().map(|v| v * scale).collect()
        })
        .collect();
    let omega = (0..(n + spec.depth()) * kk)
        .map(|i| {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            for (p, pr) in probs[i % kk].iter().enumerate() {
                acc += pr;
                if u < acc {
                    return (p + 1) as u8;
                }
            }
            0
        })
        .collect();
    EventPanel::new(spec, n, omega).unwrap()
}

pub fn random_spec(rng: &mut ChaCha8Rng) -> ModelSpec {
    ModelSpec::new(
        rng.random_range(1..=3),
        rng.random_range(1..=2),
        rng.random_range(0..=2),
        Link::Identity,
    )
    .unwrap()
}

/// Interior parameters: baselines around 0.1, small interactions.
pub fn interior_beta(spec: ModelSpec, rng: &mut ChaCha8Rng) -> ParamVector {
    let mut beta = ParamVector::zeros(spec);
    let b = spec.block_len();
    let m = spec.categories();
    for (i, v) in beta.values_mut().iter_mut().enumerate() {
        *v = if i % b < m {
            rng.random_range(0.08..0.15)
        } else {
            rng.random_range(-0.01..0.01)
        };
    }
    beta
}

pub fn dense_nll(beta: &ParamVector, panel: &EventPanel, logistic: bool) -> f64 {
    let spec = panel.spec();
    let (kk, m) = (spec.locations(), spec.categories());
    let n = panel.horizon();
    let mut total = 0.0;
    for t in 1..=n as i64 {
        let phi = dense_features(panel, t);
        for k in 0..kk {
            let z: Vec<f64> = (1..=m)
                .map(|p| phi.iter().enumerate().map(|(j, f)| f * beta.values()[spec.slot(k, j, p)]).sum())
                .collect();
            let w = panel.state(t, k) as usize;
            total += if logistic {
                let lse = (1.0 + z.iter().map(|v| v.exp()).sum::<f64>()).ln();
                lse - if w == 0 { 0.0 } else { z[w - 1] }
            } else if w == 0 {
                -(1.0 - z.iter().sum::<f64>()).ln()
            } else {
                -z[w - 1].ln()
            };
        }
    }
    total / n as f64
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let scale = b.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1e-8);
    diff / scale
}

/// The same set twice: as atoms for the library and as explicit linear
/// inequalities for the oracle.
pub fn random_instance(rng: &mut ChaCha8Rng) -> (FeasibleSet, Polytope) {
    let d = rng.random_range(1..=2);
    let spec = ModelSpec::new(1, 1, d, Link::Identity).unwrap();
    let kappa = spec.kappa();
    let rho = if rng.random_bool(0.5) { 0.0 } else { rng.random_range(0.0..0.05) };
    let mut atoms = vec![Atom::BasicPolytope { rho }];
    let mut poly = Polytope::new();
    basic_polytope_rows(&spec, rho, &mut poly);
    let unit = |i: usize| {
        let mut v = vec![0.0; kappa];
        v[i] = 1.0;
        v
    };
    if rng.random_bool(0.5) {
        atoms.push(Atom::GroundMask);
        for i in ground_slots(&spec) {
            poly.eq(unit(i), 0.0);
        }
    }
    if rng.random_bool(0.5) {
        let lower: Vec<f64> = (0..kappa).map(|_| rng.random_range(-0.3..0.0)).collect();
        let upper: Vec<f64> = (0..kappa).map(|_| rng.random_range(0.2..0.6)).collect();
        for i in 0..kappa {
            poly.ge(unit(i), lower[i]);
            poly.le(unit(i), upper[i]);
        }
        atoms.push(Atom::Box { lower, upper });
    }
    if rng.random_bool(0.5) {
        atoms.push(Atom::NonnegativeInteractions);
        for i in 1..kappa {
            poly.ge(unit(i), 0.0);
        }
    }
    if d == 2 && rng.random_bool(0.5) {
        atoms.push(Atom::ShapeMonotoneConvex);
        for q in 0..=1 {
            let mut row = vec![0.0; kappa];
            row[spec.index(Coord::Interaction { k: 0, l: 0, s: 1, q, p: 1 }).unwrap()] = 1.0;
            row[spec.index(Coord::Interaction { k: 0, l: 0, s: 2, q, p: 1 }).unwrap()] = -1.0;
            poly.ge(row, 0.0);
        }
    }
    (FeasibleSet::new(spec, atoms).unwrap(), poly)
}

/// Positive definite matrix with a spread of eigenvalues and off-diagonal
/// entries of both signs.
pub fn random_pd(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let b = DMatrix::from_fn(n, n + 2, |_, _| rng.random_range(-1.0..1.0));
    let ridge = rng.random_range(0.01..0.3);
    &b * b.transpose() / (n + 2) as f64 + DMatrix::identity(n, n) * ridge
}

