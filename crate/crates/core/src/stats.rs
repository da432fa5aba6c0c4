//! Sufficient statistics, objectives and empirical vector fields.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::CompensatedSum;
use crate::model::{softmax_with_ground, EventPanel, Link, ModelSpec, ParamVector};

/// Margin below `rho` tolerated by the likelihood domain check. Iterates
/// come out of an iterative projection that is only feasible to ~1e-8.
pub const ML_DOMAIN_SLACK: f64 = 1e-7;

/// Empirical Gram matrix and moments of the LS problem.
///
/// All `(k, p)` sub-problems share one `r x r` Gram matrix over the reduced
/// coordinates, so the full `kappa x kappa` matrix is block diagonal with
/// `K * M` identical blocks. Moments use the flat parameter layout.
#[derive(Debug, Clone, PartialEq)]
pub struct SuffStats {
    spec: ModelSpec,
    horizon: usize,
    gram: Vec<f64>,
    moments: Vec<f64>,
    constant: f64,
}

const CHUNK: usize = 2048;

impl SuffStats {
    pub fn accumulate(panel: &EventPanel) -> Result<Self> {
        let spec = *panel.spec();
        let n = panel.horizon();
        if n < 1 {
            return Err(Error::Input("statistics need N >= 1".into()));
        }
        let r = spec.reduced_len();
        let (kk, m) = (spec.locations(), spec.categories());
        let chunks: Vec<(usize, usize)> = (1..=n)
            .step_by(CHUNK)
            .map(|s| (s, (s + CHUNK - 1).min(n)))
            .collect();
        let partials: Vec<(Vec<u64>, Vec<u64>, u64)> = chunks
            .par_iter()
            .map(|&(lo, hi)| {
                let mut gram = vec![0u64; r * r];
                let mut mom = vec![0u64; spec.kappa()];
                let mut events = 0u64;
                let mut feats = Vec::with_capacity(1 + spec.group_count());
                for t in lo..=hi {
                    feats.clear();
                    spec.window_features(panel.window(t as i64), &mut feats);
                    for &i in &feats {
                        let row = &mut gram[i * r..(i + 1) * r];
                        for &j in &feats {
                            row[j] += 1;
                        }
                    }
                    for (k, &q) in panel.row(t as i64).iter().enumerate() {
                        if q > 0 {
                            events += 1;
                            for &j in &feats {
                                mom[spec.slot(k, j, q as usize)] += 1;
                            }
                        }
                    }
                }
                (gram, mom, events)
            })
            .collect();
        let mut gram = vec![0u64; r * r];
        let mut mom = vec![0u64; spec.kappa()];
        let mut events = 0u64;
        for (g, a, e) in partials {
            gram.iter_mut().zip(g).for_each(|(x, y)| *x += y);
            mom.iter_mut().zip(a).for_each(|(x, y)| *x += y);
            events += e;
        }
        let nf = n as f64;
        debug_assert_eq!(mom.len(), kk * m * r);
        Ok(SuffStats {
            spec,
            horizon: n,
            gram: gram.into_iter().map(|c| c as f64 / nf).collect(),
            moments: mom.into_iter().map(|c| c as f64 / nf).collect(),
            constant: events as f64 / (2.0 * nf),
        })
    }

    /// Builds statistics from given moments, e.g. exact population moments.
    pub fn from_moments(
        spec: ModelSpec,
        horizon: usize,
        gram: Vec<f64>,
        moments: Vec<f64>,
        constant: f64,
    ) -> Result<Self> {
        let r = spec.reduced_len();
        if gram.len() != r * r || moments.len() != spec.kappa() {
            return Err(Error::Input(format!(
                "statistics shapes ({}, {}) do not match r^2 = {} and kappa = {}",
                gram.len(),
                moments.len(),
                r * r,
                spec.kappa()
            )));
        }
        Ok(SuffStats {
            spec,
            horizon,
            gram,
            moments,
            constant,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// Shared `r x r` Gram block, row-major.
    pub fn gram(&self) -> &[f64] {
        &self.gram
    }

    /// Moment vector `a` in the flat layout.
    pub fn moments(&self) -> &[f64] {
        &self.moments
    }

    /// `(1/2N) * sum_t |bar omega_t|^2`.
    pub fn constant(&self) -> f64 {
        self.constant
    }

    /// Moments of sub-problem `(k, p)` over the reduced coordinates.
    pub fn moment_kp(&self, k: usize, p: usize) -> Vec<f64> {
        let (m, r) = (self.spec.categories(), self.spec.reduced_len());
        let b = self.spec.block_len();
        (0..r).map(|j| self.moments[k * b + j * m + p - 1]).collect()
    }

    /// Dense `kappa x kappa` matrix `A`. Only meant for small problems.
    pub fn expand_gram(&self) -> Vec<f64> {
        let spec = &self.spec;
        let kappa = spec.kappa();
        let r = spec.reduced_len();
        let mut a = vec![0.0; kappa * kappa];
        for k in 0..spec.locations() {
            for p in 1..=spec.categories() {
                for i in 0..r {
                    for j in 0..r {
                        a[spec.slot(k, i, p) * kappa + spec.slot(k, j, p)] = self.gram[i * r + j];
                    }
                }
            }
        }
        a
    }
}

/// `y = G x` over the reduced coordinates for one sub-problem.
pub(crate) fn gram_mul(gram: &[f64], x: &[f64], y: &mut [f64]) {
    let r = x.len();
    for (i, yi) in y.iter_mut().enumerate() {
        let row = &gram[i * r..(i + 1) * r];
        *yi = row.iter().zip(x).map(|(g, v)| g * v).sum();
    }
}

/// LS objective `(1/2) b^T A b - a^T b + c` and its gradient `A b - a`.
pub fn ls_objective(beta: &ParamVector, stats: &SuffStats) -> Result<(f64, Vec<f64>)> {
    let spec = beta.spec();
    if spec != stats.spec() {
        return Err(Error::Input("parameter and statistics specs differ".into()));
    }
    let (m, r, b) = (spec.categories(), spec.reduced_len(), spec.block_len());
    let mut grad = vec![0.0; spec.kappa()];
    let mut value = stats.constant;
    let mut x = vec![0.0; r];
    let mut gx = vec![0.0; r];
    for k in 0..spec.locations() {
        for p in 0..m {
            for j in 0..r {
                x[j] = beta.values()[k * b + j * m + p];
            }
            gram_mul(&stats.gram, &x, &mut gx);
            for j in 0..r {
                let idx = k * b + j * m + p;
                value += 0.5 * x[j] * gx[j] - stats.moments[idx] * x[j];
                grad[idx] = gx[j] - stats.moments[idx];
            }
        }
    }
    Ok((value, grad))
}

/// Feature rows of one location's sub-problems, restricted to the reduced
/// coordinates selected by `keep`, together with the observed states.
///
/// Rows are stored relative to a reference row holding the most frequent
/// state of every `(l, s)` group: a row lists only the groups that differ,
/// as coordinates to add and reference coordinates to subtract. Dense
/// panels then cost far less than `1 + d*K` entries per row.
#[derive(Debug, Clone)]
pub struct BlockDesign {
    location: usize,
    categories: usize,
    horizon: usize,
    /// Coordinates active in the reference row (kept ones only).
    shared: Vec<u32>,
    offsets: Vec<usize>,
    /// Start of the subtracted entries of each row.
    mid: Vec<usize>,
    feats: Vec<u32>,
    outcome: Vec<u8>,
}

impl BlockDesign {
    /// `keep[j]` says whether reduced coordinate `j` can carry a nonzero
    /// coefficient; dropping the rest leaves every linear index unchanged
    /// as long as those coefficients are zero.
    pub fn new(panel: &EventPanel, k: usize, keep: Option<&[bool]>) -> Self {
        let spec = panel.spec();
        let n = panel.horizon();
        let states = spec.categories() + 1;
        let groups = spec.group_count();
        let kept = |j: usize| keep.is_none_or(|kp| kp[j]);
        let mut row = Vec::with_capacity(1 + groups);
        let mut counts = vec![0usize; groups * states];
        for t in 1..=n as i64 {
            row.clear();
            spec.window_features(panel.window(t), &mut row);
            for &j in &row[1..] {
                counts[j - 1] += 1;
            }
        }
        let reference: Vec<usize> = (0..groups)
            .map(|g| {
                let c = &counts[g * states..(g + 1) * states];
                // first maximum, so ties go to the lower state
                let q = (0..states).fold(0, |b, q| if c[q] > c[b] { q } else { b });
                1 + g * states + q
            })
            .collect();
        let mut shared = vec![0u32];
        shared.extend(reference.iter().filter(|&&j| kept(j)).map(|&j| j as u32));

        let mut offsets = Vec::with_capacity(n + 1);
        let mut mid = Vec::with_capacity(n);
        let mut feats = Vec::new();
        let mut minus = Vec::new();
        let mut outcome = Vec::with_capacity(n);
        offsets.push(0);
        for t in 1..=n as i64 {
            row.clear();
            spec.window_features(panel.window(t), &mut row);
            minus.clear();
            for (g, &j) in row[1..].iter().enumerate() {
                if j != reference[g] {
                    if kept(j) {
                        feats.push(j as u32);
                    }
                    if kept(reference[g]) {
                        minus.push(reference[g] as u32);
                    }
                }
            }
            mid.push(feats.len());
            feats.extend_from_slice(&minus);
            offsets.push(feats.len());
            outcome.push(panel.state(t, k));
        }
        BlockDesign {
            location: k,
            categories: spec.categories(),
            horizon: n,
            shared,
            offsets,
            mid,
            feats,
            outcome,
        }
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// Stored row entries (excluding the reference row).
    pub fn nnz(&self) -> usize {
        self.feats.len()
    }

    fn reference_scores(&self, x: &[f64]) -> Vec<f64> {
        let m = self.categories;
        let mut z = vec![0.0; m];
        for &j in &self.shared {
            let base = j as usize * m;
            for p in 0..m {
                z[p] += x[base + p];
            }
        }
        z
    }

    #[inline]
    fn scores(&self, t: usize, x: &[f64], reference: &[f64], z: &mut [f64]) {
        let m = self.categories;
        z.copy_from_slice(reference);
        let (a, b, c) = (self.offsets[t], self.mid[t], self.offsets[t + 1]);
        if m == 1 {
            let plus: f64 = self.feats[a..b].iter().map(|&j| x[j as usize]).sum();
            let minus: f64 = self.feats[b..c].iter().map(|&j| x[j as usize]).sum();
            z[0] += plus - minus;
            return;
        }
        for &j in &self.feats[a..b] {
            let base = j as usize * m;
            for p in 0..m {
                z[p] += x[base + p];
            }
        }
        for &j in &self.feats[b..c] {
            let base = j as usize * m;
            for p in 0..m {
                z[p] -= x[base + p];
            }
        }
    }

    #[inline]
    fn scatter(&self, t: usize, theta: &[f64], grad: &mut [f64]) {
        let m = self.categories;
        let (a, b, c) = (self.offsets[t], self.mid[t], self.offsets[t + 1]);
        for &j in &self.feats[a..b] {
            let base = j as usize * m;
            for p in 0..m {
                grad[base + p] += theta[p];
            }
        }
        for &j in &self.feats[b..c] {
            let base = j as usize * m;
            for p in 0..m {
                grad[base + p] -= theta[p];
            }
        }
    }

    /// Adds the reference-row part of the gradient, `sum_t theta_t` on
    /// every shared coordinate, and scales by `1/N`.
    fn finish_grad(&self, theta_sum: &[f64], grad: &mut [f64]) {
        let m = self.categories;
        for &j in &self.shared {
            let base = j as usize * m;
            for p in 0..m {
                grad[base + p] += theta_sum[p];
            }
        }
        let n = self.horizon as f64;
        grad.iter_mut().for_each(|v| *v /= n);
    }

    /// Negative log-likelihood of the identity-link model for this location
    /// at block parameters `x` (length `r * M`); gradient is written into
    /// `grad` when given.
    pub fn linear_nll(&self, x: &[f64], rho: f64, mut grad: Option<&mut [f64]>) -> Result<f64> {
        let m = self.categories;
        let mut z = vec![0.0; m];
        let mut theta = vec![0.0; m];
        let mut theta_sum = vec![0.0; m];
        if let Some(g) = grad.as_deref_mut() {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
        let reference = self.reference_scores(x);
        let floor = rho - ML_DOMAIN_SLACK;
        let mut total = CompensatedSum::default();
        for t in 0..self.horizon {
            self.scores(t, x, &reference, &mut z);
            let sum: f64 = z.iter().sum();
            let ground = 1.0 - sum;
            if let Some(p) = z.iter().position(|&v| v < floor || v <= 0.0) {
                return Err(self.domain(t, format!("z({}) = {:.6e} below rho = {rho}", p + 1, z[p])));
            }
            if ground < floor || ground <= 0.0 {
                return Err(self.domain(t, format!("category sum {sum:.9} above 1 - rho")));
            }
            let w = self.outcome[t] as usize;
            theta.iter_mut().for_each(|v| *v = 0.0);
            if w == 0 {
                total.add(-ground.ln());
                theta.iter_mut().for_each(|v| *v = 1.0 / ground);
            } else {
                total.add(-z[w - 1].ln());
                theta[w - 1] = -1.0 / z[w - 1];
            }
            if let Some(g) = grad.as_deref_mut() {
                self.scatter(t, &theta, g);
                theta_sum.iter_mut().zip(&theta).for_each(|(a, b)| *a += b);
            }
        }
        if let Some(g) = grad {
            self.finish_grad(&theta_sum, g);
        }
        Ok(total.value() / self.horizon as f64)
    }

    /// Negative log-likelihood of the softmax-link model (sigmoid for M = 1).
    /// Its gradient is the empirical field `(1/N) sum_t eta (phi - bar omega)`.
    pub fn logistic_nll(&self, x: &[f64], mut grad: Option<&mut [f64]>) -> f64 {
        let m = self.categories;
        let mut z = vec![0.0; m];
        let mut phi = vec![0.0; m];
        let mut phi_sum = vec![0.0; m];
        if let Some(g) = grad.as_deref_mut() {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
        let reference = self.reference_scores(x);
        let mut total = CompensatedSum::default();
        for t in 0..self.horizon {
            self.scores(t, x, &reference, &mut z);
            softmax_with_ground(&z, &mut phi);
            let w = self.outcome[t] as usize;
            // -log phi_w = log(1 + sum_q e^{z_q}) - z_w, ground score 0
            let shift = z.iter().fold(0.0f64, |a, &v| a.max(v));
            let lse = shift + ((-shift).exp() + z.iter().map(|&v| (v - shift).exp()).sum::<f64>()).ln();
            total.add(lse - if w == 0 { 0.0 } else { z[w - 1] });
            if let Some(g) = grad.as_deref_mut() {
                if w > 0 {
                    phi[w - 1] -= 1.0;
                }
                self.scatter(t, &phi, g);
                phi_sum.iter_mut().zip(&phi).for_each(|(a, b)| *a += b);
            }
        }
        if let Some(g) = grad {
            self.finish_grad(&phi_sum, g);
        }
        total.value() / self.horizon as f64
    }

    fn domain(&self, t: usize, detail: String) -> Error {
        Error::Domain {
            t: t as i64 + 1,
            k: self.location,
            detail,
        }
    }
}

fn check_spec(beta: &ParamVector, panel: &EventPanel) -> Result<()> {
    if beta.spec() != panel.spec() {
        return Err(Error::Input(format!(
            "parameter spec {:?} does not match panel spec {:?}",
            beta.spec(),
            panel.spec()
        )));
    }
    Ok(())
}

/// Identity-link negative log-likelihood `(1/N) sum_t L(eta^T beta)` and gradient.
pub fn ml_objective(beta: &ParamVector, panel: &EventPanel, rho: f64) -> Result<(f64, Vec<f64>)> {
    check_spec(beta, panel)?;
    let spec = beta.spec();
    let b = spec.block_len();
    let mut grad = vec![0.0; spec.kappa()];
    let mut value = 0.0;
    for k in 0..spec.locations() {
        let design = BlockDesign::new(panel, k, None);
        value += design.linear_nll(beta.block(k), rho, Some(&mut grad[k * b..(k + 1) * b]))?;
    }
    Ok((value, grad))
}

/// Softmax-link negative log-likelihood and gradient.
pub fn logistic_objective(beta: &ParamVector, panel: &EventPanel) -> Result<(f64, Vec<f64>)> {
    check_spec(beta, panel)?;
    let spec = beta.spec();
    let b = spec.block_len();
    let mut grad = vec![0.0; spec.kappa()];
    let mut value = 0.0;
    for k in 0..spec.locations() {
        let design = BlockDesign::new(panel, k, None);
        value += design.logistic_nll(beta.block(k), Some(&mut grad[k * b..(k + 1) * b]));
    }
    Ok((value, grad))
}

/// `F(beta) = (1/N) sum_t eta [phi(eta^T beta) - bar omega_t]`.
pub fn empirical_field(beta: &ParamVector, panel: &EventPanel, link: Link) -> Result<Vec<f64>> {
    check_spec(beta, panel)?;
    match link {
        Link::Identity => Ok(ls_objective(beta, &SuffStats::accumulate(panel)?)?.1),
        Link::SigmoidSingleState | Link::LogisticMultiState => {
            if link == Link::SigmoidSingleState && beta.spec().categories() != 1 {
                return Err(Error::Input("sigmoid link requires M = 1".into()));
            }
            Ok(logistic_objective(beta, panel)?.1)
        }
    }
}
