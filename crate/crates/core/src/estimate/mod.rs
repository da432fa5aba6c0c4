//! Constrained least-squares, maximum-likelihood and variational-inequality
//! estimators. The feasible set and both objectives separate over location
//! blocks, so every block is solved on its own and the results are merged in
//! block order.

mod solver;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constraints::{FeasibleSet, ProjectOptions};
use crate::error::{Error, Result};
use crate::linalg::{norm_inf, power_lambda_max};
use crate::model::{Link, ModelSpec, ParamVector};
use crate::stats::{gram_mul, BlockDesign, SuffStats};
use solver::{Outcome, Problem, Settings};

pub const DEFAULT_RHO: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepRule {
    BacktrackingArmijo,
    FixedLipschitz,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolveOptions {
    pub max_iter: usize,
    /// Optimality residual; `None` means `1e-7 * (1 + |a|_inf)`.
    pub grad_tol: Option<f64>,
    pub step_rule: StepRule,
    pub restart: bool,
    /// Margin used by the likelihood estimator when the set has none.
    pub rho: f64,
    pub project_tol: f64,
    pub project_max_iter: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            max_iter: 50_000,
            grad_tol: None,
            step_rule: StepRule::BacktrackingArmijo,
            restart: true,
            rho: DEFAULT_RHO,
            project_tol: crate::constraints::DEFAULT_TOL,
            project_max_iter: crate::constraints::DEFAULT_MAX_ITER,
        }
    }
}

impl SolveOptions {
    fn validate(&self) -> Result<()> {
        if self.max_iter == 0 {
            return Err(Error::Input("max_iter must be >= 1".into()));
        }
        if let Some(t) = self.grad_tol {
            if !(t > 0.0) {
                return Err(Error::Input(format!("grad_tol must be > 0, got {t}")));
            }
        }
        Ok(())
    }

    fn project_options(&self) -> ProjectOptions {
        ProjectOptions {
            tol: self.project_tol,
            max_iter: self.project_max_iter,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateResult {
    pub beta_hat: ParamVector,
    /// Objective (or residual, for the extragradient method) per iteration,
    /// summed over blocks; finished blocks repeat their final value.
    pub objective_trace: Vec<f64>,
    /// Euclidean norm of the per-block residuals.
    pub residual: f64,
    /// Largest iteration count over blocks.
    pub iterations: usize,
    pub block_converged: Vec<bool>,
    /// Blocks with a free coordinate whose feature never fires.
    pub block_degenerate: Vec<bool>,
}

impl EstimateResult {
    pub fn converged(&self) -> bool {
        self.block_converged.iter().all(|&c| c)
    }
}

fn merge(spec: ModelSpec, outcomes: Vec<(Outcome, bool)>) -> Result<EstimateResult> {
    let len = outcomes.iter().map(|o| o.0.trace.len()).max().unwrap_or(0);
    let mut trace = vec![0.0; len];
    let mut values = Vec::with_capacity(spec.kappa());
    let mut res2 = 0.0;
    let mut iterations = 0;
    let mut conv = Vec::new();
    let mut degen = Vec::new();
    for (o, d) in outcomes {
        for (i, v) in trace.iter_mut().enumerate() {
            *v += o.trace.get(i).or(o.trace.last()).copied().unwrap_or(0.0);
        }
        values.extend_from_slice(&o.x);
        res2 += o.residual * o.residual;
        iterations = iterations.max(o.iterations);
        conv.push(o.converged);
        degen.push(d);
    }
    Ok(EstimateResult {
        beta_hat: ParamVector::new(spec, values)?,
        objective_trace: trace,
        residual: res2.sqrt(),
        iterations,
        block_converged: conv,
        block_degenerate: degen,
    })
}

fn check_set(spec: &ModelSpec, set: &FeasibleSet) -> Result<()> {
    let s = set.spec();
    if (s.locations(), s.categories(), s.depth()) != (spec.locations(), spec.categories(), spec.depth()) {
        return Err(Error::Input(format!(
            "feasible set dimensions {s:?} do not match model {spec:?}"
        )));
    }
    Ok(())
}

/// Free reduced coordinates with an all-zero Gram diagonal.
fn degenerate(stats: &SuffStats, keep: &[bool]) -> bool {
    let r = keep.len();
    (0..r).any(|j| keep[j] && stats.gram()[j * r + j] == 0.0)
}

fn lipschitz_on(stats: &SuffStats, keep: &[bool]) -> f64 {
    let r = keep.len();
    let idx: Vec<usize> = (0..r).filter(|&j| keep[j]).collect();
    let g = stats.gram();
    power_lambda_max(idx.len(), |x, y| {
        for (a, &i) in idx.iter().enumerate() {
            y[a] = idx.iter().enumerate().map(|(b, &j)| g[i * r + j] * x[b]).sum();
        }
    })
}

fn default_tol(opts: &SolveOptions, stats: &SuffStats) -> f64 {
    opts.grad_tol.unwrap_or(1e-7 * (1.0 + norm_inf(stats.moments())))
}

/// Least-squares objective of one block: `sum_p (1/2) x_p^T G x_p - a_p^T x_p`.
fn ls_block(stats: &SuffStats, k: usize, x: &[f64], grad: Option<&mut [f64]>) -> f64 {
    let spec = stats.spec();
    let (m, r, b) = (spec.categories(), spec.reduced_len(), spec.block_len());
    let a = &stats.moments()[k * b..(k + 1) * b];
    let mut xp = vec![0.0; r];
    let mut gx = vec![0.0; r];
    let mut value = 0.0;
    let mut grad = grad;
    for p in 0..m {
        for j in 0..r {
            xp[j] = x[j * m + p];
        }
        gram_mul(stats.gram(), &xp, &mut gx);
        for j in 0..r {
            value += 0.5 * xp[j] * gx[j] - a[j * m + p] * xp[j];
            if let Some(g) = grad.as_deref_mut() {
                g[j * m + p] = gx[j] - a[j * m + p];
            }
        }
    }
    value
}

/// Constrained least squares from precomputed statistics.
pub fn estimate_ls_stats(stats: &SuffStats, set: &FeasibleSet, opts: &SolveOptions) -> Result<EstimateResult> {
    opts.validate()?;
    let spec = *stats.spec();
    check_set(&spec, set)?;
    let tol = default_tol(opts, stats);
    let b = spec.block_len();
    let popts = opts.project_options();
    let constant_share = stats.constant() / spec.locations() as f64;
    let outcomes: Vec<Result<(Outcome, bool)>> = (0..spec.locations())
        .into_par_iter()
        .map(|k| {
            let keep = set.reduced_keep(k);
            let x0 = set.project_block(k, &stats.moments()[k * b..(k + 1) * b], popts)?;
            let value = |x: &[f64]| Some(ls_block(stats, k, x, None) + constant_share);
            let value_grad = |x: &[f64], g: &mut [f64]| Some(ls_block(stats, k, x, Some(g)) + constant_share);
            let project = |x: &[f64]| set.project_block(k, x, popts);
            let problem = Problem {
                value: &value,
                value_grad: &value_grad,
                project: &project,
            };
            let settings = Settings {
                max_iter: opts.max_iter,
                tol,
                rule: opts.step_rule,
                restart: opts.restart,
                lipschitz: lipschitz_on(stats, &keep),
            };
            let out = solver::accelerated(&problem, x0, &settings)?;
            Ok((out, degenerate(stats, &keep)))
        })
        .collect();
    merge(spec, outcomes.into_iter().collect::<Result<Vec<_>>>()?)
}

pub fn estimate_ls(
    panel: &crate::model::EventPanel,
    set: &FeasibleSet,
    opts: &SolveOptions,
) -> Result<EstimateResult> {
    let stats = SuffStats::accumulate(panel)?;
    estimate_ls_stats(&stats, set, opts)
}

/// Projection of the point with baselines `1/(M+1)` and zero interactions.
fn center(set: &FeasibleSet, k: usize, popts: ProjectOptions) -> Result<Vec<f64>> {
    let spec = set.spec();
    let m = spec.categories();
    let mut c = vec![0.0; spec.block_len()];
    c[..m].iter_mut().for_each(|v| *v = 1.0 / (m as f64 + 1.0));
    set.project_block(k, &c, popts)
}

/// Identity-link maximum likelihood over `set`, warm-started from least squares.
pub fn estimate_ml(
    panel: &crate::model::EventPanel,
    set: &FeasibleSet,
    opts: &SolveOptions,
) -> Result<EstimateResult> {
    opts.validate()?;
    let spec = *panel.spec();
    if spec.link() != Link::Identity {
        return Err(Error::Unsupported(
            "likelihood estimation with a nonlinear link other than logistic is not convex".into(),
        ));
    }
    check_set(&spec, set)?;
    let set = match set.rho() {
        Some(r) if r > 0.0 => set.clone(),
        _ => set.with_rho(opts.rho)?,
    };
    let rho = set.rho().expect("rho set above");
    let stats = SuffStats::accumulate(panel)?;
    let ls = estimate_ls_stats(&stats, &set, opts)?;
    let tol = default_tol(opts, &stats);
    let popts = opts.project_options();
    let outcomes: Vec<Result<(Outcome, bool)>> = (0..spec.locations())
        .into_par_iter()
        .map(|k| {
            let keep = set.reduced_keep(k);
            let design = BlockDesign::new(panel, k, Some(&keep));
            let value = |x: &[f64]| design.linear_nll(x, rho, None).ok();
            let value_grad = |x: &[f64], g: &mut [f64]| design.linear_nll(x, rho, Some(g)).ok();
            let project = |x: &[f64]| set.project_block(k, x, popts);
            let mut x0 = ls.beta_hat.block(k).to_vec();
            if value(&x0).is_none() {
                let c = center(&set, k, popts)?;
                let mut found = false;
                for theta in [1e-3, 1e-2, 0.1, 0.5, 1.0] {
                    let cand: Vec<f64> = x0.iter().zip(&c).map(|(a, b)| (1.0 - theta) * a + theta * b).collect();
                    if value(&cand).is_some() {
                        x0 = cand;
                        found = true;
                        break;
                    }
                }
                if !found {
                    return Err(Error::Initialization(format!(
                        "no strictly feasible starting point for location {k}"
                    )));
                }
            }
            let problem = Problem {
                value: &value,
                value_grad: &value_grad,
                project: &project,
            };
            let settings = Settings {
                max_iter: opts.max_iter,
                tol,
                rule: StepRule::BacktrackingArmijo,
                restart: opts.restart,
                lipschitz: probe_lipschitz(&value_grad, &x0),
            };
            let out = solver::accelerated(&problem, x0, &settings)?;
            Ok((out, degenerate(&stats, &keep)))
        })
        .collect();
    merge(spec, outcomes.into_iter().collect::<Result<Vec<_>>>()?)
}

/// Local curvature estimate from a small gradient difference.
fn probe_lipschitz(value_grad: &dyn Fn(&[f64], &mut [f64]) -> Option<f64>, x: &[f64]) -> f64 {
    let n = x.len();
    let mut g0 = vec![0.0; n];
    let mut g1 = vec![0.0; n];
    if value_grad(x, &mut g0).is_none() {
        return 1.0;
    }
    let gn = crate::linalg::norm2(&g0);
    if gn == 0.0 {
        return 1.0;
    }
    for h in [1e-6, 1e-7, 1e-8] {
        let y: Vec<f64> = x.iter().zip(&g0).map(|(a, g)| a - h * g / gn).collect();
        if value_grad(&y, &mut g1).is_some() {
            let diff: f64 = g0.iter().zip(&g1).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            return (diff / h).max(1e-6);
        }
    }
    1.0
}

fn logistic_setup(panel: &crate::model::EventPanel, set: &FeasibleSet, link: Link) -> Result<ModelSpec> {
    let spec = panel.spec().with_link(link)?;
    check_set(&spec, set)?;
    Ok(spec)
}

/// Maximum likelihood for the softmax link (sigmoid when `M = 1`).
pub fn estimate_ml_logistic(
    panel: &crate::model::EventPanel,
    set: &FeasibleSet,
    opts: &SolveOptions,
) -> Result<EstimateResult> {
    opts.validate()?;
    let link = if panel.spec().categories() == 1 {
        Link::SigmoidSingleState
    } else {
        Link::LogisticMultiState
    };
    let spec = logistic_setup(panel, set, link)?;
    let stats = SuffStats::accumulate(panel)?;
    let tol = default_tol(opts, &stats);
    let popts = opts.project_options();
    let outcomes: Vec<Result<(Outcome, bool)>> = (0..spec.locations())
        .into_par_iter()
        .map(|k| {
            let keep = set.reduced_keep(k);
            let design = BlockDesign::new(panel, k, Some(&keep));
            let value = |x: &[f64]| Some(design.logistic_nll(x, None)).filter(|v| v.is_finite());
            let value_grad =
                |x: &[f64], g: &mut [f64]| Some(design.logistic_nll(x, Some(g))).filter(|v| v.is_finite());
            let project = |x: &[f64]| set.project_block(k, x, popts);
            let x0 = set.project_block(k, &vec![0.0; spec.block_len()], popts)?;
            let problem = Problem {
                value: &value,
                value_grad: &value_grad,
                project: &project,
            };
            let settings = Settings {
                max_iter: opts.max_iter,
                tol,
                rule: StepRule::BacktrackingArmijo,
                restart: opts.restart,
                lipschitz: 0.5 * lipschitz_on(&stats, &keep),
            };
            let out = solver::accelerated(&problem, x0, &settings)?;
            Ok((out, degenerate(&stats, &keep)))
        })
        .collect();
    merge(spec, outcomes.into_iter().collect::<Result<Vec<_>>>()?)
}

/// Weak solution of the variational inequality with the empirical field of
/// `link`, by projected extragradient. Identity delegates to least squares.
pub fn estimate_vi(
    panel: &crate::model::EventPanel,
    set: &FeasibleSet,
    link: Link,
    opts: &SolveOptions,
) -> Result<EstimateResult> {
    opts.validate()?;
    if link == Link::Identity {
        let spec = panel.spec().with_link(Link::Identity)?;
        let relinked = crate::model::EventPanel::new(spec, panel.horizon(), panel.raw().to_vec())?;
        return estimate_ls(&relinked, set, opts);
    }
    let spec = logistic_setup(panel, set, link)?;
    let stats = SuffStats::accumulate(panel)?;
    let tol = default_tol(opts, &stats);
    let popts = opts.project_options();
    let outcomes: Vec<Result<(Outcome, bool)>> = (0..spec.locations())
        .into_par_iter()
        .map(|k| {
            let keep = set.reduced_keep(k);
            let design = BlockDesign::new(panel, k, Some(&keep));
            let field = |x: &[f64], g: &mut [f64]| {
                design.logistic_nll(x, Some(g));
            };
            let project = |x: &[f64]| set.project_block(k, x, popts);
            let x0 = set.project_block(k, &vec![0.0; spec.block_len()], popts)?;
            let gamma0 = 1.0 / probe_field(&field, &x0);
            let out = solver::extragradient(&field, &project, x0, gamma0, opts.max_iter, tol)?;
            Ok((out, degenerate(&stats, &keep)))
        })
        .collect();
    merge(spec, outcomes.into_iter().collect::<Result<Vec<_>>>()?)
}

/// `L_hat = max |F(a) - F(b)| / |a - b|` over a few fixed probe pairs.
fn probe_field(field: &dyn Fn(&[f64], &mut [f64]), x: &[f64]) -> f64 {
    let n = x.len();
    let mut f0 = vec![0.0; n];
    let mut f1 = vec![0.0; n];
    field(x, &mut f0);
    let mut best: f64 = 1e-8;
    for (i, h) in [1e-1, 1e-2, 1e-3].into_iter().enumerate() {
        let y: Vec<f64> = (0..n)
            .map(|j| x[j] + h * if (j + i) % 2 == 0 { 1.0 } else { -1.0 })
            .collect();
        field(&y, &mut f1);
        let df: f64 = f0.iter().zip(&f1).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let dx = h * (n as f64).sqrt();
        best = best.max(df / dx);
    }
    best
}
