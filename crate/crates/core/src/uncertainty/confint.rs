//! Confidence intervals for linear functionals `e^T beta`: the extremes of
//! `e^T x` over the feasible set intersected with the bands
//! `psi_lower(a_i) <= (A x)_i <= psi_upper(a_i)`.

use minilp::{ComparisonOp, OptimizationDirection, Problem};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constraints::FeasibleSet;
use crate::error::{Error, Result};
use crate::stats::SuffStats;

use super::psi::{coverage_level, psi_bounds};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
    /// False when the banded program has no feasible point.
    pub feasible: bool,
    /// Largest constraint violation of the returned optimal vertices.
    pub residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Sense {
    Ge,
    Le,
}

#[derive(Debug, Clone)]
struct Row {
    terms: Vec<(usize, f64)>,
    sense: Sense,
    rhs: f64,
}

#[derive(Debug, Clone)]
struct BlockLp {
    bounds: Vec<(f64, f64)>,
    /// Variable of each local coordinate; `None` for masked coordinates.
    var_of: Vec<Option<usize>>,
    rows: Vec<Row>,
}

impl BlockLp {
    fn solve(&self, objective: &[f64], dir: OptimizationDirection) -> Result<Option<(f64, f64)>> {
        let mut lp = Problem::new(dir);
        let vars: Vec<_> = self
            .bounds
            .iter()
            .zip(objective)
            .map(|(&b, &c)| lp.add_var(c, b))
            .collect();
        for row in &self.rows {
            let expr: Vec<_> = row.terms.iter().map(|&(i, w)| (vars[i], w)).collect();
            let op = match row.sense {
                Sense::Ge => ComparisonOp::Ge,
                Sense::Le => ComparisonOp::Le,
            };
            lp.add_constraint(&expr[..], op, row.rhs);
        }
        match lp.solve() {
            Ok(sol) => {
                let x: Vec<f64> = vars.iter().map(|&v| sol[v]).collect();
                Ok(Some((sol.objective(), self.violation(&x))))
            }
            Err(minilp::Error::Infeasible) => Ok(None),
            Err(minilp::Error::Unbounded) => {
                let inf = match dir {
                    OptimizationDirection::Minimize => f64::NEG_INFINITY,
                    OptimizationDirection::Maximize => f64::INFINITY,
                };
                Ok(Some((inf, 0.0)))
            }
        }
    }

    fn violation(&self, x: &[f64]) -> f64 {
        let mut worst = 0.0f64;
        for (v, &(lo, hi)) in x.iter().zip(&self.bounds) {
            worst = worst.max(lo - v).max(v - hi);
        }
        for row in &self.rows {
            let lhs: f64 = row.terms.iter().map(|&(i, w)| w * x[i]).sum();
            worst = worst.max(match row.sense {
                Sense::Ge => row.rhs - lhs,
                Sense::Le => lhs - row.rhs,
            });
        }
        worst
    }
}

/// The banded program for one data set, reusable across functionals.
#[derive(Debug, Clone)]
pub struct ConfintProgram {
    kappa: usize,
    block_len: usize,
    blocks: Vec<BlockLp>,
    feasible: bool,
    y: f64,
    bands: usize,
    zero_rate_bands: usize,
    horizon: usize,
}

impl ConfintProgram {
    pub fn new(stats: &SuffStats, set: &FeasibleSet, y: f64) -> Result<Self> {
        let spec = *stats.spec();
        let ss = set.spec();
        if (ss.locations(), ss.categories(), ss.depth()) != (spec.locations(), spec.categories(), spec.depth()) {
            return Err(Error::Input("feasible set and statistics dimensions differ".into()));
        }
        let n = stats.horizon();
        let (m, r, b, d) = (spec.categories(), spec.reduced_len(), spec.block_len(), spec.depth());
        let rho = set.rho();
        let mut blocks = Vec::with_capacity(spec.locations());
        let mut bands = 0;
        let mut zero_rate = 0;
        for k in 0..spec.locations() {
            let fixed = &set.fixed()[k * b..(k + 1) * b];
            let lo = &set.lower_bounds()[k * b..(k + 1) * b];
            let hi = &set.upper_bounds()[k * b..(k + 1) * b];
            let mut bounds = Vec::new();
            let mut var_of = vec![None; b];
            for i in 0..b {
                if !fixed[i] {
                    var_of[i] = Some(bounds.len());
                    bounds.push((lo[i], hi[i]));
                }
            }
            let mut rows = Vec::new();
            if let Some(rho) = rho {
                // rho <= beta_k(p) + sum_g m_{p,g}, m_{p,g} <= beta_g(p, q)
                for p in 0..m {
                    let mut terms: Vec<(usize, f64)> = var_of[p].map(|v| (v, 1.0)).into_iter().collect();
                    for l in 0..spec.locations() {
                        for s in 1..=d {
                            let slots: Vec<usize> = (0..=m).map(|q| spec.reduced_index(l, s, q) * m + p).collect();
                            let any_fixed = slots.iter().any(|&i| fixed[i]);
                            if slots.iter().all(|&i| fixed[i]) {
                                continue;
                            }
                            let aux = bounds.len();
                            bounds.push((f64::NEG_INFINITY, if any_fixed { 0.0 } else { f64::INFINITY }));
                            for &i in &slots {
                                if let Some(v) = var_of[i] {
                                    rows.push(Row {
                                        terms: vec![(aux, 1.0), (v, -1.0)],
                                        sense: Sense::Le,
                                        rhs: 0.0,
                                    });
                                }
                            }
                            terms.push((aux, 1.0));
                        }
                    }
                    rows.push(Row {
                        terms,
                        sense: Sense::Ge,
                        rhs: rho,
                    });
                }
                // sum_p beta_k(p) + sum_g u_g <= 1 - rho, u_g >= sum_p beta_g(p, q)
                let mut terms: Vec<(usize, f64)> = (0..m).filter_map(|p| var_of[p].map(|v| (v, 1.0))).collect();
                for l in 0..spec.locations() {
                    for s in 1..=d {
                        let cols: Vec<Vec<usize>> = (0..=m)
                            .map(|q| {
                                let j = spec.reduced_index(l, s, q);
                                (0..m).filter_map(|p| var_of[j * m + p]).collect()
                            })
                            .collect();
                        if cols.iter().all(|c| c.is_empty()) {
                            continue;
                        }
                        let any_empty = cols.iter().any(|c| c.is_empty());
                        let aux = bounds.len();
                        bounds.push((if any_empty { 0.0 } else { f64::NEG_INFINITY }, f64::INFINITY));
                        for col in cols.iter().filter(|c| !c.is_empty()) {
                            let mut t = vec![(aux, 1.0)];
                            t.extend(col.iter().map(|&v| (v, -1.0)));
                            rows.push(Row {
                                terms: t,
                                sense: Sense::Ge,
                                rhs: 0.0,
                            });
                        }
                        terms.push((aux, 1.0));
                    }
                }
                rows.push(Row {
                    terms,
                    sense: Sense::Le,
                    rhs: 1.0 - rho,
                });
            }
            if set.has_shape() {
                for l in 0..spec.locations() {
                    for q in 0..=m {
                        for p in 0..m {
                            let idx: Vec<usize> = (1..=d).map(|s| spec.reduced_index(l, s, q) * m + p).collect();
                            let mut push = |coefs: &[(usize, f64)]| {
                                let terms: Vec<(usize, f64)> = coefs
                                    .iter()
                                    .filter_map(|&(c, w)| var_of[idx[c]].map(|v| (v, w)))
                                    .collect();
                                if !terms.is_empty() {
                                    rows.push(Row {
                                        terms,
                                        sense: Sense::Ge,
                                        rhs: 0.0,
                                    });
                                }
                            };
                            for s in 1..d.saturating_sub(1) {
                                push(&[(s - 1, 1.0), (s, -2.0), (s + 1, 1.0)]);
                            }
                            if d >= 2 {
                                push(&[(d - 2, 1.0), (d - 1, -1.0)]);
                            }
                        }
                    }
                }
            }
            // bands on (G x_p)_j for free coordinates
            let g = stats.gram();
            for p in 0..m {
                for j in 0..r {
                    if fixed[j * m + p] {
                        continue;
                    }
                    let nu = stats.moments()[k * b + j * m + p].clamp(0.0, 1.0);
                    let (lo, hi) = psi_bounds(nu, n, y)?;
                    bands += 1;
                    if nu == 0.0 {
                        zero_rate += 1;
                    }
                    let terms: Vec<(usize, f64)> = (0..r)
                        .filter(|&jj| g[j * r + jj] != 0.0)
                        .filter_map(|jj| var_of[jj * m + p].map(|v| (v, g[j * r + jj])))
                        .collect();
                    if terms.is_empty() {
                        if lo > 0.0 {
                            rows.push(Row {
                                terms: vec![],
                                sense: Sense::Ge,
                                rhs: lo,
                            });
                        }
                        continue;
                    }
                    rows.push(Row {
                        terms: terms.clone(),
                        sense: Sense::Ge,
                        rhs: lo,
                    });
                    rows.push(Row {
                        terms,
                        sense: Sense::Le,
                        rhs: hi,
                    });
                }
            }
            blocks.push(BlockLp { bounds, var_of, rows });
        }
        let feasible = blocks
            .par_iter()
            .map(|blk| {
                let zero = vec![0.0; blk.bounds.len()];
                if blk.rows.iter().any(|r| r.terms.is_empty() && r.rhs > 0.0) {
                    return Ok(false);
                }
                Ok(blk.solve(&zero, OptimizationDirection::Minimize)?.is_some())
            })
            .collect::<Result<Vec<bool>>>()?
            .into_iter()
            .all(|f| f);
        Ok(ConfintProgram {
            kappa: spec.kappa(),
            block_len: b,
            blocks,
            feasible,
            y,
            bands,
            zero_rate_bands: zero_rate,
            horizon: n,
        })
    }

    pub fn feasible(&self) -> bool {
        self.feasible
    }

    /// Number of band rows, the effective dimension in the coverage level.
    pub fn kappa_eff(&self) -> usize {
        self.bands
    }

    /// Band rows built from an empty event count.
    pub fn zero_rate_bands(&self) -> usize {
        self.zero_rate_bands
    }

    /// Probability level of the simultaneous band event.
    pub fn coverage(&self) -> Result<f64> {
        coverage_level(self.y, self.bands.max(1), self.horizon)
    }

    pub fn interval(&self, e: &[f64]) -> Result<Interval> {
        if e.len() != self.kappa {
            return Err(Error::Input(format!(
                "functional has length {}, expected kappa = {}",
                e.len(),
                self.kappa
            )));
        }
        if !self.feasible {
            return Ok(Interval {
                lower: f64::NAN,
                upper: f64::NAN,
                feasible: false,
                residual: 0.0,
            });
        }
        let b = self.block_len;
        let mut out = Interval {
            lower: 0.0,
            upper: 0.0,
            feasible: true,
            residual: 0.0,
        };
        for (k, blk) in self.blocks.iter().enumerate() {
            let mut obj = vec![0.0; blk.bounds.len()];
            let mut any = false;
            for i in 0..b {
                if let Some(v) = blk.var_of[i] {
                    obj[v] = e[k * b + i];
                    any |= obj[v] != 0.0;
                }
            }
            if !any {
                continue;
            }
            for (dir, slot) in [
                (OptimizationDirection::Minimize, &mut out.lower),
                (OptimizationDirection::Maximize, &mut out.upper),
            ] {
                match blk.solve(&obj, dir)? {
                    Some((v, res)) => {
                        *slot += v;
                        out.residual = out.residual.max(res);
                    }
                    None => {
                        return Ok(Interval {
                            lower: f64::NAN,
                            upper: f64::NAN,
                            feasible: false,
                            residual: 0.0,
                        })
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn intervals(&self, functionals: &[Vec<f64>]) -> Result<Vec<Interval>> {
        functionals.par_iter().map(|e| self.interval(e)).collect()
    }

    /// Intervals for every coordinate `beta_i`.
    pub fn coordinate_intervals(&self) -> Result<Vec<Interval>> {
        (0..self.kappa)
            .into_par_iter()
            .map(|i| {
                let mut e = vec![0.0; self.kappa];
                e[i] = 1.0;
                self.interval(&e)
            })
            .collect()
    }
}

/// One-shot form of [`ConfintProgram::interval`].
pub fn confint_linear(e: &[f64], stats: &SuffStats, set: &FeasibleSet, y: f64) -> Result<Interval> {
    ConfintProgram::new(stats, set, y)?.interval(e)
}
