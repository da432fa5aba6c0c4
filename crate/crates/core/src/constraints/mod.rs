//! Convex feasible sets built from constraint atoms, feasibility reports and
//! Euclidean projection.
//!
//! Every atom acts separately on each location block, so projections run
//! block by block. Masks fix coordinates at zero and are folded into every
//! other piece; the remaining pieces are combined with Dykstra's method.

mod shape;
mod summax;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Coord, ModelSpec, ParamVector};

pub use shape::{shape_project, shape_violation};
use summax::{Group, SumMax};

pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 10_000;
const DISPLACEMENT_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Atom {
    /// `rho <= beta_k(p) + sum min_q beta(p,q)` and
    /// `sum_p beta_k(p) + sum max_q sum_p beta(p,q) <= 1 - rho`.
    BasicPolytope { rho: f64 },
    /// Per-coordinate bounds over the flat layout.
    Box { lower: Vec<f64>, upper: Vec<f64> },
    ZeroMask { slots: Vec<usize> },
    /// Zeroes every interaction between locations further apart than `radius`.
    LocalityMask { radius: usize },
    /// Zeroes the ground-state interactions `beta(p, 0)`.
    GroundMask,
    /// Every lag curve `s -> beta^s_{kl}(p,q)` is non-increasing and convex.
    ShapeMonotoneConvex,
    NonnegativeInteractions,
}

impl Atom {
    pub fn uniform_box(spec: &ModelSpec, lower: f64, upper: f64) -> Atom {
        Atom::Box {
            lower: vec![lower; spec.kappa()],
            upper: vec![upper; spec.kappa()],
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Atom::BasicPolytope { .. } => "basic_polytope",
            Atom::Box { .. } => "box",
            Atom::ZeroMask { .. } => "zero_mask",
            Atom::LocalityMask { .. } => "locality_mask",
            Atom::GroundMask => "ground_mask",
            Atom::ShapeMonotoneConvex => "shape_monotone_convex",
            Atom::NonnegativeInteractions => "nonnegative_interactions",
        }
    }
}

/// Slots of `beta(p, q)` with `q != p` (events only trigger their own category).
pub fn same_category_mask(spec: &ModelSpec) -> Vec<usize> {
    interaction_slots(spec, |_, _, q, p| q != p)
}

/// Slots of `beta(p, q)` with `p > q` (only categories up to `q` are triggered).
pub fn ordered_category_mask(spec: &ModelSpec) -> Vec<usize> {
    interaction_slots(spec, |_, _, q, p| p > q)
}

/// Slots of interactions `l -> k` not listed in `edges` (pairs `(l, k)`).
pub fn edge_mask(spec: &ModelSpec, edges: &[(usize, usize)]) -> Vec<usize> {
    interaction_slots(spec, |k, l, _, _| !edges.contains(&(l, k)))
}

fn interaction_slots(spec: &ModelSpec, pick: impl Fn(usize, usize, usize, usize) -> bool) -> Vec<usize> {
    let mut out = Vec::new();
    for k in 0..spec.locations() {
        for l in 0..spec.locations() {
            for s in 1..=spec.depth() {
                for q in 0..=spec.categories() {
                    for p in 1..=spec.categories() {
                        if pick(k, l, q, p) {
                            out.push(spec.slot(k, spec.reduced_index(l, s, q), p));
                        }
                    }
                }
            }
        }
    }
    out.sort_unstable();
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for ProjectOptions {
    fn default() -> Self {
        ProjectOptions {
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Piece {
    Lower,
    Upper,
    Box,
    Shape,
}

#[derive(Debug, Clone)]
struct BlockPieces {
    /// One sum-of-max set per category, in negated coordinates.
    lower: Vec<SumMax>,
    upper: SumMax,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeasibilityReport {
    pub feasible: bool,
    /// Worst violation per atom, in declaration order.
    pub violations: Vec<(&'static str, f64)>,
}

impl FeasibilityReport {
    pub fn worst(&self) -> f64 {
        self.violations.iter().map(|v| v.1).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone)]
pub struct FeasibleSet {
    spec: ModelSpec,
    atoms: Vec<Atom>,
    fixed: Vec<bool>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    rho: Option<f64>,
    pieces: Vec<Piece>,
    blocks: Vec<BlockPieces>,
}

impl PartialEq for FeasibleSet {
    fn eq(&self, other: &Self) -> bool {
        self.spec == other.spec && self.atoms == other.atoms
    }
}

impl FeasibleSet {
    pub fn new(spec: ModelSpec, atoms: Vec<Atom>) -> Result<Self> {
        let kappa = spec.kappa();
        let mut fixed = vec![false; kappa];
        let mut lower = vec![f64::NEG_INFINITY; kappa];
        let mut upper = vec![f64::INFINITY; kappa];
        let mut rho: Option<f64> = None;
        let mut pieces = Vec::new();
        let push = |pieces: &mut Vec<Piece>, p: Piece| {
            if !pieces.contains(&p) {
                pieces.push(p);
            }
        };
        for atom in &atoms {
            match atom {
                Atom::BasicPolytope { rho: r } => {
                    if !(r.is_finite() && *r >= 0.0) {
                        return Err(Error::Input(format!("rho must be finite and >= 0, got {r}")));
                    }
                    rho = Some(rho.map_or(*r, |old: f64| old.max(*r)));
                    push(&mut pieces, Piece::Lower);
                    push(&mut pieces, Piece::Upper);
                }
                Atom::Box { lower: lo, upper: hi } => {
                    if lo.len() != kappa || hi.len() != kappa {
                        return Err(Error::Input(format!(
                            "box bounds have lengths ({}, {}), expected kappa = {kappa}",
                            lo.len(),
                            hi.len()
                        )));
                    }
                    for i in 0..kappa {
                        if lo[i].is_nan() || hi[i].is_nan() {
                            return Err(Error::Input(format!("box bound at slot {i} is NaN")));
                        }
                        lower[i] = lower[i].max(lo[i]);
                        upper[i] = upper[i].min(hi[i]);
                    }
                    push(&mut pieces, Piece::Box);
                }
                Atom::NonnegativeInteractions => {
                    for k in 0..spec.locations() {
                        let b = spec.block_len();
                        for i in k * b + spec.categories()..(k + 1) * b {
                            lower[i] = lower[i].max(0.0);
                        }
                    }
                    push(&mut pieces, Piece::Box);
                }
                Atom::ZeroMask { slots } => {
                    for &i in slots {
                        if i >= kappa {
                            return Err(Error::range("mask slot", i, format!("0..{kappa}")));
                        }
                        fixed[i] = true;
                    }
                }
                Atom::LocalityMask { radius } => {
                    for i in interaction_slots(&spec, |k, l, _, _| k.abs_diff(l) > *radius) {
                        fixed[i] = true;
                    }
                }
                Atom::GroundMask => {
                    for i in interaction_slots(&spec, |_, _, q, _| q == 0) {
                        fixed[i] = true;
                    }
                }
                Atom::ShapeMonotoneConvex => push(&mut pieces, Piece::Shape),
            }
        }
        for i in 0..kappa {
            if lower[i] > upper[i] {
                return Err(Error::EmptySet(format!(
                    "box at slot {i}: lower {} > upper {}",
                    lower[i], upper[i]
                )));
            }
            if fixed[i] && (lower[i] > 0.0 || upper[i] < 0.0) {
                return Err(Error::EmptySet(format!(
                    "slot {i} is masked to zero but its box is [{}, {}]",
                    lower[i], upper[i]
                )));
            }
        }
        let has_box = (0..kappa).any(|i| !fixed[i] && (lower[i].is_finite() || upper[i].is_finite()));
        if !has_box {
            pieces.retain(|&p| p != Piece::Box);
        }
        if spec.depth() < 2 {
            pieces.retain(|&p| p != Piece::Shape);
        }
        let blocks = if rho.is_some() {
            (0..spec.locations()).map(|k| build_pieces(&spec, &fixed, k)).collect()
        } else {
            Vec::new()
        };
        Ok(FeasibleSet {
            spec,
            atoms,
            fixed,
            lower,
            upper,
            rho,
            pieces,
            blocks,
        })
    }

    /// The basic polytope at margin `rho` and nothing else.
    pub fn basic(spec: ModelSpec, rho: f64) -> Result<Self> {
        Self::new(spec, vec![Atom::BasicPolytope { rho }])
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn rho(&self) -> Option<f64> {
        self.rho
    }

    /// Same atoms with every basic polytope margin replaced by `rho`; adds a
    /// basic polytope if none was declared.
    pub fn with_rho(&self, rho: f64) -> Result<Self> {
        let mut atoms: Vec<Atom> = self
            .atoms
            .iter()
            .map(|a| match a {
                Atom::BasicPolytope { .. } => Atom::BasicPolytope { rho },
                other => other.clone(),
            })
            .collect();
        if self.rho.is_none() {
            atoms.insert(0, Atom::BasicPolytope { rho });
        }
        Self::new(self.spec, atoms)
    }

    /// Coordinates held at zero by masks.
    pub fn fixed(&self) -> &[bool] {
        &self.fixed
    }

    pub fn lower_bounds(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper_bounds(&self) -> &[f64] {
        &self.upper
    }

    pub fn has_shape(&self) -> bool {
        self.pieces.contains(&Piece::Shape)
    }

    /// Reduced coordinates of block `k` with at least one free slot.
    pub fn reduced_keep(&self, k: usize) -> Vec<bool> {
        let m = self.spec.categories();
        let b = self.spec.block_len();
        (0..self.spec.reduced_len())
            .map(|j| (0..m).any(|p| !self.fixed[k * b + j * m + p]))
            .collect()
    }

    pub fn check_feasible(&self, beta: &ParamVector, tol: f64) -> FeasibilityReport {
        let x = beta.values();
        let spec = &self.spec;
        let mut violations = Vec::with_capacity(self.atoms.len());
        for atom in &self.atoms {
            let v = match atom {
                Atom::BasicPolytope { rho } => basic_violation(beta, *rho),
                Atom::Box { lower, upper } => (0..x.len())
                    .map(|i| (lower[i] - x[i]).max(x[i] - upper[i]))
                    .fold(0.0, f64::max),
                Atom::ZeroMask { slots } => slots.iter().map(|&i| x[i].abs()).fold(0.0, f64::max),
                Atom::LocalityMask { radius } => {
                    interaction_slots(spec, |k, l, _, _| k.abs_diff(l) > *radius)
                        .into_iter()
                        .map(|i| x[i].abs())
                        .fold(0.0, f64::max)
                }
                Atom::GroundMask => interaction_slots(spec, |_, _, q, _| q == 0)
                    .into_iter()
                    .map(|i| x[i].abs())
                    .fold(0.0, f64::max),
                Atom::NonnegativeInteractions => interaction_slots(spec, |_, _, _, _| true)
                    .into_iter()
                    .map(|i| -x[i])
                    .fold(0.0, f64::max),
                Atom::ShapeMonotoneConvex => {
                    let mut worst = 0.0f64;
                    for_each_curve(spec, |k, idx| {
                        let curve: Vec<f64> = idx.iter().map(|&i| x[k * spec.block_len() + i]).collect();
                        worst = worst.max(shape_violation(&curve));
                    });
                    worst
                }
            };
            violations.push((atom.name(), v.max(0.0)));
        }
        let feasible = violations.iter().all(|&(_, v)| v <= tol);
        FeasibilityReport { feasible, violations }
    }

    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.project_with(x, ProjectOptions::default())
    }

    pub fn project_with(&self, x: &[f64], opts: ProjectOptions) -> Result<Vec<f64>> {
        if x.len() != self.spec.kappa() {
            return Err(Error::Input(format!(
                "point has length {}, expected kappa = {}",
                x.len(),
                self.spec.kappa()
            )));
        }
        let b = self.spec.block_len();
        let outcomes: Vec<Result<BlockOutcome>> = (0..self.spec.locations())
            .into_par_iter()
            .map(|k| self.dykstra(k, &x[k * b..(k + 1) * b], opts))
            .collect();
        let mut out = Vec::with_capacity(x.len());
        let mut failure: Option<(usize, f64)> = None;
        for o in outcomes {
            let o = o?;
            out.extend_from_slice(&o.x);
            if !o.converged {
                let (it, res) = failure.unwrap_or((0, 0.0));
                failure = Some((it.max(o.iterations), res.max(o.residual)));
            }
        }
        match failure {
            None => Ok(out),
            Some((iterations, residual)) => Err(Error::Projection {
                iterations,
                residual,
                last: out,
            }),
        }
    }

    /// Projects one location block (length `block_len`).
    pub fn project_block(&self, k: usize, x: &[f64], opts: ProjectOptions) -> Result<Vec<f64>> {
        let o = self.dykstra(k, x, opts)?;
        if o.converged {
            Ok(o.x)
        } else {
            Err(Error::Projection {
                iterations: o.iterations,
                residual: o.residual,
                last: o.x,
            })
        }
    }

    /// Largest constraint violation of block `k` over the projection pieces.
    pub fn block_violation(&self, k: usize, x: &[f64]) -> f64 {
        let b = self.spec.block_len();
        let fixed = &self.fixed[k * b..(k + 1) * b];
        let mut worst = fixed
            .iter()
            .zip(x)
            .filter(|(f, _)| **f)
            .map(|(_, v)| v.abs())
            .fold(0.0, f64::max);
        for &piece in &self.pieces {
            worst = worst.max(self.piece_violation(piece, k, x));
        }
        worst
    }

    fn piece_violation(&self, piece: Piece, k: usize, x: &[f64]) -> f64 {
        let b = self.spec.block_len();
        match piece {
            Piece::Lower => {
                let rho = self.rho.unwrap_or(0.0);
                let neg: Vec<f64> = x.iter().map(|v| -v).collect();
                self.blocks[k]
                    .lower
                    .iter()
                    .map(|s| s.value(&neg) + rho)
                    .fold(0.0, f64::max)
            }
            Piece::Upper => {
                let rho = self.rho.unwrap_or(0.0);
                (self.blocks[k].upper.value(x) - (1.0 - rho)).max(0.0)
            }
            Piece::Box => (0..b)
                .filter(|&i| !self.fixed[k * b + i])
                .map(|i| (self.lower[k * b + i] - x[i]).max(x[i] - self.upper[k * b + i]))
                .fold(0.0, f64::max),
            Piece::Shape => {
                let mut worst = 0.0f64;
                for_each_curve(&self.spec, |kk, idx| {
                    if kk == k {
                        let curve: Vec<f64> = idx.iter().map(|&i| x[i]).collect();
                        worst = worst.max(shape_violation(&curve));
                    }
                });
                worst
            }
        }
    }

    fn apply(&self, piece: Piece, k: usize, y: &mut [f64]) -> Result<()> {
        let b = self.spec.block_len();
        let fixed = &self.fixed[k * b..(k + 1) * b];
        for (v, &f) in y.iter_mut().zip(fixed) {
            if f {
                *v = 0.0;
            }
        }
        match piece {
            Piece::Lower => {
                let rho = self.rho.unwrap_or(0.0);
                y.iter_mut().for_each(|v| *v = -*v);
                let res = self.blocks[k]
                    .lower
                    .iter()
                    .try_for_each(|s| s.project(y, -rho));
                y.iter_mut().for_each(|v| *v = -*v);
                res
            }
            Piece::Upper => {
                let rho = self.rho.unwrap_or(0.0);
                self.blocks[k].upper.project(y, 1.0 - rho)
            }
            Piece::Box => {
                for i in 0..b {
                    if !fixed[i] {
                        y[i] = y[i].clamp(self.lower[k * b + i], self.upper[k * b + i]);
                    }
                }
                Ok(())
            }
            Piece::Shape => {
                let mut curve = Vec::with_capacity(self.spec.depth());
                let mut mask = Vec::with_capacity(self.spec.depth());
                for_each_curve_in_block(&self.spec, |idx| {
                    curve.clear();
                    mask.clear();
                    curve.extend(idx.iter().map(|&i| y[i]));
                    mask.extend(idx.iter().map(|&i| fixed[i]));
                    if mask.iter().all(|&f| f) {
                        return;
                    }
                    shape::project_masked(&mut curve, &mask);
                    for (c, &i) in idx.iter().enumerate() {
                        y[i] = curve[c];
                    }
                });
                Ok(())
            }
        }
    }

    fn dykstra(&self, k: usize, x: &[f64], opts: ProjectOptions) -> Result<BlockOutcome> {
        let b = self.spec.block_len();
        if x.len() != b {
            return Err(Error::Input(format!("block has length {}, expected {b}", x.len())));
        }
        let mut y = x.to_vec();
        let fixed = &self.fixed[k * b..(k + 1) * b];
        for (v, &f) in y.iter_mut().zip(fixed) {
            if f {
                *v = 0.0;
            }
        }
        match self.pieces.len() {
            0 => {
                return Ok(BlockOutcome {
                    x: y,
                    converged: true,
                    iterations: 0,
                    residual: 0.0,
                })
            }
            1 => {
                self.apply(self.pieces[0], k, &mut y)?;
                let residual = self.block_violation(k, &y);
                return Ok(BlockOutcome {
                    x: y,
                    converged: residual <= opts.tol,
                    iterations: 1,
                    residual,
                });
            }
            _ => {}
        }
        if self.block_violation(k, &y) == 0.0 {
            return Ok(BlockOutcome {
                x: y,
                converged: true,
                iterations: 0,
                residual: 0.0,
            });
        }
        let mut incr = vec![vec![0.0; b]; self.pieces.len()];
        let mut work = vec![0.0; b];
        let mut residual = f64::INFINITY;
        for it in 1..=opts.max_iter {
            let start = y.clone();
            // y alone can sit still for a sweep while the increments keep
            // moving, so both enter the stopping rule
            let mut incr_change = 0.0;
            for (pi, &piece) in self.pieces.iter().enumerate() {
                for i in 0..b {
                    work[i] = y[i] + incr[pi][i];
                }
                let before = work.clone();
                self.apply(piece, k, &mut work)?;
                for i in 0..b {
                    let next = before[i] - work[i];
                    incr_change += (next - incr[pi][i]) * (next - incr[pi][i]);
                    incr[pi][i] = next;
                }
                y.copy_from_slice(&work);
            }
            let disp = start
                .iter()
                .zip(&y)
                .map(|(a, c)| (a - c) * (a - c))
                .sum::<f64>()
                .sqrt()
                + incr_change.sqrt();
            if disp < DISPLACEMENT_TOL * (1.0 + norm(&y)) || it % 8 == 0 {
                residual = self.block_violation(k, &y);
                if disp < DISPLACEMENT_TOL * (1.0 + norm(&y)) && residual <= opts.tol {
                    return Ok(BlockOutcome {
                        x: y,
                        converged: true,
                        iterations: it,
                        residual,
                    });
                }
            }
        }
        Ok(BlockOutcome {
            x: y,
            converged: false,
            iterations: opts.max_iter,
            residual,
        })
    }
}

struct BlockOutcome {
    x: Vec<f64>,
    converged: bool,
    iterations: usize,
    residual: f64,
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Calls `f(local indices)` for every lag curve of one block, ordered by
/// `(l, q, p)`; indices run over `s = 1..=d`.
fn for_each_curve_in_block(spec: &ModelSpec, mut f: impl FnMut(&[usize])) {
    let m = spec.categories();
    let mut idx = Vec::with_capacity(spec.depth());
    for l in 0..spec.locations() {
        for q in 0..=m {
            for p in 1..=m {
                idx.clear();
                idx.extend((1..=spec.depth()).map(|s| spec.reduced_index(l, s, q) * m + p - 1));
                f(&idx);
            }
        }
    }
}

fn for_each_curve(spec: &ModelSpec, mut f: impl FnMut(usize, &[usize])) {
    for k in 0..spec.locations() {
        for_each_curve_in_block(spec, |idx| f(k, idx));
    }
}

fn build_pieces(spec: &ModelSpec, fixed: &[bool], k: usize) -> BlockPieces {
    let m = spec.categories();
    let b = spec.block_len();
    let is_free = |local: usize| !fixed[k * b + local];
    let lower = (1..=m)
        .map(|p| {
            let base: Vec<usize> = [p - 1].into_iter().filter(|&i| is_free(i)).collect();
            let groups = (0..spec.locations())
                .flat_map(|l| (1..=spec.depth()).map(move |s| (l, s)))
                .map(|(l, s)| {
                    let mut g = Group::default();
                    for q in 0..=m {
                        let i = spec.reduced_index(l, s, q) * m + p - 1;
                        if is_free(i) {
                            g.cols.push(vec![i]);
                        } else {
                            g.has_fixed_col = true;
                        }
                    }
                    g
                })
                .collect();
            SumMax { base, groups }
        })
        .collect();
    let upper = {
        let base: Vec<usize> = (0..m).filter(|&i| is_free(i)).collect();
        let groups = (0..spec.locations())
            .flat_map(|l| (1..=spec.depth()).map(move |s| (l, s)))
            .map(|(l, s)| {
                let mut g = Group::default();
                for q in 0..=m {
                    let j = spec.reduced_index(l, s, q);
                    let col: Vec<usize> = (0..m).map(|p| j * m + p).filter(|&i| is_free(i)).collect();
                    if col.is_empty() {
                        g.has_fixed_col = true;
                    } else {
                        g.cols.push(col);
                    }
                }
                g
            })
            .collect();
        SumMax { base, groups }
    };
    BlockPieces { lower, upper }
}

/// Worst violation (>= 0) of the basic polytope at margin `rho`, evaluated
/// directly from the min/max form.
pub fn basic_violation(beta: &ParamVector, rho: f64) -> f64 {
    let spec = beta.spec();
    let (m, d, kk) = (spec.categories(), spec.depth(), spec.locations());
    let get = |c: Coord| beta.get(c).expect("coordinate in range");
    let mut worst = 0.0f64;
    for k in 0..kk {
        let mut upper = 0.0;
        for p in 1..=m {
            let mut lower = get(Coord::Baseline { k, p });
            upper += get(Coord::Baseline { k, p });
            for l in 0..kk {
                for s in 1..=d {
                    lower += (0..=m)
                        .map(|q| get(Coord::Interaction { k, l, s, q, p }))
                        .fold(f64::INFINITY, f64::min);
                }
            }
            worst = worst.max(rho - lower);
        }
        for l in 0..kk {
            for s in 1..=d {
                upper += (0..=m)
                    .map(|q| (1..=m).map(|p| get(Coord::Interaction { k, l, s, q, p })).sum::<f64>())
                    .fold(f64::NEG_INFINITY, f64::max);
            }
        }
        worst = worst.max(upper - (1.0 - rho));
    }
    worst.max(0.0)
}
