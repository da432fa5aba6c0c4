//! True-parameter generators for the synthetic experiments and the matching
//! estimation sets.

use mbp_core::constraints::{edge_mask, ordered_category_mask, same_category_mask, shape_project};
use mbp_core::{Atom, Coord, FeasibleSet, ModelSpec, ParamVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// `M = 1`, local non-increasing convex interactions.
    SingleState,
    /// Events only trigger their own category.
    SameCategory,
    /// Category `q` only triggers categories `p <= q`.
    OrderedCategory,
    /// Fixed sparse 8-node graph with bump-shaped and one negative interaction.
    Network,
}

impl Scenario {
    pub fn name(self) -> &'static str {
        match self {
            Scenario::SingleState => "single_state",
            Scenario::SameCategory => "same_category",
            Scenario::OrderedCategory => "ordered_category",
            Scenario::Network => "network",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorMethod {
    /// `uniform_polytope` for single-state, `rescaled` for the category
    /// scenarios.
    #[default]
    Auto,
    /// Uniform draw from the polytope of nonnegative local shape-constrained
    /// parameters with block total at most 1 (see [`generate_truth`]).
    UniformPolytope,
    /// Uniform coefficients, shape-projected curves, block rescaled to a
    /// total of `1 - slack`.
    Rescaled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorSettings {
    pub method: GeneratorMethod,
    /// Interactions are zero between locations further apart than this.
    pub locality_radius: usize,
    /// `rescaled` only: each block satisfies the upper constraint with this slack.
    pub slack: f64,
    /// `rescaled` only: range of the baseline share of the block total.
    /// `None` draws the baselines on the same scale as single interaction
    /// coefficients.
    pub baseline_share: Option<[f64; 2]>,
    /// Network scenario: baselines are uniform on `[0, baseline_max]`.
    pub baseline_max: f64,
    /// Network scenario: peak height of each edge curve.
    pub edge_height: f64,
}

impl Default for GeneratorSettings {
    fn default() -> Self {
        GeneratorSettings {
            method: GeneratorMethod::Auto,
            locality_radius: 1,
            slack: 0.05,
            baseline_share: Some([0.02, 0.1]),
            baseline_max: 0.2,
            edge_height: 0.05,
        }
    }
}

/// Directed edges `(l, k)` of the network scenario, 0-based (`l -> k`).
pub const NETWORK_EDGES: [(usize, usize); 11] = [
    (0, 4),
    (0, 7),
    (1, 1),
    (1, 2),
    (2, 3),
    (2, 6),
    (3, 0),
    (4, 4),
    (5, 6),
    (6, 1),
    (7, 5),
];

/// The one edge with a negative interaction.
pub const NEGATIVE_EDGE: (usize, usize) = (0, 7);

pub const NETWORK_NODES: usize = 8;

fn allowed(scenario: Scenario, q: usize, p: usize) -> bool {
    match scenario {
        Scenario::SingleState | Scenario::Network => q != 0,
        Scenario::SameCategory => q == p,
        Scenario::OrderedCategory => q != 0 && p <= q,
    }
}

/// Draws a true parameter vector for `scenario`.
///
/// With [`GeneratorMethod::UniformPolytope`] every location block is drawn
/// uniformly from `{baselines >= 0, curves nonnegative non-increasing convex,
/// baselines + all interactions <= 1}`. A nonnegative non-increasing convex
/// curve on `1..=d` is a nonnegative combination of the constant and the
/// hinges `(j - s)_+`, `j = 2..=d`, so the set is a simplex in the mass each
/// generator carries and a flat Dirichlet draw of those masses is uniform.
/// With several allowed `q` per lag the upper constraint takes a max over
/// `q`; a hit-and-run walk started from such a draw then samples the larger
/// set.
pub fn generate_truth<R: Rng>(
    scenario: Scenario,
    spec: ModelSpec,
    settings: &GeneratorSettings,
    rng: &mut R,
) -> mbp_core::Result<ParamVector> {
    match (scenario, settings.method) {
        (Scenario::Network, _) => network_truth(spec, settings, rng),
        (Scenario::SingleState, GeneratorMethod::Auto) => uniform_truth(scenario, spec, settings, rng),
        (_, GeneratorMethod::Auto) => local_truth(scenario, spec, settings, rng),
        (_, GeneratorMethod::UniformPolytope) => uniform_truth(scenario, spec, settings, rng),
        (_, GeneratorMethod::Rescaled) => local_truth(scenario, spec, settings, rng),
    }
}

/// Unit-mass generators of the nonnegative non-increasing convex cone on `1..=d`.
fn cone_generators(d: usize) -> Vec<Vec<f64>> {
    if d == 0 {
        return Vec::new();
    }
    let mut out = vec![vec![1.0 / d as f64; d]];
    for j in 2..=d {
        let h: Vec<f64> = (1..=d).map(|s| (j as f64 - s as f64).max(0.0)).collect();
        let mass: f64 = h.iter().sum();
        out.push(h.into_iter().map(|v| v / mass).collect());
    }
    out
}

/// Flat Dirichlet over `n` parts plus one slack part; returns the `n` parts.
fn dirichlet<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    // -ln U is a unit exponential, i.e. a Gamma(1) draw
    let e: Vec<f64> = (0..=n).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
    let total: f64 = e.iter().sum();
    e[..n].iter().map(|v| v / total).collect()
}

/// Hit-and-run steps per coordinate squared when the block is not a simplex.
const HIT_AND_RUN_FACTOR: usize = 4;

fn uniform_truth<R: Rng>(
    scenario: Scenario,
    spec: ModelSpec,
    settings: &GeneratorSettings,
    rng: &mut R,
) -> mbp_core::Result<ParamVector> {
    let (kk, m, d) = (spec.locations(), spec.categories(), spec.depth());
    let gens = cone_generators(d);
    let g = gens.len();
    let mut beta = ParamVector::zeros(spec);
    for k in 0..kk {
        let mut curves = Vec::new();
        for l in 0..kk {
            if l.abs_diff(k) > settings.locality_radius {
                continue;
            }
            for q in 0..=m {
                for p in 1..=m {
                    if allowed(scenario, q, p) {
                        curves.push((l, q, p));
                    }
                }
            }
        }
        let n = m + curves.len() * g;
        let mut w = dirichlet(n, rng);
        // With one allowed q per (l, s) the upper constraint is the plain
        // sum and the Dirichlet draw is already uniform. Otherwise the max
        // over q enlarges the set and a hit-and-run walk started inside
        // the sum part samples it.
        let one_q = (0..kk).all(|l| {
            let mut qs: Vec<usize> = curves.iter().filter(|c| c.0 == l).map(|c| c.1).collect();
            qs.dedup();
            qs.len() <= 1
        });
        if !one_q && d > 0 {
            let load = BlockLoad::new(&curves, m, &gens, d);
            hit_and_run(&load, &mut w, HIT_AND_RUN_FACTOR * n * n, rng);
        }
        for p in 1..=m {
            beta.set(Coord::Baseline { k, p }, w[p - 1])?;
        }
        for (c, &(l, q, p)) in curves.iter().enumerate() {
            let wc = &w[m + c * g..m + (c + 1) * g];
            for s in 1..=d {
                let v: f64 = wc.iter().zip(&gens).map(|(a, gen)| a * gen[s - 1]).sum();
                beta.set(Coord::Interaction { k, l, s, q, p }, v)?;
            }
        }
    }
    Ok(beta)
}

/// Upper-constraint load `sum_p b_p + sum_{l,s} max_q sum_p beta^s_l(p, q)`
/// of one block as a function of the generator weights.
struct BlockLoad {
    baselines: usize,
    /// Linear maps from weights to each `(l, s, q)` term, as sparse rows.
    terms: Vec<Vec<(usize, f64)>>,
    /// Terms of one `(l, s)` are consecutive; `groups[i]` ends group `i`.
    groups: Vec<usize>,
}

impl BlockLoad {
    fn new(curves: &[(usize, usize, usize)], m: usize, gens: &[Vec<f64>], d: usize) -> Self {
        let g = gens.len();
        let mut ls: Vec<usize> = curves.iter().map(|c| c.0).collect();
        ls.dedup();
        let mut terms = Vec::new();
        let mut groups = Vec::new();
        for &l in &ls {
            for s in 0..d {
                let mut qs: Vec<usize> = curves.iter().filter(|c| c.0 == l).map(|c| c.1).collect();
                qs.dedup();
                for q in qs {
                    let mut row = Vec::new();
                    for (c, _) in curves.iter().enumerate().filter(|(_, c)| c.0 == l && c.1 == q) {
                        for (j, gen) in gens.iter().enumerate() {
                            if gen[s] != 0.0 {
                                row.push((m + c * g + j, gen[s]));
                            }
                        }
                    }
                    terms.push(row);
                }
                groups.push(terms.len());
            }
        }
        BlockLoad {
            baselines: m,
            terms,
            groups,
        }
    }

    /// `(a, b)` such that the load along `w + t u` is
    /// `a0 + t b0 + sum_groups max_i (a_i + t b_i)`.
    fn line(&self, w: &[f64], u: &[f64]) -> (f64, f64, Vec<(f64, f64)>) {
        let a0 = w[..self.baselines].iter().sum();
        let b0 = u[..self.baselines].iter().sum();
        let lines = self
            .terms
            .iter()
            .map(|row| {
                row.iter()
                    .fold((0.0, 0.0), |(a, b), &(j, c)| (a + c * w[j], b + c * u[j]))
            })
            .collect();
        (a0, b0, lines)
    }

    fn along(&self, line: &(f64, f64, Vec<(f64, f64)>), t: f64) -> f64 {
        let mut total = line.0 + t * line.1;
        let mut start = 0;
        for &end in &self.groups {
            total += line.2[start..end]
                .iter()
                .map(|(a, b)| a + t * b)
                .fold(f64::NEG_INFINITY, f64::max);
            start = end;
        }
        total
    }
}

/// Hit-and-run walk on `{w >= 0, load(w) <= 1}` from an interior `w`.
fn hit_and_run<R: Rng>(load: &BlockLoad, w: &mut [f64], steps: usize, rng: &mut R) {
    let n = w.len();
    let mut u = vec![0.0; n];
    for _ in 0..steps {
        // uniform direction from normalized Gaussians (Box-Muller)
        for v in u.iter_mut() {
            let (a, b): (f64, f64) = (1.0 - rng.random::<f64>(), rng.random::<f64>());
            *v = (-2.0 * a.ln()).sqrt() * (std::f64::consts::TAU * b).cos();
        }
        let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
        for i in 0..n {
            if u[i] > 0.0 {
                lo = lo.max(-w[i] / u[i]);
            } else if u[i] < 0.0 {
                hi = hi.min(-w[i] / u[i]);
            }
        }
        let line = load.line(w, &u);
        // the load is convex along the line and below 1 at t = 0
        let edge = |mut inside: f64, mut outside: f64| {
            if load.along(&line, outside) <= 1.0 {
                return outside;
            }
            for _ in 0..60 {
                let mid = 0.5 * (inside + outside);
                if load.along(&line, mid) <= 1.0 {
                    inside = mid;
                } else {
                    outside = mid;
                }
            }
            inside
        };
        let (lo, hi) = (edge(0.0, lo.max(-1e3)), edge(0.0, hi.min(1e3)));
        let t = lo + (hi - lo) * rng.random::<f64>();
        for i in 0..n {
            w[i] = (w[i] + t * u[i]).max(0.0);
        }
    }
}

fn local_truth<R: Rng>(
    scenario: Scenario,
    spec: ModelSpec,
    settings: &GeneratorSettings,
    rng: &mut R,
) -> mbp_core::Result<ParamVector> {
    let (kk, m, d) = (spec.locations(), spec.categories(), spec.depth());
    let mut beta = ParamVector::zeros(spec);
    let total = 1.0 - settings.slack;
    for k in 0..kk {
        let mut base: Vec<f64> = (0..m).map(|_| rng.random::<f64>()).collect();
        // (l, q, p) -> curve over lags
        let mut curves: Vec<((usize, usize, usize), Vec<f64>)> = Vec::new();
        for l in 0..kk {
            if l.abs_diff(k) > settings.locality_radius {
                continue;
            }
            for q in 0..=m {
                for p in 1..=m {
                    if !allowed(scenario, q, p) {
                        continue;
                    }
                    let raw: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
                    let curve = shape_project(&raw).into_iter().map(|v| v.max(0.0)).collect();
                    curves.push(((l, q, p), curve));
                }
            }
        }
        // upper-constraint load: sum over (l, s) of max_q sum_p beta(p, q)
        let mut load = 0.0;
        for l in 0..kk {
            for s in 0..d {
                let mut per_q = vec![0.0; m + 1];
                for ((cl, q, _), c) in &curves {
                    if *cl == l {
                        per_q[*q] += c[s];
                    }
                }
                load += per_q.iter().cloned().fold(0.0, f64::max);
            }
        }
        let base_sum: f64 = base.iter().sum();
        let (base_scale, inter_scale) = match settings.baseline_share {
            Some([lo, hi]) => {
                let share = lo + (hi - lo) * rng.random::<f64>();
                let inter = if load > 0.0 { (1.0 - share) * total / load } else { 0.0 };
                let share = if load > 0.0 { share } else { 1.0 };
                (share * total / base_sum.max(f64::MIN_POSITIVE), inter)
            }
            None => {
                let s = total / (base_sum + load).max(f64::MIN_POSITIVE);
                (s, s)
            }
        };
        base.iter_mut().for_each(|b| *b *= base_scale);
        for (p, &b) in base.iter().enumerate() {
            beta.set(Coord::Baseline { k, p: p + 1 }, b)?;
        }
        for ((l, q, p), c) in curves {
            for (s, v) in c.into_iter().enumerate() {
                beta.set(Coord::Interaction { k, l, s: s + 1, q, p }, v * inter_scale)?;
            }
        }
    }
    Ok(beta)
}

fn network_truth<R: Rng>(spec: ModelSpec, settings: &GeneratorSettings, rng: &mut R) -> mbp_core::Result<ParamVector> {
    if spec.locations() != NETWORK_NODES || spec.categories() != 1 {
        return Err(mbp_core::Error::Input(format!(
            "network scenario needs K = {NETWORK_NODES} and M = 1, got K = {} and M = {}",
            spec.locations(),
            spec.categories()
        )));
    }
    let d = spec.depth();
    let mut beta = ParamVector::zeros(spec);
    for k in 0..NETWORK_NODES {
        beta.set(Coord::Baseline { k, p: 1 }, settings.baseline_max * rng.random::<f64>())?;
    }
    for &(l, k) in &NETWORK_EDGES {
        let tau = rng.random_range(1..=d.max(1)) as f64;
        let sign = if (l, k) == NEGATIVE_EDGE { -1.0 } else { 1.0 };
        for s in 1..=d {
            let v = sign * settings.edge_height * (-0.25 * (s as f64 - tau).powi(2)).exp();
            beta.set(Coord::Interaction { k, l, s, q: 1, p: 1 }, v)?;
        }
    }
    // a negative in-edge must not push the intensity below zero
    for k in 0..NETWORK_NODES {
        let mut negative = 0.0;
        for l in 0..NETWORK_NODES {
            for s in 1..=d {
                negative += beta.get(Coord::Interaction { k, l, s, q: 1, p: 1 })?.min(0.0);
            }
        }
        if negative < 0.0 {
            let b = beta.get(Coord::Baseline { k, p: 1 })?;
            beta.set(Coord::Baseline { k, p: 1 }, b - negative)?;
        }
    }
    Ok(beta)
}

/// The set every generated parameter vector lies in (at `rho = 0`).
pub fn truth_atoms(scenario: Scenario, spec: &ModelSpec, settings: &GeneratorSettings) -> Vec<Atom> {
    let mut atoms = vec![Atom::BasicPolytope { rho: 0.0 }];
    match scenario {
        Scenario::Network => {
            atoms.push(Atom::GroundMask);
            atoms.push(Atom::ZeroMask {
                slots: edge_mask(spec, &NETWORK_EDGES),
            });
        }
        _ => {
            atoms.push(Atom::LocalityMask {
                radius: settings.locality_radius,
            });
            atoms.push(Atom::ShapeMonotoneConvex);
            atoms.push(Atom::NonnegativeInteractions);
            atoms.extend(scenario_mask(scenario, spec));
        }
    }
    atoms
}

fn scenario_mask(scenario: Scenario, spec: &ModelSpec) -> Option<Atom> {
    match scenario {
        Scenario::SingleState | Scenario::Network => Some(Atom::GroundMask),
        Scenario::SameCategory => Some(Atom::ZeroMask {
            slots: same_category_mask(spec),
        }),
        Scenario::OrderedCategory => {
            let mut slots = ordered_category_mask(spec);
            slots.extend(ground_slots(spec));
            slots.sort_unstable();
            slots.dedup();
            Some(Atom::ZeroMask { slots })
        }
    }
}

fn ground_slots(spec: &ModelSpec) -> Vec<usize> {
    let mut out = Vec::new();
    for k in 0..spec.locations() {
        for l in 0..spec.locations() {
            for s in 1..=spec.depth() {
                for p in 1..=spec.categories() {
                    out.push(spec.slot(k, spec.reduced_index(l, s, 0), p));
                }
            }
        }
    }
    out
}

/// Default estimation set: the basic polytope plus the scenario's structural
/// zeros. `known_graph` adds the edge mask in the network scenario.
pub fn estimation_atoms(scenario: Scenario, spec: &ModelSpec, known_graph: bool) -> Vec<Atom> {
    let mut atoms = vec![Atom::BasicPolytope { rho: 0.0 }];
    atoms.extend(scenario_mask(scenario, spec));
    if scenario == Scenario::Network && known_graph {
        atoms.push(Atom::ZeroMask {
            slots: edge_mask(spec, &NETWORK_EDGES),
        });
    }
    atoms
}

pub fn truth_set(scenario: Scenario, spec: ModelSpec, settings: &GeneratorSettings) -> mbp_core::Result<FeasibleSet> {
    FeasibleSet::new(spec, truth_atoms(scenario, &spec, settings))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn check(scenario: Scenario, spec: ModelSpec, settings: GeneratorSettings) {
        let set = truth_set(scenario, spec, &settings).unwrap();
        for seed in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let beta = generate_truth(scenario, spec, &settings, &mut rng).unwrap();
            let rep = set.check_feasible(&beta, 1e-12);
            assert!(rep.feasible, "{scenario:?} seed {seed}: {:?}", rep.violations);
        }
    }

    #[test]
    fn generators_are_feasible() {
        let s = GeneratorSettings::default();
        check(Scenario::SingleState, ModelSpec::single_state(5, 4).unwrap(), s);
        let m2 = ModelSpec::new(4, 2, 3, mbp_core::Link::Identity).unwrap();
        check(Scenario::SameCategory, m2, s);
        check(Scenario::OrderedCategory, m2, s);
        check(Scenario::Network, ModelSpec::single_state(8, 6).unwrap(), s);
        let u = GeneratorSettings {
            method: GeneratorMethod::UniformPolytope,
            ..s
        };
        check(Scenario::SameCategory, m2, u);
        check(Scenario::OrderedCategory, m2, u);
        let r = GeneratorSettings {
            method: GeneratorMethod::Rescaled,
            ..s
        };
        check(Scenario::SingleState, ModelSpec::single_state(5, 4).unwrap(), r);
        check(Scenario::SameCategory, m2, r);
        check(Scenario::OrderedCategory, m2, r);
        let flat = GeneratorSettings {
            baseline_share: None,
            ..r
        };
        check(Scenario::SingleState, ModelSpec::single_state(3, 2).unwrap(), flat);
    }

    #[test]
    fn generators_have_unit_mass() {
        for g in cone_generators(6) {
            assert!((g.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(mbp_core::constraints::shape_violation(&g) < 1e-15);
        }
    }

    #[test]
    fn uniform_block_totals() {
        // the block total of a flat Dirichlet with n parts and one slack part
        // is Beta(n, 1), with mean n / (n + 1)
        let spec = ModelSpec::single_state(1, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 1 + 3;
        let reps = 4000;
        let mean: f64 = (0..reps)
            .map(|_| {
                let b = generate_truth(Scenario::SingleState, spec, &GeneratorSettings::default(), &mut rng).unwrap();
                b.values().iter().sum::<f64>()
            })
            .sum::<f64>()
            / reps as f64;
        let want = n as f64 / (n as f64 + 1.0);
        // sd of Beta(4, 1) is about 0.163
        assert!((mean - want).abs() < 4.0 * 0.163 / (reps as f64).sqrt(), "{mean} vs {want}");
    }

    #[test]
    fn hit_and_run_matches_rejection() {
        // K = 1, M = 2, d = 1: {b1 + b2 + max(c11, c22) <= 1, all >= 0}
        let spec = ModelSpec::new(1, 2, 1, mbp_core::Link::Identity).unwrap();
        let settings = GeneratorSettings {
            method: GeneratorMethod::UniformPolytope,
            ..GeneratorSettings::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let reps = 6000;
        let (mut base, mut inter) = (0.0, 0.0);
        for _ in 0..reps {
            let b = generate_truth(Scenario::SameCategory, spec, &settings, &mut rng).unwrap();
            base += b.get(Coord::Baseline { k: 0, p: 1 }).unwrap();
            inter += b.get(Coord::Interaction { k: 0, l: 0, s: 1, q: 1, p: 1 }).unwrap();
        }
        let (mut rb, mut ri, mut acc) = (0.0, 0.0, 0usize);
        while acc < 200_000 {
            let x: [f64; 4] = rng.random();
            if x[0] + x[1] + x[2].max(x[3]) <= 1.0 {
                rb += x[0];
                ri += x[2];
                acc += 1;
            }
        }
        let (rb, ri) = (rb / acc as f64, ri / acc as f64);
        let tol = 4.0 * 0.25 / (reps as f64).sqrt();
        assert!((base / reps as f64 - rb).abs() < tol, "{} vs {rb}", base / reps as f64);
        assert!((inter / reps as f64 - ri).abs() < tol, "{} vs {ri}", inter / reps as f64);
    }

    #[test]
    fn upper_slack_is_exact() {
        let spec = ModelSpec::single_state(4, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let settings = GeneratorSettings {
            method: GeneratorMethod::Rescaled,
            ..GeneratorSettings::default()
        };
        let beta = generate_truth(Scenario::SingleState, spec, &settings, &mut rng).unwrap();
        for k in 0..4 {
            let sum: f64 = beta.block(k).iter().sum();
            assert!((sum - 0.95).abs() < 1e-12);
        }
    }

    #[test]
    fn network_edges_only() {
        let spec = ModelSpec::single_state(8, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let beta = generate_truth(Scenario::Network, spec, &GeneratorSettings::default(), &mut rng).unwrap();
        for k in 0..8 {
            for l in 0..8 {
                let peak = (1..=5)
                    .map(|s| beta.get(Coord::Interaction { k, l, s, q: 1, p: 1 }).unwrap().abs())
                    .fold(0.0, f64::max);
                let edge = NETWORK_EDGES.contains(&(l, k));
                assert_eq!(peak > 0.0, edge, "{l} -> {k}");
                if edge {
                    assert!((peak - 0.05).abs() < 1e-12);
                }
            }
        }
        assert!(beta.get(Coord::Interaction { k: 7, l: 0, s: 1, q: 1, p: 1 }).unwrap() < 0.0);
    }
}
