//! Replicated synthetic experiments: generate, simulate, estimate, score.

use mbp_core::estimate::{estimate_ls_stats, estimate_ml, estimate_ml_logistic};
use mbp_core::simulate::simulate;
use mbp_core::{
    Atom, EstimateResult, EventPanel, FeasibleSet, ModelSpec, ParamVector, SimConfig, SolveOptions, SuffStats,
};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{EstimatorKind, ExperimentConfig, GraphKnowledge};
use crate::scenario::{estimation_atoms, generate_truth, truth_atoms, truth_set, Scenario};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormErrors {
    pub l1: f64,
    pub l2: f64,
    pub linf: f64,
    /// Relative to the same norm of the truth; `None` when that norm is zero.
    pub rel_l1: Option<f64>,
    pub rel_l2: Option<f64>,
    pub rel_linf: Option<f64>,
}

impl NormErrors {
    pub fn between(estimate: &[f64], truth: &[f64]) -> NormErrors {
        let diff: Vec<f64> = estimate.iter().zip(truth).map(|(a, b)| a - b).collect();
        let (l1, l2, linf) = norms(&diff);
        let (t1, t2, ti) = norms(truth);
        let rel = |a: f64, b: f64| (b > 0.0).then(|| a / b);
        NormErrors {
            l1,
            l2,
            linf,
            rel_l1: rel(l1, t1),
            rel_l2: rel(l2, t2),
            rel_linf: rel(linf, ti),
        }
    }

    pub fn get(&self, norm: &str, relative: bool) -> Option<f64> {
        match (norm, relative) {
            ("l1", false) => Some(self.l1),
            ("l2", false) => Some(self.l2),
            ("linf", false) => Some(self.linf),
            ("l1", true) => self.rel_l1,
            ("l2", true) => self.rel_l2,
            ("linf", true) => self.rel_linf,
            _ => None,
        }
    }
}

fn norms(v: &[f64]) -> (f64, f64, f64) {
    let l1 = v.iter().map(|x| x.abs()).sum();
    let l2 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let linf = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    (l1, l2, linf)
}

/// Errors on the full vector and split into baselines and interactions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorMetrics {
    pub all: NormErrors,
    pub birth: NormErrors,
    pub inter: NormErrors,
}

pub const PARTS: [&str; 3] = ["all", "birth", "inter"];
pub const NORMS: [&str; 3] = ["l1", "l2", "linf"];

impl ErrorMetrics {
    pub fn compute(estimate: &ParamVector, truth: &ParamVector) -> ErrorMetrics {
        let (eb, ei) = split(estimate);
        let (tb, ti) = split(truth);
        ErrorMetrics {
            all: NormErrors::between(estimate.values(), truth.values()),
            birth: NormErrors::between(&eb, &tb),
            inter: NormErrors::between(&ei, &ti),
        }
    }

    pub fn part(&self, part: &str) -> &NormErrors {
        match part {
            "birth" => &self.birth,
            "inter" => &self.inter,
            _ => &self.all,
        }
    }
}

/// `(baselines, interactions)` in flat order.
pub fn split(beta: &ParamVector) -> (Vec<f64>, Vec<f64>) {
    let spec = beta.spec();
    let (m, b) = (spec.categories(), spec.block_len());
    let mut birth = Vec::with_capacity(spec.locations() * m);
    let mut inter = Vec::with_capacity(spec.kappa() - spec.locations() * m);
    for (i, &v) in beta.values().iter().enumerate() {
        if i % b < m {
            birth.push(v);
        } else {
            inter.push(v);
        }
    }
    (birth, inter)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub replication: usize,
    pub seed: u64,
    pub estimator: String,
    /// Estimation-set variant: `default`, `known_graph` or `custom`.
    pub set: String,
    pub metrics: Option<ErrorMetrics>,
    pub iterations: usize,
    pub converged: bool,
    pub error: Option<String>,
}

/// `max_s |beta^s_{kl}|` for every pair and the edge set read off at the
/// largest gap of their sorted values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportRecord {
    pub replication: usize,
    pub estimator: String,
    /// Row-major `K x K`, entry `(k, l)` for the interaction `l -> k`.
    pub peaks: Vec<f64>,
    pub threshold: f64,
    /// Recovered edges `(l, k)`, sorted.
    pub recovered: Vec<(usize, usize)>,
    pub exact: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub estimator: String,
    pub set: String,
    pub part: String,
    pub norm: String,
    pub mean_abs: f64,
    pub mean_rel: Option<f64>,
    pub count: usize,
}

/// Everything needed to write the reports of one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bundle {
    pub schema_version: u32,
    pub scenario: Scenario,
    pub spec: ModelSpec,
    pub horizon: usize,
    pub replications: usize,
    pub seed: u64,
    pub records: Vec<Record>,
    pub summary: Vec<SummaryRow>,
    pub support: Vec<SupportRecord>,
    /// Truth and estimates of the first replication, for figures.
    pub example: Option<Example>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub truth: Vec<f64>,
    /// `(estimator/set label, estimate)`.
    pub estimates: Vec<(String, Vec<f64>)>,
}

impl Bundle {
    pub fn empty(spec: ModelSpec, scenario: Scenario) -> Bundle {
        Bundle {
            schema_version: crate::config::SCHEMA_VERSION,
            scenario,
            spec,
            horizon: 0,
            replications: 0,
            seed: 0,
            records: Vec::new(),
            summary: Vec::new(),
            support: Vec::new(),
            example: None,
        }
    }

    pub fn mean(&self, estimator: &str, set: &str, part: &str, norm: &str, relative: bool) -> Option<f64> {
        let row = self
            .summary
            .iter()
            .find(|r| r.estimator == estimator && r.set == set && r.part == part && r.norm == norm)?;
        if relative {
            row.mean_rel
        } else {
            Some(row.mean_abs)
        }
    }
}

/// Seed of replication `i`, independent across replications.
pub fn replication_seed(master: u64, i: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(i as u64 + 1);
    rng.next_u64()
}

/// Largest gap of the sorted values; the threshold is its midpoint.
pub fn largest_gap_threshold(values: &[f64]) -> f64 {
    let mut v: Vec<f64> = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mut best = (f64::NEG_INFINITY, f64::INFINITY);
    for w in v.windows(2) {
        let gap = w[1] - w[0];
        if gap > best.0 {
            best = (gap, 0.5 * (w[0] + w[1]));
        }
    }
    best.1
}

fn peaks(beta: &ParamVector) -> Vec<f64> {
    let spec = beta.spec();
    let kk = spec.locations();
    let mut out = vec![0.0; kk * kk];
    for k in 0..kk {
        for l in 0..kk {
            let mut m = 0.0f64;
            for s in 1..=spec.depth() {
                for q in 0..=spec.categories() {
                    for p in 1..=spec.categories() {
                        let i = spec.slot(k, spec.reduced_index(l, s, q), p);
                        m = m.max(beta.values()[i].abs());
                    }
                }
            }
            out[k * kk + l] = m;
        }
    }
    out
}

pub fn support_record(replication: usize, estimator: &str, beta: &ParamVector) -> SupportRecord {
    let kk = beta.spec().locations();
    let peaks = peaks(beta);
    let threshold = largest_gap_threshold(&peaks);
    let mut recovered: Vec<(usize, usize)> = (0..kk * kk)
        .filter(|&i| peaks[i] > threshold)
        .map(|i| (i % kk, i / kk))
        .collect();
    recovered.sort_unstable();
    let mut truth: Vec<(usize, usize)> = crate::scenario::NETWORK_EDGES.to_vec();
    truth.sort_unstable();
    SupportRecord {
        replication,
        estimator: estimator.to_string(),
        peaks,
        threshold,
        exact: recovered == truth,
        recovered,
    }
}

struct Variant {
    name: &'static str,
    set: FeasibleSet,
}

fn variants(cfg: &ExperimentConfig, spec: ModelSpec) -> anyhow::Result<Vec<Variant>> {
    if let Some(atoms) = &cfg.estimation.atoms {
        return Ok(vec![Variant {
            name: "custom",
            set: FeasibleSet::new(spec, atoms.clone())?,
        }]);
    }
    let make = |known: bool| -> anyhow::Result<FeasibleSet> {
        let atoms = if cfg.estimation.structured {
            let mut a = truth_atoms(cfg.scenario, &spec, &cfg.generator);
            if known {
                a.extend(estimation_atoms(cfg.scenario, &spec, true).into_iter().skip(1));
            }
            a
        } else {
            estimation_atoms(cfg.scenario, &spec, known)
        };
        Ok(FeasibleSet::new(spec, atoms)?)
    };
    let mut out = Vec::new();
    if cfg.estimation.graph != GraphKnowledge::Known {
        out.push(Variant {
            name: "default",
            set: make(false)?,
        });
    }
    if cfg.scenario == Scenario::Network && cfg.estimation.graph != GraphKnowledge::Unknown {
        out.push(Variant {
            name: "known_graph",
            set: make(true)?,
        });
    }
    Ok(out)
}

struct ReplicationOutput {
    records: Vec<Record>,
    support: Vec<SupportRecord>,
    example: Example,
}

/// `stats` must be the statistics of `panel`; only least squares reads them.
pub fn run_estimator(
    kind: EstimatorKind,
    panel: &EventPanel,
    stats: &SuffStats,
    set: &FeasibleSet,
    opts: &SolveOptions,
) -> mbp_core::Result<EstimateResult> {
    match kind {
        EstimatorKind::Ls => estimate_ls_stats(stats, set, opts),
        EstimatorKind::Ml => estimate_ml(panel, set, opts),
        EstimatorKind::MlLogistic => estimate_ml_logistic(panel, set, opts),
    }
}

fn replicate(cfg: &ExperimentConfig, spec: ModelSpec, variants: &[Variant], i: usize) -> ReplicationOutput {
    let seed = replication_seed(cfg.seed, i);
    let mut records = Vec::new();
    let mut support = Vec::new();
    let mut example = Example {
        truth: Vec::new(),
        estimates: Vec::new(),
    };
    let fail = |records: &mut Vec<Record>, msg: String| {
        for v in variants {
            for &kind in &cfg.estimators {
                records.push(Record {
                    replication: i,
                    seed,
                    estimator: kind.name().into(),
                    set: v.name.into(),
                    metrics: None,
                    iterations: 0,
                    converged: false,
                    error: Some(msg.clone()),
                });
            }
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let truth = match generate_truth(cfg.scenario, spec, &cfg.generator, &mut rng) {
        Ok(t) => t,
        Err(e) => {
            fail(&mut records, format!("generator: {e}"));
            return ReplicationOutput { records, support, example };
        }
    };
    example.truth = truth.values().to_vec();
    let sim_seed = rng.next_u64();
    let panel = match simulate(&truth, &SimConfig::new(cfg.horizon, sim_seed)).and_then(|p| {
        let s = SuffStats::accumulate(&p)?;
        Ok((p, s))
    }) {
        Ok(p) => p,
        Err(e) => {
            fail(&mut records, format!("simulation: {e}"));
            return ReplicationOutput { records, support, example };
        }
    };
    let (panel, stats) = panel;
    for v in variants {
        for &kind in &cfg.estimators {
            let mut rec = Record {
                replication: i,
                seed,
                estimator: kind.name().into(),
                set: v.name.into(),
                metrics: None,
                iterations: 0,
                converged: false,
                error: None,
            };
            match run_estimator(kind, &panel, &stats, &v.set, &cfg.solver) {
                Ok(res) => {
                    rec.iterations = res.iterations;
                    rec.converged = res.converged();
                    if kind != EstimatorKind::MlLogistic {
                        rec.metrics = Some(ErrorMetrics::compute(&res.beta_hat, &truth));
                    }
                    if cfg.scenario == Scenario::Network && v.name == "default" {
                        support.push(support_record(i, kind.name(), &res.beta_hat));
                    }
                    example
                        .estimates
                        .push((format!("{}/{}", kind.name(), v.name), res.beta_hat.into_values()));
                }
                Err(e) => rec.error = Some(e.to_string()),
            }
            records.push(rec);
        }
    }
    ReplicationOutput { records, support, example }
}

/// Runs every replication (in parallel) and assembles the bundle in
/// replication order.
pub fn run_experiment(cfg: &ExperimentConfig) -> anyhow::Result<Bundle> {
    cfg.validate()?;
    let spec = cfg.spec()?;
    truth_set(cfg.scenario, spec, &cfg.generator)?;
    let variants = variants(cfg, spec)?;
    let outputs: Vec<ReplicationOutput> = (0..cfg.replications)
        .into_par_iter()
        .map(|i| replicate(cfg, spec, &variants, i))
        .collect();
    let mut bundle = Bundle::empty(spec, cfg.scenario);
    bundle.horizon = cfg.horizon;
    bundle.replications = cfg.replications;
    bundle.seed = cfg.seed;
    for (i, out) in outputs.into_iter().enumerate() {
        bundle.records.extend(out.records);
        bundle.support.extend(out.support);
        if i == 0 {
            bundle.example = Some(out.example);
        }
    }
    bundle.summary = summarize(&bundle.records);
    Ok(bundle)
}

/// Means over replications that produced metrics, per estimator, set, part and norm.
pub fn summarize(records: &[Record]) -> Vec<SummaryRow> {
    let mut keys: Vec<(String, String)> = Vec::new();
    for r in records {
        let key = (r.estimator.clone(), r.set.clone());
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    let mut rows = Vec::new();
    for (est, set) in keys {
        let ms: Vec<&ErrorMetrics> = records
            .iter()
            .filter(|r| r.estimator == est && r.set == set)
            .filter_map(|r| r.metrics.as_ref())
            .collect();
        if ms.is_empty() {
            continue;
        }
        for part in PARTS {
            for norm in NORMS {
                let abs: Vec<f64> = ms.iter().filter_map(|m| m.part(part).get(norm, false)).collect();
                let rel: Vec<f64> = ms.iter().filter_map(|m| m.part(part).get(norm, true)).collect();
                rows.push(SummaryRow {
                    estimator: est.clone(),
                    set: set.clone(),
                    part: part.into(),
                    norm: norm.into(),
                    mean_abs: abs.iter().sum::<f64>() / abs.len() as f64,
                    mean_rel: (!rel.is_empty()).then(|| rel.iter().sum::<f64>() / rel.len() as f64),
                    count: ms.len(),
                });
            }
        }
    }
    rows
}

/// Atoms of the estimation sets a config will use, for reporting.
pub fn estimation_sets(cfg: &ExperimentConfig) -> anyhow::Result<Vec<(String, Vec<Atom>)>> {
    let spec = cfg.spec()?;
    Ok(variants(cfg, spec)?
        .into_iter()
        .map(|v| (v.name.to_string(), v.set.atoms().to_vec()))
        .collect())
}
