//! Memory-depth selection by held-out frequency prediction.
//!
//! For each candidate depth the model is fitted on the leading part of the
//! sequence, a synthetic continuation as long as the held-out part is
//! simulated from the fit, and the candidate is scored by the l1 distance
//! between the per-location, per-category event frequencies of the
//! synthetic and held-out sequences. This is one reading of "predict the
//! frequencies"; the score is not a likelihood.

use anyhow::{ensure, Result};
use mbp_core::simulate::{frequency_report, simulate};
use mbp_core::{Atom, EventPanel, FeasibleSet, SimConfig, SolveOptions, SuffStats};
use serde::{Deserialize, Serialize};

use crate::config::EstimatorKind;
use crate::experiment::run_estimator;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvOptions {
    pub candidates: Vec<usize>,
    pub estimator: EstimatorKind,
    /// Share of the rows used for fitting.
    pub split_fraction: f64,
    pub seed: u64,
    /// Estimation set, applied at every candidate depth.
    pub atoms: Vec<Atom>,
    pub solver: SolveOptions,
}

impl CvOptions {
    pub fn new(candidates: Vec<usize>, seed: u64) -> Self {
        CvOptions {
            candidates,
            estimator: EstimatorKind::Ls,
            split_fraction: 0.5,
            seed,
            atoms: vec![Atom::BasicPolytope { rho: 0.0 }, Atom::GroundMask],
            solver: SolveOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvScore {
    pub depth: usize,
    /// `f64::INFINITY` when the candidate failed.
    pub score: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub chosen: usize,
    /// Scores within this distance of the best count as ties.
    pub tie_band: f64,
    pub scores: Vec<CvScore>,
    pub train_rows: usize,
    pub test_rows: usize,
}

fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

fn score_depth(panel: &EventPanel, d: usize, train: usize, held_freq: &[f64], opts: &CvOptions) -> Result<f64> {
    let fit_panel = panel.slice_rows(0, train, d)?;
    let stats = SuffStats::accumulate(&fit_panel)?;
    let set = FeasibleSet::new(*fit_panel.spec(), opts.atoms.clone())?;
    let fit = run_estimator(opts.estimator, &fit_panel, &stats, &set, &opts.solver)?;
    let kk = panel.spec().locations();
    // continue from the last d rows of the fitting part
    let window = panel.raw()[(train - d) * kk..train * kk].to_vec();
    let test = panel.rows() - train;
    let syn = simulate(&fit.beta_hat, &SimConfig::new(test, opts.seed).with_initial_window(window))?;
    Ok(l1(&frequency_report(&syn), held_freq))
}

/// Sampling scale of the score: the sum over entries of the standard error
/// `sqrt(f (1 - f) / n)` of a held-out frequency. Scores closer to the best
/// than this cannot be told apart from it.
fn sampling_scale(freq: &[f64], n: usize) -> f64 {
    freq.iter().map(|f| (f * (1.0 - f) / n as f64).sqrt()).sum()
}

/// Scores every candidate and returns the smallest depth whose score is
/// within one sampling scale of the best, so that statistical ties go to the
/// smaller depth.
/// The panel's own depth is ignored; all of its rows form the sequence.
pub fn cross_validate_depth(panel: &EventPanel, opts: &CvOptions) -> Result<CvResult> {
    ensure!(!opts.candidates.is_empty(), "at least one candidate depth is required");
    ensure!(
        opts.split_fraction > 0.0 && opts.split_fraction < 1.0,
        "split_fraction must lie in (0, 1), got {}",
        opts.split_fraction
    );
    let mut candidates = opts.candidates.clone();
    candidates.sort_unstable();
    candidates.dedup();
    let rows = panel.rows();
    let train = (rows as f64 * opts.split_fraction).floor() as usize;
    ensure!(train >= 1 && train < rows, "split leaves an empty part ({rows} rows)");
    let held = panel.slice_rows(train, rows, 0)?;
    let held_freq = frequency_report(&held);

    let mut scores = Vec::with_capacity(candidates.len());
    for &d in &candidates {
        let (score, error) = match score_depth(panel, d, train, &held_freq, opts) {
            Ok(s) => (s, None),
            Err(e) => (f64::INFINITY, Some(format!("{e:#}"))),
        };
        scores.push(CvScore { depth: d, score, error });
    }
    let best = scores.iter().map(|s| s.score).fold(f64::INFINITY, f64::min);
    let tie_band = sampling_scale(&held_freq, rows - train);
    // candidates are sorted, so the first one inside the band is the smallest
    let chosen = scores
        .iter()
        .find(|s| s.score <= best + tie_band)
        .map_or(candidates[0], |s| s.depth);
    Ok(CvResult {
        chosen,
        tie_band,
        scores,
        train_rows: train,
        test_rows: rows - train,
    })
}
