//! Exact sampling of process paths.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::constraints::basic_violation;
use crate::error::{Error, Result};
use crate::model::{link_eval, EventPanel, Link, ParamVector, PROB_TOL};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimConfig {
    pub horizon: usize,
    pub seed: u64,
    /// `d x K` row-major, oldest row first. `None` means all-zero.
    pub initial_window: Option<Vec<u8>>,
}

impl SimConfig {
    pub fn new(horizon: usize, seed: u64) -> Self {
        SimConfig {
            horizon,
            seed,
            initial_window: None,
        }
    }

    pub fn with_initial_window(mut self, window: Vec<u8>) -> Self {
        self.initial_window = Some(window);
        self
    }
}

/// Independent generator for cell `(t, k)` of a path seeded by `base`.
fn cell_rng(base: &ChaCha8Rng, t: usize, k: usize) -> ChaCha8Rng {
    let mut rng = base.clone();
    rng.set_stream(((t as u64) << 32) | k as u64);
    rng.set_word_pos(0);
    rng
}

pub fn simulate(beta: &ParamVector, config: &SimConfig) -> Result<EventPanel> {
    let spec = *beta.spec();
    let (kk, m, d) = (spec.locations(), spec.categories(), spec.depth());
    if config.horizon == 0 {
        return Err(Error::Input("simulation horizon must be >= 1".into()));
    }
    if spec.link() == Link::Identity {
        let v = basic_violation(beta, 0.0);
        if v > PROB_TOL {
            return Err(Error::Feasibility(format!(
                "parameters violate the basic polytope by {v:.3e}"
            )));
        }
    }
    if beta.values().iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("parameters contain non-finite values".into()));
    }

    let rows = config.horizon + d;
    let mut omega = vec![0u8; rows * kk];
    if let Some(w) = &config.initial_window {
        if w.len() != d * kk {
            return Err(Error::Input(format!(
                "initial window has {} entries, expected d * K = {}",
                w.len(),
                d * kk
            )));
        }
        if let Some(&v) = w.iter().find(|&&v| v as usize > m) {
            return Err(Error::range("initial window state", v, format!("0..={m}")));
        }
        omega[..d * kk].copy_from_slice(w);
    }

    let base = ChaCha8Rng::seed_from_u64(config.seed);
    for t in 1..=config.horizon {
        let r = t + d - 1;
        let z = beta.linear_index(&omega[(r - d) * kk..r * kk]);
        let probs = link_eval(spec.link(), &z, m).map_err(|e| match e {
            Error::LinkDomain { k, detail } => Error::Numerical(format!(
                "probabilities left the simplex at t = {t}, location {k}: {detail}"
            )),
            other => other,
        })?;
        for k in 0..kk {
            let u: f64 = cell_rng(&base, t, k).random();
            let mut acc = 0.0;
            let mut state = 0u8;
            for p in 0..m {
                acc += probs.probs[k * m + p];
                if u < acc {
                    state = p as u8 + 1;
                    break;
                }
            }
            omega[r * kk + k] = state;
        }
    }
    EventPanel::new(spec, config.horizon, omega)
}

/// Per-location, per-category event frequencies over `t = 1..=N`, `K x M` row-major.
pub fn frequency_report(panel: &EventPanel) -> Vec<f64> {
    let spec = panel.spec();
    let (kk, m) = (spec.locations(), spec.categories());
    let mut counts = vec![0u64; kk * m];
    for t in 1..=panel.horizon() as i64 {
        for (k, &q) in panel.row(t).iter().enumerate() {
            if q > 0 {
                counts[k * m + q as usize - 1] += 1;
            }
        }
    }
    let n = panel.horizon() as f64;
    counts.into_iter().map(|c| c as f64 / n).collect()
}
