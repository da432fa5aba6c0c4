//! Process parameterization: model dimensions, the flat parameter layout,
//! categorical state encoding, and link functions.
//!
//! Locations `k`, `l` are 0-based. Categories `p` run over `1..=M`, states
//! `q` over `0..=M` (0 is the ground state, "no event") and lags `s` over
//! `1..=d`.
//!
//! The flat layout is location-major. Inside the block of location `k` the
//! entries form an `r x M` row-major matrix, `r = 1 + d*K*(M+1)`: row 0 holds
//! the baselines `beta_k(p)`, row `1 + (l*d + s-1)*(M+1) + q` holds the
//! interactions `beta^s_{kl}(p, q)` for `p = 1..=M`. A row index is called a
//! *reduced* coordinate; the feature vector of every `(k, p)` sub-problem
//! lives in this reduced space.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance used when checking that probabilities stay inside `[0, 1]`.
pub const PROB_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Link {
    /// Probabilities are the linear index itself.
    Identity,
    /// `exp(z) / (1 + exp(z))`, single category only.
    SigmoidSingleState,
    /// Softmax over the `M` category scores with the ground score fixed to 0.
    LogisticMultiState,
}

impl Link {
    pub fn is_linear(self) -> bool {
        matches!(self, Link::Identity)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "SpecFields", into = "SpecFields")]
pub struct ModelSpec {
    locations: usize,
    categories: usize,
    depth: usize,
    link: Link,
}

#[derive(Serialize, Deserialize)]
struct SpecFields {
    locations: usize,
    categories: usize,
    depth: usize,
    link: Link,
}

impl TryFrom<SpecFields> for ModelSpec {
    type Error = Error;
    fn try_from(f: SpecFields) -> Result<Self> {
        ModelSpec::new(f.locations, f.categories, f.depth, f.link)
    }
}

impl From<ModelSpec> for SpecFields {
    fn from(s: ModelSpec) -> Self {
        SpecFields {
            locations: s.locations,
            categories: s.categories,
            depth: s.depth,
            link: s.link,
        }
    }
}

/// Semantic coordinate of one parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Coord {
    Baseline { k: usize, p: usize },
    Interaction { k: usize, l: usize, s: usize, q: usize, p: usize },
}

impl ModelSpec {
    pub fn new(locations: usize, categories: usize, depth: usize, link: Link) -> Result<Self> {
        if locations == 0 {
            return Err(Error::range("K", 0, ">= 1"));
        }
        if categories == 0 || categories > u8::MAX as usize {
            return Err(Error::range("M", categories, "1..=255"));
        }
        if link == Link::SigmoidSingleState && categories != 1 {
            return Err(Error::Input(format!(
                "sigmoid link requires M = 1, got M = {categories}"
            )));
        }
        Ok(ModelSpec {
            locations,
            categories,
            depth,
            link,
        })
    }

    /// Single-state identity-link model.
    pub fn single_state(locations: usize, depth: usize) -> Result<Self> {
        Self::new(locations, 1, depth, Link::Identity)
    }

    pub fn with_link(self, link: Link) -> Result<Self> {
        Self::new(self.locations, self.categories, self.depth, link)
    }

    pub fn with_depth(self, depth: usize) -> Self {
        ModelSpec { depth, ..self }
    }

    pub fn locations(&self) -> usize {
        self.locations
    }

    pub fn categories(&self) -> usize {
        self.categories
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn link(&self) -> Link {
        self.link
    }

    /// Total number of parameters, `K*M + d*K^2*M*(M+1)`.
    pub fn kappa(&self) -> usize {
        self.locations * self.block_len()
    }

    /// Length of the reduced feature space, `1 + d*K*(M+1)`.
    pub fn reduced_len(&self) -> usize {
        1 + self.depth * self.locations * (self.categories + 1)
    }

    /// Number of parameters owned by one location.
    pub fn block_len(&self) -> usize {
        self.reduced_len() * self.categories
    }

    /// Number of `(l, s)` interaction groups per location.
    pub fn group_count(&self) -> usize {
        self.depth * self.locations
    }

    /// Reduced coordinate of interaction `(l, s, q)`; unchecked.
    #[inline]
    pub fn reduced_index(&self, l: usize, s: usize, q: usize) -> usize {
        1 + (l * self.depth + s - 1) * (self.categories + 1) + q
    }

    /// Flat index of reduced coordinate `j`, category `p`, location `k`; unchecked.
    #[inline]
    pub fn slot(&self, k: usize, j: usize, p: usize) -> usize {
        k * self.block_len() + j * self.categories + p - 1
    }

    pub fn index(&self, coord: Coord) -> Result<usize> {
        let (k, m) = (self.locations, self.categories);
        match coord {
            Coord::Baseline { k: kk, p } => {
                self.check_loc("k", kk)?;
                self.check_cat(p)?;
                Ok(self.slot(kk, 0, p))
            }
            Coord::Interaction { k: kk, l, s, q, p } => {
                self.check_loc("k", kk)?;
                self.check_loc("l", l)?;
                if s == 0 || s > self.depth {
                    return Err(Error::range("s", s, format!("1..={}", self.depth)));
                }
                if q > m {
                    return Err(Error::range("q", q, format!("0..={m}")));
                }
                self.check_cat(p)?;
                debug_assert!(kk < k);
                Ok(self.slot(kk, self.reduced_index(l, s, q), p))
            }
        }
    }

    pub fn coord(&self, index: usize) -> Result<Coord> {
        if index >= self.kappa() {
            return Err(Error::range("index", index, format!("0..{}", self.kappa())));
        }
        let m = self.categories;
        let k = index / self.block_len();
        let local = index % self.block_len();
        let j = local / m;
        let p = local % m + 1;
        if j == 0 {
            return Ok(Coord::Baseline { k, p });
        }
        let g = (j - 1) / (m + 1);
        let q = (j - 1) % (m + 1);
        Ok(Coord::Interaction {
            k,
            l: g / self.depth,
            s: g % self.depth + 1,
            q,
            p,
        })
    }

    fn check_loc(&self, what: &'static str, v: usize) -> Result<()> {
        if v >= self.locations {
            return Err(Error::range(what, v, format!("0..{}", self.locations)));
        }
        Ok(())
    }

    fn check_cat(&self, p: usize) -> Result<()> {
        if p == 0 || p > self.categories {
            return Err(Error::range("p", p, format!("1..={}", self.categories)));
        }
        Ok(())
    }

    /// Appends the active reduced coordinates for a window of `d` rows in
    /// chronological order (last row is `t - 1`). Always `1 + d*K` entries.
    pub fn window_features(&self, window: &[u8], out: &mut Vec<usize>) {
        let (k, d) = (self.locations, self.depth);
        debug_assert_eq!(window.len(), k * d);
        out.push(0);
        for l in 0..k {
            for s in 1..=d {
                out.push(self.reduced_index(l, s, window[(d - s) * k + l] as usize));
            }
        }
    }
}

/// Observed states over times `-d+1..=N` (rows) and `K` locations (columns).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventPanel {
    spec: ModelSpec,
    horizon: usize,
    omega: Vec<u8>,
}

impl EventPanel {
    /// `omega` is row-major with `N + d` rows, the first `d` being the
    /// conditioning segment.
    pub fn new(spec: ModelSpec, horizon: usize, omega: Vec<u8>) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::Input("panel horizon N must be >= 1".into()));
        }
        let expected = (horizon + spec.depth) * spec.locations;
        if omega.len() != expected {
            return Err(Error::Input(format!(
                "panel has {} entries, expected (N + d) * K = {expected}",
                omega.len()
            )));
        }
        if let Some(pos) = omega.iter().position(|&v| v as usize > spec.categories) {
            return Err(Error::range(
                "panel entry",
                omega[pos],
                format!("0..={} (row {}, column {})", spec.categories, pos / spec.locations, pos % spec.locations),
            ));
        }
        Ok(EventPanel {
            spec,
            horizon,
            omega,
        })
    }

    pub fn zeros(spec: ModelSpec, horizon: usize) -> Result<Self> {
        Self::new(spec, horizon, vec![0; (horizon + spec.depth) * spec.locations])
    }

    /// Re-reads the same row sequence under a different memory depth. The
    /// horizon shrinks or grows so that the total number of rows is kept.
    pub fn with_depth(&self, depth: usize) -> Result<Self> {
        let rows = self.rows();
        if depth >= rows {
            return Err(Error::Input(format!(
                "depth {depth} leaves no estimation rows out of {rows}"
            )));
        }
        Self::new(self.spec.with_depth(depth), rows - depth, self.omega.clone())
    }

    /// Sub-panel of rows `start..end` (raw row indices), read with `depth`.
    pub fn slice_rows(&self, start: usize, end: usize, depth: usize) -> Result<Self> {
        if start >= end || end > self.rows() || end - start <= depth {
            return Err(Error::Input(format!(
                "invalid row range {start}..{end} for depth {depth} ({} rows)",
                self.rows()
            )));
        }
        let k = self.spec.locations;
        Self::new(
            self.spec.with_depth(depth),
            end - start - depth,
            self.omega[start * k..end * k].to_vec(),
        )
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    /// Estimation horizon `N`.
    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// Total rows `N + d`.
    pub fn rows(&self) -> usize {
        self.horizon + self.spec.depth
    }

    pub fn raw(&self) -> &[u8] {
        &self.omega
    }

    pub fn into_raw(self) -> Vec<u8> {
        self.omega
    }

    #[inline]
    fn row_index(&self, t: i64) -> usize {
        let r = t + self.spec.depth as i64 - 1;
        debug_assert!(r >= 0 && (r as usize) < self.rows(), "time {t} out of panel");
        r as usize
    }

    /// Row at time `t`, `-d+1 <= t <= N`.
    pub fn row(&self, t: i64) -> &[u8] {
        let k = self.spec.locations;
        let r = self.row_index(t);
        &self.omega[r * k..(r + 1) * k]
    }

    pub fn state(&self, t: i64, k: usize) -> u8 {
        self.row(t)[k]
    }

    /// The `d` rows preceding time `t >= 1`, oldest first.
    pub fn window(&self, t: i64) -> &[u8] {
        let k = self.spec.locations;
        let d = self.spec.depth;
        let end = self.row_index(t);
        &self.omega[(end - d) * k..end * k]
    }
}

/// Block one-hot encoding of a row of states: `K` blocks of length `M`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StateEncoding {
    categories: usize,
    bits: Vec<u8>,
}

impl StateEncoding {
    pub fn as_slice(&self) -> &[u8] {
        &self.bits
    }

    pub fn block(&self, k: usize) -> &[u8] {
        &self.bits[k * self.categories..(k + 1) * self.categories]
    }

    pub fn decode(&self) -> Vec<u8> {
        self.bits
            .chunks(self.categories)
            .map(|b| b.iter().position(|&v| v == 1).map_or(0, |p| p as u8 + 1))
            .collect()
    }
}

pub fn encode_state(row: &[u8], categories: usize) -> Result<StateEncoding> {
    let mut bits = vec![0u8; row.len() * categories];
    for (k, &q) in row.iter().enumerate() {
        let q = q as usize;
        if q > categories {
            return Err(Error::range("state", q, format!("0..={categories}")));
        }
        if q > 0 {
            bits[k * categories + q - 1] = 1;
        }
    }
    Ok(StateEncoding { categories, bits })
}

/// Flat parameter vector in the canonical layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    spec: ModelSpec,
    values: Vec<f64>,
}

impl ParamVector {
    pub fn new(spec: ModelSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != spec.kappa() {
            return Err(Error::Input(format!(
                "parameter vector has length {}, expected kappa = {}",
                values.len(),
                spec.kappa()
            )));
        }
        Ok(ParamVector { spec, values })
    }

    pub fn zeros(spec: ModelSpec) -> Self {
        ParamVector {
            spec,
            values: vec![0.0; spec.kappa()],
        }
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, coord: Coord) -> Result<f64> {
        Ok(self.values[self.spec.index(coord)?])
    }

    pub fn set(&mut self, coord: Coord, value: f64) -> Result<()> {
        let i = self.spec.index(coord)?;
        self.values[i] = value;
        Ok(())
    }

    pub fn block(&self, k: usize) -> &[f64] {
        let b = self.spec.block_len();
        &self.values[k * b..(k + 1) * b]
    }

    /// Linear index `z = eta^T beta` for a window, as a `K x M` row-major matrix.
    pub fn linear_index(&self, window: &[u8]) -> Vec<f64> {
        let spec = &self.spec;
        let m = spec.categories;
        let mut feats = Vec::with_capacity(1 + spec.group_count());
        spec.window_features(window, &mut feats);
        let mut z = vec![0.0; spec.locations * m];
        for k in 0..spec.locations {
            let block = self.block(k);
            for p in 0..m {
                z[k * m + p] = feats.iter().map(|&j| block[j * m + p]).sum();
            }
        }
        z
    }
}

/// Conditional category probabilities for every location.
#[derive(Debug, Clone, PartialEq)]
pub struct CondProbs {
    pub categories: usize,
    /// `K x M` row-major.
    pub probs: Vec<f64>,
    /// Ground-state probability per location.
    pub ground: Vec<f64>,
}

impl CondProbs {
    pub fn get(&self, k: usize, p: usize) -> f64 {
        self.probs[k * self.categories + p - 1]
    }
}

/// Applies a link to the linear index `z` (`K x M` row-major).
pub fn link_eval(link: Link, z: &[f64], categories: usize) -> Result<CondProbs> {
    let m = categories;
    if m == 0 || z.len() % m != 0 {
        return Err(Error::Input(format!(
            "linear index of length {} is not a multiple of M = {m}",
            z.len()
        )));
    }
    let kk = z.len() / m;
    let mut probs = vec![0.0; z.len()];
    let mut ground = vec![0.0; kk];
    match link {
        Link::Identity => {
            for k in 0..kk {
                let row = &z[k * m..(k + 1) * m];
                if let Some(p) = row.iter().position(|&v| !(-PROB_TOL..=1.0 + PROB_TOL).contains(&v)) {
                    return Err(Error::LinkDomain {
                        k,
                        detail: format!("category {} has linear index {} outside [0, 1]", p + 1, row[p]),
                    });
                }
                let total: f64 = row.iter().sum();
                if total > 1.0 + PROB_TOL {
                    return Err(Error::LinkDomain {
                        k,
                        detail: format!("category probabilities sum to {total} > 1"),
                    });
                }
                for p in 0..m {
                    probs[k * m + p] = row[p].clamp(0.0, 1.0);
                }
                ground[k] = (1.0 - total).clamp(0.0, 1.0);
            }
        }
        Link::SigmoidSingleState => {
            if m != 1 {
                return Err(Error::Input("sigmoid link requires M = 1".into()));
            }
            for k in 0..kk {
                let s = sigmoid(z[k]);
                probs[k] = s;
                ground[k] = sigmoid(-z[k]);
            }
        }
        Link::LogisticMultiState => {
            for k in 0..kk {
                let row = &z[k * m..(k + 1) * m];
                let g = softmax_with_ground(row, &mut probs[k * m..(k + 1) * m]);
                ground[k] = g;
            }
        }
    }
    Ok(CondProbs {
        categories: m,
        probs,
        ground,
    })
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Writes `exp(z_p) / (1 + sum_q exp(z_q))` into `out`, returns the ground
/// probability `1 / (1 + sum_q exp(z_q))`.
#[inline]
pub fn softmax_with_ground(z: &[f64], out: &mut [f64]) -> f64 {
    let shift = z.iter().fold(0.0f64, |a, &v| a.max(v));
    let g = (-shift).exp();
    let mut total = g;
    for (o, &v) in out.iter_mut().zip(z) {
        *o = (v - shift).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
    g / total
}

/// Conditional probabilities of the next row given the `d` preceding rows.
pub fn conditional_probs(beta: &ParamVector, window: &[u8]) -> Result<CondProbs> {
    let spec = beta.spec();
    if window.len() != spec.depth() * spec.locations() {
        return Err(Error::Input(format!(
            "window has {} entries, expected d * K = {}",
            window.len(),
            spec.depth() * spec.locations()
        )));
    }
    if let Some(&v) = window.iter().find(|&&v| v as usize > spec.categories()) {
        return Err(Error::range("window state", v, format!("0..={}", spec.categories())));
    }
    let z = beta.linear_index(window);
    link_eval(spec.link(), &z, spec.categories()).map_err(|e| match e {
        Error::LinkDomain { k, detail } => {
            Error::Feasibility(format!("location {k}: {detail}"))
        }
        other => other,
    })
}
