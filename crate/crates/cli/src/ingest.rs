//! Event CSV ingestion onto a space-time grid.
//!
//! Input rows are `timestamp,lat,lon,category` with a header. Timestamps
//! are ISO-8601 (with or without offset; naive times are UTC) or epoch
//! seconds. Each event lands in one (time bin, cell) slot; when several
//! events share a slot the earliest one is kept and the rest are counted
//! as collisions.

use std::collections::HashMap;
use std::path::Path;

use anyhow::{anyhow, bail, ensure, Context, Result};
use chrono::{DateTime, NaiveDate, NaiveDateTime};
use mbp_core::{EventPanel, Link, ModelSpec};
use serde::{Deserialize, Serialize};

pub const COLUMNS: [&str; 4] = ["timestamp", "lat", "lon", "category"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
    /// Cells are numbered row-major from (`lat_min`, `lon_min`):
    /// `k = row * cols + col`.
    pub rows: usize,
    pub cols: usize,
    pub bin_seconds: f64,
    /// Category names; the i-th name gets id `i + 1`.
    pub categories: Vec<String>,
    /// Start of the first bin. Defaults to the earliest event.
    #[serde(default)]
    pub start: Option<String>,
    /// Exclusive end of the time window. Defaults to just past the latest
    /// event.
    #[serde(default)]
    pub end: Option<String>,
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.rows >= 1 && self.cols >= 1, "grid needs rows, cols >= 1");
        ensure!(
            self.lat_min < self.lat_max && self.lon_min < self.lon_max,
            "grid box must have lat_min < lat_max and lon_min < lon_max"
        );
        ensure!(
            self.bin_seconds.is_finite() && self.bin_seconds > 0.0,
            "bin_seconds must be positive, got {}",
            self.bin_seconds
        );
        ensure!(!self.categories.is_empty(), "category dictionary is empty");
        ensure!(self.categories.len() <= u8::MAX as usize, "at most 255 categories");
        let mut seen = std::collections::HashSet::new();
        for c in &self.categories {
            ensure!(seen.insert(c.as_str()), "category {c:?} listed twice");
        }
        Ok(())
    }

    pub fn locations(&self) -> usize {
        self.rows * self.cols
    }

    /// Cell of a point inside the closed box, `None` outside.
    pub fn cell(&self, lat: f64, lon: f64) -> Option<usize> {
        if !(self.lat_min..=self.lat_max).contains(&lat) || !(self.lon_min..=self.lon_max).contains(&lon) {
            return None;
        }
        let frac = |v: f64, lo: f64, hi: f64, n: usize| (((v - lo) / (hi - lo) * n as f64) as usize).min(n - 1);
        let r = frac(lat, self.lat_min, self.lat_max, self.rows);
        let c = frac(lon, self.lon_min, self.lon_max, self.cols);
        Some(r * self.cols + c)
    }

    /// Center of cell `k`, as `(lat, lon)`.
    pub fn cell_center(&self, k: usize) -> (f64, f64) {
        let (r, c) = (k / self.cols, k % self.cols);
        let lat = self.lat_min + (r as f64 + 0.5) * (self.lat_max - self.lat_min) / self.rows as f64;
        let lon = self.lon_min + (c as f64 + 0.5) * (self.lon_max - self.lon_min) / self.cols as f64;
        (lat, lon)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinningReport {
    pub total: usize,
    pub kept: usize,
    pub collisions: usize,
    pub out_of_box: usize,
    pub horizon: usize,
}

/// Parses ISO-8601 or epoch seconds into (fractional) epoch seconds.
pub fn parse_timestamp(text: &str) -> Result<f64> {
    let t = text.trim();
    if let Ok(v) = t.parse::<f64>() {
        ensure!(v.is_finite(), "timestamp {t:?} is not finite");
        return Ok(v);
    }
    let micros = |dt: NaiveDateTime| dt.and_utc().timestamp_micros() as f64 * 1e-6;
    if let Ok(dt) = DateTime::parse_from_rfc3339(t) {
        return Ok(dt.timestamp_micros() as f64 * 1e-6);
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f", "%Y-%m-%dT%H:%M"] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(t, fmt) {
            return Ok(micros(dt));
        }
    }
    if let Ok(d) = NaiveDate::parse_from_str(t, "%Y-%m-%d") {
        return Ok(micros(d.and_hms_opt(0, 0, 0).unwrap()));
    }
    bail!("unrecognized timestamp {t:?} (expected ISO-8601 or epoch seconds)")
}

struct Event {
    time: f64,
    cell: usize,
    category: u8,
}

/// Reads events from any CSV source. The panel has depth 0 and one row per
/// time bin; re-read it under a depth with [`EventPanel::with_depth`].
pub fn ingest_reader<R: std::io::Read>(reader: R, grid: &GridSpec) -> Result<(EventPanel, BinningReport)> {
    grid.validate()?;
    let dict: HashMap<&str, u8> = grid
        .categories
        .iter()
        .enumerate()
        .map(|(i, c)| (c.as_str(), (i + 1) as u8))
        .collect();
    let mut csv = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = csv.headers().context("reading CSV header")?.clone();
    let names: Vec<&str> = header.iter().collect();
    ensure!(
        names == COLUMNS || (names.is_empty() && header.is_empty()),
        "CSV header must be {}, got {}",
        COLUMNS.join(","),
        names.join(",")
    );
    let mut report = BinningReport::default();
    let mut events = Vec::new();
    let mut outside_space = Vec::new();
    for rec in csv.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            anyhow!("line {line}: {e}")
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        report.total += 1;
        ensure!(rec.len() == 4, "line {line}: expected 4 fields, got {}", rec.len());
        let time = parse_timestamp(&rec[0]).with_context(|| format!("line {line}"))?;
        let num = |i: usize, what: &str| -> Result<f64> {
            rec[i]
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| anyhow!("line {line}: bad {what} {:?}", &rec[i]))
        };
        let (lat, lon) = (num(1, "lat")?, num(2, "lon")?);
        let category = *dict.get(&rec[3]).ok_or_else(|| {
            anyhow!(
                "line {line}: unknown category {:?}; known categories: {}",
                &rec[3],
                grid.categories.join(", ")
            )
        })?;
        match grid.cell(lat, lon) {
            Some(cell) => events.push(Event { time, cell, category }),
            None => outside_space.push(time),
        }
    }
    report.out_of_box = outside_space.len();

    let start = match &grid.start {
        Some(s) => parse_timestamp(s).context("grid start")?,
        None => events.iter().map(|e| e.time).fold(f64::INFINITY, f64::min),
    };
    let horizon = match &grid.end {
        Some(e) => {
            let end = parse_timestamp(e).context("grid end")?;
            ensure!(end > start, "grid end must come after start");
            ((end - start) / grid.bin_seconds).ceil() as usize
        }
        None => events
            .iter()
            .map(|e| ((e.time - start) / grid.bin_seconds).floor() as usize + 1)
            .max()
            .unwrap_or(1),
    }
    .max(1);
    report.horizon = horizon;

    // earliest event wins; ties keep file order
    events.sort_by(|a, b| a.time.total_cmp(&b.time));
    let kk = grid.locations();
    let mut omega = vec![0u8; horizon * kk];
    for e in &events {
        let offset = (e.time - start) / grid.bin_seconds;
        if offset < 0.0 || offset >= horizon as f64 {
            report.out_of_box += 1;
            continue;
        }
        let slot = offset.floor() as usize * kk + e.cell;
        if omega[slot] == 0 {
            omega[slot] = e.category;
            report.kept += 1;
        } else {
            report.collisions += 1;
        }
    }
    let spec = ModelSpec::new(kk, grid.categories.len(), 0, Link::Identity)?;
    Ok((EventPanel::new(spec, horizon, omega)?, report))
}

pub fn ingest_events(path: &Path, grid: &GridSpec) -> Result<(EventPanel, BinningReport)> {
    let f = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    ingest_reader(f, grid).with_context(|| format!("in {}", path.display()))
}
