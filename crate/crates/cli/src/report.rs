//! Report files: CSV tables, the JSON bundle and SVG figures.
//!
//! File names are fixed, so identical bundles give identical directories.
//! Numbers are written with the shortest representation that parses back
//! to the same `f64`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use crate::experiment::{Bundle, NORMS, PARTS};
use crate::io::write_bytes;
use crate::scenario::NETWORK_EDGES;

pub const RECORDS_FILE: &str = "records.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const SUPPORT_FILE: &str = "support.csv";
pub const BUNDLE_FILE: &str = "bundle.json";

pub const RECORD_COLUMNS: [&str; 11] = [
    "replication",
    "seed",
    "estimator",
    "set",
    "part",
    "norm",
    "abs_error",
    "rel_error",
    "iterations",
    "converged",
    "error",
];
pub const SUMMARY_COLUMNS: [&str; 7] = ["estimator", "set", "part", "norm", "mean_abs", "mean_rel", "count"];
pub const SUPPORT_COLUMNS: [&str; 8] = ["replication", "estimator", "source", "target", "peak", "threshold", "edge", "recovered"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
}

fn num(v: f64) -> String {
    format!("{v}")
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

fn csv_bytes(header: &[&str], rows: &[Vec<String>]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    Ok(w.into_inner().context("flushing CSV")?)
}

/// One row per replication, estimator, set, part and norm; a failed
/// estimation gets a single row with empty metric fields.
pub fn records_csv(bundle: &Bundle) -> Result<Vec<u8>> {
    let mut rows = Vec::new();
    for r in &bundle.records {
        let base = |part: &str, norm: &str, abs: String, rel: String| {
            vec![
                r.replication.to_string(),
                r.seed.to_string(),
                r.estimator.clone(),
                r.set.clone(),
                part.to_string(),
                norm.to_string(),
                abs,
                rel,
                r.iterations.to_string(),
                r.converged.to_string(),
                r.error.clone().unwrap_or_default(),
            ]
        };
        match &r.metrics {
            Some(m) => {
                for part in PARTS {
                    for norm in NORMS {
                        let e = m.part(part);
                        rows.push(base(part, norm, opt(e.get(norm, false)), opt(e.get(norm, true))));
                    }
                }
            }
            None => rows.push(base("", "", String::new(), String::new())),
        }
    }
    csv_bytes(&RECORD_COLUMNS, &rows)
}

pub fn summary_csv(bundle: &Bundle) -> Result<Vec<u8>> {
    let rows: Vec<Vec<String>> = bundle
        .summary
        .iter()
        .map(|s| {
            vec![
                s.estimator.clone(),
                s.set.clone(),
                s.part.clone(),
                s.norm.clone(),
                num(s.mean_abs),
                opt(s.mean_rel),
                s.count.to_string(),
            ]
        })
        .collect();
    csv_bytes(&SUMMARY_COLUMNS, &rows)
}

pub fn support_csv(bundle: &Bundle) -> Result<Vec<u8>> {
    let kk = bundle.spec.locations();
    let mut rows = Vec::new();
    for s in &bundle.support {
        for k in 0..kk {
            for l in 0..kk {
                rows.push(vec![
                    s.replication.to_string(),
                    s.estimator.clone(),
                    l.to_string(),
                    k.to_string(),
                    num(s.peaks[k * kk + l]),
                    num(s.threshold),
                    NETWORK_EDGES.contains(&(l, k)).to_string(),
                    s.recovered.contains(&(l, k)).to_string(),
                ]);
            }
        }
    }
    csv_bytes(&SUPPORT_COLUMNS, &rows)
}

pub fn bundle_json(bundle: &Bundle) -> Result<String> {
    Ok(serde_json::to_string_pretty(bundle)? + "\n")
}

pub fn parse_bundle(text: &str) -> Result<Bundle> {
    serde_json::from_str(text).context("parsing report bundle")
}

/// Writes the reports of `bundle` into `dir` and returns the paths in
/// write order.
pub fn emit_report(bundle: &Bundle, dir: &Path, format: Format, figures: bool) -> Result<Vec<PathBuf>> {
    let mut files: Vec<(String, Vec<u8>)> = match format {
        Format::Csv => vec![
            (RECORDS_FILE.into(), records_csv(bundle)?),
            (SUMMARY_FILE.into(), summary_csv(bundle)?),
            (SUPPORT_FILE.into(), support_csv(bundle)?),
        ],
        Format::Json => vec![(BUNDLE_FILE.into(), bundle_json(bundle)?.into_bytes())],
    };
    if figures {
        files.extend(bundle_figures(bundle));
    }
    let mut out = Vec::new();
    for (name, bytes) in files {
        let path = dir.join(name);
        write_bytes(&path, &bytes)?;
        out.push(path);
    }
    Ok(out)
}

/// Figure files for a bundle: truth against each estimate of the first
/// replication, and the support histogram when present.
pub fn bundle_figures(bundle: &Bundle) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    if let Some(ex) = &bundle.example {
        for (label, est) in &ex.estimates {
            let name = format!("estimate_{}.svg", label.replace('/', "_"));
            let title = format!("{} replication 0: {label} vs truth", bundle.scenario.name());
            out.push((name, comparison_svg(&title, &ex.truth, est).into_bytes()));
        }
    }
    let mut estimators: Vec<&str> = bundle.support.iter().map(|s| s.estimator.as_str()).collect();
    estimators.dedup();
    for est in estimators {
        let values: Vec<f64> = bundle
            .support
            .iter()
            .filter(|s| s.estimator == est)
            .flat_map(|s| s.peaks.iter().copied())
            .collect();
        let thresholds: Vec<f64> = bundle
            .support
            .iter()
            .filter(|s| s.estimator == est)
            .map(|s| s.threshold)
            .collect();
        let title = format!("max over lags of |interaction| ({est})");
        out.push((format!("support_{est}.svg"), histogram_svg(&title, &values, &thresholds, 40).into_bytes()));
    }
    out
}

const W: f64 = 800.0;
const H: f64 = 360.0;
const PAD: f64 = 50.0;

fn header(title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="20" font-family="sans-serif" font-size="14" text-anchor="middle">{}</text>"#,
        W / 2.0,
        escape(title)
    );
    s
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

struct Axis {
    lo: f64,
    hi: f64,
}

impl Axis {
    fn new(values: impl Iterator<Item = f64>) -> Axis {
        let (mut lo, mut hi) = (0.0f64, 0.0f64);
        for v in values.filter(|v| v.is_finite()) {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if hi - lo <= 0.0 {
            hi = lo + 1.0;
        }
        Axis { lo, hi }
    }

    fn y(&self, v: f64) -> f64 {
        H - PAD - (v - self.lo) / (self.hi - self.lo) * (H - 2.0 * PAD)
    }

    fn draw(&self, s: &mut String) {
        let zero = self.y(0.0);
        let _ = writeln!(s, r#"<line x1="{PAD}" y1="{zero:.2}" x2="{}" y2="{zero:.2}" stroke="black"/>"#, W - PAD);
        let _ = writeln!(s, r#"<line x1="{PAD}" y1="{PAD}" x2="{PAD}" y2="{}" stroke="black"/>"#, H - PAD);
        for v in [self.lo, self.hi] {
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{:.2}" font-family="sans-serif" font-size="10" text-anchor="end">{v:.4}</text>"#,
                PAD - 4.0,
                self.y(v) + 3.0
            );
        }
    }
}

/// Bars for the truth with the estimate as a polyline on top.
pub fn comparison_svg(title: &str, truth: &[f64], estimate: &[f64]) -> String {
    let mut s = header(title);
    let axis = Axis::new(truth.iter().chain(estimate).copied());
    axis.draw(&mut s);
    let n = truth.len().max(1) as f64;
    let step = (W - 2.0 * PAD) / n;
    for (i, &t) in truth.iter().enumerate() {
        let (y0, y1) = (axis.y(0.0), axis.y(t));
        let _ = writeln!(
            s,
            r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="#9ecae1"/>"##,
            PAD + i as f64 * step,
            y0.min(y1),
            (step * 0.9).max(0.5),
            (y0 - y1).abs()
        );
    }
    let pts: Vec<String> = estimate
        .iter()
        .enumerate()
        .map(|(i, &v)| format!("{:.2},{:.2}", PAD + (i as f64 + 0.45) * step, axis.y(v)))
        .collect();
    let _ = writeln!(
        s,
        r##"<polyline points="{}" fill="none" stroke="#d62728" stroke-width="1"/>"##,
        pts.join(" ")
    );
    legend(&mut s, &[("#9ecae1", "truth"), ("#d62728", "estimate")]);
    s.push_str("</svg>\n");
    s
}

/// Point estimates with interval whiskers, and the truth when known.
pub fn interval_svg(title: &str, estimate: &[f64], bounds: &[(f64, f64)], truth: Option<&[f64]>) -> String {
    let mut s = header(title);
    let axis = Axis::new(
        estimate
            .iter()
            .copied()
            .chain(bounds.iter().flat_map(|b| [b.0, b.1]))
            .chain(truth.into_iter().flatten().copied()),
    );
    axis.draw(&mut s);
    let n = estimate.len().max(1) as f64;
    let step = (W - 2.0 * PAD) / n;
    for (i, (&e, &(lo, hi))) in estimate.iter().zip(bounds).enumerate() {
        let x = PAD + (i as f64 + 0.5) * step;
        let _ = writeln!(
            s,
            r##"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="#555555"/>"##,
            axis.y(lo),
            axis.y(hi)
        );
        let _ = writeln!(s, r##"<circle cx="{x:.2}" cy="{:.2}" r="2" fill="#d62728"/>"##, axis.y(e));
        if let Some(t) = truth {
            let _ = writeln!(s, r##"<circle cx="{x:.2}" cy="{:.2}" r="2" fill="#1f77b4"/>"##, axis.y(t[i]));
        }
    }
    let mut keys = vec![("#555555", "interval"), ("#d62728", "estimate")];
    if truth.is_some() {
        keys.push(("#1f77b4", "truth"));
    }
    legend(&mut s, &keys);
    s.push_str("</svg>\n");
    s
}

/// Histogram of `values` with vertical marks at each threshold.
pub fn histogram_svg(title: &str, values: &[f64], thresholds: &[f64], bins: usize) -> String {
    let mut s = header(title);
    let hi = values.iter().copied().filter(|v| v.is_finite()).fold(0.0f64, f64::max).max(1e-12);
    let mut counts = vec![0usize; bins];
    for &v in values.iter().filter(|v| v.is_finite()) {
        counts[((v / hi * bins as f64) as usize).min(bins - 1)] += 1;
    }
    let cmax = counts.iter().copied().max().unwrap_or(0).max(1) as f64;
    let axis = Axis { lo: 0.0, hi: cmax };
    axis.draw(&mut s);
    let step = (W - 2.0 * PAD) / bins as f64;
    for (i, &c) in counts.iter().enumerate() {
        let y = axis.y(c as f64);
        let _ = writeln!(
            s,
            r##"<rect x="{:.2}" y="{y:.2}" width="{:.2}" height="{:.2}" fill="#9ecae1" stroke="#3182bd"/>"##,
            PAD + i as f64 * step,
            step,
            axis.y(0.0) - y
        );
    }
    for &t in thresholds.iter().filter(|t| t.is_finite()) {
        let x = PAD + (t / hi).clamp(0.0, 1.0) * (W - 2.0 * PAD);
        let _ = writeln!(
            s,
            r##"<line x1="{x:.2}" y1="{PAD}" x2="{x:.2}" y2="{}" stroke="#d62728" stroke-dasharray="4 3"/>"##,
            H - PAD
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" font-family="sans-serif" font-size="10" text-anchor="end">{hi:.4}</text>"#,
        W - PAD,
        H - PAD + 14.0
    );
    legend(&mut s, &[("#9ecae1", "count"), ("#d62728", "threshold")]);
    s.push_str("</svg>\n");
    s
}

fn legend(s: &mut String, keys: &[(&str, &str)]) {
    for (i, (color, label)) in keys.iter().enumerate() {
        let x = W - PAD - 110.0;
        let y = PAD + 14.0 * i as f64;
        let _ = writeln!(s, r#"<rect x="{x}" y="{}" width="10" height="10" fill="{color}"/>"#, y - 9.0);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{y}" font-family="sans-serif" font-size="11">{}</text>"#,
            x + 14.0,
            escape(label)
        );
    }
}
