//! Panel and parameter files.
//!
//! Panels use a small binary format: the magic bytes `BPNL`, a `u16`
//! version, then `K`, `M`, `d`, `N` as little-endian `u32`, then the
//! `(N + d) x K` state matrix row by row, one byte per entry.
//! Parameter files are JSON holding the model dimensions and the flat value vector.

use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use mbp_core::{EventPanel, Link, ModelSpec, ParamVector};
use serde::{Deserialize, Serialize};

pub const PANEL_MAGIC: &[u8; 4] = b"BPNL";
pub const PANEL_VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 4 * 4;

fn describe(spec: &ModelSpec) -> String {
    format!("K={}, M={}, d={}", spec.locations(), spec.categories(), spec.depth())
}

fn same_shape(a: &ModelSpec, b: &ModelSpec) -> bool {
    a.locations() == b.locations() && a.categories() == b.categories() && a.depth() == b.depth()
}

fn to_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).with_context(|| format!("{what} = {v} does not fit the panel header"))
}

pub fn encode_panel(panel: &EventPanel) -> Result<Vec<u8>> {
    let spec = panel.spec();
    let mut out = Vec::with_capacity(HEADER_LEN + panel.raw().len());
    out.extend_from_slice(PANEL_MAGIC);
    out.extend_from_slice(&PANEL_VERSION.to_le_bytes());
    for (v, what) in [
        (spec.locations(), "K"),
        (spec.categories(), "M"),
        (spec.depth(), "d"),
        (panel.horizon(), "N"),
    ] {
        out.extend_from_slice(&to_u32(v, what)?.to_le_bytes());
    }
    out.extend_from_slice(panel.raw());
    Ok(out)
}

/// Decodes a panel. With `expected`, a header describing a different
/// `(K, M, d)` is an error naming both.
pub fn decode_panel(bytes: &[u8], expected: Option<&ModelSpec>) -> Result<EventPanel> {
    ensure!(bytes.len() >= HEADER_LEN, "panel file is truncated ({} bytes)", bytes.len());
    ensure!(&bytes[..4] == PANEL_MAGIC, "not a panel file (bad magic bytes)");
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    ensure!(version == PANEL_VERSION, "unsupported panel version {version}");
    let field = |i: usize| {
        let o = 6 + 4 * i;
        u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize
    };
    let (k, m, d, n) = (field(0), field(1), field(2), field(3));
    let spec = ModelSpec::new(k, m, d, expected.map_or(Link::Identity, |e| e.link()))?;
    if let Some(e) = expected {
        if !same_shape(&spec, e) {
            bail!("panel spec mismatch: file has {}, expected {}", describe(&spec), describe(e));
        }
    }
    let body = &bytes[HEADER_LEN..];
    let want = (n + d) * k;
    ensure!(body.len() == want, "panel body has {} bytes, header implies {want}", body.len());
    Ok(EventPanel::new(spec, n, body.to_vec())?)
}

pub fn write_panel(path: &Path, panel: &EventPanel) -> Result<()> {
    write_bytes(path, &encode_panel(panel)?)
}

pub fn read_panel(path: &Path, expected: Option<&ModelSpec>) -> Result<EventPanel> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    decode_panel(&bytes, expected).with_context(|| format!("in {}", path.display()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ParamFile {
    spec: ModelSpec,
    values: Vec<f64>,
}

pub fn params_to_json(beta: &ParamVector) -> Result<String> {
    let file = ParamFile {
        spec: *beta.spec(),
        values: beta.values().to_vec(),
    };
    Ok(serde_json::to_string_pretty(&file)?)
}

pub fn params_from_json(text: &str, expected: Option<&ModelSpec>) -> Result<ParamVector> {
    let file: ParamFile = serde_json::from_str(text).context("parsing parameter file")?;
    if let Some(e) = expected {
        if !same_shape(&file.spec, e) {
            bail!(
                "parameter spec mismatch: file has {}, expected {}",
                describe(&file.spec),
                describe(e)
            );
        }
    }
    Ok(ParamVector::new(file.spec, file.values)?)
}

pub fn write_params(path: &Path, beta: &ParamVector) -> Result<()> {
    write_bytes(path, params_to_json(beta)?.as_bytes())
}

pub fn read_params(path: &Path, expected: Option<&ModelSpec>) -> Result<ParamVector> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    params_from_json(&text, expected).with_context(|| format!("in {}", path.display()))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let mut f = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    f.write_all(bytes).with_context(|| format!("writing {}", path.display()))
}
