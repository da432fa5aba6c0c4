use std::io::Write as _;

use mbp_cli::config::ExperimentConfig;
use mbp_cli::cvdepth::{cross_validate_depth, CvOptions};
use mbp_cli::experiment::run_experiment;
use mbp_cli::ingest::{ingest_reader, GridSpec};
use mbp_cli::io::{decode_panel, encode_panel, params_from_json, params_to_json, read_panel, write_panel};
use mbp_cli::report::{bundle_json, emit_report, parse_bundle, Format};
use mbp_core::simulate::simulate;
use mbp_core::{Coord, EventPanel, Link, ModelSpec, ParamVector, SimConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_panel(kk: usize, m: usize, d: usize, n: usize, seed: u64) -> EventPanel {
    let spec = ModelSpec::new(kk, m, d, Link::Identity).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let omega = (0..(n + d) * kk).map(|_| rng.random_range(0..=m as u8)).collect();
    EventPanel::new(spec, n, omega).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn panel_bytes_round_trip(kk in 1usize..5, m in 1usize..4, d in 0usize..4, n in 1usize..60, seed in any::<u64>()) {
        let panel = random_panel(kk, m, d, n, seed);
        let back = decode_panel(&encode_panel(&panel).unwrap(), Some(panel.spec())).unwrap();
        prop_assert_eq!(back.spec(), panel.spec());
        prop_assert_eq!(back.horizon(), panel.horizon());
        prop_assert_eq!(back.raw(), panel.raw());
    }

    #[test]
    fn params_json_round_trip(kk in 1usize..4, m in 1usize..3, d in 0usize..3, seed in any::<u64>()) {
        let spec = ModelSpec::new(kk, m, d, Link::Identity).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = (0..spec.kappa()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let beta = ParamVector::new(spec, values).unwrap();
        let back = params_from_json(&params_to_json(&beta).unwrap(), Some(&spec)).unwrap();
        prop_assert_eq!(back.values(), beta.values());
    }
}

#[test]
fn memoryless_panel_round_trips_through_a_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("nested").join("panel.bin");
    let panel = random_panel(3, 2, 0, 25, 7);
    write_panel(&path, &panel).unwrap();
    let back = read_panel(&path, None).unwrap();
    assert_eq!(back.spec().depth(), 0);
    assert_eq!(back.raw(), panel.raw());
}

#[test]
fn wrong_spec_is_named_in_the_error() {
    let panel = random_panel(3, 1, 2, 10, 1);
    let other = ModelSpec::new(4, 1, 2, Link::Identity).unwrap();
    let err = decode_panel(&encode_panel(&panel).unwrap(), Some(&other)).unwrap_err();
    let msg = format!("{err:#}");
    assert!(msg.contains("K=3") && msg.contains("K=4"), "{msg}");
}

fn grid(rows: usize, cols: usize, categories: usize, start: f64, end: f64) -> GridSpec {
    GridSpec {
        lat_min: 33.6,
        lat_max: 33.9,
        lon_min: -84.5,
        lon_max: -84.2,
        rows,
        cols,
        bin_seconds: 3600.0,
        categories: (1..=categories).map(|c| format!("type{c}")).collect(),
        start: Some(format!("{start}")),
        end: Some(format!("{end}")),
    }
}

#[test]
fn synthetic_events_round_trip_to_the_panel() {
    let spec = ModelSpec::new(6, 2, 0, Link::Identity).unwrap();
    let mut beta = ParamVector::zeros(spec);
    for k in 0..6 {
        beta.set(Coord::Baseline { k, p: 1 }, 0.1 + 0.02 * k as f64).unwrap();
        beta.set(Coord::Baseline { k, p: 2 }, 0.05).unwrap();
    }
    let n = 300;
    let panel = simulate(&beta, &SimConfig::new(n, 4)).unwrap();
    let start = 1_600_000_000.0;
    let g = grid(2, 3, 2, start, start + n as f64 * 3600.0);
    let mut csv = b"timestamp,lat,lon,category\n".to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for t in 1..=n as i64 {
        for k in 0..6 {
            let w = panel.state(t, k);
            if w > 0 {
                let (lat, lon) = g.cell_center(k);
                let ts = start + (t - 1) as f64 * 3600.0 + rng.random_range(0.0..3599.0);
                writeln!(csv, "{ts},{lat},{lon},type{w}").unwrap();
            }
        }
    }
    let (back, report) = ingest_reader(&csv[..], &g).unwrap();
    assert_eq!(report.horizon, n);
    assert_eq!((report.collisions, report.out_of_box), (0, 0));
    assert_eq!(back.raw(), panel.raw());
}

#[test]
fn ingestion_conserves_rows() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let start = 1_700_000_000.0;
    let g = grid(3, 3, 3, start, start + 48.0 * 3600.0);
    let mut csv = b"timestamp,lat,lon,category\n".to_vec();
    let total = 2_000;
    for _ in 0..total {
        // some events fall outside the box or the time window
        let ts = start + rng.random_range(-5.0..55.0) * 3600.0;
        let lat = rng.random_range(33.5..34.0);
        let lon = rng.random_range(-84.6..-84.1);
        writeln!(csv, "{ts},{lat},{lon},type{}", rng.random_range(1..=3)).unwrap();
    }
    let (panel, report) = ingest_reader(&csv[..], &g).unwrap();
    assert_eq!(report.total, total);
    assert_eq!(report.kept + report.collisions + report.out_of_box, report.total);
    assert!(report.collisions > 0 && report.out_of_box > 0);
    assert_eq!(panel.raw().iter().filter(|&&w| w > 0).count(), report.kept);
}

#[test]
fn memoryless_data_selects_the_smallest_depth() {
    let spec = ModelSpec::new(2, 1, 0, Link::Identity).unwrap();
    let mut beta = ParamVector::zeros(spec);
    beta.set(Coord::Baseline { k: 0, p: 1 }, 0.2).unwrap();
    beta.set(Coord::Baseline { k: 1, p: 1 }, 0.1).unwrap();
    let seeds = 20;
    let mut smallest = 0;
    for seed in 0..seeds {
        let panel = simulate(&beta, &SimConfig::new(3000, 100 + seed)).unwrap();
        let res = cross_validate_depth(&panel, &CvOptions::new(vec![0, 1, 2], seed)).unwrap();
        smallest += usize::from(res.chosen == 0);
    }
    assert!(2 * smallest > seeds as usize, "smallest depth chosen in {smallest}/{seeds} seeds");
}

#[test]
fn network_config_needs_the_eight_node_graph() {
    let text = SMALL_EXPERIMENT.replace("locations = 8", "locations = 4");
    let err = ExperimentConfig::from_toml(&text).unwrap_err();
    assert!(format!("{err:#}").contains("8-node"), "{err:#}");
}

const SMALL_EXPERIMENT: &str = r#"
schema_version = 1
scenario = "network"
locations = 8
categories = 1
depth = 2
horizon = 2000
replications = 2
seed = 3
estimators = ["ls", "ml"]
[estimation]
graph = "both"
"#;

#[test]
fn bundle_json_round_trips_and_reports_are_written() {
    let cfg = ExperimentConfig::from_toml(SMALL_EXPERIMENT).unwrap();
    let bundle = run_experiment(&cfg).unwrap();
    let text = bundle_json(&bundle).unwrap();
    assert_eq!(parse_bundle(&text).unwrap(), bundle);
    let dir = tempfile::tempdir().unwrap();
    let files = emit_report(&bundle, dir.path(), Format::Csv, true).unwrap();
    for f in &files {
        assert!(std::fs::metadata(f).unwrap().len() > 0, "{}", f.display());
    }
    assert!(files.iter().any(|f| f.ends_with("summary.csv")));
    assert!(files.iter().any(|f| f.extension().is_some_and(|e| e == "svg")));
}
