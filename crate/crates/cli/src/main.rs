use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use mbp_core::estimate::{estimate_ls_stats, estimate_ml, estimate_ml_logistic, estimate_vi};
use mbp_core::uncertainty::{coverage_inverse, gram_blocks, risk_bound, PNorm};
use mbp_core::{Atom, Coord, FeasibleSet, Link, ModelSpec, SimConfig, SolveOptions, SuffStats};
use serde::{Deserialize, Serialize};
use serde_json::json;

use mbp_cli::config::ExperimentConfig;
use mbp_cli::cvdepth::{cross_validate_depth, CvOptions};
use mbp_cli::experiment::run_experiment;
use mbp_cli::ingest::{ingest_events, GridSpec};
use mbp_cli::io::{read_panel, read_params, write_bytes, write_panel, write_params};
use mbp_cli::report::{emit_report, interval_svg, Format};

#[derive(Parser)]
#[command(name = "mbp", version, about = "Simulate and estimate multi-state spatio-temporal Bernoulli processes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a panel from a parameter file.
    Simulate(SimulateArgs),
    /// Estimate parameters from a panel.
    Estimate(EstimateArgs),
    /// Deviation and risk bounds for the least-squares estimate of a panel.
    Bounds(BoundsArgs),
    /// Simultaneous per-coordinate confidence intervals.
    Confint(ConfintArgs),
    /// Run a replicated synthetic experiment and write reports.
    Experiment(ExperimentArgs),
    /// Bin an event CSV onto a grid.
    Ingest(IngestArgs),
    /// Choose the memory depth by held-out frequency prediction.
    Cvdepth(CvdepthArgs),
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    params: PathBuf,
    #[arg(long)]
    horizon: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum EstimatorArg {
    Ls,
    Ml,
    MlLogistic,
    Vi,
}

#[derive(Clone, Copy, ValueEnum)]
enum LinkArg {
    Identity,
    Sigmoid,
    Softmax,
}

impl From<LinkArg> for Link {
    fn from(l: LinkArg) -> Link {
        match l {
            LinkArg::Identity => Link::Identity,
            LinkArg::Sigmoid => Link::SigmoidSingleState,
            LinkArg::Softmax => Link::LogisticMultiState,
        }
    }
}

/// Panel input shared by the estimation verbs.
#[derive(Args)]
struct PanelArgs {
    #[arg(long)]
    panel: PathBuf,
    /// Re-read the panel with this memory depth (total rows are kept).
    #[arg(long)]
    depth: Option<usize>,
    /// TOML file with `atoms = [...]`; default is the basic polytope with
    /// ground-state interactions fixed at zero.
    #[arg(long)]
    constraints: Option<PathBuf>,
    /// TOML file with solver options.
    #[arg(long)]
    solver: Option<PathBuf>,
}

#[derive(Args)]
struct EstimateArgs {
    #[command(flatten)]
    input: PanelArgs,
    #[arg(long, value_enum, default_value = "ls")]
    estimator: EstimatorArg,
    /// Link of the field for `--estimator vi`.
    #[arg(long, value_enum, default_value = "identity")]
    link: LinkArg,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum NormArg {
    L1,
    L2,
    Inf,
}

impl From<NormArg> for PNorm {
    fn from(n: NormArg) -> PNorm {
        match n {
            NormArg::L1 => PNorm::L1,
            NormArg::L2 => PNorm::L2,
            NormArg::Inf => PNorm::Inf,
        }
    }
}

#[derive(Args)]
struct BoundsArgs {
    #[command(flatten)]
    input: PanelArgs,
    #[arg(long, default_value_t = 0.1)]
    epsilon: f64,
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [NormArg::L1, NormArg::L2, NormArg::Inf])]
    norm: Vec<NormArg>,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ConfintArgs {
    #[command(flatten)]
    input: PanelArgs,
    /// Target simultaneous coverage level.
    #[arg(long, default_value_t = 0.9)]
    level: f64,
    /// Parameter file drawn next to the intervals in the figure.
    #[arg(long)]
    estimate: Option<PathBuf>,
    /// True parameters, drawn in the figure when given.
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long)]
    figures: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long)]
    config: PathBuf,
    /// Master seed; replaces the seed in the config file.
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [Format::Csv, Format::Json])]
    format: Vec<Format>,
    /// Also write SVG figures (overrides the config's `figures`).
    #[arg(long)]
    figures: bool,
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long)]
    events: PathBuf,
    /// TOML grid description.
    #[arg(long)]
    grid: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Write the binning report here instead of stdout.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct CvdepthArgs {
    #[command(flatten)]
    input: PanelArgs,
    #[arg(long, value_delimiter = ',', required = true)]
    candidates: Vec<usize>,
    #[arg(long, value_enum, default_value = "ls")]
    estimator: EstimatorArg,
    #[arg(long, default_value_t = 0.5)]
    split: f64,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ConstraintFile {
    atoms: Vec<Atom>,
}

fn default_atoms() -> Vec<Atom> {
    vec![Atom::BasicPolytope { rho: 0.0 }, Atom::GroundMask]
}

fn load_toml<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

struct Loaded {
    panel: mbp_core::EventPanel,
    atoms: Vec<Atom>,
    solver: SolveOptions,
}

impl PanelArgs {
    fn load(&self) -> Result<Loaded> {
        let mut panel = read_panel(&self.panel, None)?;
        if let Some(d) = self.depth {
            panel = panel.with_depth(d)?;
        }
        let atoms = match &self.constraints {
            Some(p) => load_toml::<ConstraintFile>(p)?.atoms,
            None => default_atoms(),
        };
        let solver = match &self.solver {
            Some(p) => load_toml(p)?,
            None => SolveOptions::default(),
        };
        Ok(Loaded { panel, atoms, solver })
    }

    fn set(&self, loaded: &Loaded) -> Result<FeasibleSet> {
        FeasibleSet::new(*loaded.panel.spec(), loaded.atoms.clone())
            .with_context(|| format!("building the constraint set for {}", self.panel.display()))
    }
}

fn emit_json(value: &impl Serialize, out: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    match out {
        Some(p) => write_bytes(p, text.as_bytes()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn simulate_cmd(a: &SimulateArgs) -> Result<()> {
    let beta = read_params(&a.params, None)?;
    let panel = mbp_core::simulate::simulate(&beta, &SimConfig::new(a.horizon, a.seed))?;
    write_panel(&a.out, &panel)?;
    emit_json(
        &json!({
            "out": a.out,
            "horizon": a.horizon,
            "frequencies": mbp_core::simulate::frequency_report(&panel),
        }),
        None,
    )
}

fn estimate_cmd(a: &EstimateArgs) -> Result<()> {
    let loaded = a.input.load()?;
    let set = a.input.set(&loaded)?;
    let panel = &loaded.panel;
    let res = match a.estimator {
        EstimatorArg::Ls => estimate_ls_stats(&SuffStats::accumulate(panel)?, &set, &loaded.solver)?,
        EstimatorArg::Ml => estimate_ml(panel, &set, &loaded.solver)?,
        EstimatorArg::MlLogistic => estimate_ml_logistic(panel, &set, &loaded.solver)?,
        EstimatorArg::Vi => estimate_vi(panel, &set, a.link.into(), &loaded.solver)?,
    };
    write_params(&a.out, &res.beta_hat)?;
    emit_json(
        &json!({
            "out": a.out,
            "residual": res.residual,
            "iterations": res.iterations,
            "converged": res.converged(),
            "objective": res.objective_trace.last(),
        }),
        None,
    )
}

fn bounds_cmd(a: &BoundsArgs) -> Result<()> {
    let loaded = a.input.load()?;
    let set = a.input.set(&loaded)?;
    let stats = SuffStats::accumulate(&loaded.panel)?;
    let spec = stats.spec();
    let blocks = gram_blocks(&stats, Some(&set));
    let mut risks = Vec::new();
    for &n in &a.norm {
        risks.push(risk_bound(&blocks, loaded.panel.horizon(), spec.kappa(), a.epsilon, n.into())?);
    }
    emit_json(
        &json!({
            "horizon": loaded.panel.horizon(),
            "kappa": spec.kappa(),
            "epsilon": a.epsilon,
            "risk": risks,
        }),
        a.out.as_deref(),
    )
}

fn coord_fields(spec: &ModelSpec, i: usize) -> Result<[String; 5]> {
    Ok(match spec.coord(i)? {
        Coord::Baseline { k, p } => [k.to_string(), String::new(), String::new(), String::new(), p.to_string()],
        Coord::Interaction { k, l, s, q, p } => [k.to_string(), l.to_string(), s.to_string(), q.to_string(), p.to_string()],
    })
}

fn confint_cmd(a: &ConfintArgs) -> Result<()> {
    let loaded = a.input.load()?;
    let set = a.input.set(&loaded)?;
    let stats = SuffStats::accumulate(&loaded.panel)?;
    let spec = *stats.spec();
    let y = coverage_inverse(a.level, spec.kappa(), loaded.panel.horizon())?;
    let program = mbp_core::uncertainty::ConfintProgram::new(&stats, &set, y)?;
    let intervals = program.coordinate_intervals()?;

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["index", "k", "l", "s", "q", "p", "lower", "upper", "feasible"])?;
    for (i, iv) in intervals.iter().enumerate() {
        let mut row = vec![i.to_string()];
        row.extend(coord_fields(&spec, i)?);
        row.extend([format!("{}", iv.lower), format!("{}", iv.upper), iv.feasible.to_string()]);
        w.write_record(&row)?;
    }
    write_bytes(&a.out.join("intervals.csv"), &w.into_inner()?)?;
    let meta = json!({
        "level": a.level,
        "y": y,
        "coverage": program.coverage()?,
        "bands": program.kappa_eff(),
        "zero_rate_bands": program.zero_rate_bands(),
        "feasible": program.feasible(),
    });
    write_bytes(&a.out.join("confint.json"), (serde_json::to_string_pretty(&meta)? + "\n").as_bytes())?;
    if a.figures {
        let bounds: Vec<(f64, f64)> = intervals.iter().map(|iv| (iv.lower, iv.upper)).collect();
        let estimate = match &a.estimate {
            Some(p) => read_params(p, Some(&spec))?.into_values(),
            None => bounds.iter().map(|(l, u)| 0.5 * (l + u)).collect(),
        };
        let truth = a.truth.as_ref().map(|p| read_params(p, Some(&spec))).transpose()?;
        let svg = interval_svg(
            &format!("{:.0}% simultaneous intervals", 100.0 * a.level),
            &estimate,
            &bounds,
            truth.as_ref().map(|t| t.values()),
        );
        write_bytes(&a.out.join("intervals.svg"), svg.as_bytes())?;
    }
    emit_json(&meta, None)
}

fn experiment_cmd(a: &ExperimentArgs) -> Result<()> {
    let mut cfg = ExperimentConfig::load(&a.config)?;
    cfg.seed = a.seed;
    let figures = a.figures || cfg.figures;
    let bundle = run_experiment(&cfg)?;
    let mut written = Vec::new();
    for (i, &f) in a.format.iter().enumerate() {
        written.extend(emit_report(&bundle, &a.out, f, figures && i == 0)?);
    }
    let failed = bundle.records.iter().filter(|r| r.error.is_some()).count();
    emit_json(&json!({ "written": written, "failed_records": failed }), None)
}

fn ingest_cmd(a: &IngestArgs) -> Result<()> {
    let grid: GridSpec = load_toml(&a.grid)?;
    let (panel, report) = ingest_events(&a.events, &grid)?;
    write_panel(&a.out, &panel)?;
    emit_json(&report, a.report.as_deref())
}

fn cvdepth_cmd(a: &CvdepthArgs) -> Result<()> {
    let loaded = a.input.load()?;
    let estimator = match a.estimator {
        EstimatorArg::Ls => mbp_cli::config::EstimatorKind::Ls,
        EstimatorArg::Ml => mbp_cli::config::EstimatorKind::Ml,
        EstimatorArg::MlLogistic => mbp_cli::config::EstimatorKind::MlLogistic,
        EstimatorArg::Vi => bail!("cvdepth supports ls, ml and ml-logistic"),
    };
    let opts = CvOptions {
        estimator,
        split_fraction: a.split,
        atoms: loaded.atoms.clone(),
        solver: loaded.solver,
        ..CvOptions::new(a.candidates.clone(), a.seed)
    };
    let res = cross_validate_depth(&loaded.panel, &opts)?;
    emit_json(&res, a.out.as_deref())
}

fn main() {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate(a) => simulate_cmd(a),
        Command::Estimate(a) => estimate_cmd(a),
        Command::Bounds(a) => bounds_cmd(a),
        Command::Confint(a) => confint_cmd(a),
        Command::Experiment(a) => experiment_cmd(a),
        Command::Ingest(a) => ingest_cmd(a),
        Command::Cvdepth(a) => cvdepth_cmd(a),
    };
    if let Err(e) = result {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
