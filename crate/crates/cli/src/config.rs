//! Experiment configuration files (TOML).

use std::path::Path;

use anyhow::{bail, Context, Result};
use mbp_core::{Atom, Link, ModelSpec, SolveOptions};
use serde::{Deserialize, Serialize};

use crate::scenario::{GeneratorSettings, Scenario};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Ls,
    Ml,
    MlLogistic,
}

impl EstimatorKind {
    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::Ls => "ls",
            EstimatorKind::Ml => "ml",
            EstimatorKind::MlLogistic => "ml_logistic",
        }
    }
}

/// Which prior knowledge about the interaction graph the estimators get.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphKnowledge {
    #[default]
    Unknown,
    Known,
    Both,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimationSettings {
    pub graph: GraphKnowledge,
    /// Also impose the generator's structure (locality, lag-curve shape,
    /// nonnegative interactions) on the estimates.
    pub structured: bool,
    /// Replaces the scenario's default estimation set.
    pub atoms: Option<Vec<Atom>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub scenario: Scenario,
    pub locations: usize,
    pub categories: usize,
    pub depth: usize,
    pub horizon: usize,
    pub replications: usize,
    pub seed: u64,
    #[serde(default = "default_estimators")]
    pub estimators: Vec<EstimatorKind>,
    #[serde(default)]
    pub generator: GeneratorSettings,
    #[serde(default)]
    pub estimation: EstimationSettings,
    #[serde(default)]
    pub solver: SolveOptions,
    #[serde(default)]
    pub figures: bool,
}

fn default_estimators() -> Vec<EstimatorKind> {
    vec![EstimatorKind::Ls, EstimatorKind::Ml]
}

impl ExperimentConfig {
    pub fn spec(&self) -> Result<ModelSpec> {
        Ok(ModelSpec::new(self.locations, self.categories, self.depth, Link::Identity)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            bail!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            );
        }
        let spec = self.spec()?;
        if self.horizon == 0 {
            bail!("horizon must be >= 1");
        }
        if self.estimators.is_empty() {
            bail!("at least one estimator is required");
        }
        let g = &self.generator;
        if !(0.0..1.0).contains(&g.slack) {
            bail!("generator.slack must lie in [0, 1), got {}", g.slack);
        }
        if let Some([lo, hi]) = g.baseline_share {
            if !(0.0 < lo && lo <= hi && hi <= 1.0) {
                bail!("generator.baseline_share must satisfy 0 < lo <= hi <= 1, got [{lo}, {hi}]");
            }
        }
        match self.scenario {
            Scenario::SingleState | Scenario::Network if self.categories != 1 => {
                bail!("scenario {} needs categories = 1", self.scenario.name())
            }
            _ => {}
        }
        if self.scenario == Scenario::Network && self.locations != crate::scenario::NETWORK_NODES {
            bail!(
                "scenario network uses a fixed {}-node graph, got locations = {}",
                crate::scenario::NETWORK_NODES,
                self.locations
            );
        }
        if self.scenario != Scenario::Network && self.estimation.graph != GraphKnowledge::Unknown {
            bail!("estimation.graph only applies to the network scenario");
        }
        if let Some(atoms) = &self.estimation.atoms {
            // surfaces malformed atoms before any work starts
            mbp_core::FeasibleSet::new(spec, atoms.clone())?;
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).context("parsing experiment config")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("in {}", path.display()))
    }
}
