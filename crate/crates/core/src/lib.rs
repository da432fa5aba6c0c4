//! Multi-state spatio-temporal Bernoulli processes: simulation, sufficient
//! statistics, constrained estimation and concentration-based diagnostics.

pub mod constraints;
pub mod error;
pub mod estimate;
pub mod linalg;
pub mod model;
pub mod simulate;
pub mod stats;
pub mod uncertainty;

pub use constraints::{Atom, FeasibilityReport, FeasibleSet};
pub use error::{Error, Result};
pub use estimate::{EstimateResult, SolveOptions, StepRule};
pub use model::{Coord, EventPanel, Link, ModelSpec, ParamVector};
pub use simulate::SimConfig;
pub use stats::SuffStats;
