use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("{what} = {value} is out of range ({range})")]
    Range {
        what: &'static str,
        value: i64,
        range: String,
    },

    #[error("invalid input: {0}")]
    Input(String),

    #[error("infeasible parameters: {0}")]
    Feasibility(String),

    #[error("link domain violated at t = {t}, location {k}: {detail}")]
    Domain { t: i64, k: usize, detail: String },

    #[error("link domain violated at location {k}: {detail}")]
    LinkDomain { k: usize, detail: String },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("projection did not converge after {iterations} cycles (residual {residual:.3e})")]
    Projection {
        iterations: usize,
        residual: f64,
        last: Vec<f64>,
    },

    #[error("feasible set is empty: {0}")]
    EmptySet(String),

    #[error("initialization failed: {0}")]
    Initialization(String),

    #[error("step-size search failed: {0}")]
    LineSearch(String),

    #[error("matrix is singular: {0}")]
    Singular(String),

    #[error("unachievable target: {0}")]
    Unachievable(String),

    #[error("unsupported: {0}")]
    Unsupported(String),
}

impl Error {
    pub(crate) fn range(what: &'static str, value: impl TryInto<i64>, range: impl Into<String>) -> Self {
        Error::Range {
            what,
            value: value.try_into().unwrap_or(i64::MAX),
            range: range.into(),
        }
    }
}
