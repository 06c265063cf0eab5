use thiserror::Error;

use crate::lcs::LcpStatus;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("LCP not solved at step {step:?}: {status:?}")]
    LcpFailure {
        step: Option<usize>,
        status: LcpStatus,
    },

    #[error("quadratic program infeasible: {0}")]
    QpInfeasible(String),

    #[error("quadratic program hit its iteration cap")]
    QpIterLimit,

    #[error("projection failed at time step {k} (ADMM iteration {iteration}): {source}")]
    Projection {
        k: usize,
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("complementarity set is infeasible")]
    InfeasibleSet,

    #[error("size cap exceeded: {0}")]
    SizeCap(String),

    #[error("plant failure at step {step}: {source}")]
    Plant {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    /// Stable, machine-readable category used by the CLI for its error output.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Dimension(_) => "dimension",
            Error::InvalidInput(_) => "invalid-input",
            Error::LcpFailure { .. } => "lcp-failure",
            Error::QpInfeasible(_) => "qp-infeasible",
            Error::QpIterLimit => "qp-iter-limit",
            Error::Projection { .. } => "projection-failure",
            Error::InfeasibleSet => "infeasible-set",
            Error::SizeCap(_) => "size-cap",
            Error::Plant { .. } => "plant-failure",
            Error::Io(_) => "io",
            Error::Parse(_) => "parse",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn dim_check(cond: bool, what: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::Dimension(what()))
    }
}
