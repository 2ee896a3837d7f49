use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid channel: {0}")]
    InvalidChannel(String),

    #[error("Gauss-Hermite quadrature did not converge with {nodes} nodes (residual {residual:e})")]
    QuadratureNotConverged { nodes: usize, residual: f64 },

    #[error("no sign change found while bracketing threshold {index} (target {target})")]
    NoBracket { index: usize, target: f64 },

    #[error("solved thresholds are not strictly increasing and positive at index {index}")]
    NonMonotone { index: usize },

    #[error("every (delta, L_tail) candidate was infeasible")]
    NoFeasibleDesign,

    #[error("KL divergence C1 is infinite for this channel")]
    InfiniteC1,

    #[error("ruin series tail cannot be certified: Bhattacharyya parameter {0} >= 1")]
    TailNotCertified(f64),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("interval bookkeeping inconsistent: {0}")]
    Consistency(String),

    #[error("codecs diverged at trial {trial}, round {round}: {detail}")]
    DivergenceFound {
        trial: u64,
        round: usize,
        detail: String,
    },

    #[error("censoring rate {censored}/{trials} exceeds the 0.1% limit")]
    ExcessCensoring { censored: u64, trials: u64 },

    #[error("message set too large for the per-message reference ({0} > 2^16)")]
    ReferenceTooLarge(u128),

    #[error("I/O: {0}")]
    Io(String),

    #[error("parse: {0}")]
    Parse(String),
}

impl Error {
    /// Short machine-readable tag.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Domain(_) => "domain",
            Error::InvalidChannel(_) => "invalid_channel",
            Error::QuadratureNotConverged { .. } => "quadrature_not_converged",
            Error::NoBracket { .. } => "no_bracket",
            Error::NonMonotone { .. } => "non_monotone",
            Error::NoFeasibleDesign => "no_feasible_design",
            Error::InfiniteC1 => "infinite_c1",
            Error::TailNotCertified(_) => "tail_not_certified",
            Error::Unsupported(_) => "unsupported",
            Error::Consistency(_) => "consistency",
            Error::DivergenceFound { .. } => "divergence_found",
            Error::ExcessCensoring { .. } => "excess_censoring",
            Error::ReferenceTooLarge(_) => "reference_too_large",
            Error::Io(_) => "io",
            Error::Parse(_) => "parse",
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}
