use thiserror::Error;

/// Crate-wide error type. Variants mirror the failure modes of the
/// estimation pipeline, from data ingestion through inference.
#[derive(Error, Debug, Clone, PartialEq)]
pub enum Error {
    #[error("unbalanced panel: unit `{unit}` is missing period `{period}`")]
    UnbalancedPanel { unit: String, period: String },
    #[error("outcome must be 0 or 1, found `{value}` (unit `{unit}`, period `{period}`)")]
    NonBinaryOutcome {
        unit: String,
        period: String,
        value: String,
    },
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("index specification has no components")]
    EmptyIndex,
    #[error("index component `{0}` has zero variance across units")]
    DegenerateComponent(String),
    #[error("sample covariance of the index components is not positive definite")]
    SingularCovariance,
    #[error("conditional likelihood is flat: every unit has all-0 or all-1 outcomes")]
    NoSwitchers,
    #[error("conditional likelihood appears unbounded (separation); |beta| exceeded {0}")]
    Separation(f64),
    #[error("Hessian numerically singular during optimization")]
    Singular,
    #[error("no within-unit covariate variation across any period pair")]
    NoVariation,
    #[error("objective evaluated to a non-finite value")]
    NonFinite,
    #[error("local fit was trimmed at the evaluation point")]
    Trimmed,
    #[error("local logit likelihood has no maximizer (all local outcomes on one side)")]
    PerfectLocalSeparation,
    #[error("polynomial order {found} is too low; need at least {need}")]
    OrderTooLow { need: usize, found: usize },
    #[error("all evaluation points were trimmed")]
    AllTrimmed,
    #[error("cannot average effects estimated with different settings: {0}")]
    MixedConfigs(String),
    #[error("no kernel mass at the requested covariate point")]
    NoLocalMass,
    #[error("optimizer failed to converge: {0}")]
    NonConvergence(String),
    #[error("bootstrap aborted: {failed} of {total} replicates failed ({example})")]
    TooManyFailures {
        failed: usize,
        total: usize,
        example: String,
    },
    #[error("all true effects are zero; RMSE ratios are undefined")]
    DegenerateTruth,
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
