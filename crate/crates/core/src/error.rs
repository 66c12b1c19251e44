use thiserror::Error;

/// Every failure the solver suite can report.
#[derive(Debug, Error)]
pub enum Error {
    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("field has non-zero mean {mean:e} (L2 norm {norm:e})")]
    NonZeroMean { mean: f64, norm: f64 },

    #[error("noise basis is not uniformly elliptic: lambda_min = {lambda_min:e}")]
    EllipticityViolation { lambda_min: f64 },

    #[error("instability at step {step}: {detail}")]
    Instability { step: u64, detail: String },

    #[error("time step {dt:e} exceeds the stability bound {bound:e}")]
    StepTooLarge { dt: f64, bound: f64 },

    #[error("trajectory exhausted: requested t = {requested}, available up to {available}")]
    TrajectoryExhausted { requested: f64, available: f64 },

    #[error("time misaligned: {0}")]
    TimeMisaligned(String),

    #[error("flow map jacobian degenerate: det = {det:e} at node ({i}, {j})")]
    JacobianDegenerate { det: f64, i: usize, j: usize },

    #[error("configuration mismatch: {0}")]
    ConfigMismatch(String),

    #[error("hash mismatch: {0}")]
    HashMismatch(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("malformed LSF1 data: {0}")]
    Format(String),

    #[error("ensemble member {member_id} failed: {source}")]
    Member {
        member_id: u64,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for errors caused by the solvers rather than by user input.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::NonZeroMean { .. }
            | Error::EllipticityViolation { .. }
            | Error::Instability { .. }
            | Error::StepTooLarge { .. }
            | Error::JacobianDegenerate { .. }
            | Error::TrajectoryExhausted { .. } => true,
            Error::Member { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
