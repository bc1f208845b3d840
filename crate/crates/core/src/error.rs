use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite value in {what}")]
    NonFinite { what: String },

    #[error("invalid hyper-parameters: {0}")]
    InvalidHyper(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("auxiliary-sequence identity residual {residual:.3e} at step {step} exceeds tolerance {tol:.1e}")]
    YResidual {
        step: usize,
        residual: f64,
        tol: f64,
    },

    #[error("problem `{0}` carries no optimal-value estimate")]
    MissingFStar(String),

    #[error("problem `{0}` carries no smoothness metadata")]
    MissingSmoothness(String),

    #[error("unknown identifier `{0}`")]
    UnknownId(String),

    #[error("linear program infeasible")]
    Infeasible,

    #[error("no feasible (L0, L1) pair on the probe grid")]
    ExceedsProbeGrid,
}
