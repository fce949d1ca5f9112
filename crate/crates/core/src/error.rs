use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("insufficient data: need at least {needed} rows, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("unsupported missing-data pattern: {0}")]
    UnsupportedPattern(String),

    #[error("degenerate block: {0}")]
    DegenerateBlock(String),

    #[error("degenerate labels: {0}")]
    DegenerateLabel(String),

    #[error("degenerate fold: {0}")]
    FoldDegeneracy(String),

    #[error("infeasible correlation structure for rho_d = {rho_d}, rho_t = {rho_t} (smallest eigenvalue {min_eigenvalue:e})")]
    InfeasibleCorrelation {
        rho_d: f64,
        rho_t: f64,
        min_eigenvalue: f64,
    },

    #[error("infeasible missingness mask: {0}")]
    InfeasibleMask(String),

    #[error("row identifiers do not align: {0}")]
    Alignment(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("unsupported model file version {found} (expected {expected})")]
    UnsupportedVersion { found: u32, expected: u32 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
