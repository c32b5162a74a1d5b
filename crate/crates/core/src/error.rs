use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("measure spec syntax error at byte {pos}: {msg}")]
    Syntax { pos: usize, msg: String },

    #[error("invalid measure: {0}")]
    InvalidMeasure(String),

    #[error(
        "quadrature did not reach tolerance: value {value:.6e}, achieved error {achieved:.3e}"
    )]
    Quadrature { value: f64, achieved: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("ODE integration failed: {0}")]
    Ode(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("oracle gate failed: {0}")]
    OracleGate(String),

    #[error("refusing to overwrite existing output directory {0} (use --force)")]
    OutputExists(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
