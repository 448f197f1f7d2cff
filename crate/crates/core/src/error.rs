use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("degenerate parameterization at (u, v) = ({u}, {v}): |r_u x r_v| = {g:e}")]
    Degenerate { u: f64, v: f64, g: f64 },
    #[error("surface crosses the axis at (u, v) = ({u}, {v}): R = {r}")]
    CrossesAxis { u: f64, v: f64, r: f64 },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("coincident source and target points")]
    Coincident,
    #[error("target lies on the current loop (distance {0:e})")]
    TargetOnLoop(f64),
    #[error("unknown builtin surface `{0}`")]
    UnknownSurface(String),
    #[error("GMRES did not converge: residual {residual:e} after {iterations} iterations")]
    SolverFailure { iterations: usize, residual: f64 },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid value: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn precondition(msg: impl Into<String>) -> Error {
    Error::Precondition(msg.into())
}
