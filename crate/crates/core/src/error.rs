use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("point ({x:.6}, {y:.6}) lies outside the domain of radius {radius}")]
    Domain { x: f64, y: f64, radius: f64 },

    #[error("unknown registry id `{0}`")]
    UnknownId(String),

    #[error("malformed registry id `{id}`: {reason}")]
    BadId { id: String, reason: String },

    #[error("geodesic did not reach the boundary within {steps} steps")]
    Diverged { steps: usize },

    #[error("shooting did not converge (best residual {residual:.3e})")]
    Shooting { residual: f64 },

    #[error("chart collapsed at depth {depth:.4} (focal point)")]
    ChartCollapse { depth: f64 },

    #[error("probe is glancing: |ω'|_g' = {norm:.6} ≥ 1")]
    Glancing { norm: f64 },

    #[error("source and exit patches overlap")]
    PatchOverlap,

    #[error("CFL violated: dt = {dt:.3e} exceeds stable bound {bound:.3e}")]
    Cfl { dt: f64, bound: f64 },

    #[error("non-finite value at time step {step}")]
    NonFinite { step: usize },

    #[error("conjugate gradient did not converge after {iterations} iterations (relative residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("singular jacobian at ({x:.6}, {y:.6})")]
    SingularJacobian { x: f64, y: f64 },

    #[error("ill-conditioned moment system (condition number {0:.3e})")]
    IllConditioned(f64),

    #[error("insufficient data: {0}")]
    Insufficient(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("bad file format: {0}")]
    Format(String),

    #[error("config error at line {line}, column {column}: {message}")]
    Config { line: usize, column: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
