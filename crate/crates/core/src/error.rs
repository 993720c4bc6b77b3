use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("newton iteration did not converge after {iterations} iterations (residual {residual:.3e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("singular or non-finite linear system")]
    SingularJacobian,

    #[error("time step {step} failed: {source}")]
    StepFailed { step: usize, source: Box<Error> },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("degenerate least-squares fit: step sizes have zero spread")]
    DegenerateFit,

    #[error("invalid error table: {0}")]
    InvalidTable(String),

    #[error("dual quaternion has a vanishing real part")]
    DegenerateRealPart,

    #[error("rotation axis is not unit length (norm {0})")]
    NonUnitAxis(f64),

    #[error("initial data violates the constraint (|g| = {0:.3e})")]
    InconsistentInitialData(f64),

    #[error("constraint violated after step {step} (|g| = {residual:.3e})")]
    ConstraintViolation { step: usize, residual: f64 },

    #[error("unit dual quaternion drift at node {node}, time {step} (residual {residual:.3e})")]
    UnityViolation { node: usize, step: usize, residual: f64 },

    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn at_step(self, step: usize) -> Error {
        match self {
            e @ Error::StepFailed { .. } => e,
            e => Error::StepFailed { step, source: Box::new(e) },
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
