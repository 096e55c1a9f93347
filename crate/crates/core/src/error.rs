use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid level system: {0}")]
    InvalidSystem(String),

    #[error("index {index} out of range for dimension {dim}")]
    IndexOutOfRange { index: usize, dim: usize },

    #[error("frequency {omega} outside the bath band (0, {cutoff})")]
    OutsideBand { omega: f64, cutoff: f64 },

    #[error("drives overlap on level {level}; independent control requires disjoint transitions")]
    OverlappingDrives { level: usize },

    #[error("invalid signal: {0}")]
    InvalidSignal(String),

    #[error("time {t} outside signal domain [0, {end}]")]
    OutsideDomain { t: f64, end: f64 },

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    #[error("degenerate instantaneous spectrum at t = {t}: gap {gap:e} below tolerance {tol:e}")]
    DegenerateFrame { t: f64, gap: f64, tol: f64 },

    #[error("integration diverged at t = {t}: {reason}")]
    Divergence { t: f64, reason: String },

    #[error("time step {dt} does not divide the span {span}")]
    StepMismatch { dt: f64, span: f64 },

    #[error("chain mapping failed: {0}")]
    ChainMapping(String),

    #[error("invalid MPS operation: {0}")]
    Mps(String),

    #[error("truncation weight {weight:e} exceeded threshold {threshold:e}")]
    TruncationBlowup { weight: f64, threshold: f64 },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("configuration invalid: {0}")]
    Config(String),

    #[error("{context}: {source}")]
    Context { context: String, source: Box<Error> },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors that come from a numerical solver rather than from
    /// malformed input.
    pub fn is_solver_abort(&self) -> bool {
        if let Error::Context { source, .. } = self {
            return source.is_solver_abort();
        }
        matches!(
            self,
            Error::DegenerateFrame { .. }
                | Error::Divergence { .. }
                | Error::ChainMapping(_)
                | Error::TruncationBlowup { .. }
                | Error::Mps(_)
        )
    }
}

pub trait ResultExt<T> {
    fn context(self, context: impl FnOnce() -> String) -> Result<T>;
}

impl<T> ResultExt<T> for Result<T> {
    fn context(self, context: impl FnOnce() -> String) -> Result<T> {
        self.map_err(|e| Error::Context { context: context(), source: Box::new(e) })
    }
}
