use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("truncation error: discarded tail mass {discarded:.3e} exceeds tolerance {tolerance:.1e}")]
    Truncation { discarded: f64, tolerance: f64 },

    #[error("superoperator of dimension {dim}^2 exceeds the size guard (dim <= {limit})")]
    SizeGuardExceeded { dim: usize, limit: usize },

    #[error("integrator failure at t = {t:.6e}: {reason}")]
    IntegratorFailure { t: f64, reason: String },

    #[error("positivity violation at t = {t:.6e}: {what} = {value:.3e}")]
    PositivityViolation { t: f64, what: &'static str, value: f64 },

    #[error("trace drift at t = {t:.6e}: |Tr ρ − 1| = {drift:.3e}")]
    TraceDrift { t: f64, drift: f64 },

    #[error("not a density matrix: {0}")]
    NotDensityMatrix(String),

    #[error("target amplitude c_{index} vanishes")]
    ZeroAmplitude { index: usize },

    #[error("bad h profile: {0}")]
    BadHProfile(String),

    #[error("singular Rabi system (condition number {condition:.3e})")]
    SingularSystem { condition: f64 },

    #[error("h(m) does not have its first zero at N = {n}: h({m}) = {value:.3e}")]
    FirstZeroViolation { n: usize, m: usize, value: f64 },

    #[error("inconsistent coupling scale: {0}")]
    InconsistentScale(String),

    #[error("recoil quadrature not converged: node doubling changed the map by {change:.3e}")]
    QuadratureNotConverged { change: f64 },

    #[error("negative rate {rate} for {what}")]
    NegativeRate { what: &'static str, rate: f64 },

    #[error("trace residue: imaginary part {0:.3e} exceeds 1e-10")]
    ImaginaryResidue(f64),

    #[error("linear algebra failure: {0}")]
    Linalg(String),

    #[error("parse error at {path}: {message}")]
    Parse { path: String, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl From<ndarray_linalg::error::LinalgError> for Error {
    fn from(e: ndarray_linalg::error::LinalgError) -> Self {
        Error::Linalg(e.to_string())
    }
}

impl Error {
    pub fn at_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// Innermost error, with stage tags peeled off.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            e => e,
        }
    }

    /// Process exit code used by the command-line runner.
    pub fn exit_code(&self) -> i32 {
        match self.root() {
            Error::Parse { .. } | Error::Validation(_) => 2,
            Error::Io(_) => 4,
            _ => 3,
        }
    }
}

pub(crate) trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T, E: Into<Error>> StageExt<T> for std::result::Result<T, E> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| e.into().at_stage(stage))
    }
}
