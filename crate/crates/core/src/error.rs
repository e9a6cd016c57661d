use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain violation: {0}")]
    Domain(String),

    #[error("degenerate projective action: M x = 0")]
    DegenerateAction,

    #[error("invalid law: {0}")]
    InvalidLaw(String),

    #[error("atom {0} is not allowable (a row or column vanishes)")]
    NonAllowable(usize),

    #[error("no strictly positive product of at most {0} atoms")]
    NoPositiveProduct(usize),

    #[error("{0} requires a finite-support law")]
    NeedsFiniteSupport(&'static str),

    #[error("power iteration did not converge after {iterations} iterations (gap {gap:e})")]
    NonConvergence { iterations: usize, gap: f64 },

    #[error("primal and conjugate eigenvalues disagree: {primal} vs {conjugate}")]
    KappaMismatch { primal: f64, conjugate: f64 },

    #[error("no positive root of the pressure function in [{lo}, {hi}]")]
    NoPositiveRoot { lo: f64, hi: f64 },

    #[error("out of range: {0}")]
    OutOfRange(String),

    #[error("enumeration budget exceeded: {0}")]
    Budget(String),

    #[error("missing input: {0}")]
    Missing(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Errors caused by malformed input rather than by the mathematics of the request.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidLaw(_) | Error::Json(_) | Error::Io(_) | Error::Missing(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
