use thiserror::Error;

/// Errors raised by the numerical engine.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Probability mass beyond the Fock cutoff exceeds the allowed tail.
    #[error("truncation: tail mass {tail:.3e} beyond cutoff {cutoff} exceeds {limit:.1e}")]
    Truncation { cutoff: usize, tail: f64, limit: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("matrix is not Hermitian (max |A - A^H| = {0:.3e})")]
    NotHermitian(f64),

    #[error("{what} did not converge after {iterations} iterations (residual {residual:.3e})")]
    NotConverged {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    /// The two-branch cat basis collapses when the surviving amplitude is zero.
    #[error("degenerate cat basis: surviving coherent amplitude is zero")]
    DegenerateBasis,

    /// Cramér-Rao bound is infinite because the state carries no phase information.
    #[error("zero Fisher information: the Cramér-Rao bound is infinite")]
    ZeroInformation,

    #[error("phase sensitivity diverges at sin(phi) = 0")]
    DivergentSensitivity,

    #[error("posterior mass {mass:.3e} escapes the prior support of width {width}")]
    PosteriorEscaped { mass: f64, width: f64 },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("parse error: {0}")]
    Parse(String),

    /// Wraps a failure with the sweep point that produced it.
    #[error("{label} at eta={eta}: {source}")]
    AtPoint {
        label: String,
        eta: f64,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn at(self, label: impl Into<String>, eta: f64) -> Self {
        Error::AtPoint {
            label: label.into(),
            eta,
            source: Box::new(self),
        }
    }

    /// Innermost error, skipping sweep-point context.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtPoint { source, .. } => source.root(),
            e => e,
        }
    }

    pub fn is_truncation(&self) -> bool {
        matches!(self.root(), Error::Truncation { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
