use thiserror::Error;

/// Errors raised by the library.
///
/// Validation problems (bad inputs, violated preconditions) are separated
/// from runtime failures (enumeration caps, exhausted searches) so the CLI
/// can map them onto distinct exit codes.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("no points")]
    NoPoints,
    #[error("degenerate fit: {0}")]
    DegenerateFit(String),
    #[error("radius too large for simplex lemma: r^N = {lhs:.6e} is not below {rhs:.6e}")]
    RadiusTooLarge { lhs: f64, rhs: f64 },
    #[error("refinement too deep: more than {cap} cylinders")]
    RefinementTooDeep { cap: usize },
    #[error("enumeration cap exceeded: {what} (estimate {estimate:.3e}, cap {cap:.3e})")]
    EnumerationCap {
        what: String,
        estimate: f64,
        cap: f64,
    },
    #[error("simplex lemma violated: {0}")]
    SimplexViolated(String),
    #[error("geo_select exhausted: {0}")]
    GeoSelectExhausted(String),
    #[error("all samples skipped: {0}")]
    NoUsableSamples(String),
    #[error("strategy failure: {0}")]
    Strategy(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    /// True for errors caused by the caller's input rather than by a
    /// computation running out of room.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Invalid(_) | Error::NoPoints | Error::DegenerateFit(_) | Error::RadiusTooLarge { .. }
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
