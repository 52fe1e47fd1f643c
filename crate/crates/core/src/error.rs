use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid spectrum: {0}")]
    InvalidSpectrum(String),

    #[error("root finder did not converge on [{lo}, {hi}]")]
    RootNotConverged { lo: f64, hi: f64 },

    #[error("inconsistent spectral atom at {location}: {reason}")]
    InconsistentAtom { location: f64, reason: String },

    #[error("unsupported aspect ratio: M = {m} exceeds N = {n}")]
    UnsupportedAspect { m: usize, n: usize },

    #[error("degenerate channel at w = {w}: {reason}")]
    DegenerateChannel { w: f64, reason: String },

    #[error("invalid regime (theta = {theta}, rho1 = {rho1}, rho2 = {rho2}): {reason}")]
    InvalidRegime {
        theta: f64,
        rho1: f64,
        rho2: f64,
        reason: String,
    },

    #[error("matrix denoiser is not finite at eigenvalue {0}")]
    NonFiniteDenoiser(f64),

    #[error("iteration diverged at t = {0}")]
    Divergence(usize),

    #[error("numerical inconsistency: {0}")]
    Numerical(String),

    #[error("state evolution broke down at t = {t}: {state}")]
    RecursionBreakdown { t: usize, state: String },

    #[error("fixed-point solver did not converge; last states {last:?} and {previous:?}")]
    FixedPointNotConverged {
        last: (f64, f64),
        previous: (f64, f64),
    },

    #[error("registration check failed: {0}")]
    Registration(String),

    #[error("linear algebra failure: {0}")]
    LinAlg(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("{failed} of {total} seeds failed")]
    TooManyFailures { failed: usize, total: usize },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
