use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParameters(String),

    #[error("domain error: {0}")]
    Domain(String),

    /// Bubble radius fell below the collapse floor.
    #[error("model breakdown: r{bubble} = {radius:e} below floor")]
    RadiusFloor { bubble: usize, radius: f64 },

    /// The acceleration system lost rank, typically |u| approaching the sound speed.
    #[error("model breakdown: near-singular acceleration system (det = {det:e}, threshold = {threshold:e})")]
    NearSingular { det: f64, threshold: f64 },

    #[error("step size underflow: h = {h:e} at tau = {tau}")]
    StepUnderflow { h: f64, tau: f64 },

    #[error("non-finite state at tau = {tau}")]
    NonFinite { tau: f64 },

    #[error("degenerate tangent frame: {0}")]
    Degenerate(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("classification refused: spectrum not converged")]
    Unconverged,

    /// A Lyapunov run failed part-way; the running exponents are kept for diagnostics.
    #[error("lyapunov run failed after {elapsed_periods} periods: {source}")]
    Spectrum {
        source: Box<Error>,
        partial: Vec<f64>,
        elapsed_periods: usize,
    },

    #[error("config error at `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    /// True for failures of the physics or the numerics, as opposed to bad input.
    pub fn is_breakdown(&self) -> bool {
        match self {
            Error::RadiusFloor { .. }
            | Error::NearSingular { .. }
            | Error::StepUnderflow { .. }
            | Error::NonFinite { .. }
            | Error::Degenerate(_)
            | Error::Unconverged => true,
            Error::Spectrum { source, .. } => source.is_breakdown(),
            _ => false,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}
