use thiserror::Error;

/// Errors raised by the numerical routines in this crate.
///
/// Variants split into two families: input validation problems
/// (shape mismatches, malformed files, out-of-range parameters) and
/// numerical failures (degenerate spectra, rank loss, blow-up). The CLI maps
/// the two families to different exit codes, see [`Error::is_numerical`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: String,
        found: String,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("probability entry ({row}, {col}) = {value} lies outside [0, 1]")]
    InvalidProbability { row: usize, col: usize, value: f64 },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("degenerate spectral gap: |lambda_{index}| = {value:e} below tolerance {tol:e}")]
    DegenerateGap { index: usize, value: f64, tol: f64 },

    #[error("degenerate spectrum: eigenvalue separation {separation:e} below {threshold:e}")]
    DegenerateSpectrum { separation: f64, threshold: f64 },

    #[error("rank deficient ({context}): smallest eigenvalue {smallest:e} vs largest {largest:e}")]
    RankDeficient {
        context: &'static str,
        smallest: f64,
        largest: f64,
    },

    #[error("P-velocity not realizable at rank d: null-null block norm {null_norm:e} exceeds {threshold:e}")]
    NotRealizable { null_norm: f64, threshold: f64 },

    #[error("non-finite state at step {step}")]
    NonFiniteState { step: usize },

    #[error("degenerate cross-covariance{}: singular value {sigma:e} below {threshold:e}", frame.map(|f| format!(" at frame {f}")).unwrap_or_default())]
    DegenerateCross {
        frame: Option<usize>,
        sigma: f64,
        threshold: f64,
    },

    #[error("anchor block rank deficient: {anchors} anchors, sigma_d/sigma_1 = {ratio:e}")]
    AnchorRankDeficient { anchors: usize, ratio: f64 },

    #[error("ill-conditioned design matrix: condition number {cond:e}")]
    IllConditioned { cond: f64 },

    #[error("insufficient samples: {samples} samples for {features} features")]
    InsufficientSamples { samples: usize, features: usize },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::DegenerateGap { .. }
                | Error::DegenerateSpectrum { .. }
                | Error::RankDeficient { .. }
                | Error::NotRealizable { .. }
                | Error::NonFiniteState { .. }
                | Error::DegenerateCross { .. }
                | Error::AnchorRankDeficient { .. }
                | Error::IllConditioned { .. }
        )
    }

    pub(crate) fn shape(context: &'static str, expected: (usize, usize), found: (usize, usize)) -> Self {
        Error::DimensionMismatch {
            context,
            expected: format!("{}x{}", expected.0, expected.1),
            found: format!("{}x{}", found.0, found.1),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
