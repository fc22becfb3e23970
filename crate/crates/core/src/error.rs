use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("invalid index: {0}")]
    Index(String),

    #[error("argument outside domain: {0}")]
    Domain(String),

    #[error("degenerate support: {0}")]
    DegenerateSupport(String),

    #[error("degenerate conditioning: marginal density of the heterogeneity is zero at tau = {tau}")]
    DegenerateConditioning { tau: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("non-finite likelihood contribution at observation {index}: {detail}")]
    Numeric { index: usize, detail: String },

    #[error("estimation failed: {0}")]
    Estimation(String),

    #[error("ambiguous eigen-decomposition: eigenvalue gap {gap:.3e} below tolerance {tol:.3e}")]
    AmbiguousDecomposition { gap: f64, tol: f64 },

    #[error("ill-conditioned inversion of {what}: condition number {cond:.3e}")]
    Conditioning { what: String, cond: f64 },

    #[error("cutoff placement: {0}; choose a partition where every density is positive at both cutoffs")]
    CutoffPlacement(String),

    #[error("ordering ambiguity: conditional means {0:.12} and {1:.12} are tied")]
    OrderingAmbiguity(f64, f64),

    #[error("decomposition quality: {0}")]
    DecompositionQuality(String),

    #[error("non-unique quantile at alpha = {alpha}: the CDF is flat around {at}")]
    NonUniqueQuantile { alpha: f64, at: f64 },

    #[error("bid density vanishes at b = {bid}; value quantile derivative blows up")]
    DerivativeBlowup { bid: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
