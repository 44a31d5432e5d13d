use std::path::PathBuf;

use thiserror::Error;

use crate::dataset::Side;

/// Errors raised anywhere in the estimation pipeline.
#[derive(Debug, Error)]
pub enum RdError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed csv: {0}")]
    Csv(String),

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("non-numeric value `{value}` in column `{column}` (data row {row})")]
    NonNumeric {
        column: String,
        row: usize,
        value: String,
    },

    #[error("zero usable rows")]
    NoUsableRows,

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("insufficient observations on the {side} side: need {needed}, found {found}")]
    InsufficientObservations {
        side: Side,
        needed: usize,
        found: usize,
    },

    #[error("rank-deficient design on the {side} side: fewer distinct scores than coefficients")]
    RankDeficient { side: Side },

    #[error("ill-conditioned design on the {side} side (reciprocal condition {rcond:.3e})")]
    IllConditioned { side: Side, rcond: f64 },

    #[error("derivative order {order} exceeds fitted polynomial order {max}")]
    DerivativeOutOfRange { order: usize, max: usize },

    #[error("bias degenerate; enable regularization")]
    BiasDegenerate,

    #[error("cluster-robust variance needs at least 2 clusters, found {found}")]
    TooFewClusters { found: usize },

    #[error("nearest-neighbor matches k={k} exceed the available sample on the {side} side (n={n})")]
    NeighborsExceedSample { side: Side, k: usize, n: usize },

    #[error("covariate `{column}` is collinear with the other regressors")]
    CollinearCovariate { column: String },

    #[error("no covariates attached to the data")]
    MissingCovariates,

    #[error("no cluster labels attached to the data")]
    MissingClusters,

    #[error("no observations on the {side} side")]
    EmptySide { side: Side },

    #[error("empty window: no rows satisfy the requested restriction")]
    EmptyWindow,

    #[error("degenerate pilot estimate: {0}")]
    DegeneratePilot(String),

    #[error("conflicting bandwidth specification: {0}")]
    ConflictingBandwidth(String),

    #[error("{0}")]
    Numeric(String),
}

impl RdError {
    /// Stable machine-readable name of the error variant.
    pub fn kind(&self) -> &'static str {
        match self {
            RdError::Io { .. } => "io",
            RdError::Csv(_) => "csv",
            RdError::MissingColumn(_) => "missing_column",
            RdError::NonNumeric { .. } => "non_numeric",
            RdError::NoUsableRows => "no_usable_rows",
            RdError::InvalidInput(_) => "invalid_input",
            RdError::InsufficientObservations { .. } => "insufficient_observations",
            RdError::RankDeficient { .. } => "rank_deficient",
            RdError::IllConditioned { .. } => "ill_conditioned",
            RdError::DerivativeOutOfRange { .. } => "derivative_out_of_range",
            RdError::BiasDegenerate => "bias_degenerate",
            RdError::TooFewClusters { .. } => "too_few_clusters",
            RdError::NeighborsExceedSample { .. } => "neighbors_exceed_sample",
            RdError::CollinearCovariate { .. } => "collinear_covariate",
            RdError::MissingCovariates => "missing_covariates",
            RdError::MissingClusters => "missing_clusters",
            RdError::EmptySide { .. } => "empty_side",
            RdError::EmptyWindow => "empty_window",
            RdError::DegeneratePilot(_) => "degenerate_pilot",
            RdError::ConflictingBandwidth(_) => "conflicting_bandwidth",
            RdError::Numeric(_) => "numeric",
        }
    }
}

pub type Result<T, E = RdError> = std::result::Result<T, E>;
