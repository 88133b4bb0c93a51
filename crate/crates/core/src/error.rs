//! Shared error type for the whole pipeline.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("covariance is not symmetric (max asymmetry {max_asym:.3e})")]
    NotSymmetric { max_asym: f64 },

    #[error("covariance is not positive definite")]
    NotPositiveDefinite,

    #[error("frame matrix is singular (|det| = {det:.3e})")]
    SingularFrame { det: f64 },

    #[error("summed precision matrix is singular")]
    SingularPrecision,

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("component count {k} exceeds the {n} available observations")]
    TooFewObservations { k: usize, n: usize },

    #[error("expected {expected} frames, got {got}")]
    FrameCountMismatch { expected: usize, got: usize },

    #[error("entity `{0}` missing from state")]
    MissingEntity(String),

    #[error("unknown skill `{0}`")]
    UnknownSkill(String),

    #[error("demonstrations disagree on entities: {0}")]
    InconsistentDemos(String),

    #[error("missing task parameter `{0}`")]
    MissingParam(String),

    #[error(
        "no plan found: {expanded} states expanded, {frontier} frontier entries, \
         best goal distance {best_goal_distance:.4}"
    )]
    NoPlanFound {
        expanded: usize,
        frontier: usize,
        best_goal_distance: f64,
    },

    #[error("edge ({0} -> {1}) not in the network")]
    EdgeAbsent(String, String),

    #[error("node `{0}` has no outgoing edges")]
    NoOutgoingEdges(String),

    #[error("{path}: {message}")]
    Schema { path: String, message: String },

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
