use thiserror::Error;

/// Errors produced anywhere in the extraction pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("operation would produce an empty result: {0}")]
    EmptyResult(String),

    #[error("contour is degenerate (collinear or too few points)")]
    DegenerateContour,

    #[error("affine fit is singular: {0}")]
    SingularFit(String),

    #[error("no page frame found: {0}")]
    NoPageFrame(String),

    #[error("region crop contains no ink")]
    EmptyRegion,

    #[error("hierarchy violation: {0}")]
    HierarchyViolation(String),

    #[error("infeasible page spec: {0}")]
    InfeasibleSpec(String),

    #[error("insufficient corpus: {0}")]
    InsufficientCorpus(String),

    #[error("bad correction: {0}")]
    BadCorrection(String),

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("classifier failure: {0}")]
    Classifier(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
