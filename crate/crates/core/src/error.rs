use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },
    #[error("unknown node {0}")]
    UnknownNode(usize),
    #[error("invalid graph: {0}")]
    InvalidGraph(String),
    #[error("split failed: {0}")]
    Split(String),
    #[error("node {0} has zero degree; enable self-loops or drop isolated nodes")]
    IsolatedNode(usize),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("node {0} has no label")]
    MissingLabel(usize),
    #[error("node {0} is not a training node")]
    NotTrainingNode(usize),
    #[error("training diverged at epoch {epoch}: objective {value}")]
    Divergence { epoch: usize, value: f64 },
    #[error("solver did not converge after {iterations} iterations (relative residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },
    #[error("empty distribution: {0}")]
    EmptyDistribution(String),
    #[error("sinkhorn did not converge: marginal error {error:e} after {iterations} iterations")]
    SinkhornNonConvergence { iterations: usize, error: f64 },
    #[error("path enumeration exceeded its cap: {0}")]
    PathOverflow(String),
    #[error("computation graphs of training nodes {0} and {1} share training nodes")]
    OverlappingComputationGraphs(usize, usize),
    #[error("degenerate statistic: {0}")]
    Degenerate(String),
    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(context: impl Into<String>, message: impl ToString) -> Self {
        Error::Parse {
            context: context.into(),
            message: message.to_string(),
        }
    }
}
