use thiserror::Error;

/// Errors raised across the synchronization pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("schema violation: {0}")]
    Schema(String),

    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    #[error("graph is disconnected ({components} components)")]
    Disconnected { components: usize },

    #[error("simulated view graph is disconnected ({components} components); widen the field of view or add points")]
    SparseSimulation { components: usize },

    #[error("pruning disconnected the graph; components: {components:?}")]
    DisconnectedAfterPruning { components: Vec<Vec<usize>> },

    #[error("assembly failed: {0}")]
    Assembly(String),

    #[error("degenerate configuration: {0}")]
    Degenerate(String),

    #[error("frame {frame} has a degenerate rounded scale ({scale:e})")]
    DegenerateScale { frame: usize, scale: f64 },

    #[error("conic program is infeasible: {0}")]
    Infeasible(String),

    #[error("solver failure: {0}")]
    Solver(String),

    #[error("non-finite residual at correspondence {0}")]
    NonFiniteResidual(usize),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
