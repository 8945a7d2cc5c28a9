use thiserror::Error;

/// Errors raised anywhere in the solver pipeline.
#[derive(Debug, Error)]
pub enum PddError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("point ({x}, {y}) lies outside the domain")]
    OutsideDomain { x: f64, y: f64 },

    #[error("matrix is not symmetric positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("finite-difference solver requires a diagonal diffusion matrix (found a12 = {0})")]
    NonDiagonalDiffusion(f64),

    #[error("linear solve failed: {0}")]
    LinearSolve(String),

    #[error("interpolation system is singular or ill-conditioned (condition estimate {0:.3e})")]
    IllConditioned(f64),

    #[error("regression failed: {0}")]
    Fit(String),

    #[error("all {0} trajectories hit the step cap")]
    AllPathsFlagged(usize),

    #[error("node {node}: {source}")]
    Node {
        node: usize,
        #[source]
        source: Box<PddError>,
    },

    #[error("level a = {a}: {source}")]
    Level {
        a: f64,
        #[source]
        source: Box<PddError>,
    },

    #[error("degenerate quantity: {0}")]
    Degenerate(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, PddError>;

impl PddError {
    pub fn at_node(self, node: usize) -> Self {
        PddError::Node {
            node,
            source: Box::new(self),
        }
    }

    pub fn at_level(self, a: f64) -> Self {
        PddError::Level {
            a,
            source: Box::new(self),
        }
    }
}
