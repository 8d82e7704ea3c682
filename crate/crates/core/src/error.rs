use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Domain(String),

    #[error("population cap exceeded: {nodes} nodes > cap {cap} (horizon {horizon})")]
    PopulationCap { nodes: u64, cap: u64, horizon: f64 },

    #[error(
        "horizon t = {t} exceeds the direct-simulation bound {bound}; \
         use the hybrid estimator (`deviation`) instead"
    )]
    Infeasible { t: f64, bound: f64 },

    #[error("tail curve does not cover the required range: {0}")]
    Coverage(String),

    #[error("tail curve horizon {curve} does not match query split time {query}")]
    EllMismatch { curve: f64, query: f64 },

    #[error("curve reach insufficient: truncated tail bound {bound:.3e} is {ratio:.2}% of the partial integral (needs < 1%)")]
    InsufficientReach { bound: f64, ratio: f64 },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
