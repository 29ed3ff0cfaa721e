use thiserror::Error;

/// Errors raised by the simulation and verification toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("point {point:?} lies outside the agent domain")]
    OutsideDomain { point: Vec<f64> },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("function net would exceed {cap} members (lattice of {nodes} nodes)")]
    NetCapacity { cap: usize, nodes: usize },

    #[error("mixture would need {needed} components, budget is {budget}")]
    ComponentBudget { needed: usize, budget: usize },

    #[error("fixed-point iteration did not converge in {iterations} steps (last error {last_error:e})")]
    NotConverged { iterations: usize, last_error: f64 },

    #[error("unknown check `{0}`")]
    UnknownCheck(String),

    #[error("config validation failed:\n{}", .0.join("\n"))]
    Validation(Vec<String>),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("config parse error: {0}")]
    Toml(#[from] toml::de::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
