use thiserror::Error;

/// Errors raised by the library. Variants map onto the CLI exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("config: {0}")]
    Config(String),
    #[error("model: {0}")]
    Model(String),
    #[error("input: {0}")]
    Input(String),
    #[error("simulation: {0}")]
    Simulation(String),
    #[error("solver: {0}")]
    Solver(String),
    #[error("feasibility: {0}")]
    Feasibility(String),
    #[error("moments: {0}")]
    Moments(String),
}

pub type Result<T> = std::result::Result<T, Error>;
