use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed or unusable input data (word lists, gold tables, checkpoints).
    #[error("input error: {0}")]
    Input(String),

    /// Inconsistent configuration (shapes, rates, sizes).
    #[error("config error: {0}")]
    Config(String),

    /// A non-finite value showed up during training.
    #[error("numeric error: non-finite value in {tensor}")]
    Numeric { tensor: String },

    /// The flow network cannot carry the requested demand.
    #[error("flow demand {demand} infeasible; max feasible flow is {max_feasible}")]
    Infeasible { demand: u64, max_feasible: u64 },

    #[error("training failed at iteration {iteration}: {source}")]
    Train {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(String),
}

pub type Result<T> = std::result::Result<T, Error>;
