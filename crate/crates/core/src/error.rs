use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration, e.g. a workspace too small to scatter the
    /// blocks a goal requires, or a goal referencing unknown objects.
    #[error("configuration error: {0}")]
    Config(String),

    /// No path exists in the goal graph between the two states.
    #[error("goal unreachable from the given state")]
    Unreachable,

    /// Checkpoint decode failure (bad magic, version or shapes).
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// Classifier/optimizer training cannot proceed (e.g. degenerate
    /// single-class dataset).
    #[error("training error: {0}")]
    Training(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
