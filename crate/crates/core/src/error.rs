use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid specification: {0}")]
    InvalidSpec(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("the {0} arm is empty")]
    EmptyArm(&'static str),

    #[error("treatment assignment stayed degenerate after {0} attempts")]
    DegenerateArm(usize),

    #[error("non-finite {net} loss at epoch {epoch}; learning rate {learning_rate} is likely too high")]
    Diverged {
        net: &'static str,
        epoch: usize,
        learning_rate: f64,
    },

    #[error("fold {fold}: training complement lacks the {arm} arm")]
    FoldArm { fold: usize, arm: &'static str },

    #[error("invalid weights: {0}")]
    InvalidWeights(String),

    #[error("singular information matrix: {0}")]
    Singular(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
