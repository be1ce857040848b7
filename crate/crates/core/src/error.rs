use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    Shape {
        expected: Vec<usize>,
        got: Vec<usize>,
    },

    #[error("invalid schedule: {0}")]
    Schedule(String),

    #[error("step {t} out of range for a {steps}-step schedule")]
    StepOutOfRange { t: usize, steps: usize },

    #[error("unknown token: {0}")]
    UnknownToken(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("no buffered null text features for block {block} at step {t}")]
    MissingBuffer { block: usize, t: usize },

    #[error("attention control: {0}")]
    Control(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("container format: {0}")]
    Container(String),

    #[error("record does not match schedule: {0}")]
    RecordMismatch(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub(crate) fn check_shape(expected: &[usize], got: &[usize]) -> Result<()> {
    if expected != got {
        return Err(Error::Shape {
            expected: expected.to_vec(),
            got: got.to_vec(),
        });
    }
    Ok(())
}
