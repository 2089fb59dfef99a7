use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("duplicate row for date {date} symbol {symbol}")]
    DuplicateRow { date: String, symbol: String },

    #[error("empty panel")]
    EmptyPanel,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("horizon {horizon} from day index {day} runs past the last date")]
    HorizonOutOfRange { day: usize, horizon: usize },

    #[error("panel too short: need {needed} days, have {have}")]
    PanelTooShort { needed: usize, have: usize },

    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize },

    #[error("singular covariance: {0}")]
    Singular(String),

    #[error("degenerate population: {0}")]
    DegeneratePopulation(String),

    #[error("malformed tree: {0}")]
    MalformedTree(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn in_stage(self, stage: &str) -> Self {
        Error::Stage {
            stage: stage.to_string(),
            source: Box::new(self),
        }
    }
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
