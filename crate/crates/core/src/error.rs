use thiserror::Error;

use crate::data::codec::CodecError;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape error in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("degenerate quaternion average at frame {frame} (norm {norm:e})")]
    DegenerateAverage { frame: usize, norm: f64 },

    #[error("non-finite value produced by op #{op_id} ({op})")]
    NonFinite { op_id: usize, op: &'static str },

    #[error("backward already run on this tape; build a new graph")]
    BackwardTwice,

    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("channel {channel} has zero standard deviation")]
    ZeroVariance { channel: usize },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("codec: {0}")]
    Codec(#[from] CodecError),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("training stopped at epoch {epoch}, batch {batch}: {source}")]
    Training {
        epoch: usize,
        batch: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("config: {0}")]
    Config(String),

    #[error("data: {0}")]
    Data(String),

    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// True for non-finite values, directly or inside a training context.
    pub fn is_numeric(&self) -> bool {
        match self {
            Error::NonFinite { .. } | Error::Numeric(_) => true,
            Error::Training { source, .. } => source.is_numeric(),
            _ => false,
        }
    }

    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }
}
