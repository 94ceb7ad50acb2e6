use thiserror::Error;

/// Errors raised by the model, trainer, feature and evaluation layers.
///
/// Every variant is a structural problem with the caller's input; none of
/// them is retryable.
#[derive(Debug, Error)]
pub enum Error {
    #[error("need at least 2 classes, got q = {0}")]
    TooFewClasses(usize),

    #[error("class index {index} is outside 1..={q}")]
    ClassOutOfRange { index: usize, q: usize },

    #[error("invalid class pair ({lo}, {hi}) for q = {q}: need 1 <= lo < hi <= q")]
    InvalidPair { lo: usize, hi: usize, q: usize },

    #[error("feature dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("classifier references feature {index} but input has {len} features")]
    FeatureOutOfRange { index: usize, len: usize },

    #[error("malformed classifier: {0}")]
    MalformedClassifier(String),

    #[error("malformed model: {0}")]
    MalformedModel(String),

    #[error("{0} class has no rows")]
    EmptyClass(&'static str),

    #[error("rows have zero features")]
    ZeroDimensional,

    #[error("rows have inconsistent lengths ({first} vs {other})")]
    RaggedRows { first: usize, other: usize },

    #[error(
        "validation split leaves no {side} rows for fitting; lower validation_fraction \
         (currently {fraction})"
    )]
    EmptyFitSide { side: &'static str, fraction: f64 },

    #[error("class {0} has no training segments")]
    MissingClass(usize),

    #[error("pair ({lo}, {hi}): {source}")]
    Pair {
        lo: usize,
        hi: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("non-finite sample in channel {channel} at index {index}")]
    NonFiniteSample { channel: usize, index: usize },

    #[error("signal needs at least 2 samples, got {0}")]
    SignalTooShort(usize),

    #[error("invalid segment: {0}")]
    InvalidSegment(String),

    #[error("feature vector for record {record_id} segment {segment_index} is already BBA-corrected")]
    AlreadyCorrected {
        record_id: String,
        segment_index: usize,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("empty partition")]
    EmptyPartition,

    #[error("unlabeled segment in record {0}")]
    Unlabeled(String),

    #[error("record {record_id} mixes labels {first} and {other}")]
    MixedRecordLabels {
        record_id: String,
        first: usize,
        other: usize,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn in_pair(self, lo: usize, hi: usize) -> Self {
        Error::Pair {
            lo,
            hi,
            source: Box::new(self),
        }
    }
}
