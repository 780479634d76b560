use alloc::string::String;

/// Errors produced by the engine. Each variant carries enough context to be
/// actionable without a debugger.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A layer name was not found in the model.
    UnknownLayer(String),
    /// Two models that must share an architecture do not.
    ArchMismatch(String),
    /// Tensor or batch dimensions are inconsistent.
    ShapeMismatch(String),
    /// A configuration value is out of its legal range.
    InvalidConfig(String),
    /// A position references a channel outside the layer's channel count.
    PositionOutOfRange {
        layer: String,
        channel: usize,
        channels: usize,
    },
    /// The regulation position set is empty; regulation must be skipped.
    EmptyPositions,
    /// An operation that needs data received an empty set.
    EmptyInput(String),
    /// Profile aggregation over runs with differing layer sets.
    InconsistentProfiles(String),
    /// Average accuracy requested before the final column was complete.
    IncompleteMatrix { have: usize, want: usize },
    /// Training produced a non-finite loss; the run cannot continue.
    NonFinite {
        task_id: usize,
        step: usize,
        loss: f64,
    },
}

impl core::fmt::Display for Error {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            Error::UnknownLayer(name) => write!(f, "unknown layer name: {name}"),
            Error::ArchMismatch(msg) => write!(f, "architecture mismatch: {msg}"),
            Error::ShapeMismatch(msg) => write!(f, "shape mismatch: {msg}"),
            Error::InvalidConfig(msg) => write!(f, "invalid configuration: {msg}"),
            Error::PositionOutOfRange {
                layer,
                channel,
                channels,
            } => write!(
                f,
                "position {layer}:{channel} out of range (layer has {channels} channels)"
            ),
            Error::EmptyPositions => write!(f, "empty position set: regulation has nothing to do"),
            Error::EmptyInput(what) => write!(f, "empty input: {what}"),
            Error::InconsistentProfiles(msg) => write!(f, "inconsistent profiles: {msg}"),
            Error::IncompleteMatrix { have, want } => write!(
                f,
                "accuracy matrix final column has {have} entries, need {want}"
            ),
            Error::NonFinite {
                task_id,
                step,
                loss,
            } => write!(
                f,
                "non-finite loss {loss} at task {task_id} step {step}; aborting run"
            ),
        }
    }
}

impl core::error::Error for Error {}

pub type Result<T> = core::result::Result<T, Error>;
