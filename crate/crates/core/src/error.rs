use thiserror::Error;

/// A configuration value that violates a type or module invariant.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid `{key}`: {reason}")]
pub struct ConfigError {
    key: String,
    reason: String,
}

impl ConfigError {
    pub fn invalid(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Self {
            key: key.into(),
            reason: reason.into(),
        }
    }

    /// The offending configuration key.
    pub fn key(&self) -> &str {
        &self.key
    }

    pub fn reason(&self) -> &str {
        &self.reason
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("unknown stream id {0}")]
    UnknownStream(u16),
    #[error("duplicate stream id {0}")]
    DuplicateStream(u16),
    #[error("simulation has no streams")]
    NoStreams,
    #[error("requestor {requestor} cannot run {kernel} (stream {stream})")]
    RequestorMismatch {
        stream: u16,
        requestor: &'static str,
        kernel: &'static str,
    },
    #[error("requestor {0} is bound to more than one stream")]
    RequestorInUse(&'static str),
    #[error("baseline run took zero cycles; slowdown is undefined")]
    EmptyBaseline,
    #[error("{0}")]
    Experiment(String),
}

pub type Result<T, E = SimError> = std::result::Result<T, E>;
