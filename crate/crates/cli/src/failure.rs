use std::fmt;

/// A command failure and the exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub kind: FailureKind,
    pub error: anyhow::Error,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailureKind {
    /// Bad arguments, configuration or input data.
    User,
    Internal,
}

impl Failure {
    pub fn user(error: impl Into<anyhow::Error>) -> Self {
        Self {
            kind: FailureKind::User,
            error: error.into(),
        }
    }

    pub fn internal(error: impl Into<anyhow::Error>) -> Self {
        Self {
            kind: FailureKind::Internal,
            error: error.into(),
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self.kind {
            FailureKind::User => 2,
            FailureKind::Internal => 1,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

impl From<pairnet_core::Error> for Failure {
    fn from(e: pairnet_core::Error) -> Self {
        Self::user(e)
    }
}

pub type CmdResult<T> = Result<T, Failure>;

/// Attaches a message and a failure kind to any error.
pub trait Classify<T> {
    fn user(self, context: impl fmt::Display) -> CmdResult<T>;
    fn internal(self, context: impl fmt::Display) -> CmdResult<T>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn user(self, context: impl fmt::Display) -> CmdResult<T> {
        self.map_err(|e| Failure::user(e.into().context(context.to_string())))
    }

    fn internal(self, context: impl fmt::Display) -> CmdResult<T> {
        self.map_err(|e| Failure::internal(e.into().context(context.to_string())))
    }
}

/// Early-returns a user failure with a formatted message.
#[macro_export]
macro_rules! bail_user {
    ($($arg:tt)*) => {
        return Err($crate::failure::Failure::user(anyhow::anyhow!($($arg)*)))
    };
}
