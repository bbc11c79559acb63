//! Errors classified by exit code.

use std::fmt;
use std::process::ExitCode;

use dualamr::training::TrainError;
use dualamr::ModelError;
use dualamr_numeric::NumericError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Usage,
    Data,
    Numeric,
}

#[derive(Debug)]
pub struct Failure {
    pub kind: Kind,
    pub error: anyhow::Error,
}

impl Failure {
    pub fn new(kind: Kind, error: impl Into<anyhow::Error>) -> Self {
        Failure {
            kind,
            error: error.into(),
        }
    }

    pub fn usage(msg: impl fmt::Display) -> Self {
        Failure::new(Kind::Usage, anyhow::anyhow!("{msg}"))
    }

    pub fn data(msg: impl fmt::Display) -> Self {
        Failure::new(Kind::Data, anyhow::anyhow!("{msg}"))
    }

    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self.kind {
            Kind::Usage => 1,
            Kind::Data => 2,
            Kind::Numeric => 3,
        })
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

impl From<NumericError> for Failure {
    fn from(e: NumericError) -> Self {
        Failure::new(Kind::Numeric, e)
    }
}

impl From<ModelError> for Failure {
    fn from(e: ModelError) -> Self {
        let kind = match e {
            ModelError::Numeric(_) => Kind::Numeric,
            _ => Kind::Data,
        };
        Failure::new(kind, e)
    }
}

impl From<TrainError> for Failure {
    fn from(e: TrainError) -> Self {
        let kind = match e {
            TrainError::Numeric(_) | TrainError::NonFinite { .. } => Kind::Numeric,
            _ => Kind::Data,
        };
        Failure::new(kind, e)
    }
}

/// Attaches context and a kind to any error.
pub trait Classify<T> {
    fn data(self, context: impl FnOnce() -> String) -> Result<T, Failure>;
    fn usage(self, context: impl FnOnce() -> String) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn data(self, context: impl FnOnce() -> String) -> Result<T, Failure> {
        self.map_err(|e| Failure::new(Kind::Data, e.into().context(context())))
    }

    fn usage(self, context: impl FnOnce() -> String) -> Result<T, Failure> {
        self.map_err(|e| Failure::new(Kind::Usage, e.into().context(context())))
    }
}
