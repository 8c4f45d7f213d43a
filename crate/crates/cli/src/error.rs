use cgt_core::alignment::AlignmentError;
use cgt_core::annotation::AnnotationError;
use cgt_core::coding::CodingError;
use cgt_core::config::ConfigError;
use cgt_core::corpus::CorpusError;
use cgt_core::lda::LdaError;
use cgt_core::project::ProjectError;
use cgt_core::qdtm::QdtmError;
use cgt_core::sampling::SamplingError;
use thiserror::Error;

/// Exit status for validation failures.
pub const EXIT_INVALID: i32 = 2;
/// Exit status for I/O failures.
pub const EXIT_IO: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] cgt_core::Error),
    #[error("{context}: {source}")]
    Io { context: String, source: std::io::Error },
    #[error("artifact {artifact} not found; run `cgt {step}` first")]
    Missing { artifact: String, step: &'static str },
    #[error("{0}")]
    Invalid(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) if e.is_io() => EXIT_IO,
            CliError::Io { .. } => EXIT_IO,
            _ => EXIT_INVALID,
        }
    }

    pub fn io(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> Self {
        let context = context.into();
        move |source| CliError::Io { context, source }
    }

    pub fn csv(context: impl Into<String>) -> impl FnOnce(csv::Error) -> Self {
        let context = context.into();
        move |e| match e.into_kind() {
            csv::ErrorKind::Io(source) => CliError::Io { context, source },
            other => CliError::Invalid(format!("{context}: {other:?}")),
        }
    }
}

macro_rules! from_core {
    ($($t:ty),*) => {
        $(impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Core(e.into())
            }
        })*
    };
}

from_core!(
    AlignmentError,
    AnnotationError,
    CodingError,
    ConfigError,
    CorpusError,
    LdaError,
    ProjectError,
    QdtmError,
    SamplingError
);

pub type Result<T, E = CliError> = std::result::Result<T, E>;
