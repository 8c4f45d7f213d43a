use thiserror::Error;

use crate::alignment::AlignmentError;
use crate::annotation::AnnotationError;
use crate::corpus::CorpusError;
use crate::lda::LdaError;
use crate::coding::CodingError;
use crate::config::ConfigError;
use crate::project::ProjectError;
use crate::qdtm::QdtmError;
use crate::sampling::SamplingError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Lda(#[from] LdaError),
    #[error(transparent)]
    Alignment(#[from] AlignmentError),
    #[error(transparent)]
    Qdtm(#[from] QdtmError),
    #[error(transparent)]
    Annotation(#[from] AnnotationError),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error(transparent)]
    Project(#[from] ProjectError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Coding(#[from] CodingError),
}

impl Error {
    /// True for I/O failures; everything else is a validation error.
    pub fn is_io(&self) -> bool {
        matches!(
            self,
            Error::Corpus(CorpusError::Io(_))
                | Error::Sampling(SamplingError::Io(_))
                | Error::Project(ProjectError::Io(_))
                | Error::Config(ConfigError::Io(_))
                | Error::Coding(CodingError::Io(_))
        )
    }
}
