//! Core engine of the grounded-theory workbench.
//!
//! The modules follow the three phases of the workflow: exploratory LDA with
//! concurrent validation ([`corpus`], [`lda`], [`alignment`]), query-driven
//! two-level topic modelling ([`qdtm`]), multi-annotator evaluation
//! ([`annotation`]), theoretical sampling ([`sampling`]) and the project
//! persistence and coding support used by the CLI and HTTP service
//! ([`project`], [`coding`]).

pub mod alignment;
pub mod annotation;
pub mod coding;
pub mod config;
pub mod corpus;
mod error;
pub mod lda;
pub mod project;
pub mod qdtm;
pub mod sampling;

pub use error::{Error, Result};

pub use alignment::{AlignmentMatrix, GtCodebook, QueryTermSet};
pub use annotation::{AdjudicationResult, AgreementReport, AnnotationSession, FinalTopicSet, TopicAnnotation};
pub use config::WorkbenchConfig;
pub use corpus::{Corpus, Document, PreprocessConfig, Vocabulary};
pub use lda::{LdaModel, LdaParams, ModelReport, TopicSummary};
pub use project::Project;
pub use qdtm::{AnnotationBundle, ConceptTermSet, EmbeddingTable, TopicTree};
pub use sampling::{ClassificationTable, Classifier, FrequencyHistogram};


