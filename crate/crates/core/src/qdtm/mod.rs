//! Query-driven two-level topic model.
//!
//! Curated query terms are expanded into concept term sets ([`expand`]), one
//! main topic is trained per concept set with its topic-term prior boosted on
//! the concept terms, and each main grows and retires subtopics through a
//! document-level Chinese restaurant process ([`train_qdtm`]). The resulting
//! [`TopicTree`] is then pruned, deduplicated and exported for annotation.

mod embedding;
mod expand;
mod sampler;
mod tree;

use thiserror::Error;

pub use embedding::{cosine, train_embeddings, EmbeddingParams, EmbeddingTable};
pub use expand::{
    build_concept_set, expand_embedding, expand_frequency, expand_kld, kld_scores, ConceptTerm,
    ConceptTermSet, Expansion, ExpansionSource, PerSource, ScoredTerm,
};
pub use sampler::{train_qdtm, QdtmFit, QdtmParams};
pub use tree::{
    dedupe, export_annotation_bundle, prune_tree, write_bundle_csv, AnnotationBundle, BundleEntry,
    BundlePost, DedupeReport, MainTopic, RankedDoc, SamplerMeta, Subtopic, TopicTree,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QdtmError {
    #[error("no seed terms given")]
    NoSeeds,
    #[error("no seed term occurs in the corpus")]
    SeedsNotInCorpus,
    #[error("no document contains a seed term")]
    EmptyRelevanceSet,
    #[error("no seed term has an embedding")]
    SeedsNotInTable,
    #[error("expansion size must be at least 1")]
    ZeroExpansionSize,
    #[error("source weights must be finite and non-negative, got {0}")]
    InvalidWeight(f64),
    #[error("vocabulary needs at least 2 terms, has {0}")]
    VocabularyTooSmall(usize),
    #[error("embedding dimension must be at least 2, got {0}")]
    DimensionTooSmall(usize),
    #[error("at least one concept set is required")]
    NoConceptSets,
    #[error("concept set {0} is empty")]
    EmptyConceptSet(String),
    #[error("concept set {0} has no term in the vocabulary")]
    ConceptSetOutOfVocabulary(String),
    #[error("corpus has no tokens to train on")]
    EmptyCorpus,
    #[error("invalid hyperparameter: {0}")]
    InvalidParameter(String),
    #[error("prevalence threshold must lie in [0, 1), got {0}")]
    InvalidThreshold(f64),
    #[error("{0} must be at least 1")]
    ZeroCount(&'static str),
    #[error("document {0} is not in the corpus")]
    UnknownDocument(String),
}
