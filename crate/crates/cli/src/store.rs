//! Artifact names used inside a project and the composite records stored
//! under them.

use cgt_core::alignment::{AlignmentMatrix, MatchDecision, ModelTopics, NewTopic};
use cgt_core::annotation::{AdjudicationResult, AgreementReport};
use cgt_core::project::Project;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const CORPUS: &str = "corpus";
pub const PREPARED: &str = "corpus.prepared";
pub const SUBSET: &str = "subset";
pub const CODEBOOK: &str = "codebook";
pub const SWEEP: &str = "lda.sweep";
pub const ALIGNMENT: &str = "alignment";
pub const CURATION: &str = "curation";
pub const QUERY_SETS: &str = "query-sets";
pub const EMBEDDINGS: &str = "embeddings";
pub const CONCEPT_SETS: &str = "concept-sets";
pub const TREE_RAW: &str = "tree.raw";
pub const TREE: &str = "tree";
pub const BUNDLE: &str = "bundle";
pub const SESSION: &str = "session";
pub const AUTH: &str = "auth";
pub const ADJUDICATION: &str = "adjudication";
pub const FINAL_SET: &str = "final-set";
pub const CLASSIFICATION: &str = "classification";
pub const HISTOGRAM: &str = "histogram";
pub const CODING_REPORT: &str = "coding.report";
pub const WORKBOOK: &str = "coding.workbook";

/// Model id used in alignment tables, e.g. `lda13`.
pub fn model_id(k: usize) -> String {
    format!("lda{k}")
}

pub fn model_artifact(id: &str) -> String {
    format!("model.{id}")
}

pub fn sample_artifact(label: &str) -> String {
    format!("sample.{label}")
}

/// The command that produces each artifact, for "run this first" hints.
fn producer(name: &str) -> &'static str {
    match name {
        CORPUS => "ingest",
        PREPARED => "preprocess",
        CODEBOOK | SUBSET => "explore",
        ALIGNMENT => "align",
        QUERY_SETS => "terms",
        TREE_RAW | CONCEPT_SETS => "qdtm train",
        TREE => "qdtm prune",
        BUNDLE => "qdtm export",
        SESSION | AUTH => "annotate create",
        ADJUDICATION | FINAL_SET => "annotate adjudicate",
        CLASSIFICATION => "sample classify",
        WORKBOOK => "coding export",
        n if n.starts_with("model.") => "lda train",
        _ => "the producing step",
    }
}

/// Loads a required artifact, naming the missing pipeline step on failure.
pub fn require<T: DeserializeOwned>(project: &Project, name: &str) -> Result<T> {
    project
        .try_get_json(name)?
        .ok_or_else(|| CliError::Missing { artifact: name.to_string(), step: producer(name) })
}

/// Researcher decisions behind the alignment matrix, kept so the matrix can
/// be re-derived after edits.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AlignmentInput {
    /// LDA model ids (`lda13`) shown to the researcher.
    pub models: Vec<String>,
    #[serde(default)]
    pub matches: Vec<MatchDecision>,
    #[serde(default)]
    pub new_topics: Vec<NewTopic>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentState {
    pub input: AlignmentInput,
    pub models: Vec<ModelTopics>,
    pub matrix: AlignmentMatrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adjudication {
    pub result: AdjudicationResult,
    pub report: AgreementReport,
}

/// Researcher bearer token for the HTTP service.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Auth {
    pub researcher_token: String,
}
