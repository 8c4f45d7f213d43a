//! Workbench configuration file (JSON). Every section and field is optional;
//! missing values take the defaults below.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::PreprocessConfig;
use crate::lda::SweepConfig;
use crate::qdtm::{EmbeddingParams, PerSource, QdtmParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkbenchConfig {
    pub seed: u64,
    pub preprocess: PreprocessConfig,
    /// Terms in fewer documents than this are dropped before modelling.
    pub min_df: usize,
    pub lda: LdaConfig,
    pub qdtm: QdtmConfig,
    pub annotation: AnnotationConfig,
    pub sampling: SamplingConfig,
    pub coding: CodingConfig,
    pub server: ServerConfig,
}

impl Default for WorkbenchConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            preprocess: PreprocessConfig::default(),
            min_df: 5,
            lda: LdaConfig::default(),
            qdtm: QdtmConfig::default(),
            annotation: AnnotationConfig::default(),
            sampling: SamplingConfig::default(),
            coding: CodingConfig::default(),
            server: ServerConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LdaConfig {
    /// Topic counts tried by `lda sweep`.
    pub k_values: Vec<usize>,
    pub sweep: SweepConfig,
    pub summary_terms: usize,
    pub summary_docs: usize,
    /// Size of the exploratory random subset.
    pub subset_size: usize,
}

impl Default for LdaConfig {
    fn default() -> Self {
        Self { k_values: (5..=20).collect(), sweep: SweepConfig::default(), summary_terms: 20, summary_docs: 10, subset_size: 200 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QdtmConfig {
    /// Candidates requested from each expansion source.
    pub expansion_size: usize,
    pub source_caps: PerSource<usize>,
    pub source_weights: PerSource<f64>,
    pub embedding: EmbeddingParams,
    pub sampler: QdtmParams,
    pub min_prevalence: f64,
    /// Window of top posts checked for duplicates.
    pub dedupe_posts: usize,
    pub bundle_posts: usize,
    pub bundle_terms: usize,
}

impl Default for QdtmConfig {
    fn default() -> Self {
        Self {
            expansion_size: 30,
            source_caps: PerSource::splat(30),
            source_weights: PerSource::splat(1.0),
            embedding: EmbeddingParams::default(),
            sampler: QdtmParams::default(),
            min_prevalence: 0.002,
            dedupe_posts: 10,
            bundle_posts: 5,
            bundle_terms: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnnotationConfig {
    pub annotators: Vec<String>,
}

impl Default for AnnotationConfig {
    fn default() -> Self {
        Self { annotators: vec!["annotator1".into(), "annotator2".into(), "annotator3".into()] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
    pub sample_size: usize,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self { sample_size: 50 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CodingConfig {
    pub posts_per_topic: usize,
    pub token_ceiling: usize,
}

impl Default for CodingConfig {
    fn default() -> Self {
        Self { posts_per_topic: 10, token_ceiling: 512 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerConfig {
    pub address: String,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self { address: "127.0.0.1:8080".into() }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("reading config: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid config: {0}")]
    Parse(#[from] serde_json::Error),
}

impl WorkbenchConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}
