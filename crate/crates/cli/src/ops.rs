//! Pipeline steps shared by the command line and the HTTP service. Each
//! reads its inputs from the project and records its output as a new
//! artifact version.

use cgt_core::alignment::{derive_query_sets, record_alignment, CurationEdit, GtCodebook, ModelTopics, QueryTermSet};
use cgt_core::annotation::{
    adjudicate, apply_exclusions, create_session, stages_from_mains, AnnotationError, AnnotationSession,
    FinalTopicSet,
};
use cgt_core::coding::{coding_load_report, coding_posts, export_coding_sheets, CodingLoadReport, CodingWorkbook, TopicPosts};
use cgt_core::project::Project;
use cgt_core::sampling::{draw_sample, write_sample_jsonl, ClassificationTable, SampleRecord};
use cgt_core::{AnnotationBundle, Corpus, LdaModel, TopicTree, WorkbenchConfig};
use rand::Rng;
use serde_json::json;

use crate::error::{CliError, Result};
use crate::store::{self, require, Adjudication, AlignmentInput, AlignmentState, Auth};

pub fn load_model(project: &Project, id: &str, corpus: &Corpus) -> Result<LdaModel> {
    let model: LdaModel = require(project, &store::model_artifact(id))?;
    if model.vocab_size != corpus.vocabulary.len() {
        return Err(CliError::Invalid(format!(
            "model {id} was trained on a different vocabulary ({} terms, corpus has {}); retrain it",
            model.vocab_size,
            corpus.vocabulary.len()
        )));
    }
    Ok(model)
}

/// Rebuilds the alignment matrix from a complete set of decisions.
pub fn record_alignment_input(project: &mut Project, input: AlignmentInput) -> Result<AlignmentState> {
    let codebook: GtCodebook = require(project, store::CODEBOOK)?;
    let corpus: Corpus = require(project, store::PREPARED)?;
    let models = input
        .models
        .iter()
        .map(|id| Ok(ModelTopics::from_lda(id.clone(), &load_model(project, id, &corpus)?, &corpus.vocabulary)))
        .collect::<Result<Vec<_>>>()?;
    let matrix = record_alignment(&codebook, &models, &input.matches, &input.new_topics)?;
    let state = AlignmentState { input, models, matrix };
    project.put_json(
        store::ALIGNMENT,
        &state,
        "align",
        json!({"models": state.input.models, "matches": state.input.matches.len(), "new_topics": state.input.new_topics.len()}),
    )?;
    Ok(state)
}

/// Derives the query term sets. New `edits` replace the stored ones only
/// when derivation succeeds.
pub fn derive_terms(project: &mut Project, edits: Option<Vec<CurationEdit>>) -> Result<Vec<QueryTermSet>> {
    let state: AlignmentState = require(project, store::ALIGNMENT)?;
    let corpus: Corpus = require(project, store::PREPARED)?;
    let current: Vec<CurationEdit> = match &edits {
        Some(e) => e.clone(),
        None => project.try_get_json(store::CURATION)?.unwrap_or_default(),
    };
    let sets = derive_query_sets(&state.matrix, &state.models, &current, Some(&corpus.vocabulary))?;
    if let Some(e) = edits {
        project.put_json(store::CURATION, &e, "terms.edit", json!({"topics": e.len()}))?;
    }
    let removed: usize = sets.iter().map(|s| s.removed.len()).sum();
    project.put_json(store::QUERY_SETS, &sets, "terms", json!({"sets": sets.len(), "removed": removed}))?;
    Ok(sets)
}

fn new_token() -> String {
    format!("{:032x}", rand::rng().random::<u128>())
}

/// The researcher token, issued on first use.
pub fn ensure_auth(project: &mut Project) -> Result<Auth> {
    if let Some(auth) = project.try_get_json::<Auth>(store::AUTH)? {
        return Ok(auth);
    }
    let auth = Auth { researcher_token: new_token() };
    project.put_json(store::AUTH, &auth, "auth.issue", json!({"role": "researcher"}))?;
    Ok(auth)
}

/// Opens an annotation session. Each entry of `stage_groups` lists main
/// topic ids annotated together; leftover mains form the final stage.
pub fn open_session(project: &mut Project, annotators: &[String], stage_groups: &[Vec<String>]) -> Result<AnnotationSession> {
    let bundle: AnnotationBundle = require(project, store::BUNDLE)?;
    let stages = if stage_groups.is_empty() { Vec::new() } else { stages_from_mains(&bundle, stage_groups) };
    let session = create_session(&bundle, annotators, &stages)?;
    let sizes: Vec<usize> = (0..session.stage_count()).map(|s| session.topics.iter().filter(|t| t.stage == s).count()).collect();
    project.put_json(store::SESSION, &session, "annotate.create", json!({"annotators": annotators, "stages": sizes}))?;
    ensure_auth(project)?;
    Ok(session)
}

/// Adjudicates a complete session and stores the final topic set.
pub fn adjudicate_session(project: &mut Project) -> Result<(Adjudication, FinalTopicSet)> {
    let session: AnnotationSession = require(project, store::SESSION)?;
    if !session.is_complete() {
        return Err(AnnotationError::SessionIncomplete.into());
    }
    let (result, report) = adjudicate(&session)?;
    let final_set = apply_exclusions(&result);
    let adj = Adjudication { result, report };
    project.put_json(store::ADJUDICATION, &adj, "annotate.adjudicate", json!({"majority_rate": adj.report.majority_rate}))?;
    project.put_json(
        store::FINAL_SET,
        &final_set,
        "annotate.exclude",
        json!({"retained": final_set.retained.len(), "excluded": final_set.excluded.len()}),
    )?;
    Ok((adj, final_set))
}

pub fn topic_posts(project: &Project, config: &WorkbenchConfig) -> Result<Vec<TopicPosts>> {
    let final_set: FinalTopicSet = require(project, store::FINAL_SET)?;
    let tree: TopicTree = require(project, store::TREE)?;
    let corpus: Corpus = require(project, store::PREPARED)?;
    Ok(coding_posts(&final_set, &tree, &corpus, config.coding.posts_per_topic)?)
}

pub fn coding_report(project: &mut Project, config: &WorkbenchConfig) -> Result<CodingLoadReport> {
    let posts = topic_posts(project, config)?;
    let report = coding_load_report(&posts, config.coding.posts_per_topic, config.coding.token_ceiling);
    project.put_json(store::CODING_REPORT, &report, "coding.report", json!({"total_posts": report.total_posts}))?;
    Ok(report)
}

/// The stored coding workbook, created from the final topic set on first use.
pub fn ensure_workbook(project: &mut Project, config: &WorkbenchConfig) -> Result<CodingWorkbook> {
    if let Some(wb) = project.try_get_json::<CodingWorkbook>(store::WORKBOOK)? {
        return Ok(wb);
    }
    let final_set: FinalTopicSet = require(project, store::FINAL_SET)?;
    let posts = topic_posts(project, config)?;
    let wb = export_coding_sheets(&final_set, &posts);
    let sheets: usize = wb.groups.iter().map(|g| g.sheets.len()).sum();
    project.put_json(store::WORKBOOK, &wb, "coding.create", json!({"sheets": sheets}))?;
    Ok(wb)
}

/// Draws `n` documents labelled `label` and stores them as JSONL with full
/// text.
pub fn draw(project: &mut Project, label: &str, n: usize, seed: u64) -> Result<Vec<SampleRecord>> {
    let table: ClassificationTable = require(project, store::CLASSIFICATION)?;
    let corpus: Corpus = require(project, store::CORPUS)?;
    let ids = draw_sample(&table, label, n, seed)?;
    let mut bytes = Vec::new();
    write_sample_jsonl(&ids, &table, &corpus, &mut bytes)?;
    project.put_bytes(&store::sample_artifact(label), "jsonl", &bytes, "sample.draw", json!({"label": label, "n": n, "seed": seed}))?;
    parse_sample(&bytes)
}

pub fn parse_sample(bytes: &[u8]) -> Result<Vec<SampleRecord>> {
    bytes
        .split(|&b| b == b'\n')
        .filter(|l| !l.is_empty())
        .map(|l| serde_json::from_slice(l).map_err(|e| CliError::Invalid(format!("corrupt sample: {e}"))))
        .collect()
}
