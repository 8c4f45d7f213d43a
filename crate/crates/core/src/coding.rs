//! Hand-coding support for the retained topics: the workload report, coding
//! sheets grouped by main topic, and append-only coding entries.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotation::FinalTopicSet;
use crate::corpus::Corpus;
use crate::qdtm::{RankedDoc, TopicTree};

#[derive(Debug, Error)]
pub enum CodingError {
    #[error("topic {0} is not in the tree")]
    UnknownTopic(String),
    #[error("topic {topic} has no post {post}")]
    UnknownPost { topic: String, post: usize },
    #[error("document {0} is not in the corpus")]
    UnknownDocument(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodingPost {
    /// 1-based rank within the topic.
    pub number: usize,
    pub doc_id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopicPosts {
    pub topic_id: String,
    pub parent_id: Option<String>,
    pub posts: Vec<CodingPost>,
}

fn ranked_docs<'a>(tree: &'a TopicTree, topic_id: &str) -> Option<&'a [RankedDoc]> {
    let (main, sub) = match topic_id.split_once('.') {
        Some((m, s)) => (m.parse::<usize>().ok()?, Some(s.parse::<usize>().ok()?)),
        None => (topic_id.parse().ok()?, None),
    };
    let main = tree.mains.iter().find(|m| m.id == main)?;
    match sub {
        None => Some(&main.ranked_docs),
        Some(s) => main.subtopics.iter().find(|x| x.id == s).map(|x| x.ranked_docs.as_slice()),
    }
}

/// Top `posts_per_topic` distinct posts of every retained topic, in the
/// order of the final set.
pub fn coding_posts(
    final_set: &FinalTopicSet,
    tree: &TopicTree,
    corpus: &Corpus,
    posts_per_topic: usize,
) -> Result<Vec<TopicPosts>, CodingError> {
    let positions = corpus.positions();
    final_set
        .retained
        .iter()
        .map(|t| {
            let docs = ranked_docs(tree, &t.topic_id).ok_or_else(|| CodingError::UnknownTopic(t.topic_id.clone()))?;
            let mut seen = HashSet::new();
            let mut posts = Vec::new();
            for d in docs {
                if posts.len() == posts_per_topic {
                    break;
                }
                if !seen.insert(&d.content_key) {
                    continue;
                }
                let &pos = positions.get(d.doc_id.as_str()).ok_or_else(|| CodingError::UnknownDocument(d.doc_id.clone()))?;
                posts.push(CodingPost { number: posts.len() + 1, doc_id: d.doc_id.clone(), text: corpus.documents[pos].text.clone() });
            }
            Ok(TopicPosts { topic_id: t.topic_id.clone(), parent_id: t.parent_id.clone(), posts })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodingLoadReport {
    pub topics: usize,
    pub posts_per_topic: usize,
    pub total_posts: usize,
    /// Whitespace token counts over all selected posts.
    pub min_tokens: usize,
    pub mean_tokens: f64,
    pub max_tokens: usize,
    pub token_ceiling: usize,
    pub over_ceiling: usize,
}

pub fn coding_load_report(topics: &[TopicPosts], posts_per_topic: usize, token_ceiling: usize) -> CodingLoadReport {
    let lengths: Vec<usize> =
        topics.iter().flat_map(|t| &t.posts).map(|p| p.text.split_whitespace().count()).collect();
    let total = lengths.len();
    CodingLoadReport {
        topics: topics.len(),
        posts_per_topic,
        total_posts: total,
        min_tokens: lengths.iter().copied().min().unwrap_or(0),
        mean_tokens: if total == 0 { 0.0 } else { lengths.iter().sum::<usize>() as f64 / total as f64 },
        max_tokens: lengths.iter().copied().max().unwrap_or(0),
        token_ceiling,
        over_ceiling: lengths.iter().filter(|&&l| l > token_ceiling).count(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SheetStatus {
    Open,
    InProgress,
    Coded,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodingInput {
    pub post: usize,
    #[serde(default)]
    pub focused_code: Option<String>,
    #[serde(default)]
    pub sub_codes: Vec<String>,
    #[serde(default)]
    pub memo: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodingEntry {
    pub seq: u64,
    pub at_ms: u64,
    #[serde(flatten)]
    pub input: CodingInput,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodingSheet {
    pub topic_id: String,
    pub parent_id: Option<String>,
    pub initial_labels: Vec<String>,
    pub status: SheetStatus,
    pub posts: Vec<CodingPost>,
    /// Append-only; the latest entry for a post is its current coding.
    pub entries: Vec<CodingEntry>,
}

impl CodingSheet {
    pub fn current(&self, post: usize) -> Option<&CodingInput> {
        self.entries.iter().rev().find(|e| e.input.post == post).map(|e| &e.input)
    }

    /// Appends a coding entry for one post.
    pub fn record(&mut self, input: CodingInput) -> Result<&CodingEntry, CodingError> {
        if !self.posts.iter().any(|p| p.number == input.post) {
            return Err(CodingError::UnknownPost { topic: self.topic_id.clone(), post: input.post });
        }
        let at_ms = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64);
        self.entries.push(CodingEntry { seq: self.entries.len() as u64 + 1, at_ms, input });
        let coded = self.posts.iter().all(|p| self.current(p.number).is_some_and(|c| c.focused_code.is_some()));
        self.status = if coded { SheetStatus::Coded } else { SheetStatus::InProgress };
        Ok(self.entries.last().expect("just pushed"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodingGroup {
    pub main_id: String,
    pub header: String,
    pub sheets: Vec<CodingSheet>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodingWorkbook {
    pub groups: Vec<CodingGroup>,
}

impl CodingWorkbook {
    pub fn sheet(&self, topic_id: &str) -> Option<&CodingSheet> {
        self.groups.iter().flat_map(|g| &g.sheets).find(|s| s.topic_id == topic_id)
    }

    pub fn sheet_mut(&mut self, topic_id: &str) -> Option<&mut CodingSheet> {
        self.groups.iter_mut().flat_map(|g| &mut g.sheets).find(|s| s.topic_id == topic_id)
    }

    pub fn record(&mut self, topic_id: &str, input: CodingInput) -> Result<&CodingEntry, CodingError> {
        self.sheet_mut(topic_id)
            .ok_or_else(|| CodingError::UnknownTopic(topic_id.to_string()))?
            .record(input)
    }

    /// Writes one CSV per sheet under `dir/<main id>/<topic id>.csv`.
    /// Output depends only on the workbook, so unchanged sheets re-export
    /// byte for byte.
    pub fn write_csv(&self, dir: &Path) -> Result<Vec<std::path::PathBuf>, CodingError> {
        let mut written = Vec::new();
        for g in &self.groups {
            let gdir = dir.join(&g.main_id);
            fs::create_dir_all(&gdir)?;
            for s in &g.sheets {
                let path = gdir.join(format!("{}.csv", s.topic_id));
                let mut w = csv::Writer::from_path(&path)?;
                w.write_record(["group", "topic_id", "post", "doc_id", "text", "focused_code", "sub_codes", "memo"])?;
                for p in &s.posts {
                    let cur = s.current(p.number);
                    w.write_record([
                        g.header.as_str(),
                        &s.topic_id,
                        &p.number.to_string(),
                        &p.doc_id,
                        &p.text,
                        cur.and_then(|c| c.focused_code.as_deref()).unwrap_or(""),
                        &cur.map(|c| c.sub_codes.join("; ")).unwrap_or_default(),
                        cur.and_then(|c| c.memo.as_deref()).unwrap_or(""),
                    ])?;
                }
                w.flush()?;
                written.push(path);
            }
        }
        Ok(written)
    }
}

/// One sheet per retained topic, grouped under its main topic.
pub fn export_coding_sheets(final_set: &FinalTopicSet, posts: &[TopicPosts]) -> CodingWorkbook {
    let labels: BTreeMap<&str, &[String]> =
        final_set.retained.iter().map(|t| (t.topic_id.as_str(), t.initial_labels.as_slice())).collect();
    let mut groups: Vec<CodingGroup> = Vec::new();
    for tp in posts {
        let main_id = tp.parent_id.clone().unwrap_or_else(|| tp.topic_id.clone());
        let sheet = CodingSheet {
            topic_id: tp.topic_id.clone(),
            parent_id: tp.parent_id.clone(),
            initial_labels: labels.get(tp.topic_id.as_str()).map(|l| l.to_vec()).unwrap_or_default(),
            status: SheetStatus::Open,
            posts: tp.posts.clone(),
            entries: Vec::new(),
        };
        match groups.iter_mut().find(|g| g.main_id == main_id) {
            Some(g) => g.sheets.push(sheet),
            None => {
                let header = match labels.get(main_id.as_str()) {
                    Some(l) if !l.is_empty() => format!("Topic {main_id}: {}", l.join(" / ")),
                    _ => format!("Topic {main_id}"),
                };
                groups.push(CodingGroup { main_id, header, sheets: vec![sheet] });
            }
        }
    }
    CodingWorkbook { groups }
}
