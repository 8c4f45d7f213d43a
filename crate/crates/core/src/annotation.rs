//! Multi-annotator evaluation of the topic tree: validated annotation
//! records, Fleiss' kappa, majority adjudication and the exclusion rules.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};
use std::io::{Read, Write};
use std::time::{SystemTime, UNIX_EPOCH};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::qdtm::AnnotationBundle;

pub const POSTS_PER_TOPIC: u8 = 5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnnotationError {
    #[error("coherent topic must have issue none")]
    CoherentWithIssue,
    #[error("average or incoherent topic requires an issue type")]
    MissingIssue,
    #[error("random issue requires incoherent rating")]
    RandomRequiresIncoherent,
    #[error("average topic allows only intruded or chained issues")]
    AverageIssueType,
    #[error("implicated posts given without an issue")]
    PostsWithoutIssue,
    #[error("{0} issue requires at least one implicated post")]
    MissingImplicatedPosts(Issue),
    #[error("implicated post {0} outside 1..={POSTS_PER_TOPIC}")]
    PostOutOfRange(u8),
    #[error("implicated post {0} listed twice")]
    DuplicatePost(u8),
    #[error("coherent topic requires exactly one label, got {0}")]
    CoherentLabelCount(usize),
    #[error("average topic requires one or two labels, got {0}")]
    AverageLabelCount(usize),
    #[error("incoherent topic takes no labels, got {0}")]
    IncoherentWithLabels(usize),
    #[error("labels must not be blank")]
    BlankLabel,
    #[error("relatedness applies to subtopics only")]
    RelatednessOnMain,
    #[error("subtopic requires a relatedness rating")]
    MissingRelatedness,
    #[error("incoherent subtopic must be rated not related")]
    IncoherentSubtopicRelatedness,
    #[error("unknown topic {0}")]
    UnknownTopic(String),
    #[error("unknown annotator {0}")]
    UnknownAnnotator(String),
    #[error("at least two annotators are required, got {0}")]
    TooFewAnnotators(usize),
    #[error("annotator {0} listed twice")]
    DuplicateAnnotator(String),
    #[error("topic {0} appears in more than one stage")]
    OverlappingStages(String),
    #[error("partition incomplete: {0} topics in no stage")]
    PartitionIncomplete(usize),
    #[error("stage {0} is empty")]
    EmptyStage(usize),
    #[error("session incomplete")]
    SessionIncomplete,
    #[error("topic {topic} lacks {task} annotations from some annotators")]
    IncompleteAnnotations { topic: String, task: Task },
    #[error("kappa needs at least one item")]
    EmptySubset,
    #[error("every item needs the same number (>= 2) of ratings")]
    InconsistentRaters,
    #[error("undefined kappa: every rating falls in one category")]
    UndefinedKappa,
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("csv: {0}")]
    Csv(String),
}

impl AnnotationError {
    /// Request field an error refers to, for field-level error reporting.
    pub fn field(&self) -> Option<&'static str> {
        use AnnotationError::*;
        Some(match self {
            CoherentWithIssue | MissingIssue | RandomRequiresIncoherent | AverageIssueType => "issue",
            PostsWithoutIssue | MissingImplicatedPosts(_) | PostOutOfRange(_) | DuplicatePost(_) => "implicated_posts",
            CoherentLabelCount(_) | AverageLabelCount(_) | IncoherentWithLabels(_) | BlankLabel => "labels",
            RelatednessOnMain | MissingRelatedness | IncoherentSubtopicRelatedness => "relatedness",
            UnknownTopic(_) => "topic_id",
            UnknownAnnotator(_) => "annotator",
            _ => return None,
        })
    }

    /// Stable machine-readable identifier.
    pub fn code(&self) -> &'static str {
        use AnnotationError::*;
        match self {
            CoherentWithIssue => "coherent_with_issue",
            MissingIssue => "missing_issue",
            RandomRequiresIncoherent => "random_requires_incoherent",
            AverageIssueType => "average_issue_type",
            PostsWithoutIssue => "posts_without_issue",
            MissingImplicatedPosts(_) => "missing_implicated_posts",
            PostOutOfRange(_) => "post_out_of_range",
            DuplicatePost(_) => "duplicate_post",
            CoherentLabelCount(_) => "coherent_label_count",
            AverageLabelCount(_) => "average_label_count",
            IncoherentWithLabels(_) => "incoherent_with_labels",
            BlankLabel => "blank_label",
            RelatednessOnMain => "relatedness_on_main",
            MissingRelatedness => "missing_relatedness",
            IncoherentSubtopicRelatedness => "incoherent_subtopic_relatedness",
            UnknownTopic(_) => "unknown_topic",
            UnknownAnnotator(_) => "unknown_annotator",
            TooFewAnnotators(_) => "too_few_annotators",
            DuplicateAnnotator(_) => "duplicate_annotator",
            OverlappingStages(_) => "overlapping_stages",
            PartitionIncomplete(_) => "partition_incomplete",
            EmptyStage(_) => "empty_stage",
            SessionIncomplete => "session_incomplete",
            IncompleteAnnotations { .. } => "incomplete_annotations",
            EmptySubset => "empty_subset",
            InconsistentRaters => "inconsistent_raters",
            UndefinedKappa => "undefined_kappa",
            Parse { .. } => "parse_error",
            Csv(_) => "csv_error",
        }
    }

    /// True for errors caused by a single annotation record.
    pub fn is_record_error(&self) -> bool {
        self.field().is_some()
    }
}

macro_rules! scale {
    ($name:ident { $($variant:ident = $value:literal),+ $(,)? }) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(try_from = "u8", into = "u8")]
        pub enum $name {
            $($variant = $value),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];
        }

        impl From<$name> for u8 {
            fn from(v: $name) -> u8 {
                v as u8
            }
        }

        impl TryFrom<u8> for $name {
            type Error = String;
            fn try_from(v: u8) -> Result<Self, String> {
                match v {
                    $($value => Ok($name::$variant),)+
                    other => Err(format!("{} value {other} out of range", stringify!($name))),
                }
            }
        }
    };
}

scale!(Coherence { Coherent = 3, Average = 2, Incoherent = 1 });
scale!(Relatedness { Strongly = 3, Partially = 2, NotRelated = 1, Identical = 0 });

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Issue {
    None,
    Intruded,
    Chained,
    Random,
}

impl Issue {
    pub const ALL: &'static [Issue] = &[Issue::None, Issue::Intruded, Issue::Chained, Issue::Random];

    pub fn as_str(self) -> &'static str {
        match self {
            Issue::None => "none",
            Issue::Intruded => "intruded",
            Issue::Chained => "chained",
            Issue::Random => "random",
        }
    }
}

impl fmt::Display for Issue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Issue {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "none" | "n/a" | "" => Ok(Issue::None),
            "intruded" => Ok(Issue::Intruded),
            "chained" => Ok(Issue::Chained),
            "random" => Ok(Issue::Random),
            other => Err(format!("unknown issue {other}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Coherence,
    Issue,
    Relatedness,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::Coherence, Task::Issue, Task::Relatedness];

    fn categories(self) -> usize {
        match self {
            Task::Coherence => Coherence::ALL.len(),
            Task::Issue => Issue::ALL.len(),
            Task::Relatedness => Relatedness::ALL.len(),
        }
    }

    fn title(self) -> &'static str {
        match self {
            Task::Coherence => "Topic coherence",
            Task::Issue => "Issue identification",
            Task::Relatedness => "Relatedness to main topic",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Coherence => "coherence",
            Task::Issue => "issue",
            Task::Relatedness => "relatedness",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopicAnnotation {
    pub annotator: String,
    pub topic_id: String,
    pub coherence: Coherence,
    pub issue: Issue,
    /// Post numbers (1-based) causing the issue.
    #[serde(default)]
    pub implicated_posts: Vec<u8>,
    #[serde(default)]
    pub labels: Vec<String>,
    #[serde(default)]
    pub relatedness: Option<Relatedness>,
}

impl TopicAnnotation {
    /// Category index of this record for `task`; `None` when the task does
    /// not apply (relatedness on a main topic).
    fn category(&self, task: Task) -> Option<usize> {
        match task {
            Task::Coherence => Some(Coherence::ALL.iter().position(|&c| c == self.coherence).unwrap()),
            Task::Issue => Some(Issue::ALL.iter().position(|&i| i == self.issue).unwrap()),
            Task::Relatedness => self.relatedness.map(|r| Relatedness::ALL.iter().position(|&x| x == r).unwrap()),
        }
    }

    /// Checks the guideline rules. Rules are checked in a fixed order and the
    /// first violation is reported.
    pub fn validate(&self, is_subtopic: bool) -> Result<(), AnnotationError> {
        use AnnotationError as E;
        match (self.coherence, self.issue) {
            (Coherence::Coherent, Issue::None) => {}
            (Coherence::Coherent, _) => return Err(E::CoherentWithIssue),
            (_, Issue::None) => return Err(E::MissingIssue),
            (Coherence::Average, Issue::Random) => return Err(E::RandomRequiresIncoherent),
            _ => {}
        }
        let mut seen = BTreeSet::new();
        for &p in &self.implicated_posts {
            if !(1..=POSTS_PER_TOPIC).contains(&p) {
                return Err(E::PostOutOfRange(p));
            }
            if !seen.insert(p) {
                return Err(E::DuplicatePost(p));
            }
        }
        match self.issue {
            Issue::None if !self.implicated_posts.is_empty() => return Err(E::PostsWithoutIssue),
            Issue::Intruded | Issue::Chained if self.implicated_posts.is_empty() => {
                return Err(E::MissingImplicatedPosts(self.issue))
            }
            _ => {}
        }
        let n = self.labels.len();
        match self.coherence {
            Coherence::Coherent if n != 1 => return Err(E::CoherentLabelCount(n)),
            Coherence::Average if !(1..=2).contains(&n) => return Err(E::AverageLabelCount(n)),
            Coherence::Incoherent if n != 0 => return Err(E::IncoherentWithLabels(n)),
            _ => {}
        }
        if self.labels.iter().any(|l| l.trim().is_empty()) {
            return Err(E::BlankLabel);
        }
        match (is_subtopic, self.relatedness) {
            (false, Some(_)) => Err(E::RelatednessOnMain),
            (true, None) => Err(E::MissingRelatedness),
            (true, Some(r)) if self.coherence == Coherence::Incoherent && r != Relatedness::NotRelated => {
                Err(E::IncoherentSubtopicRelatedness)
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionTopic {
    pub topic_id: String,
    pub parent_id: Option<String>,
    /// Zero-based stage index.
    pub stage: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotator {
    pub id: String,
    /// Bearer token issued at session creation.
    pub token: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AuditAction {
    Created,
    Replaced,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub seq: u64,
    pub annotator: String,
    pub topic_id: String,
    pub action: AuditAction,
    pub at_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationSession {
    pub topics: Vec<SessionTopic>,
    pub annotators: Vec<Annotator>,
    /// Records keyed by annotator, then topic id.
    pub records: BTreeMap<String, BTreeMap<String, TopicAnnotation>>,
    pub audit: Vec<AuditEntry>,
}

/// Builds stages from groups of main topic ids: each group becomes a stage
/// holding those mains and their subtopics, and any mains left over form a
/// final stage.
pub fn stages_from_mains(bundle: &AnnotationBundle, groups: &[Vec<String>]) -> Vec<Vec<String>> {
    let mut stages: Vec<Vec<String>> = groups
        .iter()
        .map(|g| {
            bundle
                .entries
                .iter()
                .filter(|e| g.contains(e.parent_id.as_ref().unwrap_or(&e.topic_id)))
                .map(|e| e.topic_id.clone())
                .collect()
        })
        .collect();
    let used: BTreeSet<&String> = stages.iter().flatten().collect();
    let rest: Vec<String> =
        bundle.entries.iter().map(|e| &e.topic_id).filter(|t| !used.contains(t)).cloned().collect();
    if !rest.is_empty() {
        stages.push(rest);
    }
    stages
}

fn new_token(rng: &mut impl Rng) -> String {
    let bytes: [u8; 16] = rng.random();
    hex::encode(bytes)
}

/// Opens an empty session over every topic of `bundle`. `stages` lists the
/// topic ids of each stage; an empty list puts all topics in one stage.
pub fn create_session(
    bundle: &AnnotationBundle,
    annotators: &[String],
    stages: &[Vec<String>],
) -> Result<AnnotationSession, AnnotationError> {
    create_session_with_rng(bundle, annotators, stages, &mut rand::rng())
}

pub fn create_session_with_rng(
    bundle: &AnnotationBundle,
    annotators: &[String],
    stages: &[Vec<String>],
    rng: &mut impl Rng,
) -> Result<AnnotationSession, AnnotationError> {
    if annotators.len() < 2 {
        return Err(AnnotationError::TooFewAnnotators(annotators.len()));
    }
    let mut roster = BTreeSet::new();
    for a in annotators {
        if !roster.insert(a.as_str()) {
            return Err(AnnotationError::DuplicateAnnotator(a.clone()));
        }
    }
    let mut stage_of: BTreeMap<&str, usize> = BTreeMap::new();
    if stages.is_empty() {
        for e in &bundle.entries {
            stage_of.insert(&e.topic_id, 0);
        }
    }
    for (i, stage) in stages.iter().enumerate() {
        if stage.is_empty() {
            return Err(AnnotationError::EmptyStage(i + 1));
        }
        for t in stage {
            if bundle.entry(t).is_none() {
                return Err(AnnotationError::UnknownTopic(t.clone()));
            }
            if stage_of.insert(t, i).is_some() {
                return Err(AnnotationError::OverlappingStages(t.clone()));
            }
        }
    }
    let missing = bundle.entries.len() - stage_of.len();
    if missing > 0 {
        return Err(AnnotationError::PartitionIncomplete(missing));
    }
    let topics = bundle
        .entries
        .iter()
        .map(|e| SessionTopic { topic_id: e.topic_id.clone(), parent_id: e.parent_id.clone(), stage: stage_of[e.topic_id.as_str()] })
        .collect();
    let annotators = annotators.iter().map(|a| Annotator { id: a.clone(), token: new_token(rng) }).collect();
    Ok(AnnotationSession { topics, annotators, records: BTreeMap::new(), audit: Vec::new() })
}

fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
}

impl AnnotationSession {
    pub fn topic(&self, topic_id: &str) -> Option<&SessionTopic> {
        self.topics.iter().find(|t| t.topic_id == topic_id)
    }

    pub fn stage_count(&self) -> usize {
        self.topics.iter().map(|t| t.stage + 1).max().unwrap_or(0)
    }

    pub fn annotator_for_token(&self, token: &str) -> Option<&str> {
        self.annotators.iter().find(|a| a.token == token).map(|a| a.id.as_str())
    }

    pub fn record(&self, annotator: &str, topic_id: &str) -> Option<&TopicAnnotation> {
        self.records.get(annotator)?.get(topic_id)
    }

    /// Validates and stores `annotation`, replacing any earlier record by the
    /// same annotator for the same topic. Returns the audit entry.
    pub fn submit(&mut self, annotation: TopicAnnotation) -> Result<AuditEntry, AnnotationError> {
        if !self.annotators.iter().any(|a| a.id == annotation.annotator) {
            return Err(AnnotationError::UnknownAnnotator(annotation.annotator));
        }
        let topic = self
            .topic(&annotation.topic_id)
            .ok_or_else(|| AnnotationError::UnknownTopic(annotation.topic_id.clone()))?;
        annotation.validate(topic.parent_id.is_some())?;
        let entry = AuditEntry {
            seq: self.audit.len() as u64 + 1,
            annotator: annotation.annotator.clone(),
            topic_id: annotation.topic_id.clone(),
            action: AuditAction::Created,
            at_ms: now_ms(),
        };
        let previous = self
            .records
            .entry(annotation.annotator.clone())
            .or_default()
            .insert(annotation.topic_id.clone(), annotation);
        let entry = AuditEntry { action: if previous.is_some() { AuditAction::Replaced } else { AuditAction::Created }, ..entry };
        self.audit.push(entry.clone());
        Ok(entry)
    }

    /// Topics `annotator` has not yet annotated, in stage then bundle order.
    pub fn remaining(&self, annotator: &str) -> Vec<&SessionTopic> {
        let mut out: Vec<&SessionTopic> =
            self.topics.iter().filter(|t| self.record(annotator, &t.topic_id).is_none()).collect();
        out.sort_by_key(|t| t.stage);
        out
    }

    pub fn is_complete(&self) -> bool {
        self.annotators.iter().all(|a| self.remaining(&a.id).is_empty())
    }

    fn votes(&self, topic_id: &str, task: Task) -> Result<Vec<usize>, AnnotationError> {
        self.annotators
            .iter()
            .map(|a| {
                self.record(&a.id, topic_id)
                    .and_then(|r| r.category(task))
                    .ok_or(AnnotationError::IncompleteAnnotations { topic: topic_id.to_string(), task })
            })
            .collect()
    }

    /// Fleiss' kappa of `task` over `topics`. Topics the task does not apply
    /// to (relatedness on mains) are skipped.
    pub fn kappa(&self, task: Task, topics: &[String]) -> Result<f64, AnnotationError> {
        let rows = self.count_rows(task, topics)?;
        fleiss_kappa(&rows)
    }

    fn applies(&self, task: Task, topic_id: &str) -> bool {
        task != Task::Relatedness || self.topic(topic_id).is_some_and(|t| t.parent_id.is_some())
    }

    fn count_rows(&self, task: Task, topics: &[String]) -> Result<Vec<Vec<usize>>, AnnotationError> {
        topics
            .iter()
            .filter(|t| self.applies(task, t))
            .map(|t| {
                let mut row = vec![0; task.categories()];
                for v in self.votes(t, task)? {
                    row[v] += 1;
                }
                Ok(row)
            })
            .collect()
    }
}

/// Fleiss' kappa from an items × categories matrix of rating counts.
pub fn fleiss_kappa(counts: &[Vec<usize>]) -> Result<f64, AnnotationError> {
    let n_items = counts.len();
    if n_items == 0 {
        return Err(AnnotationError::EmptySubset);
    }
    let n: usize = counts[0].iter().sum();
    if n < 2 || counts.iter().any(|row| row.iter().sum::<usize>() != n || row.len() != counts[0].len()) {
        return Err(AnnotationError::InconsistentRaters);
    }
    // Exact integer form of (P - Pe) / (1 - Pe), divided once at the end:
    // P = (sq - Nn) / (Nn(n-1)), Pe = cat / (Nn)^2.
    let n = n as i128;
    let nn = n_items as i128 * n;
    let sq: i128 = counts.iter().flatten().map(|&c| (c * c) as i128).sum();
    let cat: i128 = (0..counts[0].len())
        .map(|j| counts.iter().map(|row| row[j] as i128).sum::<i128>().pow(2))
        .sum();
    let denom = nn * (n - 1) * (nn * nn - cat);
    if denom == 0 {
        return Err(AnnotationError::UndefinedKappa);
    }
    let numer = (sq - nn) * nn * nn - cat * nn * (n - 1);
    Ok(numer as f64 / denom as f64)
}

/// Category holding more than half of `votes`.
pub fn majority<T: Copy + Ord>(votes: &[T]) -> Option<T> {
    let mut counts: BTreeMap<T, usize> = BTreeMap::new();
    for &v in votes {
        *counts.entry(v).or_default() += 1;
    }
    counts.into_iter().find(|&(_, c)| 2 * c > votes.len()).map(|(v, _)| v)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExclusionReason {
    CompleteDisagreement,
    Incoherent,
    UnrelatedSubtopic,
    IdenticalSubtopic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", content = "reason", rename_all = "lowercase")]
pub enum Decision {
    Retained,
    Excluded(ExclusionReason),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicDecision {
    pub topic_id: String,
    pub parent_id: Option<String>,
    pub stage: usize,
    pub coherence: Option<Coherence>,
    pub issue: Option<Issue>,
    pub relatedness: Option<Relatedness>,
    /// Tasks on which no category reached a majority.
    pub no_agreement: Vec<Task>,
    /// Every annotator's labels, in roster order.
    pub candidate_labels: Vec<String>,
    pub decision: Decision,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdjudicationResult {
    pub topics: Vec<TopicDecision>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskAgreement {
    pub task: Task,
    pub all_agree: usize,
    /// A majority but not every annotator.
    pub two_agree: usize,
    pub no_agreement: usize,
    pub total: usize,
    pub kappa: Option<f64>,
    /// Why kappa is missing, when it is.
    pub kappa_note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageAgreement {
    /// `"1"`, `"2"`, ... or `"pooled"`.
    pub stage: String,
    pub topics: usize,
    pub tasks: Vec<TaskAgreement>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub stages: Vec<StageAgreement>,
    pub pooled: StageAgreement,
    /// Share of (topic, task) units on which a majority agreed.
    pub majority_rate: f64,
}

fn stage_agreement(session: &AnnotationSession, label: String, topics: &[String]) -> Result<StageAgreement, AnnotationError> {
    let mut tasks = Vec::new();
    for task in Task::ALL {
        let rows = session.count_rows(task, topics)?;
        let n = session.annotators.len();
        let mut agg = TaskAgreement { task, all_agree: 0, two_agree: 0, no_agreement: 0, total: rows.len(), kappa: None, kappa_note: None };
        for row in &rows {
            let max = row.iter().copied().max().unwrap_or(0);
            if max == n {
                agg.all_agree += 1;
            } else if 2 * max > n {
                agg.two_agree += 1;
            } else {
                agg.no_agreement += 1;
            }
        }
        match fleiss_kappa(&rows) {
            Ok(k) => agg.kappa = Some(k),
            Err(e) => agg.kappa_note = Some(e.to_string()),
        }
        tasks.push(agg);
    }
    Ok(StageAgreement { stage: label, topics: topics.len(), tasks })
}

/// Majority vote per topic and task, the exclusion decision, and agreement
/// statistics per stage and pooled.
pub fn adjudicate(session: &AnnotationSession) -> Result<(AdjudicationResult, AgreementReport), AnnotationError> {
    if !session.is_complete() {
        return Err(AnnotationError::SessionIncomplete);
    }
    let mut topics = Vec::with_capacity(session.topics.len());
    for t in &session.topics {
        let records: Vec<&TopicAnnotation> =
            session.annotators.iter().map(|a| session.record(&a.id, &t.topic_id).expect("complete session")).collect();
        let coherence = majority(&records.iter().map(|r| r.coherence).collect::<Vec<_>>());
        let issue = majority(&records.iter().map(|r| r.issue).collect::<Vec<_>>());
        let is_sub = t.parent_id.is_some();
        let relatedness = if is_sub {
            majority(&records.iter().map(|r| r.relatedness.expect("validated")).collect::<Vec<_>>())
        } else {
            None
        };
        let mut no_agreement = Vec::new();
        if coherence.is_none() {
            no_agreement.push(Task::Coherence);
        }
        if issue.is_none() {
            no_agreement.push(Task::Issue);
        }
        if is_sub && relatedness.is_none() {
            no_agreement.push(Task::Relatedness);
        }
        let decision = if !no_agreement.is_empty() {
            Decision::Excluded(ExclusionReason::CompleteDisagreement)
        } else if coherence == Some(Coherence::Incoherent) {
            Decision::Excluded(ExclusionReason::Incoherent)
        } else if relatedness == Some(Relatedness::NotRelated) {
            Decision::Excluded(ExclusionReason::UnrelatedSubtopic)
        } else if relatedness == Some(Relatedness::Identical) {
            Decision::Excluded(ExclusionReason::IdenticalSubtopic)
        } else {
            Decision::Retained
        };
        topics.push(TopicDecision {
            topic_id: t.topic_id.clone(),
            parent_id: t.parent_id.clone(),
            stage: t.stage,
            coherence,
            issue,
            relatedness,
            no_agreement,
            candidate_labels: records.iter().flat_map(|r| r.labels.iter().cloned()).collect(),
            decision,
        });
    }
    let mut stages = Vec::new();
    for s in 0..session.stage_count() {
        let ids: Vec<String> = session.topics.iter().filter(|t| t.stage == s).map(|t| t.topic_id.clone()).collect();
        stages.push(stage_agreement(session, (s + 1).to_string(), &ids)?);
    }
    let all: Vec<String> = session.topics.iter().map(|t| t.topic_id.clone()).collect();
    let pooled = stage_agreement(session, "pooled".into(), &all)?;
    let units: usize = pooled.tasks.iter().map(|t| t.total).sum();
    let agreed: usize = pooled.tasks.iter().map(|t| t.total - t.no_agreement).sum();
    let majority_rate = if units == 0 { 0.0 } else { agreed as f64 / units as f64 };
    Ok((AdjudicationResult { topics }, AgreementReport { stages, pooled, majority_rate }))
}

impl AgreementReport {
    /// Plain-text table with one row per stage and task.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<8} {:<28} {:>10} {:>10} {:>12} {:>6} {:>8}", "Stage", "Task", "All agree", "Two agree", "No agreement", "Total", "Kappa");
        for stage in self.stages.iter().chain(std::iter::once(&self.pooled)) {
            for t in &stage.tasks {
                let kappa = t.kappa.map_or("n/a".to_string(), |k| format!("{k:.2}"));
                let _ = writeln!(
                    out,
                    "{:<8} {:<28} {:>10} {:>10} {:>12} {:>6} {:>8}",
                    stage.stage,
                    t.task.title(),
                    t.all_agree,
                    t.two_agree,
                    t.no_agreement,
                    t.total,
                    kappa
                );
            }
        }
        let _ = writeln!(out, "Majority agreement on {:.1}% of topic-task units", 100.0 * self.majority_rate);
        out
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryCounts {
    pub coherence: BTreeMap<String, usize>,
    pub issue: BTreeMap<String, usize>,
    pub relatedness: BTreeMap<String, usize>,
}

fn coherence_name(c: Option<Coherence>) -> &'static str {
    match c {
        Some(Coherence::Coherent) => "coherent",
        Some(Coherence::Average) => "average",
        Some(Coherence::Incoherent) => "incoherent",
        None => "no_agreement",
    }
}

fn relatedness_name(r: Option<Relatedness>) -> &'static str {
    match r {
        Some(Relatedness::Strongly) => "strongly",
        Some(Relatedness::Partially) => "partially",
        Some(Relatedness::NotRelated) => "not_related",
        Some(Relatedness::Identical) => "identical",
        None => "no_agreement",
    }
}

impl CategoryCounts {
    pub fn from_adjudication(adj: &AdjudicationResult) -> Self {
        let mut c = CategoryCounts::default();
        for name in ["coherent", "average", "incoherent", "no_agreement"] {
            c.coherence.insert(name.into(), 0);
        }
        for name in ["none", "intruded", "chained", "random", "no_agreement"] {
            c.issue.insert(name.into(), 0);
        }
        for name in ["strongly", "partially", "not_related", "identical", "no_agreement"] {
            c.relatedness.insert(name.into(), 0);
        }
        for t in &adj.topics {
            *c.coherence.get_mut(coherence_name(t.coherence)).unwrap() += 1;
            *c.issue.get_mut(t.issue.map_or("no_agreement", Issue::as_str)).unwrap() += 1;
            if t.parent_id.is_some() {
                *c.relatedness.get_mut(relatedness_name(t.relatedness)).unwrap() += 1;
            }
        }
        c
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let rows: [(&str, &BTreeMap<String, usize>, &[&str]); 3] = [
            ("Topic coherence", &self.coherence, &["coherent", "average", "incoherent", "no_agreement"]),
            ("Issue identification", &self.issue, &["intruded", "chained", "random", "none", "no_agreement"]),
            ("Relatedness to main topic", &self.relatedness, &["strongly", "partially", "not_related", "identical", "no_agreement"]),
        ];
        for (title, counts, order) in rows {
            let _ = writeln!(out, "{title}");
            let total: usize = counts.values().sum();
            let cells: Vec<String> = order.iter().map(|k| format!("{k}={}", counts[*k])).collect();
            let _ = writeln!(out, "  {} total={total}", cells.join(" "));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalTopic {
    pub topic_id: String,
    pub parent_id: Option<String>,
    pub coherence: Coherence,
    pub relatedness: Option<Relatedness>,
    /// Annotator labels offered as starting points for the researcher.
    pub initial_labels: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcludedTopic {
    pub topic_id: String,
    pub parent_id: Option<String>,
    pub reason: ExclusionReason,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalTopicSet {
    pub retained: Vec<FinalTopic>,
    pub excluded: Vec<ExcludedTopic>,
    /// Retained subtopics whose main topic was excluded.
    pub orphan_risk: Vec<String>,
    pub counts: CategoryCounts,
}

impl FinalTopicSet {
    pub fn retained_mains(&self) -> usize {
        self.retained.iter().filter(|t| t.parent_id.is_none()).count()
    }

    pub fn retained_subtopics(&self) -> usize {
        self.retained.len() - self.retained_mains()
    }

    pub fn exclusion_rate(&self) -> f64 {
        let total = self.retained.len() + self.excluded.len();
        if total == 0 {
            0.0
        } else {
            self.excluded.len() as f64 / total as f64
        }
    }

    pub fn to_table(&self) -> String {
        let mut out = self.counts.to_table();
        let _ = writeln!(
            out,
            "Retained {} ({} main, {} sub); excluded {} ({:.1}%)",
            self.retained.len(),
            self.retained_mains(),
            self.retained_subtopics(),
            self.excluded.len(),
            100.0 * self.exclusion_rate()
        );
        for e in &self.excluded {
            let _ = writeln!(out, "  {} excluded: {:?}", e.topic_id, e.reason);
        }
        out
    }
}

/// Splits adjudicated topics into retained and excluded sets. Subtopics of an
/// excluded main stay retained and are listed in `orphan_risk`.
pub fn apply_exclusions(adj: &AdjudicationResult) -> FinalTopicSet {
    let mut retained = Vec::new();
    let mut excluded = Vec::new();
    for t in &adj.topics {
        match t.decision {
            Decision::Retained => {
                let mut labels: Vec<String> = Vec::new();
                for l in &t.candidate_labels {
                    let l = l.trim();
                    if !labels.iter().any(|x| x.eq_ignore_ascii_case(l)) {
                        labels.push(l.to_string());
                    }
                }
                retained.push(FinalTopic {
                    topic_id: t.topic_id.clone(),
                    parent_id: t.parent_id.clone(),
                    coherence: t.coherence.expect("retained topics have a majority"),
                    relatedness: t.relatedness,
                    initial_labels: labels,
                })
            }
            Decision::Excluded(reason) => {
                excluded.push(ExcludedTopic { topic_id: t.topic_id.clone(), parent_id: t.parent_id.clone(), reason })
            }
        }
    }
    let excluded_ids: BTreeSet<&str> = excluded.iter().map(|e| e.topic_id.as_str()).collect();
    let orphan_risk = retained
        .iter()
        .filter(|t| t.parent_id.as_deref().is_some_and(|p| excluded_ids.contains(p)))
        .map(|t| t.topic_id.clone())
        .collect();
    FinalTopicSet { retained, excluded, orphan_risk, counts: CategoryCounts::from_adjudication(adj) }
}

#[derive(Debug, Serialize, Deserialize)]
struct AnnotationRow {
    annotator: String,
    topic_id: String,
    coherence: u8,
    issue: String,
    implicated_posts: String,
    labels: String,
    relatedness: String,
}

/// CSV with columns annotator, topic_id, coherence, issue, implicated_posts
/// (`;`-separated), labels (`|`-separated), relatedness (blank for mains).
pub fn write_annotations_csv<'a>(
    records: impl IntoIterator<Item = &'a TopicAnnotation>,
    out: impl Write,
) -> Result<(), AnnotationError> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        let row = AnnotationRow {
            annotator: r.annotator.clone(),
            topic_id: r.topic_id.clone(),
            coherence: r.coherence.into(),
            issue: r.issue.to_string(),
            implicated_posts: r.implicated_posts.iter().map(u8::to_string).collect::<Vec<_>>().join(";"),
            labels: r.labels.join("|"),
            relatedness: r.relatedness.map(|x| u8::from(x).to_string()).unwrap_or_default(),
        };
        w.serialize(row).map_err(|e| AnnotationError::Csv(e.to_string()))?;
    }
    w.flush().map_err(|e| AnnotationError::Csv(e.to_string()))
}

/// Parses annotation CSV. Records are not validated here; submit them to a
/// session for that.
pub fn read_annotations_csv(input: impl Read) -> Result<Vec<TopicAnnotation>, AnnotationError> {
    let mut r = csv::Reader::from_reader(input);
    let mut out = Vec::new();
    for (i, row) in r.deserialize::<AnnotationRow>().enumerate() {
        let line = i + 2;
        let bad = |message: String| AnnotationError::Parse { line, message };
        let row = row.map_err(|e| bad(e.to_string()))?;
        let implicated_posts = row
            .implicated_posts
            .split(';')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<u8>().map_err(|e| bad(format!("implicated post {s}: {e}"))))
            .collect::<Result<_, _>>()?;
        let relatedness = match row.relatedness.trim() {
            "" => None,
            s => Some(
                s.parse::<u8>()
                    .map_err(|e| bad(e.to_string()))
                    .and_then(|v| Relatedness::try_from(v).map_err(bad))?,
            ),
        };
        out.push(TopicAnnotation {
            annotator: row.annotator,
            topic_id: row.topic_id,
            coherence: Coherence::try_from(row.coherence).map_err(bad)?,
            issue: row.issue.parse().map_err(bad)?,
            implicated_posts,
            labels: row.labels.split('|').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect(),
            relatedness,
        });
    }
    Ok(out)
}
