//! GT codebook, concurrent-validation alignment and query-term curation.
//!
//! Match decisions are always entered by the researcher; nothing here tries
//! to pair codes with topics automatically.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Vocabulary;
use crate::lda::LdaModel;

/// Candidate terms taken from each matched topic, and the cap on retained terms.
pub const TOP_TERMS: usize = 20;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AlignmentError {
    #[error("codebook empty")]
    EmptyCodebook,
    #[error("duplicate code label {0}")]
    DuplicateLabel(String),
    #[error("exclusion references unknown code {0}")]
    UnknownExclusion(String),
    #[error("exclusion of {0} needs a non-empty reason")]
    EmptyReason(String),
    #[error("unknown code {0}")]
    UnknownCode(String),
    #[error("code {0} is excluded from comparison")]
    ExcludedCode(String),
    #[error("unknown model {0}")]
    UnknownModel(String),
    #[error("topic {topic} out of range for model {model}")]
    UnknownTopic { model: String, topic: usize },
    #[error("new topic {label} uses {model}:{topic}, which is matched to a GT code")]
    NewTopicMatched { label: String, model: String, topic: usize },
    #[error("duplicate roster label {0}")]
    DuplicateRosterLabel(String),
    #[error("topic {0} exists only in GT codes and needs at least one proposed term")]
    MissingProposedTerms(String),
    #[error("topic {0} has LDA terms; proposed terms are only for GT-only topics")]
    UnexpectedProposedTerms(String),
    #[error("cannot remove {term} from {label}: not a candidate term")]
    RemovalNotMember { label: String, term: String },
    #[error("curation edit references unknown topic {0}")]
    UnknownRosterTopic(String),
    #[error("roster is empty")]
    EmptyRoster,
    #[error("malformed query-set CSV: {0}")]
    Csv(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GtCode {
    pub id: usize,
    pub label: String,
    pub description: String,
    /// Reason the code is left out of the LDA comparison.
    pub excluded: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GtCodebook {
    pub codes: Vec<GtCode>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeEntry {
    pub label: String,
    #[serde(default)]
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exclusion {
    pub label: String,
    pub reason: String,
}

pub fn register_gt_codes(
    entries: &[CodeEntry],
    exclusions: &[Exclusion],
) -> Result<GtCodebook, AlignmentError> {
    if entries.is_empty() {
        return Err(AlignmentError::EmptyCodebook);
    }
    let mut seen = BTreeSet::new();
    let mut codes: Vec<GtCode> = Vec::with_capacity(entries.len());
    for (id, e) in entries.iter().enumerate() {
        let label = e.label.trim().to_string();
        if !seen.insert(label.clone()) {
            return Err(AlignmentError::DuplicateLabel(label));
        }
        codes.push(GtCode { id, label, description: e.description.clone(), excluded: None });
    }
    for x in exclusions {
        let code = codes
            .iter_mut()
            .find(|c| c.label == x.label.trim())
            .ok_or_else(|| AlignmentError::UnknownExclusion(x.label.clone()))?;
        if x.reason.trim().is_empty() {
            return Err(AlignmentError::EmptyReason(x.label.clone()));
        }
        code.excluded = Some(x.reason.trim().to_string());
    }
    Ok(GtCodebook { codes })
}

impl GtCodebook {
    pub fn comparable(&self) -> impl Iterator<Item = &GtCode> {
        self.codes.iter().filter(|c| c.excluded.is_none())
    }

    pub fn by_label(&self, label: &str) -> Option<&GtCode> {
        self.codes.iter().find(|c| c.label == label)
    }
}

/// Top-term lists of one trained model, as shown to the researcher.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelTopics {
    pub id: String,
    /// Ranked top terms of each topic.
    pub topics: Vec<Vec<String>>,
}

impl ModelTopics {
    pub fn from_lda(id: impl Into<String>, model: &LdaModel, vocab: &Vocabulary) -> Self {
        Self { id: id.into(), topics: model.top_term_lists(vocab, TOP_TERMS) }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TopicRef {
    pub model: String,
    pub topic: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchDecision {
    pub code: String,
    pub model: String,
    pub topic: usize,
}

/// An LDA theme without a GT counterpart, labelled by the researcher.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NewTopic {
    pub label: String,
    pub topics: Vec<TopicRef>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignmentMatrix {
    /// Comparable code labels, in codebook order.
    pub codes: Vec<String>,
    /// Model id -> number of topics.
    pub models: BTreeMap<String, usize>,
    /// Matched cells; every other (code, topic) cell is unmatched.
    pub matched: BTreeSet<(String, TopicRef)>,
    pub new_topics: Vec<NewTopic>,
}

fn check_ref(models: &BTreeMap<String, usize>, r: &TopicRef) -> Result<(), AlignmentError> {
    let k = *models.get(&r.model).ok_or_else(|| AlignmentError::UnknownModel(r.model.clone()))?;
    if r.topic >= k {
        return Err(AlignmentError::UnknownTopic { model: r.model.clone(), topic: r.topic });
    }
    Ok(())
}

/// Builds a fresh matrix from the complete set of decisions; recording again
/// replaces every earlier decision.
pub fn record_alignment(
    codebook: &GtCodebook,
    models: &[ModelTopics],
    decisions: &[MatchDecision],
    new_topics: &[NewTopic],
) -> Result<AlignmentMatrix, AlignmentError> {
    let model_sizes: BTreeMap<String, usize> =
        models.iter().map(|m| (m.id.clone(), m.topics.len())).collect();
    let mut matched = BTreeSet::new();
    for d in decisions {
        let code = codebook
            .by_label(&d.code)
            .ok_or_else(|| AlignmentError::UnknownCode(d.code.clone()))?;
        if code.excluded.is_some() {
            return Err(AlignmentError::ExcludedCode(d.code.clone()));
        }
        let r = TopicRef { model: d.model.clone(), topic: d.topic };
        check_ref(&model_sizes, &r)?;
        matched.insert((d.code.clone(), r));
    }
    let matched_refs: BTreeSet<&TopicRef> = matched.iter().map(|(_, r)| r).collect();
    let mut labels: BTreeSet<&str> = codebook.codes.iter().map(|c| c.label.as_str()).collect();
    for nt in new_topics {
        if !labels.insert(nt.label.as_str()) {
            return Err(AlignmentError::DuplicateRosterLabel(nt.label.clone()));
        }
        for r in &nt.topics {
            check_ref(&model_sizes, r)?;
            if matched_refs.contains(r) {
                return Err(AlignmentError::NewTopicMatched {
                    label: nt.label.clone(),
                    model: r.model.clone(),
                    topic: r.topic,
                });
            }
        }
    }
    Ok(AlignmentMatrix {
        codes: codebook.comparable().map(|c| c.label.clone()).collect(),
        models: model_sizes,
        matched,
        new_topics: new_topics.to_vec(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RosterKind {
    Matched,
    GtOnly,
    LdaOnly,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RosterEntry {
    pub label: String,
    pub kind: RosterKind,
    pub topics: Vec<TopicRef>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignmentReport {
    pub comparable_codes: usize,
    pub matched: usize,
    pub gt_only: usize,
    pub lda_only: usize,
    /// LDA topics matched to more than one code, with those codes.
    pub many_to_one: Vec<(TopicRef, Vec<String>)>,
    pub roster: Vec<RosterEntry>,
    pub warnings: Vec<String>,
}

pub fn alignment_report(matrix: &AlignmentMatrix) -> AlignmentReport {
    let mut by_code: BTreeMap<&str, Vec<TopicRef>> = BTreeMap::new();
    let mut by_topic: BTreeMap<&TopicRef, Vec<String>> = BTreeMap::new();
    for (code, r) in &matrix.matched {
        by_code.entry(code).or_default().push(r.clone());
        by_topic.entry(r).or_default().push(code.clone());
    }
    let mut roster = Vec::new();
    for code in &matrix.codes {
        match by_code.get(code.as_str()) {
            Some(refs) => roster.push(RosterEntry {
                label: code.clone(),
                kind: RosterKind::Matched,
                topics: refs.clone(),
            }),
            None => roster.push(RosterEntry {
                label: code.clone(),
                kind: RosterKind::GtOnly,
                topics: vec![],
            }),
        }
    }
    for nt in &matrix.new_topics {
        roster.push(RosterEntry {
            label: nt.label.clone(),
            kind: RosterKind::LdaOnly,
            topics: nt.topics.clone(),
        });
    }
    let count = |k: RosterKind| roster.iter().filter(|e| e.kind == k).count();
    let mut warnings = Vec::new();
    if roster.is_empty() {
        let w = "alignment matrix is empty; roster has no topics".to_string();
        warn!("{w}");
        warnings.push(w);
    }
    AlignmentReport {
        comparable_codes: matrix.codes.len(),
        matched: count(RosterKind::Matched),
        gt_only: count(RosterKind::GtOnly),
        lda_only: count(RosterKind::LdaOnly),
        many_to_one: by_topic
            .into_iter()
            .filter(|(_, codes)| codes.len() > 1)
            .map(|(r, codes)| (r.clone(), codes))
            .collect(),
        roster,
        warnings,
    }
}

/// Researcher edits to one roster topic's candidate terms.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CurationEdit {
    pub label: String,
    #[serde(default)]
    pub remove: Vec<String>,
    #[serde(default)]
    pub proposed: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RemovalReason {
    Researcher,
    /// Dropped to respect the per-topic cap.
    Cap,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RemovedTerm {
    pub term: String,
    pub reason: RemovalReason,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryTermSet {
    pub topic_id: usize,
    pub label: String,
    pub kind: RosterKind,
    pub common: Vec<String>,
    /// Model id -> terms found only in that model's matched topics.
    pub unique: BTreeMap<String, Vec<String>>,
    pub proposed: Vec<String>,
    pub removed: Vec<RemovedTerm>,
    /// Proposed terms missing from the modelling vocabulary.
    pub out_of_vocabulary: Vec<String>,
}

impl QueryTermSet {
    /// All retained terms: common, then unique per model, then proposed.
    pub fn retained(&self) -> Vec<&str> {
        self.common
            .iter()
            .chain(self.unique.values().flatten())
            .chain(&self.proposed)
            .map(String::as_str)
            .collect()
    }

    /// Retained terms usable as model seeds (proposed out-of-vocabulary terms dropped).
    pub fn seed_terms(&self) -> Vec<String> {
        self.retained()
            .into_iter()
            .filter(|t| !self.out_of_vocabulary.iter().any(|o| o == t))
            .map(str::to_string)
            .collect()
    }
}

fn push_unique(list: &mut Vec<String>, term: &str) {
    if !list.iter().any(|t| t == term) {
        list.push(term.to_string());
    }
}

/// Derives one curated term set per roster topic.
///
/// The candidate pool of a topic is the union of its matched topics' top
/// terms. Terms present in every model that matched the topic (when at least
/// two did) are common; the rest stay with the model that produced them.
/// Researcher removals are applied, then the retained list is capped at
/// [`TOP_TERMS`] keeping common terms first and interleaving unique terms by
/// rank. Everything dropped is recorded in `removed`.
pub fn derive_query_sets(
    matrix: &AlignmentMatrix,
    models: &[ModelTopics],
    edits: &[CurationEdit],
    vocab: Option<&Vocabulary>,
) -> Result<Vec<QueryTermSet>, AlignmentError> {
    let report = alignment_report(matrix);
    if report.roster.is_empty() {
        return Err(AlignmentError::EmptyRoster);
    }
    for e in edits {
        if !report.roster.iter().any(|r| r.label == e.label) {
            return Err(AlignmentError::UnknownRosterTopic(e.label.clone()));
        }
    }
    let model_map: BTreeMap<&str, &ModelTopics> = models.iter().map(|m| (m.id.as_str(), m)).collect();
    let mut out = Vec::with_capacity(report.roster.len());
    for (topic_id, entry) in report.roster.iter().enumerate() {
        let edit = edits.iter().find(|e| e.label == entry.label);
        let proposed: Vec<String> = edit
            .map(|e| {
                let mut p: Vec<String> = Vec::new();
                for t in &e.proposed {
                    let t = t.trim().to_lowercase();
                    if !t.is_empty() {
                        push_unique(&mut p, &t);
                    }
                }
                p
            })
            .unwrap_or_default();
        if entry.kind == RosterKind::GtOnly {
            if proposed.is_empty() {
                return Err(AlignmentError::MissingProposedTerms(entry.label.clone()));
            }
            if let Some(term) = edit.and_then(|e| e.remove.first()) {
                return Err(AlignmentError::RemovalNotMember {
                    label: entry.label.clone(),
                    term: term.clone(),
                });
            }
            let out_of_vocabulary: Vec<String> = match vocab {
                Some(v) => proposed.iter().filter(|t| v.id(t).is_none()).cloned().collect(),
                None => vec![],
            };
            for t in &out_of_vocabulary {
                warn!("proposed term {t} of {} is not in the vocabulary and will be dropped from modelling", entry.label);
            }
            out.push(QueryTermSet {
                topic_id,
                label: entry.label.clone(),
                kind: entry.kind,
                common: vec![],
                unique: BTreeMap::new(),
                proposed,
                removed: vec![],
                out_of_vocabulary,
            });
            continue;
        }
        if !proposed.is_empty() {
            return Err(AlignmentError::UnexpectedProposedTerms(entry.label.clone()));
        }
        // Per-model ranked candidate lists.
        let mut per_model: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for r in &entry.topics {
            let m = model_map
                .get(r.model.as_str())
                .ok_or_else(|| AlignmentError::UnknownModel(r.model.clone()))?;
            let terms = m.topics.get(r.topic).ok_or_else(|| AlignmentError::UnknownTopic {
                model: r.model.clone(),
                topic: r.topic,
            })?;
            let list = per_model.entry(r.model.clone()).or_default();
            for t in terms.iter().take(TOP_TERMS) {
                push_unique(list, t);
            }
        }
        let mut common: Vec<String> = Vec::new();
        if per_model.len() >= 2 {
            let first = per_model.values().next().expect("non-empty");
            for t in first {
                if per_model.values().all(|l| l.contains(t)) {
                    common.push(t.clone());
                }
            }
        }
        let mut unique: BTreeMap<String, Vec<String>> = per_model
            .iter()
            .map(|(m, l)| (m.clone(), l.iter().filter(|t| !common.contains(t)).cloned().collect()))
            .collect();
        // A term unique to several (but not all) models stays with the first.
        let mut claimed: BTreeSet<String> = common.iter().cloned().collect();
        for list in unique.values_mut() {
            list.retain(|t| claimed.insert(t.clone()));
        }
        // Every model gets a column, matched or not.
        for m in models {
            unique.entry(m.id.clone()).or_default();
        }
        let mut removed = Vec::new();
        if let Some(e) = edit {
            for term in &e.remove {
                let term = term.trim();
                let in_common = common.iter().position(|t| t == term);
                let in_unique = unique.iter().find_map(|(m, l)| l.iter().position(|t| t == term).map(|p| (m.clone(), p)));
                match (in_common, in_unique) {
                    (Some(p), _) => {
                        common.remove(p);
                    }
                    (None, Some((m, p))) => {
                        unique.get_mut(&m).expect("model present").remove(p);
                    }
                    (None, None) => {
                        return Err(AlignmentError::RemovalNotMember {
                            label: entry.label.clone(),
                            term: term.to_string(),
                        })
                    }
                }
                removed.push(RemovedTerm { term: term.to_string(), reason: RemovalReason::Researcher });
            }
        }
        cap_terms(&mut common, &mut unique, &mut removed);
        out.push(QueryTermSet {
            topic_id,
            label: entry.label.clone(),
            kind: entry.kind,
            common,
            unique,
            proposed: vec![],
            removed,
            out_of_vocabulary: vec![],
        });
    }
    Ok(out)
}

fn cap_terms(
    common: &mut Vec<String>,
    unique: &mut BTreeMap<String, Vec<String>>,
    removed: &mut Vec<RemovedTerm>,
) {
    let total = common.len() + unique.values().map(Vec::len).sum::<usize>();
    if total <= TOP_TERMS {
        return;
    }
    for t in common.drain(TOP_TERMS.min(common.len())..) {
        removed.push(RemovedTerm { term: t, reason: RemovalReason::Cap });
    }
    let mut budget = TOP_TERMS - common.len();
    // Round-robin over models by rank.
    let mut keep: BTreeMap<String, usize> = unique.keys().map(|m| (m.clone(), 0)).collect();
    let longest = unique.values().map(Vec::len).max().unwrap_or(0);
    'outer: for rank in 0..longest {
        for (m, list) in unique.iter() {
            if budget == 0 {
                break 'outer;
            }
            if rank < list.len() {
                *keep.get_mut(m).expect("model present") += 1;
                budget -= 1;
            }
        }
    }
    for (m, list) in unique.iter_mut() {
        for t in list.drain(keep[m]..) {
            removed.push(RemovedTerm { term: t, reason: RemovalReason::Cap });
        }
    }
}

const LIST_SEP: &str = ", ";

fn split_list(cell: &str) -> Vec<String> {
    let cell = cell.trim();
    if cell.is_empty() || cell == "-" || cell == "N/A" {
        return vec![];
    }
    cell.split(',').map(|t| t.trim().to_string()).filter(|t| !t.is_empty()).collect()
}

fn join_list(terms: &[String]) -> String {
    terms.join(LIST_SEP)
}

/// Writes the term-extraction table: `no,label,kind,common,unique:<model>...,proposed`.
pub fn write_query_sets_csv(sets: &[QueryTermSet], out: impl Write) -> csv::Result<()> {
    let models: BTreeSet<&String> = sets.iter().flat_map(|s| s.unique.keys()).collect();
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["no".to_string(), "label".into(), "kind".into(), "common".into()];
    header.extend(models.iter().map(|m| format!("unique:{m}")));
    header.push("proposed".into());
    w.write_record(&header)?;
    for s in sets {
        let kind = match s.kind {
            RosterKind::Matched => "matched",
            RosterKind::GtOnly => "gt-only",
            RosterKind::LdaOnly => "lda-only",
        };
        let mut row = vec![(s.topic_id + 1).to_string(), s.label.clone(), kind.into(), join_list(&s.common)];
        for m in &models {
            row.push(s.unique.get(*m).map(|l| join_list(l)).unwrap_or_default());
        }
        row.push(join_list(&s.proposed));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a table written by [`write_query_sets_csv`]. Removal records and
/// vocabulary flags are not part of the table and come back empty.
pub fn read_query_sets_csv(input: impl Read) -> Result<Vec<QueryTermSet>, AlignmentError> {
    let bad = |e: csv::Error| AlignmentError::Csv(e.to_string());
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers().map_err(bad)?.clone();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| AlignmentError::Csv(format!("missing column {name}")))
    };
    let (no, label, kind, common, proposed) =
        (col("no")?, col("label")?, col("kind")?, col("common")?, col("proposed")?);
    let model_cols: Vec<(usize, String)> = header
        .iter()
        .enumerate()
        .filter_map(|(i, h)| h.strip_prefix("unique:").map(|m| (i, m.to_string())))
        .collect();
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(bad)?;
        let topic_id = rec[no]
            .parse::<usize>()
            .map_err(|e| AlignmentError::Csv(e.to_string()))?
            .checked_sub(1)
            .ok_or_else(|| AlignmentError::Csv("topic numbers start at 1".into()))?;
        let kind = match &rec[kind] {
            "matched" => RosterKind::Matched,
            "gt-only" => RosterKind::GtOnly,
            "lda-only" => RosterKind::LdaOnly,
            other => return Err(AlignmentError::Csv(format!("unknown kind {other}"))),
        };
        let unique = model_cols
            .iter()
            .filter(|_| kind != RosterKind::GtOnly)
            .map(|(i, m)| (m.clone(), split_list(&rec[*i])))
            .collect();
        out.push(QueryTermSet {
            topic_id,
            label: rec[label].to_string(),
            kind,
            common: split_list(&rec[common]),
            unique,
            proposed: split_list(&rec[proposed]),
            removed: vec![],
            out_of_vocabulary: vec![],
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entries(labels: &[&str]) -> Vec<CodeEntry> {
        labels
            .iter()
            .map(|l| CodeEntry { label: l.to_string(), description: format!("about {l}") })
            .collect()
    }

    #[test]
    fn codebook_rules() {
        assert_eq!(register_gt_codes(&[], &[]), Err(AlignmentError::EmptyCodebook));
        assert_eq!(
            register_gt_codes(&entries(&["a", "a"]), &[]),
            Err(AlignmentError::DuplicateLabel("a".into()))
        );
        let ex = |l: &str, r: &str| Exclusion { label: l.into(), reason: r.into() };
        assert_eq!(
            register_gt_codes(&entries(&["a"]), &[ex("zz", "abstract")]),
            Err(AlignmentError::UnknownExclusion("zz".into()))
        );
        assert_eq!(
            register_gt_codes(&entries(&["a"]), &[ex("a", " ")]),
            Err(AlignmentError::EmptyReason("a".into()))
        );
        let cb = register_gt_codes(&entries(&["a", "b", "c"]), &[ex("b", "abstract")]).unwrap();
        assert_eq!(cb.comparable().count(), 2);
    }

    fn models() -> Vec<ModelTopics> {
        let t = |s: &str| s.split_whitespace().map(str::to_string).collect::<Vec<_>>();
        vec![
            ModelTopics { id: "m13".into(), topics: vec![t("bank pay paypal money"), t("kid class"), t("x y")] },
            ModelTopics { id: "m17".into(), topics: vec![t("pay bank fee transfer"), t("class kid late")] },
        ]
    }

    #[test]
    fn report_counts_and_flags() {
        let cb = register_gt_codes(&entries(&["class", "covid", "rating"]), &[]).unwrap();
        let d = |c: &str, m: &str, t| MatchDecision { code: c.into(), model: m.into(), topic: t };
        let nt = NewTopic {
            label: "bank".into(),
            topics: vec![TopicRef { model: "m13".into(), topic: 0 }, TopicRef { model: "m17".into(), topic: 0 }],
        };
        let m = record_alignment(
            &cb,
            &models(),
            &[d("class", "m13", 1), d("class", "m17", 1), d("rating", "m17", 1)],
            std::slice::from_ref(&nt),
        )
        .unwrap();
        let r = alignment_report(&m);
        assert_eq!((r.matched, r.gt_only, r.lda_only, r.roster.len()), (2, 1, 1, 4));
        assert_eq!(r.many_to_one.len(), 1);
        assert_eq!(r.many_to_one[0].1, vec!["class".to_string(), "rating".into()]);

        let none = record_alignment(&cb, &models(), &[], &[]).unwrap();
        assert!(none.matched.is_empty());
        assert_eq!(alignment_report(&none).gt_only, 3);

        assert!(matches!(
            record_alignment(&cb, &models(), &[d("class", "m17", 9)], &[]),
            Err(AlignmentError::UnknownTopic { .. })
        ));
        assert!(matches!(
            record_alignment(&cb, &models(), &[d("nope", "m17", 0)], &[]),
            Err(AlignmentError::UnknownCode(_))
        ));
        assert!(matches!(
            record_alignment(&cb, &models(), &[d("class", "m13", 0)], &[nt]),
            Err(AlignmentError::NewTopicMatched { .. })
        ));
    }

    #[test]
    fn empty_matrix_warns() {
        let m = AlignmentMatrix {
            codes: vec![],
            models: BTreeMap::new(),
            matched: BTreeSet::new(),
            new_topics: vec![],
        };
        let r = alignment_report(&m);
        assert!(r.roster.is_empty());
        assert_eq!(r.warnings.len(), 1);
        assert_eq!(derive_query_sets(&m, &[], &[], None), Err(AlignmentError::EmptyRoster));
    }

    #[test]
    fn query_sets_split_common_and_unique() {
        let cb = register_gt_codes(&entries(&["class", "covid"]), &[]).unwrap();
        let d = |c: &str, m: &str, t| MatchDecision { code: c.into(), model: m.into(), topic: t };
        let nt = NewTopic {
            label: "bank".into(),
            topics: vec![TopicRef { model: "m13".into(), topic: 0 }, TopicRef { model: "m17".into(), topic: 0 }],
        };
        let m = record_alignment(&cb, &models(), &[d("class", "m13", 1), d("class", "m17", 1)], &[nt]).unwrap();
        let edits = vec![
            CurationEdit { label: "covid".into(), proposed: vec!["pandemic".into(), "Covid-19".into(), "lockdown".into()], ..Default::default() },
            CurationEdit { label: "bank".into(), remove: vec!["money".into()], ..Default::default() },
        ];
        let sets = derive_query_sets(&m, &models(), &edits, None).unwrap();
        assert_eq!(sets[0].common, ["kid", "class"]);
        assert_eq!(sets[0].unique["m17"], ["late"]);
        assert!(sets[0].unique["m13"].is_empty());
        assert_eq!(sets[1].proposed, ["pandemic", "covid-19", "lockdown"]);
        assert_eq!(sets[2].common, ["bank", "pay"]);
        assert_eq!(sets[2].unique["m13"], ["paypal"]);
        assert_eq!(sets[2].removed, vec![RemovedTerm { term: "money".into(), reason: RemovalReason::Researcher }]);

        let missing = derive_query_sets(&m, &models(), &edits[1..], None);
        assert_eq!(missing, Err(AlignmentError::MissingProposedTerms("covid".into())));
        let mut bad = edits.clone();
        bad[1].remove = vec!["zebra".into()];
        assert!(matches!(derive_query_sets(&m, &models(), &bad, None), Err(AlignmentError::RemovalNotMember { .. })));
    }

    #[test]
    fn cap_keeps_twenty() {
        let t = |p: &str| (0..20).map(|i| format!("{p}{i}")).collect::<Vec<_>>();
        let models = vec![
            ModelTopics { id: "a".into(), topics: vec![t("a")] },
            ModelTopics { id: "b".into(), topics: vec![t("b")] },
        ];
        let cb = register_gt_codes(&entries(&["x"]), &[]).unwrap();
        let d = |m: &str| MatchDecision { code: "x".into(), model: m.into(), topic: 0 };
        let m = record_alignment(&cb, &models, &[d("a"), d("b")], &[]).unwrap();
        let sets = derive_query_sets(&m, &models, &[], None).unwrap();
        assert_eq!(sets[0].retained().len(), TOP_TERMS);
        assert_eq!(sets[0].unique["a"].len(), 10);
        assert_eq!(sets[0].removed.len(), 20);
        assert!(sets[0].removed.iter().all(|r| r.reason == RemovalReason::Cap));
    }
}
