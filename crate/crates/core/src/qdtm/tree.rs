//! Topic tree produced by the sampler, and the clean-up steps applied before
//! annotation.

use std::collections::{BTreeSet, HashSet};
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::QdtmError;
use crate::corpus::Corpus;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedDoc {
    pub doc_id: String,
    pub weight: f64,
    /// Hash of the whitespace-normalized text; equal keys mean duplicate posts.
    pub content_key: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subtopic {
    pub id: usize,
    pub tokens: u64,
    pub prevalence: f64,
    pub top_terms: Vec<(String, f64)>,
    pub ranked_docs: Vec<RankedDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MainTopic {
    pub id: usize,
    pub label: String,
    pub tokens: u64,
    pub prevalence: f64,
    pub top_terms: Vec<(String, f64)>,
    pub ranked_docs: Vec<RankedDoc>,
    pub subtopics: Vec<Subtopic>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerMeta {
    pub seed: u64,
    pub iterations: usize,
    pub alpha: f64,
    pub beta: f64,
    pub boost: f64,
    pub gamma: f64,
    pub initial_subtopics: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicTree {
    pub mains: Vec<MainTopic>,
    /// Tokens the prevalences are relative to.
    pub total_tokens: u64,
    pub sampler: SamplerMeta,
}

impl TopicTree {
    pub fn topic_count(&self) -> usize {
        self.mains.iter().map(|m| 1 + m.subtopics.len()).sum()
    }

    pub fn subtopic_count(&self) -> usize {
        self.mains.iter().map(|m| m.subtopics.len()).sum()
    }

    /// Recomputes every prevalence from token counts.
    fn recompute(&mut self) {
        let total = self.total_tokens;
        let frac = |n: u64| if total == 0 { 0.0 } else { n as f64 / total as f64 };
        for main in &mut self.mains {
            main.prevalence = frac(main.tokens);
            for sub in &mut main.subtopics {
                sub.prevalence = frac(sub.tokens);
            }
        }
    }
}

/// Removes subtopics below `min_prevalence` and renormalizes over the
/// remaining tokens. Mains are never removed.
pub fn prune_tree(tree: &TopicTree, min_prevalence: f64) -> Result<(TopicTree, Vec<String>), QdtmError> {
    if !(0.0..1.0).contains(&min_prevalence) {
        return Err(QdtmError::InvalidThreshold(min_prevalence));
    }
    let mut out = tree.clone();
    let mut warnings = Vec::new();
    let had_subs = tree.subtopic_count() > 0;
    for main in &mut out.mains {
        let before = main.subtopics.len();
        main.subtopics.retain(|s| s.prevalence >= min_prevalence);
        if main.subtopics.len() < before {
            main.tokens = main.subtopics.iter().map(|s| s.tokens).sum();
        }
    }
    if had_subs && out.subtopic_count() == 0 {
        // Nothing left to renormalize over; keep the mains' own mass.
        for (main, orig) in out.mains.iter_mut().zip(&tree.mains) {
            main.tokens = orig.tokens;
        }
        let w = format!("every subtopic fell below {min_prevalence}; mains kept without subtopics");
        log::warn!("{w}");
        warnings.push(w);
    }
    out.total_tokens = out.mains.iter().map(|m| m.tokens).sum();
    out.recompute();
    Ok((out, warnings))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DedupeReport {
    /// `(main id, removed sub id, surviving sub id)`.
    pub merged_subtopics: Vec<(usize, usize, usize)>,
    /// `(topic id, doc id)` of duplicate posts dropped from a top-n window.
    pub duplicate_posts: Vec<(String, String)>,
}

fn dedupe_docs(topic: &str, docs: &mut Vec<RankedDoc>, n_posts: usize, report: &mut DedupeReport) {
    let mut seen = HashSet::new();
    let mut kept = Vec::with_capacity(docs.len());
    for doc in docs.drain(..) {
        if seen.insert(doc.content_key.clone()) {
            kept.push(doc);
        } else if kept.len() < n_posts {
            report.duplicate_posts.push((topic.to_string(), doc.doc_id));
        }
    }
    *docs = kept;
}

/// Merges subtopics with identical top-10 term sets into the more prevalent
/// one, then removes duplicate posts from every ranked list so that the top
/// `n_posts` entries are distinct (later copies are dropped and the list
/// moves up).
pub fn dedupe(tree: &TopicTree, n_posts: usize) -> (TopicTree, DedupeReport) {
    let mut out = tree.clone();
    let mut report = DedupeReport::default();
    for main in &mut out.mains {
        let mut order: Vec<Subtopic> = std::mem::take(&mut main.subtopics);
        order.sort_by(|a, b| b.tokens.cmp(&a.tokens).then(a.id.cmp(&b.id)));
        let mut kept: Vec<(BTreeSet<String>, Subtopic)> = Vec::new();
        for sub in order {
            let key: BTreeSet<String> = sub.top_terms.iter().take(10).map(|(t, _)| t.clone()).collect();
            match kept.iter_mut().find(|(k, _)| *k == key) {
                Some((_, survivor)) => {
                    report.merged_subtopics.push((main.id, sub.id, survivor.id));
                    survivor.tokens += sub.tokens;
                    survivor.ranked_docs.extend(sub.ranked_docs);
                    survivor
                        .ranked_docs
                        .sort_by(|a, b| b.weight.total_cmp(&a.weight).then(a.doc_id.cmp(&b.doc_id)));
                }
                None => kept.push((key, sub)),
            }
        }
        main.subtopics = kept.into_iter().map(|(_, s)| s).collect();
        main.subtopics.sort_by_key(|s| s.id);
        dedupe_docs(&main.id.to_string(), &mut main.ranked_docs, n_posts, &mut report);
        for sub in &mut main.subtopics {
            dedupe_docs(&format!("{}.{}", main.id, sub.id), &mut sub.ranked_docs, n_posts, &mut report);
        }
    }
    out.recompute();
    (out, report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundlePost {
    pub rank: usize,
    pub doc_id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleEntry {
    /// `"3"` for a main, `"3.2"` for one of its subtopics.
    pub topic_id: String,
    pub parent_id: Option<String>,
    pub label: String,
    pub prevalence: f64,
    pub posts: Vec<BundlePost>,
    pub terms: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationBundle {
    pub n_posts: usize,
    pub n_terms: usize,
    /// Mains in order, each followed by its subtopics.
    pub entries: Vec<BundleEntry>,
    pub warnings: Vec<String>,
}

impl AnnotationBundle {
    pub fn entry(&self, topic_id: &str) -> Option<&BundleEntry> {
        self.entries.iter().find(|e| e.topic_id == topic_id)
    }

    pub fn topic_ids(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.topic_id.clone()).collect()
    }
}

/// Builds the annotation view of a tree: one entry per main and subtopic with
/// its top posts (full text) and top terms.
pub fn export_annotation_bundle(
    tree: &TopicTree,
    corpus: &Corpus,
    n_posts: usize,
    n_terms: usize,
) -> Result<AnnotationBundle, QdtmError> {
    if n_posts == 0 {
        return Err(QdtmError::ZeroCount("n_posts"));
    }
    if n_terms == 0 {
        return Err(QdtmError::ZeroCount("n_terms"));
    }
    let positions = corpus.positions();
    let mut warnings = Vec::new();
    let mut entry = |topic_id: String,
                     parent_id: Option<String>,
                     label: &str,
                     prevalence: f64,
                     docs: &[RankedDoc],
                     terms: &[(String, f64)]|
     -> Result<BundleEntry, QdtmError> {
        let mut seen = HashSet::new();
        let mut posts = Vec::new();
        for doc in docs {
            if posts.len() == n_posts {
                break;
            }
            if !seen.insert(doc.content_key.as_str()) {
                continue;
            }
            let &pos = positions.get(doc.doc_id.as_str()).ok_or_else(|| QdtmError::UnknownDocument(doc.doc_id.clone()))?;
            posts.push(BundlePost {
                rank: posts.len() + 1,
                doc_id: doc.doc_id.clone(),
                text: corpus.documents[pos].text.clone(),
            });
        }
        if posts.len() < n_posts {
            let w = format!("topic {topic_id} has {} of {n_posts} posts", posts.len());
            log::warn!("{w}");
            warnings.push(w);
        }
        Ok(BundleEntry {
            topic_id,
            parent_id,
            label: label.to_string(),
            prevalence,
            posts,
            terms: terms.iter().take(n_terms).map(|(t, _)| t.clone()).collect(),
        })
    };
    let mut entries = Vec::with_capacity(tree.topic_count());
    for main in &tree.mains {
        let id = main.id.to_string();
        entries.push(entry(id.clone(), None, &main.label, main.prevalence, &main.ranked_docs, &main.top_terms)?);
        for sub in &main.subtopics {
            entries.push(entry(
                format!("{id}.{}", sub.id),
                Some(id.clone()),
                &main.label,
                sub.prevalence,
                &sub.ranked_docs,
                &sub.top_terms,
            )?);
        }
    }
    Ok(AnnotationBundle { n_posts, n_terms, entries, warnings })
}

/// Spreadsheet layout: one row per topic, grouped by main, with one column
/// per post slot.
pub fn write_bundle_csv(bundle: &AnnotationBundle, out: impl Write) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["topic_id".to_string(), "parent_id".into(), "label".into(), "prevalence".into(), "terms".into()];
    header.extend((1..=bundle.n_posts).map(|i| format!("post_{i}")));
    w.write_record(&header)?;
    for e in &bundle.entries {
        let mut row = vec![
            e.topic_id.clone(),
            e.parent_id.clone().unwrap_or_default(),
            e.label.clone(),
            format!("{:.6}", e.prevalence),
            e.terms.join(", "),
        ];
        row.extend((0..bundle.n_posts).map(|i| e.posts.get(i).map(|p| p.text.clone()).unwrap_or_default()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(id: &str, weight: f64, key: &str) -> RankedDoc {
        RankedDoc { doc_id: id.into(), weight, content_key: key.into() }
    }

    fn terms(words: &[&str]) -> Vec<(String, f64)> {
        words.iter().enumerate().map(|(i, w)| (w.to_string(), 1.0 / (i + 1) as f64)).collect()
    }

    fn sub(id: usize, tokens: u64, words: &[&str]) -> Subtopic {
        Subtopic { id, tokens, prevalence: 0.0, top_terms: terms(words), ranked_docs: vec![] }
    }

    fn tree(subs: Vec<Vec<Subtopic>>) -> TopicTree {
        let mains: Vec<MainTopic> = subs
            .into_iter()
            .enumerate()
            .map(|(i, subtopics)| MainTopic {
                id: i + 1,
                label: format!("m{}", i + 1),
                tokens: subtopics.iter().map(|s| s.tokens).sum(),
                prevalence: 0.0,
                top_terms: terms(&["x"]),
                ranked_docs: vec![],
                subtopics,
            })
            .collect();
        let mut t = TopicTree {
            total_tokens: mains.iter().map(|m| m.tokens).sum(),
            mains,
            sampler: SamplerMeta { seed: 0, iterations: 1, alpha: 0.1, beta: 0.01, boost: 10.0, gamma: 1.0, initial_subtopics: 1 },
        };
        t.recompute();
        t
    }

    fn accounted(t: &TopicTree) {
        let sum: f64 = t.mains.iter().map(|m| m.prevalence).sum();
        assert!((sum - 1.0).abs() < 1e-9);
        for m in &t.mains {
            if !m.subtopics.is_empty() {
                let s: f64 = m.subtopics.iter().map(|s| s.prevalence).sum();
                assert!((s - m.prevalence).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn prune_removes_low_prevalence() {
        // 15 of 10000 tokens = 0.0015.
        let t = tree(vec![vec![sub(1, 5000, &["a"]), sub(2, 15, &["b"])], vec![sub(1, 4985, &["c"])]]);
        let (p, warnings) = prune_tree(&t, 0.002).unwrap();
        assert!(warnings.is_empty());
        assert_eq!(p.mains[0].subtopics.len(), 1);
        assert_eq!(p.total_tokens, 9985);
        accounted(&p);
        let (same, _) = prune_tree(&t, 0.0).unwrap();
        assert_eq!(same, t);
        assert!(matches!(prune_tree(&t, 1.0), Err(QdtmError::InvalidThreshold(_))));
        assert!(matches!(prune_tree(&t, -0.1), Err(QdtmError::InvalidThreshold(_))));
    }

    #[test]
    fn prune_everything_keeps_mains() {
        let t = tree(vec![vec![sub(1, 10, &["a"])], vec![sub(1, 30, &["b"])]]);
        let (p, warnings) = prune_tree(&t, 0.9).unwrap();
        assert_eq!(p.mains.len(), 2);
        assert_eq!(p.subtopic_count(), 0);
        assert_eq!(warnings.len(), 1);
        assert!((p.mains[1].prevalence - 0.75).abs() < 1e-12);
    }

    #[test]
    fn dedupe_merges_identical_subtopics() {
        let words: Vec<String> = (0..10).map(|i| format!("w{i}")).collect();
        let w: Vec<&str> = words.iter().map(String::as_str).collect();
        let mut shuffled = w.clone();
        shuffled.reverse();
        let t = tree(vec![vec![sub(1, 100, &w), sub(2, 400, &shuffled), sub(3, 500, &["other"])]]);
        let (d, report) = dedupe(&t, 10);
        let ids: Vec<usize> = d.mains[0].subtopics.iter().map(|s| s.id).collect();
        assert_eq!(ids, vec![2, 3]);
        assert_eq!(report.merged_subtopics, vec![(1, 1, 2)]);
        accounted(&d);
        let (again, report) = dedupe(&d, 10);
        assert_eq!(again, d);
        assert_eq!(report, DedupeReport::default());
    }

    #[test]
    fn dedupe_backfills_posts() {
        let mut t = tree(vec![vec![sub(1, 10, &["a"])]]);
        t.mains[0].ranked_docs =
            vec![doc("a", 0.9, "k1"), doc("b", 0.8, "k2"), doc("c", 0.7, "k3"), doc("d", 0.6, "k4"), doc("e", 0.5, "k2"), doc("f", 0.4, "k6")];
        let (d, report) = dedupe(&t, 5);
        let ids: Vec<&str> = d.mains[0].ranked_docs.iter().map(|r| r.doc_id.as_str()).take(5).collect();
        assert_eq!(ids, vec!["a", "b", "c", "d", "f"]);
        assert_eq!(report.duplicate_posts, vec![("1".to_string(), "e".to_string())]);
    }

    #[test]
    fn bundle_entries_and_clamping() {
        let corpus = Corpus::from_token_lists(&[
            ("a".to_string(), vec!["x"]),
            ("b".to_string(), vec!["y"]),
            ("c".to_string(), vec!["z"]),
        ]);
        let mut t = tree(vec![vec![sub(1, 5, &["x", "y"])], vec![]]);
        t.mains[1].tokens = 5;
        t.total_tokens = 10;
        t.recompute();
        t.mains[0].ranked_docs = vec![doc("a", 0.5, "1"), doc("b", 0.4, "2"), doc("c", 0.3, "3")];
        let b = export_annotation_bundle(&t, &corpus, 5, 10).unwrap();
        assert_eq!(b.topic_ids(), vec!["1", "1.1", "2"]);
        assert_eq!(b.entry("1.1").unwrap().parent_id.as_deref(), Some("1"));
        assert_eq!(b.entry("2").unwrap().parent_id, None);
        assert_eq!(b.entry("1").unwrap().posts.len(), 3);
        assert!(!b.warnings.is_empty());
        assert!(matches!(export_annotation_bundle(&t, &corpus, 0, 10), Err(QdtmError::ZeroCount(_))));
        let mut csv = Vec::new();
        write_bundle_csv(&b, &mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.starts_with("topic_id,parent_id,label,prevalence,terms,post_1"));
    }
}
