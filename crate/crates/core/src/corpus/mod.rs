//! Corpus ingestion, preprocessing and vocabulary management.

mod text;

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use text::{is_emoji, suffix_lemma, PreprocessConfig};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: malformed JSON: {message}")]
    MalformedLine { line: usize, message: String },
    #[error("line {line}: missing field: {field}")]
    MissingField { line: usize, field: &'static str },
    #[error("line {line}: duplicate id {id}")]
    DuplicateId { line: usize, id: String },
    #[error("min_df must be at least 1")]
    ZeroMinDf,
    #[error("unknown source {0}")]
    UnknownSource(String),
    #[error("requested {requested} documents but the corpus has {available}")]
    SubsetTooLarge { requested: usize, available: usize },
    #[error("corpus has not been preprocessed")]
    NotPreprocessed,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub source: String,
    pub text: String,
    /// Vocabulary term ids in reading order; empty until preprocessing.
    #[serde(default)]
    pub tokens: Vec<usize>,
}

/// Term <-> id bijection with document frequencies.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(from = "VocabularyRepr", into = "VocabularyRepr")]
pub struct Vocabulary {
    terms: Vec<String>,
    doc_freq: Vec<usize>,
    total_tokens: usize,
    index: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct VocabularyRepr {
    terms: Vec<String>,
    doc_freq: Vec<usize>,
    total_tokens: usize,
}

impl From<VocabularyRepr> for Vocabulary {
    fn from(r: VocabularyRepr) -> Self {
        let index = r.terms.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self {
            terms: r.terms,
            doc_freq: r.doc_freq,
            total_tokens: r.total_tokens,
            index,
        }
    }
}

impl From<Vocabulary> for VocabularyRepr {
    fn from(v: Vocabulary) -> Self {
        Self {
            terms: v.terms,
            doc_freq: v.doc_freq,
            total_tokens: v.total_tokens,
        }
    }
}

impl PartialEq for Vocabulary {
    fn eq(&self, other: &Self) -> bool {
        self.terms == other.terms
            && self.doc_freq == other.doc_freq
            && self.total_tokens == other.total_tokens
    }
}

impl Vocabulary {
    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn id(&self, term: &str) -> Option<usize> {
        self.index.get(term).copied()
    }

    pub fn term(&self, id: usize) -> Option<&str> {
        self.terms.get(id).map(String::as_str)
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn doc_freq(&self, id: usize) -> usize {
        self.doc_freq[id]
    }

    pub fn doc_freqs(&self) -> &[usize] {
        &self.doc_freq
    }

    pub fn total_tokens(&self) -> usize {
        self.total_tokens
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub documents: Vec<Document>,
    pub vocabulary: Vocabulary,
    /// Present once the corpus has been preprocessed.
    pub config: Option<PreprocessConfig>,
}

/// How [`sample_subset`] picks documents.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubsetSelector {
    Random { n: usize, seed: u64 },
    BySource(Vec<String>),
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn is_preprocessed(&self) -> bool {
        self.config.is_some()
    }

    pub fn document(&self, id: &str) -> Option<&Document> {
        self.documents.iter().find(|d| d.id == id)
    }

    /// Map from document id to position.
    pub fn positions(&self) -> HashMap<&str, usize> {
        self.documents.iter().enumerate().map(|(i, d)| (d.id.as_str(), i)).collect()
    }

    /// Builds an unprocessed corpus from raw documents, enforcing id uniqueness.
    pub fn from_documents(documents: Vec<Document>) -> Result<Self, CorpusError> {
        let mut seen = HashSet::new();
        for (i, d) in documents.iter().enumerate() {
            if !seen.insert(d.id.as_str()) {
                return Err(CorpusError::DuplicateId { line: i + 1, id: d.id.clone() });
            }
        }
        Ok(Self { documents, vocabulary: Vocabulary::default(), config: None })
    }

    /// Builds a tokenized corpus directly from term lists. Mostly useful for
    /// synthetic fixtures; term ids are assigned in first-occurrence order.
    pub fn from_token_lists<S: AsRef<str>>(docs: &[(String, Vec<S>)]) -> Self {
        let mut index: HashMap<String, usize> = HashMap::new();
        let mut terms = Vec::new();
        let documents = docs
            .iter()
            .map(|(id, toks)| {
                let tokens = toks
                    .iter()
                    .map(|t| {
                        let t = t.as_ref();
                        *index.entry(t.to_string()).or_insert_with(|| {
                            terms.push(t.to_string());
                            terms.len() - 1
                        })
                    })
                    .collect();
                let text = toks.iter().map(|t| t.as_ref()).collect::<Vec<_>>().join(" ");
                Document { id: id.clone(), source: String::new(), text, tokens }
            })
            .collect();
        let mut corpus = Self {
            documents,
            vocabulary: Vocabulary::default(),
            config: Some(PreprocessConfig {
                lemmatize: false,
                ..PreprocessConfig::default()
            }),
        };
        corpus.vocabulary = build_vocabulary(&corpus.documents, &terms);
        corpus
    }

    /// Term strings of a document.
    pub fn doc_terms(&self, doc: usize) -> Vec<&str> {
        self.documents[doc]
            .tokens
            .iter()
            .map(|&t| self.vocabulary.terms[t].as_str())
            .collect()
    }

    /// Recomputes frequencies over the current documents, drops terms that no
    /// longer occur and compacts ids preserving their relative order.
    fn reindex(&mut self, keep: impl Fn(usize, usize) -> bool) {
        let mut df = vec![0usize; self.vocabulary.len()];
        for d in &self.documents {
            let uniq: BTreeSet<usize> = d.tokens.iter().copied().collect();
            for t in uniq {
                df[t] += 1;
            }
        }
        let mut remap = vec![usize::MAX; df.len()];
        let mut next = 0;
        for (old, &f) in df.iter().enumerate() {
            if f > 0 && keep(old, f) {
                remap[old] = next;
                next += 1;
            }
        }
        for d in &mut self.documents {
            d.tokens = d
                .tokens
                .iter()
                .filter_map(|&t| (remap[t] != usize::MAX).then_some(remap[t]))
                .collect();
        }
        let terms: Vec<String> = self
            .vocabulary
            .terms
            .iter()
            .enumerate()
            .filter(|(i, _)| remap[*i] != usize::MAX)
            .map(|(_, t)| t.clone())
            .collect();
        self.vocabulary = build_vocabulary(&self.documents, &terms);
    }
}

fn build_vocabulary(docs: &[Document], terms: &[String]) -> Vocabulary {
    let mut df = vec![0usize; terms.len()];
    let mut total = 0;
    let mut seen = vec![usize::MAX; terms.len()];
    for (di, d) in docs.iter().enumerate() {
        total += d.tokens.len();
        for &t in &d.tokens {
            if seen[t] != di {
                seen[t] = di;
                df[t] += 1;
            }
        }
    }
    Vocabulary::from(VocabularyRepr {
        terms: terms.to_vec(),
        doc_freq: df,
        total_tokens: total,
    })
}

/// Reads a JSONL file of `{"id", "source", "text"}` objects.
pub fn ingest_corpus(path: impl AsRef<Path>) -> Result<Corpus, CorpusError> {
    let file = File::open(path)?;
    ingest_reader(BufReader::new(file))
}

pub fn ingest_reader(reader: impl BufRead) -> Result<Corpus, CorpusError> {
    let mut documents = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(&line).map_err(|e| {
            CorpusError::MalformedLine { line: line_no, message: e.to_string() }
        })?;
        let obj = value.as_object().ok_or_else(|| CorpusError::MalformedLine {
            line: line_no,
            message: "expected a JSON object".into(),
        })?;
        let field = |name: &'static str| -> Result<String, CorpusError> {
            match obj.get(name) {
                Some(serde_json::Value::String(s)) => Ok(s.clone()),
                Some(_) => Err(CorpusError::MalformedLine {
                    line: line_no,
                    message: format!("field {name} must be a string"),
                }),
                None => Err(CorpusError::MissingField { line: line_no, field: name }),
            }
        };
        let id = field("id")?;
        let text = field("text")?;
        let source = field("source")?;
        if !seen.insert(id.clone()) {
            return Err(CorpusError::DuplicateId { line: line_no, id });
        }
        documents.push(Document { id, source, text, tokens: Vec::new() });
    }
    Ok(Corpus { documents, vocabulary: Vocabulary::default(), config: None })
}

/// Tokenizes every document and builds the vocabulary.
///
/// Term ids are assigned in order of first occurrence scanning documents in
/// corpus order, so the result does not depend on the rayon worker count.
pub fn preprocess(corpus: &Corpus, config: &PreprocessConfig) -> Corpus {
    let token_lists: Vec<Vec<String>> = corpus
        .documents
        .par_iter()
        .map(|d| config.tokenize(&d.text))
        .collect();
    let mut index: HashMap<&str, usize> = HashMap::new();
    let mut terms: Vec<String> = Vec::new();
    let documents: Vec<Document> = corpus
        .documents
        .iter()
        .zip(&token_lists)
        .map(|(d, toks)| {
            let tokens = toks
                .iter()
                .map(|t| {
                    *index.entry(t.as_str()).or_insert_with(|| {
                        terms.push(t.clone());
                        terms.len() - 1
                    })
                })
                .collect();
            Document { tokens, ..d.clone() }
        })
        .collect();
    let vocabulary = build_vocabulary(&documents, &terms);
    Corpus { documents, vocabulary, config: Some(config.clone()) }
}

/// Removes every term with document frequency below `min_df`.
pub fn apply_min_df(corpus: &Corpus, min_df: usize) -> Result<Corpus, CorpusError> {
    if min_df == 0 {
        return Err(CorpusError::ZeroMinDf);
    }
    if !corpus.is_preprocessed() {
        return Err(CorpusError::NotPreprocessed);
    }
    let mut out = corpus.clone();
    out.reindex(|_, df| df >= min_df);
    if out.vocabulary.is_empty() && !corpus.vocabulary.is_empty() {
        warn!("min_df={min_df} removed every term from the vocabulary");
    }
    Ok(out)
}

/// Selects an exploration subset. A preprocessed corpus gets its vocabulary
/// rebuilt over the selected documents.
pub fn sample_subset(corpus: &Corpus, selector: &SubsetSelector) -> Result<Corpus, CorpusError> {
    let documents: Vec<Document> = match selector {
        SubsetSelector::Random { n, seed } => {
            if *n > corpus.len() {
                return Err(CorpusError::SubsetTooLarge { requested: *n, available: corpus.len() });
            }
            let mut order: Vec<usize> = (0..corpus.len()).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            order.shuffle(&mut rng);
            order.truncate(*n);
            order.into_iter().map(|i| corpus.documents[i].clone()).collect()
        }
        SubsetSelector::BySource(names) => {
            let present: HashSet<&str> = corpus.documents.iter().map(|d| d.source.as_str()).collect();
            if let Some(missing) = names.iter().find(|n| !present.contains(n.as_str())) {
                return Err(CorpusError::UnknownSource(missing.clone()));
            }
            let wanted: HashSet<&str> = names.iter().map(String::as_str).collect();
            corpus
                .documents
                .iter()
                .filter(|d| wanted.contains(d.source.as_str()))
                .cloned()
                .collect()
        }
    };
    let mut out = Corpus { documents, ..corpus.clone() };
    if out.is_preprocessed() {
        out.reindex(|_, _| true);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn jsonl(lines: &[&str]) -> Result<Corpus, CorpusError> {
        ingest_reader(lines.join("\n").as_bytes())
    }

    #[test]
    fn ingest_preserves_order() {
        let c = jsonl(&[
            r#"{"id":"b","source":"s","text":"one"}"#,
            r#"{"id":"a","source":"s","text":"two"}"#,
        ])
        .unwrap();
        assert_eq!(c.documents.iter().map(|d| d.id.as_str()).collect::<Vec<_>>(), ["b", "a"]);
        assert!(c.vocabulary.is_empty());
    }

    #[test]
    fn ingest_errors() {
        let e = jsonl(&[r#"{"id":"a"}"#]).unwrap_err();
        assert_eq!(e.to_string(), "line 1: missing field: text");
        let e = jsonl(&[
            r#"{"id":"x","source":"s","text":"1"}"#,
            r#"{"id":"x","source":"s","text":"2"}"#,
        ])
        .unwrap_err();
        assert!(e.to_string().ends_with("duplicate id x"), "{e}");
        let e = jsonl(&[r#"{"id":"x","source":"s","text":"1"}"#, "{nope"]).unwrap_err();
        assert!(matches!(e, CorpusError::MalformedLine { line: 2, .. }));
    }

    fn raw(texts: &[&str]) -> Corpus {
        Corpus::from_documents(
            texts
                .iter()
                .enumerate()
                .map(|(i, t)| Document {
                    id: format!("d{i}"),
                    source: if i % 2 == 0 { "even" } else { "odd" }.into(),
                    text: t.to_string(),
                    tokens: vec![],
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn empty_documents_are_kept() {
        let c = preprocess(&raw(&["", "hello world", "!!!"]), &PreprocessConfig::default());
        assert_eq!(c.len(), 3);
        assert!(c.documents[0].tokens.is_empty());
        assert!(c.documents[2].tokens.is_empty());
        assert_eq!(c.vocabulary.len(), 2);
    }

    #[test]
    fn min_df_removes_rare_terms() {
        let c = preprocess(
            &raw(&["rare common", "common", "common", "common", "common x"]),
            &PreprocessConfig::default(),
        );
        let pruned = apply_min_df(&c, 5).unwrap();
        assert_eq!(pruned.vocabulary.terms(), ["common"]);
        assert_eq!(pruned.vocabulary.doc_freq(0), 5);
        assert!(pruned.documents.iter().all(|d| d.tokens == vec![0]));
        let same = apply_min_df(&c, 1).unwrap();
        assert_eq!(same, c);
        let gone = apply_min_df(&c, 6).unwrap();
        assert!(gone.vocabulary.is_empty());
        assert!(matches!(apply_min_df(&c, 0), Err(CorpusError::ZeroMinDf)));
    }

    #[test]
    fn subsets() {
        let c = preprocess(&raw(&["a b", "b c", "c d", "d e"]), &PreprocessConfig::default());
        let s = sample_subset(&c, &SubsetSelector::BySource(vec!["odd".into()])).unwrap();
        assert_eq!(s.documents.iter().map(|d| d.id.as_str()).collect::<Vec<_>>(), ["d1", "d3"]);
        assert_eq!(s.vocabulary.terms(), ["b", "c", "d", "e"]);
        assert!(matches!(
            sample_subset(&c, &SubsetSelector::BySource(vec!["nope".into()])),
            Err(CorpusError::UnknownSource(_))
        ));
        let all = sample_subset(&c, &SubsetSelector::Random { n: 4, seed: 9 }).unwrap();
        let mut ids: Vec<_> = all.documents.iter().map(|d| d.id.clone()).collect();
        ids.sort();
        assert_eq!(ids, ["d0", "d1", "d2", "d3"]);
        let again = sample_subset(&c, &SubsetSelector::Random { n: 2, seed: 9 }).unwrap();
        let again2 = sample_subset(&c, &SubsetSelector::Random { n: 2, seed: 9 }).unwrap();
        assert_eq!(again, again2);
        assert!(matches!(
            sample_subset(&c, &SubsetSelector::Random { n: 5, seed: 1 }),
            Err(CorpusError::SubsetTooLarge { .. })
        ));
    }

    #[test]
    fn serde_round_trip_rebuilds_index() {
        let c = preprocess(&raw(&["alpha beta", "beta"]), &PreprocessConfig::default());
        let json = serde_json::to_string(&c).unwrap();
        let back: Corpus = serde_json::from_str(&json).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.vocabulary.id("beta"), Some(1));
    }

    fn word() -> impl Strategy<Value = String> {
        prop_oneof![
            "[a-z]{1,8}(s|es|ing|ed)?",
            "[A-Z][a-z]{0,5}[!?.,]{0,2}",
            Just("the".to_string()),
            Just("https://x.y/z".to_string()),
            Just("😀".to_string()),
        ]
    }

    fn docs() -> impl Strategy<Value = Vec<String>> {
        prop::collection::vec(prop::collection::vec(word(), 0..12).prop_map(|w| w.join(" ")), 1..30)
    }

    proptest! {
        #[test]
        fn preprocessing_is_idempotent(texts in docs()) {
            let cfg = PreprocessConfig::default().with_stopwords(["the", "a"]);
            let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
            let once = preprocess(&raw(&refs), &cfg);
            let joined: Vec<String> = (0..once.len()).map(|i| once.doc_terms(i).join(" ")).collect();
            let jrefs: Vec<&str> = joined.iter().map(String::as_str).collect();
            let twice = preprocess(&raw(&jrefs), &cfg);
            for i in 0..once.len() {
                prop_assert_eq!(once.doc_terms(i), twice.doc_terms(i));
            }
        }

        #[test]
        fn doc_freq_matches_recount(texts in docs(), min_df in 1usize..4) {
            let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
            let c = preprocess(&raw(&refs), &PreprocessConfig::default());
            let pruned = apply_min_df(&c, min_df).unwrap();
            for corpus in [&c, &pruned] {
                let v = &corpus.vocabulary;
                let mut total = 0;
                for (id, term) in v.terms().iter().enumerate() {
                    let brute = corpus.documents.iter()
                        .filter(|d| d.tokens.iter().any(|&t| v.term(t) == Some(term.as_str())))
                        .count();
                    prop_assert_eq!(v.doc_freq(id), brute);
                    prop_assert!(brute >= 1 && brute <= corpus.len());
                    prop_assert_eq!(v.id(term), Some(id));
                }
                for d in &corpus.documents { total += d.tokens.len(); }
                prop_assert_eq!(total, v.total_tokens());
            }
            // min_df keeps order and never raises a frequency.
            for (a, b) in c.documents.iter().zip(&pruned.documents) {
                let kept: Vec<&str> = a.tokens.iter().map(|&t| c.vocabulary.term(t).unwrap())
                    .filter(|t| pruned.vocabulary.id(t).is_some()).collect();
                let after: Vec<&str> = b.tokens.iter().map(|&t| pruned.vocabulary.term(t).unwrap()).collect();
                prop_assert_eq!(kept, after);
            }
            for (id, term) in pruned.vocabulary.terms().iter().enumerate() {
                let before = c.vocabulary.doc_freq(c.vocabulary.id(term).unwrap());
                prop_assert!(pruned.vocabulary.doc_freq(id) <= before);
            }
        }
    }
}
