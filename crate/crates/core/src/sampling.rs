//! Classifier-driven theoretical sampling: label every document, summarize
//! label frequencies, and draw reproducible samples per label.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::process::{Command, Stdio};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, PreprocessConfig};

/// Label given to documents without a classification.
pub const NEUTRAL: &str = "neutral";

#[derive(Debug, Error)]
pub enum SamplingError {
    #[error("lexicon line {line}: {message}")]
    Lexicon { line: usize, message: String },
    #[error("lexicon has no entries")]
    EmptyLexicon,
    #[error("classification table is empty")]
    EmptyTable,
    #[error("label {0} does not occur in the table")]
    UnknownLabel(String),
    #[error("requested {requested} documents labelled {label}, only {available} available")]
    NotEnough { label: String, requested: usize, available: usize },
    #[error("plugin failed: {0}")]
    Plugin(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub label: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PluginInfo {
    pub name: String,
    pub version: String,
    pub labels: Vec<String>,
}

/// A document classifier. Implementations must be deterministic for a fixed
/// input.
pub trait Classifier: Sync {
    fn info(&self) -> PluginInfo;

    fn classify(&self, text: &str) -> Result<Classification, SamplingError>;

    /// Classifies `(id, text)` pairs; the default runs [`Classifier::classify`]
    /// on each document in parallel.
    fn classify_batch(&self, docs: &[(&str, &str)]) -> Vec<Result<Classification, SamplingError>> {
        docs.par_iter().map(|(_, text)| self.classify(text)).collect()
    }
}

/// Counts lexicon hits per label; the label with most hits wins (ties go to
/// the lexicographically smallest label) with score hits / tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LexiconClassifier {
    lexicon: BTreeMap<String, String>,
    tokenizer: PreprocessConfig,
}

impl LexiconClassifier {
    pub fn new(lexicon: BTreeMap<String, String>) -> Self {
        let tokenizer = PreprocessConfig { lemmatize: false, strip_urls: false, ..PreprocessConfig::default() };
        let lexicon = lexicon.into_iter().map(|(t, l)| (t.to_lowercase(), l)).collect();
        Self { lexicon, tokenizer }
    }

    /// Parses `term<TAB>label` lines. Blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self, SamplingError> {
        let mut lexicon = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let bad = |message: &str| SamplingError::Lexicon { line: i + 1, message: message.to_string() };
            let (term, label) = line.split_once('\t').ok_or_else(|| bad("expected term<TAB>label"))?;
            let (term, label) = (term.trim(), label.trim());
            if term.is_empty() || label.is_empty() {
                return Err(bad("empty term or label"));
            }
            lexicon.insert(term.to_string(), label.to_string());
        }
        if lexicon.is_empty() {
            return Err(SamplingError::EmptyLexicon);
        }
        Ok(Self::new(lexicon))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SamplingError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}

impl Classifier for LexiconClassifier {
    fn info(&self) -> PluginInfo {
        let mut labels: Vec<String> = self.lexicon.values().cloned().collect();
        labels.push(NEUTRAL.into());
        labels.sort();
        labels.dedup();
        PluginInfo { name: "lexicon".into(), version: env!("CARGO_PKG_VERSION").into(), labels }
    }

    fn classify(&self, text: &str) -> Result<Classification, SamplingError> {
        let tokens = self.tokenizer.tokenize(text);
        let mut hits: BTreeMap<&str, usize> = BTreeMap::new();
        for t in &tokens {
            if let Some(label) = self.lexicon.get(t) {
                *hits.entry(label).or_default() += 1;
            }
        }
        let best = hits.iter().fold(None::<(&str, usize)>, |best, (&l, &c)| match best {
            Some((_, bc)) if bc >= c => best,
            _ => Some((l, c)),
        });
        Ok(match best {
            Some((label, c)) => Classification { label: label.to_string(), score: c as f64 / tokens.len() as f64 },
            None => Classification { label: NEUTRAL.into(), score: 0.0 },
        })
    }
}

/// External classifier run as a subprocess: documents go to stdin as JSONL
/// `{"id", "text"}`, results come back on stdout as JSONL
/// `{"id", "label", "score"}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubprocessClassifier {
    pub program: String,
    pub args: Vec<String>,
    pub info: PluginInfo,
}

#[derive(Serialize)]
struct PluginInput<'a> {
    id: &'a str,
    text: &'a str,
}

#[derive(Deserialize)]
struct PluginOutput {
    id: String,
    label: String,
    score: f64,
}

impl SubprocessClassifier {
    fn check(&self, out: &PluginOutput) -> Result<Classification, SamplingError> {
        if !(0.0..=1.0).contains(&out.score) {
            return Err(SamplingError::Plugin(format!("score {} for {} outside [0, 1]", out.score, out.id)));
        }
        if !self.info.labels.is_empty() && !self.info.labels.contains(&out.label) {
            return Err(SamplingError::Plugin(format!("undeclared label {} for {}", out.label, out.id)));
        }
        Ok(Classification { label: out.label.clone(), score: out.score })
    }

    fn run(&self, docs: &[(&str, &str)]) -> Result<HashMap<String, PluginOutput>, SamplingError> {
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()?;
        let mut stdin = child.stdin.take().expect("piped stdin");
        let input: Vec<u8> = {
            let mut buf = Vec::new();
            for (id, text) in docs {
                serde_json::to_writer(&mut buf, &PluginInput { id, text })?;
                buf.push(b'\n');
            }
            buf
        };
        let writer = std::thread::spawn(move || stdin.write_all(&input));
        let stdout = child.stdout.take().expect("piped stdout");
        let mut results = HashMap::new();
        for line in BufReader::new(stdout).lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let out: PluginOutput = serde_json::from_str(&line)?;
            results.insert(out.id.clone(), out);
        }
        writer.join().map_err(|_| SamplingError::Plugin("stdin writer panicked".into()))??;
        let status = child.wait()?;
        if !status.success() {
            return Err(SamplingError::Plugin(format!("{} exited with {status}", self.program)));
        }
        Ok(results)
    }
}

impl Classifier for SubprocessClassifier {
    fn info(&self) -> PluginInfo {
        self.info.clone()
    }

    fn classify(&self, text: &str) -> Result<Classification, SamplingError> {
        self.classify_batch(&[("0", text)]).pop().expect("one result")
    }

    fn classify_batch(&self, docs: &[(&str, &str)]) -> Vec<Result<Classification, SamplingError>> {
        match self.run(docs) {
            Ok(results) => docs
                .iter()
                .map(|(id, _)| match results.get(*id) {
                    Some(out) => self.check(out),
                    None => Err(SamplingError::Plugin(format!("no result for {id}"))),
                })
                .collect(),
            Err(e) => {
                let msg = e.to_string();
                docs.iter().map(|_| Err(SamplingError::Plugin(msg.clone()))).collect()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifiedDoc {
    pub doc_id: String,
    pub label: String,
    pub score: f64,
    /// False when the classifier failed and the row fell back to neutral.
    pub classified: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationTable {
    pub plugin: PluginInfo,
    pub documents: usize,
    pub failures: usize,
    /// One row per document, sorted by document id.
    pub rows: Vec<ClassifiedDoc>,
}

/// Classifies every document. Failures are logged, counted and recorded as
/// neutral rows.
pub fn classify_corpus(corpus: &Corpus, classifier: &dyn Classifier) -> ClassificationTable {
    let docs: Vec<(&str, &str)> = corpus.documents.iter().map(|d| (d.id.as_str(), d.text.as_str())).collect();
    let results = classifier.classify_batch(&docs);
    let mut failures = 0;
    let mut rows: Vec<ClassifiedDoc> = docs
        .iter()
        .zip(results)
        .map(|((id, _), r)| match r {
            Ok(c) => ClassifiedDoc { doc_id: id.to_string(), label: c.label, score: c.score, classified: true },
            Err(e) => {
                log::warn!("classification of {id} failed: {e}");
                failures += 1;
                ClassifiedDoc { doc_id: id.to_string(), label: NEUTRAL.into(), score: 0.0, classified: false }
            }
        })
        .collect();
    rows.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));
    if failures > 0 {
        log::warn!("{failures} of {} documents could not be classified", rows.len());
    }
    ClassificationTable { plugin: classifier.info(), documents: rows.len(), failures, rows }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelCount {
    pub label: String,
    pub count: usize,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyHistogram {
    pub total: usize,
    /// Sorted by count descending, then label.
    pub labels: Vec<LabelCount>,
}

impl FrequencyHistogram {
    pub fn get(&self, label: &str) -> Option<&LabelCount> {
        self.labels.iter().find(|l| l.label == label)
    }

    /// Bar-chart data: `label,count,fraction` per row.
    pub fn write_csv(&self, out: impl Write) -> Result<(), SamplingError> {
        let mut w = csv::Writer::from_writer(out);
        for l in &self.labels {
            w.serialize(l)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn label_frequencies(table: &ClassificationTable) -> Result<FrequencyHistogram, SamplingError> {
    if table.rows.is_empty() {
        return Err(SamplingError::EmptyTable);
    }
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for r in &table.rows {
        *counts.entry(&r.label).or_default() += 1;
    }
    let total = table.rows.len();
    let mut labels: Vec<LabelCount> = counts
        .into_iter()
        .map(|(label, count)| LabelCount { label: label.to_string(), count, fraction: count as f64 / total as f64 })
        .collect();
    labels.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.label.cmp(&b.label)));
    Ok(FrequencyHistogram { total, labels })
}

/// Uniform sample of `n` document ids labelled `label`, without replacement.
pub fn draw_sample(table: &ClassificationTable, label: &str, n: usize, seed: u64) -> Result<Vec<String>, SamplingError> {
    let mut pool: Vec<&str> = table.rows.iter().filter(|r| r.label == label).map(|r| r.doc_id.as_str()).collect();
    if pool.is_empty() {
        return Err(SamplingError::UnknownLabel(label.to_string()));
    }
    if n > pool.len() {
        return Err(SamplingError::NotEnough { label: label.to_string(), requested: n, available: pool.len() });
    }
    pool.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(pool.into_iter().take(n).map(String::from).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub doc_id: String,
    pub label: String,
    pub score: f64,
    pub text: String,
}

/// Writes a sample as JSONL with the full document text for hand-coding.
pub fn write_sample_jsonl(
    sample: &[String],
    table: &ClassificationTable,
    corpus: &Corpus,
    mut out: impl Write,
) -> Result<(), SamplingError> {
    let rows: HashMap<&str, &ClassifiedDoc> = table.rows.iter().map(|r| (r.doc_id.as_str(), r)).collect();
    for id in sample {
        let doc = corpus.document(id).ok_or_else(|| SamplingError::Plugin(format!("document {id} not in corpus")))?;
        let row = rows.get(id.as_str()).ok_or_else(|| SamplingError::Plugin(format!("document {id} not classified")))?;
        let rec = SampleRecord { doc_id: id.clone(), label: row.label.clone(), score: row.score, text: doc.text.clone() };
        serde_json::to_writer(&mut out, &rec)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Document;

    fn lexicon() -> LexiconClassifier {
        LexiconClassifier::parse("# emotions\nthanks\tgratitude\nappreciate\tgratitude\nrealize\trealization\nsad\tsadness\n").unwrap()
    }

    fn corpus(texts: &[&str]) -> Corpus {
        let docs = texts
            .iter()
            .enumerate()
            .map(|(i, t)| Document { id: format!("d{i:03}"), source: "test".into(), text: t.to_string(), tokens: vec![] })
            .collect();
        Corpus::from_documents(docs).unwrap()
    }

    #[test]
    fn lexicon_rules() {
        let c = lexicon();
        let r = c.classify("thanks a lot, I really appreciate it").unwrap();
        assert_eq!(r.label, "gratitude");
        assert!((r.score - 2.0 / 7.0).abs() < 1e-12);
        assert_eq!(c.classify("nothing to see").unwrap(), Classification { label: NEUTRAL.into(), score: 0.0 });
        // One hit each: lexicographic tie-break.
        assert_eq!(c.classify("sad thanks").unwrap().label, "gratitude");
        assert!(matches!(LexiconClassifier::parse("no tab here"), Err(SamplingError::Lexicon { line: 1, .. })));
        assert!(matches!(LexiconClassifier::parse("\n# only\n"), Err(SamplingError::EmptyLexicon)));
    }

    #[test]
    fn table_is_sorted_and_deterministic() {
        let c = corpus(&["thanks", "sad day", "realize now", "plain"]);
        let a = classify_corpus(&c, &lexicon());
        assert_eq!(a, classify_corpus(&c, &lexicon()));
        assert_eq!(a.rows.len(), 4);
        assert!(a.rows.windows(2).all(|w| w[0].doc_id < w[1].doc_id));
        assert_eq!(a.failures, 0);
    }

    struct Flaky;

    impl Classifier for Flaky {
        fn info(&self) -> PluginInfo {
            PluginInfo { name: "flaky".into(), version: "0".into(), labels: vec!["x".into()] }
        }

        fn classify(&self, text: &str) -> Result<Classification, SamplingError> {
            if text.contains("boom") {
                Err(SamplingError::Plugin("boom".into()))
            } else {
                Ok(Classification { label: "x".into(), score: 1.0 })
            }
        }
    }

    #[test]
    fn failures_become_neutral_rows() {
        let c = corpus(&["fine", "boom", "fine again"]);
        let t = classify_corpus(&c, &Flaky);
        assert_eq!(t.failures, 1);
        assert_eq!(t.rows[1].label, NEUTRAL);
        assert!(!t.rows[1].classified);
    }

    #[test]
    fn histogram_fractions() {
        let texts: Vec<&str> = (0..100).map(|i| if i < 8 { "thanks" } else { "plain" }).collect();
        let t = classify_corpus(&corpus(&texts), &lexicon());
        let h = label_frequencies(&t).unwrap();
        assert_eq!(h.get("gratitude").unwrap().fraction, 0.08);
        assert_eq!(h.labels[0].label, NEUTRAL);
        let sum: f64 = h.labels.iter().map(|l| l.fraction).sum();
        assert!((sum - 1.0).abs() < 1e-9);
        let empty = ClassificationTable { rows: vec![], ..t };
        assert!(matches!(label_frequencies(&empty), Err(SamplingError::EmptyTable)));
    }

    #[test]
    fn sampling_rules() {
        let texts: Vec<&str> = (0..60).map(|i| if i % 2 == 0 { "thanks" } else { "sad" }).collect();
        let c = corpus(&texts);
        let t = classify_corpus(&c, &lexicon());
        let all = draw_sample(&t, "sadness", 30, 1).unwrap();
        let mut sorted = all.clone();
        sorted.sort();
        let expected: Vec<String> = t.rows.iter().filter(|r| r.label == "sadness").map(|r| r.doc_id.clone()).collect();
        assert_eq!(sorted, expected);
        assert_eq!(draw_sample(&t, "sadness", 10, 5).unwrap(), draw_sample(&t, "sadness", 10, 5).unwrap());
        assert!(matches!(draw_sample(&t, "sadness", 31, 1), Err(SamplingError::NotEnough { available: 30, .. })));
        assert!(matches!(draw_sample(&t, "joy", 1, 1), Err(SamplingError::UnknownLabel(_))));
        let mut buf = Vec::new();
        write_sample_jsonl(&all[..2], &t, &c, &mut buf).unwrap();
        let first: SampleRecord = serde_json::from_str(String::from_utf8(buf).unwrap().lines().next().unwrap()).unwrap();
        assert_eq!(first.text, "sad");
    }

    #[cfg(unix)]
    #[test]
    fn subprocess_plugin_protocol() {
        let script = r#"while IFS= read -r line; do id=$(printf '%s' "$line" | sed 's/.*"id":"\([^"]*\)".*/\1/'); printf '{"id":"%s","label":"x","score":0.5}\n' "$id"; done"#;
        let plugin = SubprocessClassifier {
            program: "sh".into(),
            args: vec!["-c".into(), script.into()],
            info: PluginInfo { name: "echo".into(), version: "1".into(), labels: vec!["x".into()] },
        };
        let c = corpus(&["one", "two"]);
        let t = classify_corpus(&c, &plugin);
        assert_eq!(t.failures, 0);
        assert!(t.rows.iter().all(|r| r.label == "x" && r.score == 0.5));
        let bad = SubprocessClassifier { program: "/nonexistent/plugin".into(), ..plugin };
        assert_eq!(classify_corpus(&c, &bad).failures, 2);
    }

    fn table(labels: &[u8]) -> ClassificationTable {
        let rows = labels
            .iter()
            .enumerate()
            .map(|(i, l)| ClassifiedDoc { doc_id: format!("d{i:03}"), label: format!("l{l}"), score: 1.0, classified: true })
            .collect();
        let plugin = PluginInfo { name: "fixed".into(), version: "1".into(), labels: vec![] };
        ClassificationTable { plugin, documents: labels.len(), failures: 0, rows }
    }

    proptest::proptest! {
        #[test]
        fn histogram_and_draws_hold_invariants(labels in proptest::collection::vec(0u8..4, 1..60), n in 0usize..20, seed: u64) {
            let t = table(&labels);
            let h = label_frequencies(&t).unwrap();
            proptest::prop_assert_eq!(h.labels.iter().map(|l| l.count).sum::<usize>(), labels.len());
            proptest::prop_assert!((h.labels.iter().map(|l| l.fraction).sum::<f64>() - 1.0).abs() < 1e-12);
            let available = labels.iter().filter(|&&l| l == labels[0]).count();
            let label = format!("l{}", labels[0]);
            match draw_sample(&t, &label, n, seed) {
                Ok(ids) => {
                    proptest::prop_assert_eq!(ids.len(), n);
                    let unique: std::collections::BTreeSet<_> = ids.iter().collect();
                    proptest::prop_assert_eq!(unique.len(), n);
                    proptest::prop_assert!(ids.iter().all(|id| t.rows.iter().any(|r| &r.doc_id == id && r.label == label)));
                    proptest::prop_assert_eq!(draw_sample(&t, &label, n, seed).unwrap(), ids);
                }
                Err(SamplingError::NotEnough { available: a, .. }) => proptest::prop_assert!(n > available && a == available),
                Err(e) => proptest::prop_assert!(false, "{e}"),
            }
        }
    }
}
