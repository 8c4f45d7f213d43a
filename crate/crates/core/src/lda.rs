//! Latent Dirichlet allocation trained by collapsed Gibbs sampling.
//!
//! Each model runs as a single deterministic chain seeded from the caller's
//! seed. [`sweep`] trains several topic counts concurrently; the results are
//! identical to training them one after another.

use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, Vocabulary};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LdaError {
    #[error("corpus has no tokens to train on")]
    EmptyCorpus,
    #[error("vocabulary is empty")]
    EmptyVocabulary,
    #[error("need at least 2 topics, got {0}")]
    TooFewTopics(usize),
    #[error("{k} topics exceed the vocabulary size {vocab}")]
    TooManyTopics { k: usize, vocab: usize },
    #[error("iterations must be at least 1")]
    ZeroIterations,
    #[error("topic {topic} out of range for {k} topics")]
    TopicOutOfRange { topic: usize, k: usize },
    #[error("coherence needs at least 2 terms, got {0}")]
    TooFewCoherenceTerms(usize),
    #[error("K list is empty")]
    EmptySweep,
    #[error("invalid hyperparameter: {0}")]
    InvalidParameter(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LdaParams {
    pub k: usize,
    /// Symmetric document-topic prior; `None` means 50 / K.
    pub alpha: Option<f64>,
    pub beta: f64,
    pub iterations: usize,
}

impl LdaParams {
    pub fn new(k: usize) -> Self {
        Self { k, alpha: None, beta: 0.01, iterations: 1000 }
    }

    pub fn with_iterations(mut self, iterations: usize) -> Self {
        self.iterations = iterations;
        self
    }

    pub fn alpha(&self) -> f64 {
        self.alpha.unwrap_or(50.0 / self.k as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LdaModel {
    pub k: usize,
    pub alpha: f64,
    pub beta: f64,
    pub seed: u64,
    pub iterations: usize,
    pub vocab_size: usize,
    pub doc_ids: Vec<String>,
    /// Topic-term distributions, K rows of length V.
    pub phi: Vec<Vec<f64>>,
    /// Document-topic distributions, D rows of length K.
    pub theta: Vec<Vec<f64>>,
    /// Final topic of every token, aligned with the corpus token lists.
    pub assignments: Vec<Vec<usize>>,
}

/// Ranked view of one topic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicSummary {
    pub topic: usize,
    pub top_terms: Vec<(String, f64)>,
    pub top_docs: Vec<(String, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelReport {
    pub k: usize,
    pub coherence: Vec<f64>,
    pub mean_coherence: f64,
    /// Fold-in perplexity on the held-out documents; `None` without held-out tokens.
    pub perplexity: Option<f64>,
    pub runtime_ms: u128,
}

impl ModelReport {
    /// Equality on every field except wall-clock runtime.
    pub fn same_metrics(&self, other: &Self) -> bool {
        self.k == other.k
            && self.coherence == other.coherence
            && self.mean_coherence.to_bits() == other.mean_coherence.to_bits()
            && self.perplexity.map(f64::to_bits) == other.perplexity.map(f64::to_bits)
    }
}

/// Count-matrix state of a collapsed Gibbs chain.
pub(crate) struct GibbsState<'a> {
    pub(crate) docs: Vec<&'a [usize]>,
    pub(crate) k: usize,
    pub(crate) v: usize,
    pub(crate) alpha: f64,
    pub(crate) beta: f64,
    pub(crate) z: Vec<Vec<usize>>,
    ndk: Vec<u32>,
    nkw: Vec<u32>,
    nk: Vec<u32>,
}

impl<'a> GibbsState<'a> {
    pub(crate) fn new(corpus: &'a Corpus, params: &LdaParams, rng: &mut impl Rng) -> Self {
        let k = params.k;
        let v = corpus.vocabulary.len();
        let docs: Vec<&[usize]> = corpus.documents.iter().map(|d| d.tokens.as_slice()).collect();
        let mut state = Self {
            k,
            v,
            alpha: params.alpha(),
            beta: params.beta,
            z: Vec::with_capacity(docs.len()),
            ndk: vec![0; docs.len() * k],
            nkw: vec![0; k * v],
            nk: vec![0; k],
            docs,
        };
        for d in 0..state.docs.len() {
            let zs: Vec<usize> = state.docs[d].iter().map(|_| rng.random_range(0..k)).collect();
            for (&w, &t) in state.docs[d].iter().zip(&zs) {
                state.add(d, w, t);
            }
            state.z.push(zs);
        }
        state
    }

    fn add(&mut self, d: usize, w: usize, t: usize) {
        self.ndk[d * self.k + t] += 1;
        self.nkw[t * self.v + w] += 1;
        self.nk[t] += 1;
    }

    fn remove(&mut self, d: usize, w: usize, t: usize) {
        self.ndk[d * self.k + t] -= 1;
        self.nkw[t * self.v + w] -= 1;
        self.nk[t] -= 1;
    }

    /// Unnormalized full conditional for a token of word `w` in document `d`,
    /// with that token already removed from the counts.
    pub(crate) fn conditional(&self, d: usize, w: usize, out: &mut [f64]) {
        let vbeta = self.v as f64 * self.beta;
        for (t, o) in out.iter_mut().enumerate().take(self.k) {
            *o = (self.ndk[d * self.k + t] as f64 + self.alpha)
                * (self.nkw[t * self.v + w] as f64 + self.beta)
                / (self.nk[t] as f64 + vbeta);
        }
    }

    pub(crate) fn sweep(&mut self, rng: &mut impl Rng) {
        self.sweep_observed(rng, |_, _, _, _| {});
    }

    /// One full sweep; `observe` sees each conditional before the draw.
    pub(crate) fn sweep_observed(
        &mut self,
        rng: &mut impl Rng,
        mut observe: impl FnMut(&Self, usize, usize, &[f64]),
    ) {
        let mut weights = vec![0.0; self.k];
        for d in 0..self.docs.len() {
            for i in 0..self.docs[d].len() {
                let w = self.docs[d][i];
                let old = self.z[d][i];
                self.remove(d, w, old);
                self.conditional(d, w, &mut weights);
                observe(self, d, i, &weights);
                let new = sample_index(&weights, rng);
                self.z[d][i] = new;
                self.add(d, w, new);
            }
        }
        #[cfg(debug_assertions)]
        self.check_counts();
    }

    /// Verifies that the count matrices agree with the assignments.
    #[cfg(any(test, debug_assertions))]
    pub(crate) fn check_counts(&self) {
        let total: usize = self.docs.iter().map(|d| d.len()).sum();
        assert_eq!(self.nk.iter().map(|&c| c as usize).sum::<usize>(), total);
        for t in 0..self.k {
            let row: u32 = self.nkw[t * self.v..(t + 1) * self.v].iter().sum();
            assert_eq!(row, self.nk[t]);
        }
        for (d, doc) in self.docs.iter().enumerate() {
            let row: u32 = self.ndk[d * self.k..(d + 1) * self.k].iter().sum();
            assert_eq!(row as usize, doc.len());
        }
    }

    fn finish(self, seed: u64, iterations: usize, doc_ids: Vec<String>) -> LdaModel {
        let vbeta = self.v as f64 * self.beta;
        let kalpha = self.k as f64 * self.alpha;
        let phi = (0..self.k)
            .map(|t| {
                let denom = self.nk[t] as f64 + vbeta;
                (0..self.v)
                    .map(|w| (self.nkw[t * self.v + w] as f64 + self.beta) / denom)
                    .collect()
            })
            .collect();
        let theta = (0..self.docs.len())
            .map(|d| {
                let denom = self.docs[d].len() as f64 + kalpha;
                (0..self.k)
                    .map(|t| (self.ndk[d * self.k + t] as f64 + self.alpha) / denom)
                    .collect()
            })
            .collect();
        LdaModel {
            k: self.k,
            alpha: self.alpha,
            beta: self.beta,
            seed,
            iterations,
            vocab_size: self.v,
            doc_ids,
            phi,
            theta,
            assignments: self.z,
        }
    }
}

/// Draws an index proportional to `weights` using one uniform variate.
pub(crate) fn sample_index(weights: &[f64], rng: &mut impl Rng) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, &w) in weights.iter().enumerate() {
        if u < w {
            return i;
        }
        u -= w;
    }
    // Rounding left u marginally above the last cumulative bound.
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(weights.len() - 1)
}

fn validate(corpus: &Corpus, params: &LdaParams) -> Result<(), LdaError> {
    let v = corpus.vocabulary.len();
    if v == 0 {
        return Err(LdaError::EmptyVocabulary);
    }
    if corpus.documents.iter().all(|d| d.tokens.is_empty()) {
        return Err(LdaError::EmptyCorpus);
    }
    if params.k < 2 {
        return Err(LdaError::TooFewTopics(params.k));
    }
    if params.k > v {
        return Err(LdaError::TooManyTopics { k: params.k, vocab: v });
    }
    if params.iterations == 0 {
        return Err(LdaError::ZeroIterations);
    }
    let alpha = params.alpha();
    if !(alpha > 0.0 && alpha.is_finite() && params.beta > 0.0 && params.beta.is_finite()) {
        return Err(LdaError::InvalidParameter(format!("alpha={alpha}, beta={}", params.beta)));
    }
    Ok(())
}

/// Trains one model. Empty documents keep a uniform topic distribution.
pub fn train_lda(corpus: &Corpus, params: &LdaParams, seed: u64) -> Result<LdaModel, LdaError> {
    validate(corpus, params)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = GibbsState::new(corpus, params, &mut rng);
    for _ in 0..params.iterations {
        state.sweep(&mut rng);
    }
    let ids = corpus.documents.iter().map(|d| d.id.clone()).collect();
    Ok(state.finish(seed, params.iterations, ids))
}

fn ranked(weights: impl Iterator<Item = f64>, n: usize) -> Vec<(usize, f64)> {
    let mut all: Vec<(usize, f64)> = weights.enumerate().collect();
    all.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    all.truncate(n);
    all
}

impl LdaModel {
    fn check_topic(&self, topic: usize) -> Result<(), LdaError> {
        if topic >= self.k {
            return Err(LdaError::TopicOutOfRange { topic, k: self.k });
        }
        Ok(())
    }

    /// The `n` highest-probability term ids of `topic`; ties go to the lower id.
    pub fn top_terms(&self, topic: usize, n: usize) -> Result<Vec<(usize, f64)>, LdaError> {
        self.check_topic(topic)?;
        Ok(ranked(self.phi[topic].iter().copied(), n))
    }

    /// The `n` documents with the highest share of `topic`; ties go to the lower index.
    pub fn top_docs(&self, topic: usize, n: usize) -> Result<Vec<(usize, f64)>, LdaError> {
        self.check_topic(topic)?;
        Ok(ranked(self.theta.iter().map(|row| row[topic]), n))
    }

    pub fn summary(
        &self,
        vocab: &Vocabulary,
        topic: usize,
        n_terms: usize,
        n_docs: usize,
    ) -> Result<TopicSummary, LdaError> {
        let top_terms = self
            .top_terms(topic, n_terms)?
            .into_iter()
            .map(|(w, p)| (vocab.term(w).unwrap_or("?").to_string(), p))
            .collect();
        let top_docs = self
            .top_docs(topic, n_docs)?
            .into_iter()
            .map(|(d, p)| (self.doc_ids[d].clone(), p))
            .collect();
        Ok(TopicSummary { topic, top_terms, top_docs })
    }

    pub fn summaries(
        &self,
        vocab: &Vocabulary,
        n_terms: usize,
        n_docs: usize,
    ) -> Vec<TopicSummary> {
        (0..self.k)
            .map(|t| self.summary(vocab, t, n_terms, n_docs).expect("topic in range"))
            .collect()
    }

    /// Top-`n` term strings for every topic.
    pub fn top_term_lists(&self, vocab: &Vocabulary, n: usize) -> Vec<Vec<String>> {
        (0..self.k)
            .map(|t| {
                self.top_terms(t, n)
                    .expect("topic in range")
                    .into_iter()
                    .filter_map(|(w, _)| vocab.term(w).map(str::to_string))
                    .collect()
            })
            .collect()
    }
}

/// Writes `topic,rank,term,weight` rows.
pub fn write_summary_csv(summaries: &[TopicSummary], out: impl Write) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["topic", "rank", "term", "weight"])?;
    for s in summaries {
        for (rank, (term, weight)) in s.top_terms.iter().enumerate() {
            w.write_record([
                s.topic.to_string(),
                (rank + 1).to_string(),
                term.clone(),
                format!("{weight}"),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Document co-occurrence coherence of each topic's top-`n` terms.
///
/// For ranked terms w1..wn the score is the sum over pairs i < j of
/// `ln((D(wi, wj) + 1) / D(wi))`, where `D` counts documents containing the
/// term(s). Pairs whose higher-ranked term never occurs in the corpus are
/// skipped.
pub fn coherence(model: &LdaModel, corpus: &Corpus, n: usize) -> Result<Vec<f64>, LdaError> {
    if n < 2 {
        return Err(LdaError::TooFewCoherenceTerms(n));
    }
    let mut postings: Vec<Vec<usize>> = vec![Vec::new(); model.vocab_size];
    for (d, doc) in corpus.documents.iter().enumerate() {
        let mut terms: Vec<usize> = doc.tokens.iter().copied().filter(|&w| w < model.vocab_size).collect();
        terms.sort_unstable();
        terms.dedup();
        for w in terms {
            postings[w].push(d);
        }
    }
    (0..model.k)
        .map(|t| {
            let top: Vec<usize> = model.top_terms(t, n)?.into_iter().map(|(w, _)| w).collect();
            let mut score = 0.0;
            for j in 1..top.len() {
                for i in 0..j {
                    let di = postings[top[i]].len();
                    if di == 0 {
                        continue;
                    }
                    let co = intersection_len(&postings[top[i]], &postings[top[j]]);
                    score += ((co as f64 + 1.0) / di as f64).ln();
                }
            }
            Ok(score)
        })
        .collect()
}

fn intersection_len(a: &[usize], b: &[usize]) -> usize {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

/// Perplexity of held-out documents. Each document's topic mixture is
/// estimated by `fold_in_iterations` Gibbs sweeps with φ held fixed.
pub fn heldout_perplexity(
    model: &LdaModel,
    heldout: &Corpus,
    fold_in_iterations: usize,
    seed: u64,
) -> Option<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut loglik = 0.0;
    let mut n_tokens = 0usize;
    let mut weights = vec![0.0; model.k];
    for doc in &heldout.documents {
        let toks: Vec<usize> = doc.tokens.iter().copied().filter(|&w| w < model.vocab_size).collect();
        if toks.is_empty() {
            continue;
        }
        let mut ndk = vec![0usize; model.k];
        let mut z: Vec<usize> = toks.iter().map(|_| rng.random_range(0..model.k)).collect();
        for &t in &z {
            ndk[t] += 1;
        }
        for _ in 0..fold_in_iterations {
            for (i, &w) in toks.iter().enumerate() {
                ndk[z[i]] -= 1;
                for t in 0..model.k {
                    weights[t] = (ndk[t] as f64 + model.alpha) * model.phi[t][w];
                }
                z[i] = sample_index(&weights, &mut rng);
                ndk[z[i]] += 1;
            }
        }
        let denom = toks.len() as f64 + model.k as f64 * model.alpha;
        for &w in &toks {
            let p: f64 = (0..model.k)
                .map(|t| (ndk[t] as f64 + model.alpha) / denom * model.phi[t][w])
                .sum();
            loglik += p.ln();
        }
        n_tokens += toks.len();
    }
    (n_tokens > 0).then(|| (-loglik / n_tokens as f64).exp())
}

/// Splits off a held-out share of the documents. Both halves keep the parent
/// vocabulary so term ids stay aligned.
pub fn split_holdout(corpus: &Corpus, fraction: f64, seed: u64) -> (Corpus, Corpus) {
    let n_held = ((corpus.len() as f64) * fraction.clamp(0.0, 1.0)).floor() as usize;
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut held = vec![false; corpus.len()];
    for &i in &order[..n_held] {
        held[i] = true;
    }
    let pick = |want: bool| Corpus {
        documents: corpus
            .documents
            .iter()
            .zip(&held)
            .filter(|(_, &h)| h == want)
            .map(|(d, _)| d.clone())
            .collect(),
        vocabulary: corpus.vocabulary.clone(),
        config: corpus.config.clone(),
    };
    (pick(false), pick(true))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub alpha: Option<f64>,
    pub beta: f64,
    pub iterations: usize,
    pub holdout_fraction: f64,
    pub coherence_terms: usize,
    pub fold_in_iterations: usize,
    pub parallel: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            alpha: None,
            beta: 0.01,
            iterations: 1000,
            holdout_fraction: 0.1,
            coherence_terms: 10,
            fold_in_iterations: 20,
            parallel: true,
        }
    }
}

impl SweepConfig {
    pub fn params(&self, k: usize) -> LdaParams {
        LdaParams { k, alpha: self.alpha, beta: self.beta, iterations: self.iterations }
    }
}

/// Trains and scores one model the way [`sweep`] does for each K.
pub fn evaluate(
    train: &Corpus,
    heldout: &Corpus,
    k: usize,
    config: &SweepConfig,
    seed: u64,
) -> Result<(LdaModel, ModelReport), LdaError> {
    let start = Instant::now();
    let model = train_lda(train, &config.params(k), seed)?;
    let coh = coherence(&model, train, config.coherence_terms)?;
    let mean = coh.iter().sum::<f64>() / coh.len() as f64;
    let perplexity = heldout_perplexity(&model, heldout, config.fold_in_iterations, seed);
    let report = ModelReport {
        k,
        coherence: coh,
        mean_coherence: mean,
        perplexity,
        runtime_ms: start.elapsed().as_millis(),
    };
    Ok((model, report))
}

/// Outcome of one K in a sweep.
pub type SweepEntry = (usize, Result<ModelReport, LdaError>);

/// Trains one model per K. A failing K does not stop the others.
pub fn sweep(
    corpus: &Corpus,
    ks: &[usize],
    config: &SweepConfig,
    seed: u64,
) -> Result<Vec<SweepEntry>, LdaError> {
    if ks.is_empty() {
        return Err(LdaError::EmptySweep);
    }
    let (train, heldout) = split_holdout(corpus, config.holdout_fraction, seed);
    let run = |&k: &usize| (k, evaluate(&train, &heldout, k, config, seed).map(|(_, r)| r));
    Ok(if config.parallel {
        ks.par_iter().map(run).collect()
    } else {
        ks.iter().map(run).collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> Corpus {
        let docs: Vec<(String, Vec<&str>)> = vec![
            ("a".into(), vec!["apple", "banana", "apple", "cherry"]),
            ("b".into(), vec!["banana", "banana", "date"]),
            ("c".into(), vec!["egg", "fig", "egg", "grape", "fig"]),
            ("d".into(), vec!["grape", "egg", "apple"]),
            ("e".into(), vec![]),
        ];
        Corpus::from_token_lists(&docs)
    }

    #[test]
    fn rows_normalized_and_deterministic() {
        let c = toy();
        let p = LdaParams::new(3).with_iterations(50);
        let m1 = train_lda(&c, &p, 7).unwrap();
        let m2 = train_lda(&c, &p, 7).unwrap();
        assert_eq!(m1, m2);
        for row in m1.phi.iter().chain(&m1.theta) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(row.iter().all(|&x| x >= 0.0));
        }
        // Empty document: uniform.
        assert!(m1.theta[4].iter().all(|&x| (x - 1.0 / 3.0).abs() < 1e-12));
    }

    #[test]
    fn errors() {
        let c = toy();
        assert_eq!(train_lda(&c, &LdaParams::new(1), 0), Err(LdaError::TooFewTopics(1)));
        assert!(matches!(train_lda(&c, &LdaParams::new(100), 0), Err(LdaError::TooManyTopics { .. })));
        assert_eq!(train_lda(&c, &LdaParams::new(2).with_iterations(0), 0), Err(LdaError::ZeroIterations));
        let empty = Corpus::from_token_lists::<&str>(&[("x".into(), vec![])]);
        assert_eq!(train_lda(&empty, &LdaParams::new(2), 0), Err(LdaError::EmptyVocabulary));
        let m = train_lda(&c, &LdaParams::new(2).with_iterations(2), 0).unwrap();
        assert!(matches!(m.top_terms(2, 5), Err(LdaError::TopicOutOfRange { .. })));
        assert!(matches!(coherence(&m, &c, 1), Err(LdaError::TooFewCoherenceTerms(1))));
        assert!(matches!(sweep(&c, &[], &SweepConfig::default(), 0), Err(LdaError::EmptySweep)));
    }

    #[test]
    fn top_terms_tie_break_and_full_list() {
        let model = LdaModel {
            k: 2,
            alpha: 0.1,
            beta: 0.01,
            seed: 0,
            iterations: 1,
            vocab_size: 4,
            doc_ids: vec!["x".into()],
            phi: vec![vec![0.25, 0.25, 0.4, 0.1], vec![0.25; 4]],
            theta: vec![vec![0.5, 0.5]],
            assignments: vec![vec![]],
        };
        let top = model.top_terms(0, 4).unwrap();
        assert_eq!(top.iter().map(|x| x.0).collect::<Vec<_>>(), [2, 0, 1, 3]);
        assert!((top.iter().map(|x| x.1).sum::<f64>() - 1.0).abs() < 1e-9);
        let ties = model.top_terms(1, 2).unwrap();
        assert_eq!(ties.iter().map(|x| x.0).collect::<Vec<_>>(), [0, 1]);
    }

    #[test]
    fn single_document_top_doc() {
        let c = Corpus::from_token_lists(&[("only".to_string(), vec!["a", "b", "c"])]);
        let m = train_lda(&c, &LdaParams::new(2).with_iterations(10), 3).unwrap();
        let docs = m.top_docs(0, 5).unwrap();
        assert_eq!(docs.len(), 1);
        assert_eq!(docs[0].0, 0);
    }

    /// Recomputes each conditional from the assignments alone.
    #[test]
    fn conditionals_match_brute_force() {
        let c = toy();
        let params = LdaParams { k: 3, alpha: Some(0.3), beta: 0.05, iterations: 1 };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut state = GibbsState::new(&c, &params, &mut rng);
        for _ in 0..3 {
            let mut checked = 0;
            state.sweep_observed(&mut rng, |s, d, i, weights| {
                let w = s.docs[d][i];
                let mut ndk = vec![0.0; s.k];
                let mut nkw = vec![0.0; s.k];
                let mut nk = vec![0.0; s.k];
                for (dd, doc) in s.docs.iter().enumerate() {
                    for (ii, &ww) in doc.iter().enumerate() {
                        if (dd, ii) == (d, i) {
                            continue;
                        }
                        let t = s.z[dd][ii];
                        nk[t] += 1.0;
                        if dd == d {
                            ndk[t] += 1.0;
                        }
                        if ww == w {
                            nkw[t] += 1.0;
                        }
                    }
                }
                for t in 0..s.k {
                    let brute = (ndk[t] + s.alpha) * (nkw[t] + s.beta) / (nk[t] + s.v as f64 * s.beta);
                    assert!((brute - weights[t]).abs() < 1e-12, "token ({d},{i}) topic {t}");
                }
                checked += 1;
            });
            assert_eq!(checked, 15);
            state.check_counts();
        }
    }

    #[test]
    fn coherence_formula() {
        // Two terms that always co-occur with df = 3.
        let docs: Vec<(String, Vec<&str>)> = (0..3)
            .map(|i| (format!("d{i}"), vec!["x", "y", "x"]))
            .chain([("z".to_string(), vec!["q"])])
            .collect();
        let c = Corpus::from_token_lists(&docs);
        let model = LdaModel {
            k: 2,
            alpha: 0.1,
            beta: 0.01,
            seed: 0,
            iterations: 1,
            vocab_size: 3,
            doc_ids: vec![],
            phi: vec![vec![0.6, 0.3, 0.1], vec![0.6, 0.1, 0.3]],
            theta: vec![],
            assignments: vec![],
        };
        let s = coherence(&model, &c, 2).unwrap();
        assert!((s[0] - (4.0f64 / 3.0).ln()).abs() < 1e-12);
        // x and q never co-occur: ln(1 / D(x)).
        assert!((s[1] - (1.0f64 / 3.0).ln()).abs() < 1e-12);
        let mut rev = c.clone();
        rev.documents.reverse();
        assert_eq!(coherence(&model, &rev, 2).unwrap(), s);
    }

    #[test]
    fn sweep_single_k_matches_direct() {
        let c = toy();
        let cfg = SweepConfig { iterations: 30, holdout_fraction: 0.2, ..SweepConfig::default() };
        let out = sweep(&c, &[2], &cfg, 5).unwrap();
        let (train, held) = split_holdout(&c, cfg.holdout_fraction, 5);
        let (_, direct) = evaluate(&train, &held, 2, &cfg, 5).unwrap();
        assert!(out[0].1.as_ref().unwrap().same_metrics(&direct));
    }

    #[test]
    fn sweep_continues_past_failures() {
        let c = toy();
        let cfg = SweepConfig { iterations: 5, ..SweepConfig::default() };
        let out = sweep(&c, &[2, 1000, 3], &cfg, 1).unwrap();
        assert!(out[0].1.is_ok());
        assert!(matches!(out[1].1, Err(LdaError::TooManyTopics { .. })));
        assert!(out[2].1.is_ok());
    }

    #[test]
    fn summary_csv() {
        let c = toy();
        let m = train_lda(&c, &LdaParams::new(2).with_iterations(5), 0).unwrap();
        let mut buf = Vec::new();
        write_summary_csv(&m.summaries(&c.vocabulary, 2, 1), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("topic,rank,term,weight\n0,1,"));
        assert_eq!(text.lines().count(), 5);
    }
}
