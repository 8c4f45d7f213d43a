//! Collapsed Gibbs sampler for the seeded two-level model.
//!
//! Generative story, per document d:
//!
//! * a mixture over the T main topics, `θ_d ~ Dir(α)`;
//! * for every main t the document uses, one subtopic `c_dt` drawn from a
//!   per-main Chinese restaurant process over documents (concentration γ);
//! * each token picks a main `z ~ θ_d` and is emitted from the word
//!   distribution of subtopic `c_dz`, which has a Dirichlet prior `β_t`
//!   boosted on main t's concept terms: `β_tw = β (1 + λ · weight_tw)`.
//!
//! A sweep resamples every token's main (integrating over a fresh subtopic
//! when the document did not use that main yet), then resamples each of the
//! document's subtopic choices as a block. Subtopics with no documents are
//! retired immediately, so the count per main is driven by the data.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::tree::{MainTopic, RankedDoc, SamplerMeta, Subtopic, TopicTree};
use super::{ConceptTermSet, QdtmError};
use crate::corpus::Corpus;
use crate::lda::sample_index;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QdtmParams {
    /// Symmetric document-main prior.
    pub alpha: f64,
    /// Base topic-term prior.
    pub beta: f64,
    /// Seed boost λ.
    pub boost: f64,
    /// Subtopic CRP concentration γ.
    pub gamma: f64,
    pub iterations: usize,
    /// Subtopics per main that documents are spread over at initialization.
    pub initial_subtopics: usize,
    /// Ranked terms kept per tree node.
    pub top_terms: usize,
    /// Ranked documents kept per tree node (room for backfilling).
    pub ranked_docs: usize,
}

impl Default for QdtmParams {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            beta: 0.01,
            boost: 10.0,
            gamma: 1.0,
            iterations: 300,
            initial_subtopics: 8,
            top_terms: 30,
            ranked_docs: 50,
        }
    }
}

/// Trained tree plus per-document diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QdtmFit {
    pub tree: TopicTree,
    /// Main topic holding most of each document's tokens (`None` for empty documents).
    pub doc_mains: Vec<Option<usize>>,
    pub warnings: Vec<String>,
}

struct Sub {
    id: u32,
    docs: u32,
    tokens: u32,
    words: Vec<u32>,
}

struct Main {
    prior: Vec<f64>,
    prior_sum: f64,
    slots: Vec<Option<Sub>>,
    free: Vec<usize>,
    next_id: u32,
    docs: u32,
}

impl Main {
    fn alloc(&mut self, v: usize) -> usize {
        let sub = Sub { id: self.next_id, docs: 0, tokens: 0, words: vec![0; v] };
        self.next_id += 1;
        match self.free.pop() {
            Some(slot) => {
                self.slots[slot] = Some(sub);
                slot
            }
            None => {
                self.slots.push(Some(sub));
                self.slots.len() - 1
            }
        }
    }

    fn sub(&mut self, slot: usize) -> &mut Sub {
        self.slots[slot].as_mut().expect("live subtopic")
    }

    fn retire_if_empty(&mut self, slot: usize) {
        let sub = self.slots[slot].as_ref().expect("live subtopic");
        if sub.docs == 0 {
            debug_assert_eq!(sub.tokens, 0);
            self.slots[slot] = None;
            // Lowest free slot is reused first so slot order stays stable.
            self.free.push(slot);
            self.free.sort_unstable_by(|a, b| b.cmp(a));
        }
    }

    fn predictive(&self, sub: &Sub, w: usize) -> f64 {
        (sub.words[w] as f64 + self.prior[w]) / (sub.tokens as f64 + self.prior_sum)
    }

    fn fresh(&self, w: usize) -> f64 {
        self.prior[w] / self.prior_sum
    }

    /// Log Dirichlet-multinomial probability of adding `hist` to `sub`.
    fn log_block(&self, sub: Option<&Sub>, hist: &[(usize, u32)], n: u32) -> f64 {
        let mut lp = 0.0;
        let (tokens, words) = match sub {
            Some(s) => (s.tokens as f64, Some(&s.words)),
            None => (0.0, None),
        };
        for &(w, c) in hist {
            let base = words.map_or(0.0, |ws| ws[w] as f64) + self.prior[w];
            for j in 0..c {
                lp += (base + j as f64).ln();
            }
        }
        let base = tokens + self.prior_sum;
        for j in 0..n {
            lp -= (base + j as f64).ln();
        }
        lp
    }
}

struct Sampler<'a> {
    docs: Vec<&'a [usize]>,
    t: usize,
    v: usize,
    alpha: f64,
    gamma: f64,
    mains: Vec<Main>,
    z: Vec<Vec<usize>>,
    ndt: Vec<u32>,
    sub_of: Vec<Option<usize>>,
}

impl<'a> Sampler<'a> {
    fn idx(&self, d: usize, t: usize) -> usize {
        d * self.t + t
    }

    fn add_token(&mut self, d: usize, w: usize, t: usize) {
        let i = self.idx(d, t);
        self.ndt[i] += 1;
        let slot = self.sub_of[i].expect("subtopic chosen before adding");
        let sub = self.mains[t].sub(slot);
        sub.tokens += 1;
        sub.words[w] += 1;
    }

    fn remove_token(&mut self, d: usize, w: usize, t: usize) {
        let i = self.idx(d, t);
        self.ndt[i] -= 1;
        let slot = self.sub_of[i].expect("token has a subtopic");
        let main = &mut self.mains[t];
        let sub = main.sub(slot);
        sub.tokens -= 1;
        sub.words[w] -= 1;
        if self.ndt[i] == 0 {
            sub.docs -= 1;
            main.docs -= 1;
            self.sub_of[i] = None;
            main.retire_if_empty(slot);
        }
    }

    fn join(&mut self, d: usize, t: usize, slot: usize) {
        let i = self.idx(d, t);
        let main = &mut self.mains[t];
        main.sub(slot).docs += 1;
        main.docs += 1;
        self.sub_of[i] = Some(slot);
    }

    fn token_step(&mut self, d: usize, pos: usize, rng: &mut impl Rng, weights: &mut Vec<f64>) {
        let w = self.docs[d][pos];
        let old = self.z[d][pos];
        self.remove_token(d, w, old);
        weights.clear();
        for t in 0..self.t {
            let main = &self.mains[t];
            let p = match self.sub_of[self.idx(d, t)] {
                Some(slot) => {
                    let sub = main.slots[slot].as_ref().expect("live subtopic");
                    (self.ndt[self.idx(d, t)] as f64 + self.alpha) * main.predictive(sub, w)
                }
                None => {
                    let mut acc = self.gamma * main.fresh(w);
                    for sub in main.slots.iter().flatten() {
                        acc += sub.docs as f64 * main.predictive(sub, w);
                    }
                    self.alpha * acc / (main.docs as f64 + self.gamma)
                }
            };
            weights.push(p);
        }
        let t = sample_index(weights, rng);
        if self.sub_of[self.idx(d, t)].is_none() {
            let slot = self.choose_sub_for_token(t, w, rng, weights);
            self.join(d, t, slot);
        }
        self.z[d][pos] = t;
        self.add_token(d, w, t);
    }

    fn choose_sub_for_token(&mut self, t: usize, w: usize, rng: &mut impl Rng, scratch: &mut Vec<f64>) -> usize {
        let main = &self.mains[t];
        scratch.clear();
        let mut slots = Vec::new();
        for (slot, sub) in main.slots.iter().enumerate() {
            if let Some(sub) = sub {
                slots.push(slot);
                scratch.push(sub.docs as f64 * main.predictive(sub, w));
            }
        }
        scratch.push(self.gamma * main.fresh(w));
        let pick = sample_index(scratch, rng);
        match slots.get(pick) {
            Some(&slot) => slot,
            None => self.mains[t].alloc(self.v),
        }
    }

    /// Resamples the subtopic of document `d` within main `t` as a block.
    fn doc_step(&mut self, d: usize, t: usize, rng: &mut impl Rng, logw: &mut Vec<f64>) {
        let i = self.idx(d, t);
        let n = self.ndt[i];
        if n == 0 {
            return;
        }
        let mut words: Vec<usize> = self.docs[d]
            .iter()
            .zip(&self.z[d])
            .filter(|(_, &zt)| zt == t)
            .map(|(&w, _)| w)
            .collect();
        words.sort_unstable();
        let mut hist: Vec<(usize, u32)> = Vec::new();
        for w in words {
            match hist.last_mut() {
                Some((lw, c)) if *lw == w => *c += 1,
                _ => hist.push((w, 1)),
            }
        }
        let old = self.sub_of[i].expect("document uses this main");
        {
            let main = &mut self.mains[t];
            let sub = main.sub(old);
            for &(w, c) in &hist {
                sub.words[w] -= c;
            }
            sub.tokens -= n;
            sub.docs -= 1;
            main.docs -= 1;
            main.retire_if_empty(old);
        }
        self.sub_of[i] = None;
        let main = &self.mains[t];
        logw.clear();
        let mut slots = Vec::new();
        for (slot, sub) in main.slots.iter().enumerate() {
            if let Some(sub) = sub {
                slots.push(slot);
                logw.push((sub.docs as f64).ln() + main.log_block(Some(sub), &hist, n));
            }
        }
        logw.push(self.gamma.ln() + main.log_block(None, &hist, n));
        let max = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for x in logw.iter_mut() {
            *x = (*x - max).exp();
        }
        let pick = sample_index(logw, rng);
        let slot = match slots.get(pick) {
            Some(&s) => s,
            None => self.mains[t].alloc(self.v),
        };
        self.join(d, t, slot);
        let sub = self.mains[t].sub(slot);
        for &(w, c) in &hist {
            sub.words[w] += c;
        }
        sub.tokens += n;
    }

    fn sweep(&mut self, rng: &mut impl Rng) {
        let mut scratch = Vec::with_capacity(self.t);
        for d in 0..self.docs.len() {
            for pos in 0..self.docs[d].len() {
                self.token_step(d, pos, rng, &mut scratch);
            }
            for t in 0..self.t {
                self.doc_step(d, t, rng, &mut scratch);
            }
        }
        #[cfg(debug_assertions)]
        self.check_counts();
    }

    #[cfg(any(test, debug_assertions))]
    fn check_counts(&self) {
        for (t, main) in self.mains.iter().enumerate() {
            let mut docs = 0;
            for (slot, sub) in main.slots.iter().enumerate() {
                let Some(sub) = sub else { continue };
                assert!(sub.docs > 0, "empty subtopic left alive");
                let users: Vec<usize> =
                    (0..self.docs.len()).filter(|&d| self.sub_of[self.idx(d, t)] == Some(slot)).collect();
                assert_eq!(users.len() as u32, sub.docs);
                let tokens: u32 = users.iter().map(|&d| self.ndt[self.idx(d, t)]).sum();
                assert_eq!(tokens, sub.tokens);
                assert_eq!(sub.words.iter().sum::<u32>(), sub.tokens);
                docs += sub.docs;
            }
            assert_eq!(docs, main.docs);
        }
        for (d, doc) in self.docs.iter().enumerate() {
            for t in 0..self.t {
                let n = self.z[d].iter().filter(|&&z| z == t).count() as u32;
                assert_eq!(n, self.ndt[self.idx(d, t)]);
                assert_eq!(n > 0, self.sub_of[self.idx(d, t)].is_some());
            }
            assert_eq!(self.z[d].len(), doc.len());
        }
    }
}

pub(crate) fn content_key(text: &str) -> String {
    let normalized = text.split_whitespace().collect::<Vec<_>>().join(" ");
    hex::encode(&Sha256::digest(normalized.as_bytes())[..8])
}

fn check_params(p: &QdtmParams) -> Result<(), QdtmError> {
    let positive = |x: f64| x > 0.0 && x.is_finite();
    if !(positive(p.alpha) && positive(p.beta) && positive(p.gamma) && p.boost >= 0.0 && p.boost.is_finite()) {
        return Err(QdtmError::InvalidParameter(format!(
            "alpha={}, beta={}, gamma={}, boost={}",
            p.alpha, p.beta, p.gamma, p.boost
        )));
    }
    if p.iterations == 0 {
        return Err(QdtmError::ZeroCount("iterations"));
    }
    if p.initial_subtopics == 0 {
        return Err(QdtmError::ZeroCount("initial_subtopics"));
    }
    Ok(())
}

/// Trains one main topic per concept set. Concept terms missing from the
/// vocabulary are dropped with a warning.
pub fn train_qdtm(
    corpus: &Corpus,
    concept_sets: &[ConceptTermSet],
    params: &QdtmParams,
    seed: u64,
) -> Result<QdtmFit, QdtmError> {
    check_params(params)?;
    if concept_sets.is_empty() {
        return Err(QdtmError::NoConceptSets);
    }
    let v = corpus.vocabulary.len();
    let t_count = concept_sets.len();
    let mut warnings = Vec::new();
    // Normalized concept weight of every (main, term) pair.
    let mut concept: Vec<Vec<f64>> = vec![vec![0.0; v]; t_count];
    for (t, set) in concept_sets.iter().enumerate() {
        if set.terms.is_empty() {
            return Err(QdtmError::EmptyConceptSet(set.label.clone()));
        }
        let max = set.terms.iter().map(|c| c.weight).fold(0.0, f64::max);
        let mut any = false;
        for c in &set.terms {
            match corpus.vocabulary.id(&c.term) {
                Some(id) if max > 0.0 => {
                    concept[t][id] = concept[t][id].max(c.weight / max);
                    any = true;
                }
                Some(_) => any = true,
                None => {
                    let w = format!("concept term {} of {} is not in the vocabulary; dropped", c.term, set.label);
                    log::warn!("{w}");
                    warnings.push(w);
                }
            }
        }
        if !any {
            return Err(QdtmError::ConceptSetOutOfVocabulary(set.label.clone()));
        }
    }
    if corpus.documents.iter().all(|d| d.tokens.is_empty()) {
        return Err(QdtmError::EmptyCorpus);
    }

    let mains: Vec<Main> = concept
        .iter()
        .map(|weights| {
            let prior: Vec<f64> = weights.iter().map(|&w| params.beta * (1.0 + params.boost * w)).collect();
            let prior_sum = prior.iter().sum();
            Main { prior, prior_sum, slots: Vec::new(), free: Vec::new(), next_id: 0, docs: 0 }
        })
        .collect();
    let docs: Vec<&[usize]> = corpus.documents.iter().map(|d| d.tokens.as_slice()).collect();
    let d_count = docs.len();
    let mut s = Sampler {
        t: t_count,
        v,
        alpha: params.alpha,
        gamma: params.gamma,
        mains,
        z: Vec::with_capacity(d_count),
        ndt: vec![0; d_count * t_count],
        sub_of: vec![None; d_count * t_count],
        docs,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for main in &mut s.mains {
        for _ in 0..params.initial_subtopics {
            main.alloc(v);
        }
    }
    // Documents start on the main with the largest seed overlap; concept
    // terms start on the main that weights them most.
    for d in 0..d_count {
        let doc = s.docs[d];
        let overlap: Vec<f64> = (0..t_count).map(|t| doc.iter().map(|&w| concept[t][w]).sum()).collect();
        let affinity = match argmax(&overlap) {
            Some(t) if overlap[t] > 0.0 => t,
            _ => rng.random_range(0..t_count),
        };
        let zs: Vec<usize> = doc
            .iter()
            .map(|&w| {
                let per: Vec<f64> = (0..t_count).map(|t| concept[t][w]).collect();
                match argmax(&per) {
                    Some(t) if per[t] > 0.0 => t,
                    _ => affinity,
                }
            })
            .collect();
        for &t in &zs {
            if s.sub_of[s.idx(d, t)].is_none() {
                let slot = rng.random_range(0..params.initial_subtopics);
                s.join(d, t, slot);
            }
        }
        for (&w, &t) in doc.iter().zip(&zs) {
            s.add_token(d, w, t);
        }
        s.z.push(zs);
    }
    for main in &mut s.mains {
        for slot in 0..main.slots.len() {
            main.retire_if_empty(slot);
        }
    }
    #[cfg(debug_assertions)]
    s.check_counts();

    for _ in 0..params.iterations {
        s.sweep(&mut rng);
    }
    let doc_mains = (0..d_count)
        .map(|d| {
            let counts: Vec<f64> = (0..t_count).map(|t| s.ndt[s.idx(d, t)] as f64).collect();
            argmax(&counts).filter(|&t| counts[t] > 0.0)
        })
        .collect();
    let tree = build_tree(&s, corpus, concept_sets, params, seed);
    Ok(QdtmFit { tree, doc_mains, warnings })
}

/// First index of the maximum.
fn argmax(xs: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &x) in xs.iter().enumerate() {
        if best.is_none_or(|b| x > xs[b]) {
            best = Some(i);
        }
    }
    best
}

fn top_terms(
    counts: &[u32],
    total: u32,
    main: &Main,
    corpus: &Corpus,
    n: usize,
) -> Vec<(String, f64)> {
    let denom = total as f64 + main.prior_sum;
    let mut ranked: Vec<(usize, f64)> = counts
        .iter()
        .enumerate()
        .map(|(w, &c)| (w, (c as f64 + main.prior[w]) / denom))
        .collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked
        .into_iter()
        .take(n)
        .map(|(w, p)| (corpus.vocabulary.term(w).unwrap_or_default().to_string(), p))
        .collect()
}

fn build_tree(
    s: &Sampler<'_>,
    corpus: &Corpus,
    sets: &[ConceptTermSet],
    params: &QdtmParams,
    seed: u64,
) -> TopicTree {
    let total: u64 = s.docs.iter().map(|d| d.len() as u64).sum();
    let t_alpha = s.t as f64 * s.alpha;
    let theta = |d: usize, t: usize| {
        (s.ndt[s.idx(d, t)] as f64 + s.alpha) / (s.docs[d].len() as f64 + t_alpha)
    };
    let ranked_docs = |keep: &dyn Fn(usize) -> bool, t: usize| -> Vec<RankedDoc> {
        let mut docs: Vec<(usize, f64)> =
            (0..s.docs.len()).filter(|&d| keep(d)).map(|d| (d, theta(d, t))).collect();
        docs.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        docs.truncate(params.ranked_docs);
        docs.into_iter()
            .map(|(d, weight)| RankedDoc {
                doc_id: corpus.documents[d].id.clone(),
                weight,
                content_key: content_key(&corpus.documents[d].text),
            })
            .collect()
    };
    let mains = s
        .mains
        .iter()
        .enumerate()
        .map(|(t, main)| {
            let mut live: Vec<(usize, &Sub)> =
                main.slots.iter().enumerate().filter_map(|(i, sub)| sub.as_ref().map(|x| (i, x))).collect();
            live.sort_by(|a, b| b.1.tokens.cmp(&a.1.tokens).then(a.1.id.cmp(&b.1.id)));
            let mut words = vec![0u32; s.v];
            let mut tokens = 0u32;
            for (_, sub) in &live {
                for (acc, &c) in words.iter_mut().zip(&sub.words) {
                    *acc += c;
                }
                tokens += sub.tokens;
            }
            let subtopics = live
                .iter()
                .enumerate()
                .map(|(rank, &(slot, sub))| Subtopic {
                    id: rank + 1,
                    tokens: sub.tokens as u64,
                    prevalence: if total > 0 { sub.tokens as f64 / total as f64 } else { 0.0 },
                    top_terms: top_terms(&sub.words, sub.tokens, main, corpus, params.top_terms),
                    ranked_docs: ranked_docs(&|d| s.sub_of[s.idx(d, t)] == Some(slot), t),
                })
                .collect();
            MainTopic {
                id: t + 1,
                label: sets[t].label.clone(),
                tokens: tokens as u64,
                prevalence: if total > 0 { tokens as f64 / total as f64 } else { 0.0 },
                top_terms: top_terms(&words, tokens, main, corpus, params.top_terms),
                ranked_docs: ranked_docs(&|d| s.ndt[s.idx(d, t)] > 0, t),
                subtopics,
            }
        })
        .collect();
    TopicTree {
        mains,
        total_tokens: total,
        sampler: SamplerMeta {
            seed,
            iterations: params.iterations,
            alpha: params.alpha,
            beta: params.beta,
            boost: params.boost,
            gamma: params.gamma,
            initial_subtopics: params.initial_subtopics,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qdtm::build_concept_set;
    use crate::qdtm::PerSource;

    fn seeded_corpus(seed: u64) -> (Corpus, Vec<ConceptTermSet>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let seeds: Vec<Vec<String>> =
            (0..3).map(|t| (0..8).map(|i| format!("s{t}w{i}")).collect()).collect();
        let mut docs = Vec::new();
        let mut truth = Vec::new();
        for d in 0..90 {
            let t = d % 3;
            let toks: Vec<String> = (0..30)
                .map(|_| {
                    if rng.random::<f64>() < 0.8 {
                        seeds[t][rng.random_range(0..8)].clone()
                    } else {
                        format!("bg{}", rng.random_range(0..20))
                    }
                })
                .collect();
            docs.push((format!("d{d}"), toks));
            truth.push(t);
        }
        let corpus = Corpus::from_token_lists(&docs);
        let sets = seeds
            .iter()
            .enumerate()
            .map(|(t, s)| {
                build_concept_set(t, &format!("topic{t}"), s, &[], &PerSource::splat(30), &PerSource::splat(1.0)).unwrap()
            })
            .collect();
        (corpus, sets, truth)
    }

    #[test]
    fn deterministic_and_accounted() {
        let (c, sets, truth) = seeded_corpus(1);
        let p = QdtmParams { iterations: 30, ..QdtmParams::default() };
        let a = train_qdtm(&c, &sets, &p, 4).unwrap();
        let b = train_qdtm(&c, &sets, &p, 4).unwrap();
        assert_eq!(a, b);
        let tree = &a.tree;
        let sum: f64 = tree.mains.iter().map(|m| m.prevalence).sum();
        assert!((sum - 1.0).abs() < 1e-9);
        for m in &tree.mains {
            let subs: f64 = m.subtopics.iter().map(|s| s.prevalence).sum();
            assert!((subs - m.prevalence).abs() < 1e-9);
        }
        let hits = a.doc_mains.iter().zip(&truth).filter(|(m, t)| **m == Some(**t)).count();
        assert!(hits as f64 >= 0.8 * truth.len() as f64, "{hits}");
    }

    #[test]
    fn input_errors() {
        let (c, sets, _) = seeded_corpus(2);
        let p = QdtmParams::default();
        assert_eq!(train_qdtm(&c, &[], &p, 0), Err(QdtmError::NoConceptSets));
        let mut empty = sets[0].clone();
        empty.terms.clear();
        assert!(matches!(train_qdtm(&c, &[empty], &p, 0), Err(QdtmError::EmptyConceptSet(_))));
        let oov = build_concept_set(0, "x", &["nowhere".to_string()], &[], &PerSource::splat(1), &PerSource::splat(1.0)).unwrap();
        assert!(matches!(train_qdtm(&c, &[oov], &p, 0), Err(QdtmError::ConceptSetOutOfVocabulary(_))));
        let bad = QdtmParams { gamma: 0.0, ..QdtmParams::default() };
        assert!(matches!(train_qdtm(&c, &sets, &bad, 0), Err(QdtmError::InvalidParameter(_))));
    }

    #[test]
    fn oov_concept_terms_warn() {
        let (c, mut sets, _) = seeded_corpus(3);
        sets[0].terms.push(crate::qdtm::ConceptTerm { term: "lockdown".into(), seed: true, sources: vec![], weight: 1.0 });
        let fit = train_qdtm(&c, &sets, &QdtmParams { iterations: 2, ..QdtmParams::default() }, 0).unwrap();
        assert_eq!(fit.warnings.len(), 1);
    }

    #[test]
    fn content_keys_ignore_whitespace() {
        assert_eq!(content_key("a  b\n c"), content_key("a b c"));
        assert_ne!(content_key("a b"), content_key("a c"));
    }
}
