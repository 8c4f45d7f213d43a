//! Seed-term expansion: document co-occurrence, KL-divergence relevance and
//! embedding similarity, merged into concept term sets.

use std::collections::BTreeMap;

use log::warn;
use serde::{Deserialize, Serialize};

use super::embedding::{cosine, EmbeddingTable};
use super::QdtmError;
use crate::corpus::Corpus;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpansionSource {
    Frequency,
    Kld,
    Embedding,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredTerm {
    pub id: usize,
    pub term: String,
    pub score: f64,
}

/// Ranked output of one expansion source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Expansion {
    pub source: ExpansionSource,
    pub terms: Vec<ScoredTerm>,
}

/// One value per expansion source.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerSource<T> {
    pub frequency: T,
    pub kld: T,
    pub embedding: T,
}

impl<T: Copy> PerSource<T> {
    pub fn splat(v: T) -> Self {
        Self { frequency: v, kld: v, embedding: v }
    }

    pub fn get(&self, source: ExpansionSource) -> T {
        match source {
            ExpansionSource::Frequency => self.frequency,
            ExpansionSource::Kld => self.kld,
            ExpansionSource::Embedding => self.embedding,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptTerm {
    pub term: String,
    pub seed: bool,
    /// Raw score from every source that proposed the term.
    pub sources: Vec<(ExpansionSource, f64)>,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptTermSet {
    pub topic_id: usize,
    pub label: String,
    pub seeds: Vec<String>,
    /// Seeds first, then expansions by descending weight.
    pub terms: Vec<ConceptTerm>,
}

impl ConceptTermSet {
    pub fn expanded(&self) -> impl Iterator<Item = &ConceptTerm> {
        self.terms.iter().filter(|t| !t.seed)
    }
}

fn seed_ids(seeds: &[String], corpus: &Corpus) -> Result<Vec<usize>, QdtmError> {
    if seeds.is_empty() {
        return Err(QdtmError::NoSeeds);
    }
    let mut ids: Vec<usize> = seeds.iter().filter_map(|s| corpus.vocabulary.id(s)).collect();
    ids.sort_unstable();
    ids.dedup();
    if ids.is_empty() {
        return Err(QdtmError::SeedsNotInCorpus);
    }
    Ok(ids)
}

/// Marks documents containing at least one seed.
fn relevant_docs(corpus: &Corpus, seeds: &[usize]) -> Vec<bool> {
    let mut is_seed = vec![false; corpus.vocabulary.len()];
    for &s in seeds {
        is_seed[s] = true;
    }
    corpus
        .documents
        .iter()
        .map(|d| d.tokens.iter().any(|&t| is_seed[t]))
        .collect()
}

fn top_m(scores: impl Iterator<Item = (usize, f64)>, corpus: &Corpus, m: usize) -> Vec<ScoredTerm> {
    let mut v: Vec<(usize, f64)> = scores.collect();
    v.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    v.truncate(m);
    v.into_iter()
        .map(|(id, score)| ScoredTerm {
            id,
            term: corpus.vocabulary.term(id).unwrap_or_default().to_string(),
            score,
        })
        .collect()
}

/// Ranks non-seed terms by the number of seed-bearing documents they occur in.
pub fn expand_frequency(seeds: &[String], corpus: &Corpus, m: usize) -> Result<Vec<ScoredTerm>, QdtmError> {
    if m == 0 {
        return Err(QdtmError::ZeroExpansionSize);
    }
    let ids = seed_ids(seeds, corpus)?;
    let rel = relevant_docs(corpus, &ids);
    let v = corpus.vocabulary.len();
    let mut count = vec![0usize; v];
    let mut last = vec![usize::MAX; v];
    for (d, doc) in corpus.documents.iter().enumerate().filter(|(d, _)| rel[*d]) {
        for &t in &doc.tokens {
            if last[t] != d {
                last[t] = d;
                count[t] += 1;
            }
        }
    }
    for &s in &ids {
        count[s] = 0;
    }
    let scores = count.iter().enumerate().filter(|(_, &c)| c > 0).map(|(i, &c)| (i, c as f64));
    Ok(top_m(scores, corpus, m))
}

/// Per-term contribution to KL(R || corpus), with add-one smoothing:
/// `p(w|R) * ln(p(w|R) / p(w|C))` where R is the set of seed-bearing documents
/// and `p(w|X) = (count_X(w) + 1) / (tokens_X + V)`.
pub fn kld_scores(seeds: &[String], corpus: &Corpus) -> Result<Vec<f64>, QdtmError> {
    let ids = seed_ids(seeds, corpus)?;
    let rel = relevant_docs(corpus, &ids);
    if !rel.iter().any(|&r| r) {
        return Err(QdtmError::EmptyRelevanceSet);
    }
    let v = corpus.vocabulary.len();
    let mut c_rel = vec![0usize; v];
    let mut c_all = vec![0usize; v];
    let (mut n_rel, mut n_all) = (0usize, 0usize);
    for (d, doc) in corpus.documents.iter().enumerate() {
        for &t in &doc.tokens {
            c_all[t] += 1;
            if rel[d] {
                c_rel[t] += 1;
            }
        }
        n_all += doc.tokens.len();
        if rel[d] {
            n_rel += doc.tokens.len();
        }
    }
    let denom_rel = (n_rel + v) as f64;
    let denom_all = (n_all + v) as f64;
    Ok((0..v)
        .map(|w| {
            let p_rel = (c_rel[w] as f64 + 1.0) / denom_rel;
            let p_all = (c_all[w] as f64 + 1.0) / denom_all;
            p_rel * (p_rel / p_all).ln()
        })
        .collect())
}

/// The `m` non-seed terms with the largest positive KL contribution.
pub fn expand_kld(seeds: &[String], corpus: &Corpus, m: usize) -> Result<Vec<ScoredTerm>, QdtmError> {
    if m == 0 {
        return Err(QdtmError::ZeroExpansionSize);
    }
    let scores = kld_scores(seeds, corpus)?;
    let ids = seed_ids(seeds, corpus)?;
    let candidates = scores
        .into_iter()
        .enumerate()
        .filter(|(i, s)| *s > 0.0 && ids.binary_search(i).is_err());
    Ok(top_m(candidates, corpus, m))
}

/// Ranks non-seed terms by cosine similarity to the mean of the unit seed
/// vectors. Seeds missing from the table are skipped with a warning.
pub fn expand_embedding(
    seeds: &[String],
    table: &EmbeddingTable,
    m: usize,
) -> Result<(Vec<ScoredTerm>, Vec<String>), QdtmError> {
    if m == 0 {
        return Err(QdtmError::ZeroExpansionSize);
    }
    if seeds.is_empty() {
        return Err(QdtmError::NoSeeds);
    }
    let mut warnings = Vec::new();
    let mut ids = Vec::new();
    for s in seeds {
        match table.id(s) {
            Some(i) => ids.push(i),
            None => {
                let w = format!("seed {s} has no embedding; skipped");
                warn!("{w}");
                warnings.push(w);
            }
        }
    }
    ids.sort_unstable();
    ids.dedup();
    if ids.is_empty() {
        return Err(QdtmError::SeedsNotInTable);
    }
    let mut centroid = vec![0.0; table.dim];
    for &i in &ids {
        let v = &table.vectors[i];
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            for (c, x) in centroid.iter_mut().zip(v) {
                *c += x / norm;
            }
        }
    }
    let mut scored: Vec<(usize, f64)> = (0..table.terms.len())
        .filter(|i| ids.binary_search(i).is_err())
        .map(|i| (i, cosine(&table.vectors[i], &centroid)))
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.truncate(m);
    let terms = scored
        .into_iter()
        .map(|(id, score)| ScoredTerm { id, term: table.terms[id].clone(), score })
        .collect();
    Ok((terms, warnings))
}

/// Merges capped expansions with the seeds.
///
/// Each source keeps its first `caps` terms with a positive score; scores are
/// divided by the source's maximum, and a term's merged weight is the
/// weighted sum over the sources that proposed it. Seeds receive the largest
/// attainable weight (the sum of the source weights). Terms whose merged
/// weight is zero (all proposing sources weighted 0) are left out.
pub fn build_concept_set(
    topic_id: usize,
    label: &str,
    seeds: &[String],
    expansions: &[Expansion],
    caps: &PerSource<usize>,
    weights: &PerSource<f64>,
) -> Result<ConceptTermSet, QdtmError> {
    for w in [weights.frequency, weights.kld, weights.embedding] {
        if !(w >= 0.0 && w.is_finite()) {
            return Err(QdtmError::InvalidWeight(w));
        }
    }
    let mut seen_seeds: Vec<String> = Vec::new();
    for s in seeds {
        if !seen_seeds.contains(s) {
            seen_seeds.push(s.clone());
        }
    }
    let mut merged: BTreeMap<String, (Vec<(ExpansionSource, f64)>, f64)> = BTreeMap::new();
    for exp in expansions {
        let kept: Vec<&ScoredTerm> = exp
            .terms
            .iter()
            .filter(|t| t.score > 0.0 && t.score.is_finite() && !seen_seeds.contains(&t.term))
            .take(caps.get(exp.source))
            .collect();
        let max = kept.iter().map(|t| t.score).fold(0.0, f64::max);
        if max <= 0.0 {
            continue;
        }
        let w = weights.get(exp.source);
        for t in kept {
            let entry = merged.entry(t.term.clone()).or_default();
            entry.0.push((exp.source, t.score));
            entry.1 += w * t.score / max;
        }
    }
    let seed_weight = {
        let s = weights.frequency + weights.kld + weights.embedding;
        if s > 0.0 {
            s
        } else {
            1.0
        }
    };
    let mut expanded: Vec<ConceptTerm> = merged
        .into_iter()
        .filter(|(_, (_, w))| *w > 0.0)
        .map(|(term, (sources, weight))| ConceptTerm { term, seed: false, sources, weight })
        .collect();
    expanded.sort_by(|a, b| b.weight.total_cmp(&a.weight).then_with(|| a.term.cmp(&b.term)));
    let terms = seen_seeds
        .iter()
        .map(|s| ConceptTerm { term: s.clone(), seed: true, sources: vec![], weight: seed_weight })
        .chain(expanded)
        .collect();
    Ok(ConceptTermSet { topic_id, label: label.to_string(), seeds: seen_seeds, terms })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus(docs: &[&str]) -> Corpus {
        let lists: Vec<(String, Vec<&str>)> = docs
            .iter()
            .enumerate()
            .map(|(i, d)| (format!("d{i}"), d.split_whitespace().collect()))
            .collect();
        Corpus::from_token_lists(&lists)
    }

    fn s(words: &[&str]) -> Vec<String> {
        words.iter().map(|w| w.to_string()).collect()
    }

    #[test]
    fn frequency_counts_documents() {
        let c = corpus(&["covid lockdown school", "covid lockdown", "pay bank", "lockdown pay"]);
        let out = expand_frequency(&s(&["covid"]), &c, 10).unwrap();
        let names: Vec<_> = out.iter().map(|t| (t.term.as_str(), t.score)).collect();
        assert_eq!(names, [("lockdown", 2.0), ("school", 1.0)]);
        assert!(matches!(expand_frequency(&s(&["zzz"]), &c, 3), Err(QdtmError::SeedsNotInCorpus)));
        assert!(matches!(expand_frequency(&s(&["covid"]), &c, 0), Err(QdtmError::ZeroExpansionSize)));
    }

    #[test]
    fn kld_vanishes_when_relevance_set_is_corpus() {
        let c = corpus(&["a b", "a c", "a b c d"]);
        let scores = kld_scores(&s(&["a"]), &c).unwrap();
        assert!(scores.iter().all(|x| x.abs() < 1e-12));
        assert!(expand_kld(&s(&["a"]), &c, 5).unwrap().is_empty());
    }

    #[test]
    fn kld_positive_for_relevant_only_terms() {
        let c = corpus(&["seed only", "other stuff", "other things"]);
        let out = expand_kld(&s(&["seed"]), &c, 5).unwrap();
        assert_eq!(out[0].term, "only");
        assert!(out[0].score > 0.0);
        assert!(out.iter().all(|t| t.term != "seed"));
    }

    #[test]
    fn concept_set_merges_sources() {
        let st = |t: &str, score| ScoredTerm { id: 0, term: t.into(), score };
        let exps = vec![
            Expansion { source: ExpansionSource::Frequency, terms: vec![st("x", 4.0), st("y", 2.0)] },
            Expansion { source: ExpansionSource::Kld, terms: vec![st("x", 0.2)] },
            Expansion { source: ExpansionSource::Embedding, terms: vec![st("x", 0.9), st("seed", 0.95)] },
        ];
        let set = build_concept_set(0, "t", &s(&["seed"]), &exps, &PerSource::splat(30), &PerSource::splat(1.0)).unwrap();
        assert_eq!(set.terms.len(), 3);
        let x = set.terms.iter().find(|t| t.term == "x").unwrap();
        assert_eq!(x.sources.len(), 3);
        assert!((x.weight - 3.0).abs() < 1e-12);
        let y = set.terms.iter().find(|t| t.term == "y").unwrap();
        assert!((y.weight - 0.5).abs() < 1e-12);
        assert!(set.terms[0].seed && set.terms[0].weight == 3.0);

        let only_seeds = build_concept_set(1, "t", &s(&["a", "b"]), &[], &PerSource::splat(30), &PerSource::splat(1.0)).unwrap();
        assert_eq!(only_seeds.terms.iter().map(|t| t.term.as_str()).collect::<Vec<_>>(), ["a", "b"]);

        let neg = PerSource { frequency: -1.0, kld: 1.0, embedding: 1.0 };
        assert!(matches!(
            build_concept_set(0, "t", &s(&["a"]), &exps, &PerSource::splat(3), &neg),
            Err(QdtmError::InvalidWeight(_))
        ));
    }
}
