//! Synthetic workloads shared by the benchmarks.

use cgt_core::Corpus;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `docs` documents of `len` tokens, each drawn mostly from one of `themes`
/// disjoint blocks of `terms_per_theme` terms.
pub fn themed_corpus(themes: usize, terms_per_theme: usize, docs: usize, len: usize, seed: u64) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lists: Vec<(String, Vec<String>)> = (0..docs)
        .map(|d| {
            let theme = d % themes;
            let tokens = (0..len)
                .map(|_| {
                    let t = if rng.random_bool(0.9) { theme } else { rng.random_range(0..themes) };
                    format!("t{t}w{}", rng.random_range(0..terms_per_theme))
                })
                .collect();
            (format!("d{d}"), tokens)
        })
        .collect();
    Corpus::from_token_lists(&lists)
}

/// Seed terms of each theme: its first `n` terms.
pub fn theme_seeds(themes: usize, n: usize) -> Vec<Vec<String>> {
    (0..themes).map(|t| (0..n).map(|i| format!("t{t}w{i}")).collect()).collect()
}

/// Random rating count table for Fleiss' kappa.
pub fn rating_counts(items: usize, raters: usize, categories: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..items)
        .map(|_| {
            let mut row = vec![0; categories];
            for _ in 0..raters {
                row[rng.random_range(0..categories)] += 1;
            }
            row
        })
        .collect()
}
