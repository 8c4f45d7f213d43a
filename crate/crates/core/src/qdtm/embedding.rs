//! Skip-gram word vectors trained with negative sampling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::QdtmError;
use crate::corpus::Corpus;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbeddingParams {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub learning_rate: f64,
}

impl Default for EmbeddingParams {
    fn default() -> Self {
        Self { dim: 100, window: 5, negatives: 5, epochs: 5, learning_rate: 0.025 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingTable {
    pub dim: usize,
    /// Terms in vocabulary id order.
    pub terms: Vec<String>,
    pub vectors: Vec<Vec<f64>>,
    pub params: EmbeddingParams,
    pub seed: u64,
}

impl EmbeddingTable {
    pub fn id(&self, term: &str) -> Option<usize> {
        self.terms.iter().position(|t| t == term)
    }

    pub fn vector(&self, term: &str) -> Option<&[f64]> {
        self.id(term).map(|i| self.vectors[i].as_slice())
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x.clamp(-30.0, 30.0)).exp())
}

/// Cumulative unigram^0.75 distribution used to draw negatives.
struct NoiseTable {
    cumulative: Vec<f64>,
}

impl NoiseTable {
    fn new(corpus: &Corpus) -> Self {
        let mut counts = vec![0usize; corpus.vocabulary.len()];
        for d in &corpus.documents {
            for &t in &d.tokens {
                counts[t] += 1;
            }
        }
        let mut acc = 0.0;
        let cumulative = counts
            .iter()
            .map(|&c| {
                acc += (c as f64).powf(0.75);
                acc
            })
            .collect();
        Self { cumulative }
    }

    fn draw(&self, rng: &mut impl Rng) -> usize {
        let total = *self.cumulative.last().expect("non-empty vocabulary");
        let u = rng.random::<f64>() * total;
        self.cumulative.partition_point(|&c| c <= u).min(self.cumulative.len() - 1)
    }
}

/// Trains one vector per vocabulary term. Single-threaded and deterministic
/// for a given seed.
pub fn train_embeddings(
    corpus: &Corpus,
    params: &EmbeddingParams,
    seed: u64,
) -> Result<EmbeddingTable, QdtmError> {
    let v = corpus.vocabulary.len();
    if v < 2 {
        return Err(QdtmError::VocabularyTooSmall(v));
    }
    if params.dim < 2 {
        return Err(QdtmError::DimensionTooSmall(params.dim));
    }
    let dim = params.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut input: Vec<f64> = (0..v * dim).map(|_| (rng.random::<f64>() - 0.5) / dim as f64).collect();
    let mut output = vec![0.0; v * dim];
    let noise = NoiseTable::new(corpus);
    let total_steps = (corpus.vocabulary.total_tokens() * params.epochs).max(1) as f64;
    let min_lr = params.learning_rate * 1e-4;
    let mut step = 0usize;
    let mut grad = vec![0.0; dim];
    for _ in 0..params.epochs {
        for doc in &corpus.documents {
            let toks = &doc.tokens;
            for (pos, &center) in toks.iter().enumerate() {
                let lr = (params.learning_rate * (1.0 - step as f64 / total_steps)).max(min_lr);
                step += 1;
                let reach = match params.window {
                    0 => 0,
                    w => w - rng.random_range(0..w),
                };
                let lo = pos.saturating_sub(reach);
                let hi = (pos + reach + 1).min(toks.len());
                for (ctx_pos, &context) in toks.iter().enumerate().take(hi).skip(lo) {
                    if ctx_pos == pos {
                        continue;
                    }
                    grad.iter_mut().for_each(|g| *g = 0.0);
                    let c_in = context * dim;
                    for n in 0..=params.negatives {
                        let (target, label) = if n == 0 {
                            (center, 1.0)
                        } else {
                            let t = noise.draw(&mut rng);
                            if t == center {
                                continue;
                            }
                            (t, 0.0)
                        };
                        let t_out = target * dim;
                        let dot: f64 = (0..dim).map(|i| input[c_in + i] * output[t_out + i]).sum();
                        let g = (label - sigmoid(dot)) * lr;
                        for i in 0..dim {
                            grad[i] += g * output[t_out + i];
                            output[t_out + i] += g * input[c_in + i];
                        }
                    }
                    for i in 0..dim {
                        input[c_in + i] += grad[i];
                    }
                }
            }
        }
    }
    Ok(EmbeddingTable {
        dim,
        terms: corpus.vocabulary.terms().to_vec(),
        vectors: input.chunks(dim).map(<[f64]>::to_vec).collect(),
        params: params.clone(),
        seed,
    })
}
