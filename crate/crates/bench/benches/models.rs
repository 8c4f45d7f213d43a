use cgt_bench::{theme_seeds, themed_corpus};
use cgt_core::lda::{sweep, train_lda, SweepConfig};
use cgt_core::qdtm::{build_concept_set, expand_frequency, expand_kld, train_qdtm, Expansion, ExpansionSource, PerSource, QdtmParams};
use cgt_core::LdaParams;
use criterion::{criterion_group, criterion_main, Criterion};

fn lda(c: &mut Criterion) {
    let corpus = themed_corpus(5, 40, 500, 50, 1);
    let mut g = c.benchmark_group("lda");
    g.sample_size(10);
    g.bench_function("train k=5 x50", |b| {
        let params = LdaParams { iterations: 50, ..LdaParams::new(5) };
        b.iter(|| train_lda(&corpus, &params, 7).unwrap())
    });
    g.bench_function("sweep k=3..6 x30", |b| {
        let config = SweepConfig { iterations: 30, ..SweepConfig::default() };
        b.iter(|| sweep(&corpus, &[3, 4, 5, 6], &config, 7).unwrap())
    });
    g.finish();
}

fn qdtm(c: &mut Criterion) {
    let corpus = themed_corpus(4, 40, 400, 50, 2);
    let sets: Vec<_> = theme_seeds(4, 3)
        .iter()
        .enumerate()
        .map(|(i, seeds)| {
            let exps = [
                Expansion { source: ExpansionSource::Frequency, terms: expand_frequency(seeds, &corpus, 10).unwrap() },
                Expansion { source: ExpansionSource::Kld, terms: expand_kld(seeds, &corpus, 10).unwrap() },
            ];
            build_concept_set(i, &format!("theme {i}"), seeds, &exps, &PerSource::splat(10), &PerSource::splat(1.0)).unwrap()
        })
        .collect();
    let mut g = c.benchmark_group("qdtm");
    g.sample_size(10);
    g.bench_function("train 4 mains x50", |b| {
        let params = QdtmParams { iterations: 50, ..QdtmParams::default() };
        b.iter(|| train_qdtm(&corpus, &sets, &params, 7).unwrap())
    });
    g.finish();
}

criterion_group!(benches, lda, qdtm);
criterion_main!(benches);
