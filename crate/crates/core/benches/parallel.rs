//! Sequential vs rayon execution of the data-parallel stages.

use std::path::PathBuf;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use toxipipe_core::classify::{
    classify_posts, featurize, read_labeled, FeatureConfig, FusionStrategy, LinearModel, TrainConfig,
};
use toxipipe_core::corpus::{normalize, read_all, Matcher, PostRecord};
use toxipipe_core::lexvar::{expand_lexicon, load_embeddings, load_seeds, ExpansionConfig, Lexicon};
use toxipipe_core::signals::{permutation_pvalue, Statistic};
use toxipipe_core::Exec;

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn demo(file: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/demo").join(file)
}

fn lexicon() -> Lexicon {
    let model = load_embeddings(demo("embeddings.txt")).unwrap();
    let seeds = load_seeds(demo("seeds.txt")).unwrap();
    expand_lexicon(&seeds, &model, &ExpansionConfig::default(), Exec::Sequential).unwrap()
}

/// The demo corpus repeated eight times.
fn corpus() -> Vec<PostRecord> {
    let base = read_all(demo("corpus.jsonl")).unwrap();
    (0..8).flat_map(|_| base.iter().cloned()).collect()
}

fn matching(c: &mut Criterion) {
    let matcher = Matcher::new(&lexicon()).unwrap();
    let posts = corpus();
    let mut g = c.benchmark_group("match_batch");
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| matcher.match_batch(&posts, exec))
        });
    }
    g.finish();
}

fn classification(c: &mut Criterion) {
    let train = read_labeled(demo("train.jsonl")).unwrap();
    let models: Vec<LinearModel> = (0..3u64)
        .map(|k| {
            let f = FeatureConfig { hash_bits: 16, hash_seed: k, ..Default::default() };
            let xy: Vec<_> = train.iter().map(|d| (featurize(&normalize(&d.text), &f), d.label)).collect();
            LinearModel::train(&xy, f, TrainConfig { seed: k, epochs: 3, ..Default::default() }).unwrap()
        })
        .collect();
    let matched = Matcher::new(&lexicon()).unwrap().match_batch(&corpus(), Exec::Parallel);
    let mut g = c.benchmark_group("classify_posts");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| classify_posts(&matched, &models, &[], FusionStrategy::Mean, exec).unwrap())
        });
    }
    g.finish();
}

fn permutations(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x: Vec<f64> = (0..50).map(|_| rng.random_range(0.0..1.0)).collect();
    let y: Vec<f64> = x.iter().map(|v| v + rng.random_range(0.0..0.5)).collect();
    let mut g = c.benchmark_group("permutation_pvalue");
    g.sample_size(20);
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| permutation_pvalue(&x, &y, Statistic::Spearman, 9999, 7, exec).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, matching, classification, permutations);
criterion_main!(benches);
