mod common;

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use toxipipe_core::annotation::LabelClass;
use toxipipe_core::classify::{
    evaluate, featurize, fuse, read_labeled, FeatureConfig, FeatureVector, FusionStrategy, LabeledText, LinearModel,
    Prediction, TrainConfig,
};
use toxipipe_core::corpus::normalize;
use toxipipe_core::synth::{labeled_set, Recipe};

const WEIGHTS: [f64; 4] = [2.0, 1.0, 0.5, 1.5];
const L2: f64 = 0.01;

fn small_features() -> FeatureConfig {
    FeatureConfig { hash_bits: 6, word_ngram_max: 2, char_ngram_max: 3, ..Default::default() }
}

fn xy(data: &[LabeledText], f: &FeatureConfig) -> Vec<(FeatureVector, LabelClass)> {
    data.iter().map(|d| (featurize(&normalize(&d.text), f), d.label)).collect()
}

/// Central difference of the objective along one coordinate.
fn numeric(model: &LinearModel, data: &[(FeatureVector, LabelClass)], coord: usize, h: f64) -> f64 {
    let nw = model.weights().len();
    let at = |delta: f64| {
        let mut m = model.clone();
        if coord < nw {
            let mut w = m.weights().to_vec();
            w[coord] += delta;
            m.set_weights(w).unwrap();
        } else {
            let mut b = m.bias();
            b[coord - nw] += delta;
            m.set_bias(b);
        }
        m.objective(data, WEIGHTS, L2)
    };
    (at(h) - at(-h)) / (2.0 * h)
}

#[test]
fn analytic_gradient_matches_finite_differences_at_20_points() {
    let f = small_features();
    let data = xy(&labeled_set(40, 0.25, &Recipe::default(), 3, "g"), &f);
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let mut m = LinearModel::zeros(f);
        let w: Vec<f64> = (0..m.weights().len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        m.set_weights(w).unwrap();
        m.set_bias([(); 4].map(|_| rng.random_range(-1.0..1.0)));
        let (gw, gb) = m.objective_gradient(&data, WEIGHTS, L2);
        let analytic: Vec<f64> = gw.iter().chain(&gb).copied().collect();
        for _ in 0..25 {
            let coord = rng.random_range(0..analytic.len());
            let a = analytic[coord];
            let n = numeric(&m, &data, coord, 1e-5);
            let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-300);
            worst = worst.max(rel);
        }
    }
    assert!(worst < 1e-4, "worst relative error {worst:e}");
}

/// Three models that differ only in hash seed and shuffle seed.
fn ensemble(train: &[LabeledText]) -> Vec<LinearModel> {
    (0..3u64)
        .map(|k| {
            let f = FeatureConfig { hash_bits: 16, hash_seed: k, ..Default::default() };
            LinearModel::train(&xy(train, &f), f, TrainConfig { seed: 100 + k, ..Default::default() }).unwrap()
        })
        .collect()
}

fn predict(m: &LinearModel, test: &[LabeledText]) -> Vec<Prediction> {
    test.iter().map(|d| m.predict(&d.post_id, &featurize(&normalize(&d.text), m.feature_config()))).collect()
}

#[test]
fn minority_f1_and_fusion_on_the_benchmark_split() {
    let train = read_labeled(common::fixture("classify/train.jsonl")).unwrap();
    let test = read_labeled(common::fixture("classify/test.jsonl")).unwrap();
    assert_eq!((train.len(), test.len()), (2000, 500));
    let nm = train.iter().filter(|d| d.label == LabelClass::NonmedicalUse).count();
    assert_eq!(nm, 200);
    let gold: HashMap<String, LabelClass> = test.iter().map(|d| (d.post_id.clone(), d.label)).collect();

    let per_model: Vec<Vec<Prediction>> = ensemble(&train).iter().map(|m| predict(m, &test)).collect();
    let fused: Vec<Prediction> = (0..test.len())
        .map(|i| fuse(&per_model.iter().map(|p| p[i].clone()).collect::<Vec<_>>(), FusionStrategy::Mean).unwrap())
        .collect();
    let fused_f1 = evaluate(&fused, &gold).unwrap().minority().f1;
    for preds in &per_model {
        let f1 = evaluate(preds, &gold).unwrap().minority().f1;
        assert!(f1 >= 0.90, "individual minority F1 {f1}");
        assert!(fused_f1 >= f1 - 0.02, "fused {fused_f1} vs individual {f1}");
    }
    assert!(fused_f1 >= 0.90, "fused minority F1 {fused_f1}");
}

#[test]
fn training_is_reproducible_and_survives_a_save_round_trip() {
    let data = labeled_set(300, 0.1, &Recipe::default(), 9, "r");
    let f = FeatureConfig { hash_bits: 10, ..Default::default() };
    let cfg = TrainConfig { seed: 5, epochs: 3, ..Default::default() };
    let a = LinearModel::train(&xy(&data, &f), f, cfg).unwrap();
    let b = LinearModel::train(&xy(&data, &f), f, cfg).unwrap();
    assert_eq!(a, b);
    let dir = tempfile::tempdir().unwrap();
    a.save(dir.path().join("m.json")).unwrap();
    assert_eq!(LinearModel::load(dir.path().join("m.json")).unwrap(), a);
}
