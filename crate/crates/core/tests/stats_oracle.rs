mod common;

use common::oracle::{average_ranks, exhaustive_pvalue, pearson_f64_oracle, rat, spearman_oracle};
use num_traits::ToPrimitive;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use toxipipe_core::signals::{compare_groups, pearson, permutation_pvalue, ranks, spearman, Statistic};
use toxipipe_core::Exec;

fn random_pair(rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
    let n = rng.random_range(10..=50);
    let x: Vec<f64> = (0..n).map(|_| rng.random_range(-100.0..100.0)).collect();
    let slope = rng.random_range(-2.0..2.0);
    let y: Vec<f64> = x.iter().map(|v| slope * v + rng.random_range(-80.0..80.0)).collect();
    (x, y)
}

#[test]
fn pearson_and_spearman_match_exact_oracle_on_100_vectors() {
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let (x, y) = random_pair(&mut rng);
        let p = pearson(&x, &y).unwrap();
        let s = spearman(&x, &y).unwrap();
        worst = worst.max((p - pearson_f64_oracle(&x, &y)).abs());
        worst = worst.max((s - spearman_oracle(&x, &y)).abs());
    }
    assert!(worst <= 1e-12, "max deviation {worst:e}");
}

#[test]
fn tied_ranks_match_counting_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..200 {
        let n = rng.random_range(3..30);
        let v: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(0..6u8))).collect();
        let want: Vec<f64> = average_ranks(&v).iter().map(|r| r.to_f64().unwrap()).collect();
        assert_eq!(ranks(&v), want, "{v:?}");
    }
}

#[test]
fn spearman_with_heavy_ties_matches_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..100 {
        let n = rng.random_range(10..=50);
        let x: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(0..5u8))).collect();
        let y: Vec<f64> = x.iter().map(|v| v + f64::from(rng.random_range(0..3u8))).collect();
        let got = spearman(&x, &y).unwrap();
        assert!((got - spearman_oracle(&x, &y)).abs() <= 1e-12);
    }
}

#[test]
fn length_five_permutation_p_is_exhaustive_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut cases: Vec<(Vec<f64>, Vec<f64>)> = (0..30)
        .map(|_| {
            let x: Vec<f64> = (0..5).map(|_| rng.random_range(-10.0..10.0)).collect();
            let y: Vec<f64> = (0..5).map(|_| rng.random_range(-10.0..10.0)).collect();
            (x, y)
        })
        .collect();
    // Integer data produce exact ties in |r| across permutations.
    cases.push((vec![1.0, 2.0, 3.0, 4.0, 5.0], vec![2.0, 1.0, 4.0, 3.0, 5.0]));
    cases.push((vec![1.0, 2.0, 3.0, 4.0, 5.0], vec![5.0, 4.0, 3.0, 2.0, 1.0]));
    cases.push((vec![1.0, 1.0, 2.0, 2.0, 3.0], vec![3.0, 1.0, 2.0, 2.0, 1.0]));
    for (x, y) in &cases {
        let xr: Vec<_> = x.iter().map(|v| rat(*v)).collect();
        let yr: Vec<_> = y.iter().map(|v| rat(*v)).collect();
        let (hits, total) = exhaustive_pvalue(&xr, &yr);
        assert_eq!(total, 120);
        let t = permutation_pvalue(x, y, Statistic::Pearson, 9999, 1, Exec::Parallel).unwrap();
        assert!(t.exact);
        assert_eq!(t.permutations, 120);
        assert_eq!(t.p_value, hits as f64 / 120.0, "pearson {x:?} {y:?}");

        let (hits, _) = exhaustive_pvalue(&average_ranks(x), &average_ranks(y));
        let t = permutation_pvalue(x, y, Statistic::Spearman, 9999, 1, Exec::Sequential).unwrap();
        assert_eq!(t.p_value, hits as f64 / 120.0, "spearman {x:?} {y:?}");
    }
}

#[test]
fn chi_square_reference_values() {
    let t = compare_groups(&[30, 70], &[10, 90], 999, 1, Exec::Parallel).unwrap();
    assert!((t.statistic - 12.5).abs() <= 1e-9, "{}", t.statistic);
    assert_eq!(t.df, 1);
    let t = compare_groups(&[10, 20, 30], &[20, 40, 60], 999, 1, Exec::Parallel).unwrap();
    assert_eq!(t.statistic, 0.0);
}

proptest! {
    #[test]
    fn pearson_matches_oracle_on_arbitrary_vectors(
        v in prop::collection::vec((-1e3f64..1e3, -1e3f64..1e3), 3..40)
    ) {
        let (x, y): (Vec<f64>, Vec<f64>) = v.into_iter().unzip();
        if let Ok(r) = pearson(&x, &y) {
            prop_assert!((r - pearson_f64_oracle(&x, &y)).abs() <= 1e-12);
        }
    }
}
