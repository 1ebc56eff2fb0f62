mod common;

use chrono::{TimeZone, Utc};
use common::oracle::{kappa_exact, pairs_from_table};
use num_traits::ToPrimitive;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use toxipipe_core::annotation::{cohens_kappa, pairwise_average_kappa, AnnotationRecord, LabelClass};
use toxipipe_core::Error;

#[test]
fn reference_table_gives_0_4() {
    let (a, b) = pairs_from_table([[20, 5], [10, 15]]);
    let k = cohens_kappa(&a, &b).unwrap();
    assert!((k - 0.4).abs() <= 1e-9, "{k}");
    assert_eq!(kappa_exact(&a, &b, 2).to_f64().unwrap(), 0.4);
}

#[test]
fn perfect_agreement_is_one() {
    let a: Vec<LabelClass> = (0..40).map(|i| LabelClass::ALL[i % 4]).collect();
    assert_eq!(cohens_kappa(&a, &a).unwrap(), 1.0);
}

#[test]
fn shuffled_labels_are_near_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(10_000);
    let a: Vec<usize> = (0..10_000).map(|_| rng.random_range(0..4)).collect();
    let mut b = a.clone();
    b.shuffle(&mut rng);
    let k = cohens_kappa(&a, &b).unwrap();
    assert!(k.abs() < 0.1, "{k}");
}

#[test]
fn degenerate_inputs_are_rejected() {
    assert!(matches!(cohens_kappa::<u8>(&[], &[]), Err(Error::Contract(_))));
    assert!(matches!(cohens_kappa(&[1, 2], &[1]), Err(Error::Contract(_))));
    // Both raters constant on one class: chance agreement is 1 and the
    // agreement is taken as perfect.
    assert_eq!(cohens_kappa(&[1, 1, 1], &[1, 1, 1]).unwrap(), 1.0);
}

fn rec(post: &str, who: &str, label: LabelClass) -> AnnotationRecord {
    AnnotationRecord {
        post_id: post.into(),
        annotator_id: who.into(),
        label,
        labeled_at: Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap(),
    }
}

#[test]
fn pairwise_average_over_shared_posts() {
    use LabelClass::*;
    let (x, y) = pairs_from_table([[20, 5], [10, 15]]);
    let class = |i: usize| [NonmedicalUse, Mention][i];
    let mut records = Vec::new();
    for (i, (a, b)) in x.iter().zip(&y).enumerate() {
        let p = format!("p{i}");
        records.push(rec(&p, "a", class(*a)));
        records.push(rec(&p, "b", class(*b)));
        records.push(rec(&p, "c", class(*a)));
    }
    let agg = pairwise_average_kappa(&records).unwrap();
    // pairs (a,b)=0.4, (a,c)=1, (b,c)=0.4
    assert!((agg.average - 0.6).abs() <= 1e-12, "{}", agg.average);
    assert_eq!(agg.pairs.len(), 3);
}

proptest! {
    #[test]
    fn kappa_matches_exact_oracle(pairs in prop::collection::vec((0usize..4, 0usize..4), 2..200)) {
        let (a, b): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
        let k = cohens_kappa(&a, &b).unwrap();
        let first = a[0];
        if a.iter().chain(&b).all(|v| *v == first) {
            prop_assert_eq!(k, 1.0);
        } else {
            let want = kappa_exact(&a, &b, 4).to_f64().unwrap();
            prop_assert!((k - want).abs() <= 1e-12, "{} vs {}", k, want);
            prop_assert!((-1.0..=1.0).contains(&k));
            prop_assert!((cohens_kappa(&b, &a).unwrap() - k).abs() <= 1e-15);
        }
    }
}
