use chrono::{DateTime, Duration, TimeZone, Utc};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use toxipipe_core::classify::{Prediction, Scores};
use toxipipe_core::cohort::{
    bot_flags, merge_timeline, AdmissionPolicy, BotConfig, BotFlags, Cohort, MemberHasher, Timeline,
};
use toxipipe_core::corpus::{PostRecord, Source};

fn t0() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2024, 3, 1, 12, 0, 0).unwrap()
}

fn post(id: &str, author: &str, at: DateTime<Utc>, text: &str) -> PostRecord {
    PostRecord {
        post_id: id.into(),
        author_id: author.into(),
        created_at: at,
        text: text.into(),
        source: Source::RedditLike,
        region: None,
        is_repost: false,
    }
}

/// Batches that reuse post ids across batches, with colliding timestamps.
fn batches(rng: &mut ChaCha8Rng) -> Vec<Vec<PostRecord>> {
    (0..6)
        .map(|_| {
            (0..rng.random_range(0..10))
                .map(|_| {
                    let id = rng.random_range(0..30u32);
                    post(&format!("p{id}"), "alice", t0() + Duration::hours(i64::from(id % 9)), &format!("post {id}"))
                })
                .collect()
        })
        .collect()
}

#[test]
fn merge_is_commutative_and_idempotent_over_1000_orders() {
    let h = MemberHasher::new("salt");
    let mut rng = ChaCha8Rng::seed_from_u64(1000);
    let bs = batches(&mut rng);
    let fold = |order: &[usize]| {
        let mut t = Timeline::new(h.member_id("alice"));
        for &i in order {
            t = merge_timeline(&t, &bs[i], &h, t0()).unwrap();
        }
        t
    };
    let mut order: Vec<usize> = (0..bs.len()).collect();
    let reference = fold(&order);
    assert!(reference.is_sorted_unique());
    for _ in 0..1000 {
        order.shuffle(&mut rng);
        let t = fold(&order);
        assert_eq!(t, reference);
        let again = bs.iter().fold(t.clone(), |acc, b| merge_timeline(&acc, b, &h, t0()).unwrap());
        assert_eq!(again, t);
    }
}

fn admitted(authors: &[&str]) -> Cohort {
    let mut c = Cohort::new("salt");
    for a in authors {
        let id = format!("seed-{a}");
        let pred = Prediction::new(&id, Scores([1.0, 0.0, 0.0, 0.0]));
        c.admit(&pred, &post(&id, a, t0(), "x"), AdmissionPolicy::Argmax, t0()).unwrap();
    }
    c
}

#[test]
fn due_boundary_is_exactly_fourteen_days() {
    let mut c = admitted(&["alice"]);
    let id = c.hasher().member_id("alice");
    assert_eq!(c.due_for_recollection(t0(), 14).len(), 1, "never collected is due");
    c.merge(&id, &[], t0()).unwrap();
    let edge = t0() + Duration::days(14);
    assert!(c.due_for_recollection(edge - Duration::seconds(1), 14).is_empty());
    assert!(c.due_for_recollection(edge - Duration::nanoseconds(1), 14).is_empty());
    let due = c.due_for_recollection(edge, 14);
    assert_eq!(due.len(), 1);
    assert_eq!(due[0].member_id, id);
    assert_eq!(c.due_for_recollection(edge + Duration::seconds(1), 14).len(), 1);
}

#[test]
fn bot_score_arithmetic_is_exact() {
    let none = BotFlags::default();
    let half = BotFlags { duplicate_text: true, url_heavy: true, ..none };
    let all = BotFlags { high_rate: true, duplicate_text: true, url_heavy: true, regular_intervals: true };
    assert_eq!(none.score(), 0.0);
    assert_eq!(half.score(), 0.5);
    assert_eq!(all.score(), 1.0);

    let h = MemberHasher::new("salt");
    let timeline = |posts: Vec<PostRecord>| merge_timeline(&Timeline::new(h.member_id("alice")), &posts, &h, t0()).unwrap();
    let cfg = BotConfig::default();
    // Slow, irregular gaps and distinct text.
    let mut at = t0();
    let human: Vec<_> = (0..30i64)
        .map(|i| {
            at += Duration::hours(1 + (i * 7919) % 40);
            post(&format!("h{i}"), "alice", at, &format!("thought number {i}"))
        })
        .collect();
    assert_eq!(bot_flags(&timeline(human.clone()), &cfg).unwrap().score(), 0.0);
    let links: Vec<_> = human.into_iter().map(|p| PostRecord { text: "see https://x.example".into(), ..p }).collect();
    assert_eq!(bot_flags(&timeline(links), &cfg).unwrap().score(), 0.5);
    let spam: Vec<_> =
        (0..100).map(|i| post(&format!("b{i}"), "alice", t0() + Duration::minutes(i), "buy https://s.example")).collect();
    assert_eq!(bot_flags(&timeline(spam), &cfg).unwrap().score(), 1.0);
}
