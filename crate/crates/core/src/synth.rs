//! Deterministic synthetic data with recorded ground truth.
//!
//! Every generator is a pure function of its parameters and seed. The generated
//! texts use disjoint vocabularies for class keywords, filler, drug terms
//! and emotion words, so ground truth can be counted exactly.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use chrono::{DateTime, Duration, TimeZone, Utc};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::annotation::LabelClass;
use crate::classify::LabeledText;
use crate::corpus::{normalize, PostRecord, Source};
use crate::signals::{pearson, RegionMetricTable, DEFAULT_EMOTIONS};
use crate::{Error, Result};

fn strings(words: &[&str]) -> Vec<String> {
    words.iter().map(|w| w.to_string()).collect()
}

/// Class-keyword generative recipe for labelled posts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recipe {
    /// Keywords per class in [`LabelClass::ALL`] order.
    pub keywords: [Vec<String>; 4],
    pub filler: Vec<String>,
    pub drug_terms: Vec<String>,
    pub keywords_per_post: usize,
    pub filler_per_post: usize,
    /// Probability that one keyword is swapped for another class's keyword.
    pub cross_class_noise: f64,
}

impl Default for Recipe {
    fn default() -> Self {
        Recipe {
            keywords: [
                strings(&["snorted", "high", "partying", "recreationally", "binge", "crushed", "buzzed", "wasted", "blasted", "rail"]),
                strings(&["prescribed", "doctor", "dose", "pharmacy", "refill", "mg", "daily", "psychiatrist", "taking", "script"]),
                strings(&["news", "article", "report", "study", "fda", "shortage", "lawsuit", "headline", "research", "policy"]),
                strings(&["song", "movie", "lyrics", "meme", "game", "band", "joke", "named", "cat", "album"]),
            ],
            filler: strings(&[
                "the", "a", "and", "just", "so", "my", "this", "with", "today", "again", "about", "really", "some",
                "they", "we", "it", "for", "at", "on", "all", "night", "week", "people", "time",
            ]),
            drug_terms: strings(&["xanax", "adderall", "opioid", "xanaxx", "xannax", "xanex", "aderall", "opiod"]),
            keywords_per_post: 3,
            filler_per_post: 4,
            cross_class_noise: 0.25,
        }
    }
}

impl Recipe {
    /// One post text of class `class`, optionally with extra words mixed in.
    fn text(&self, class: LabelClass, drug: Option<&str>, extra: &[&str], rng: &mut ChaCha8Rng) -> String {
        let own = &self.keywords[class.index()];
        let mut words: Vec<&str> = (0..self.keywords_per_post).map(|_| own.choose(rng).unwrap().as_str()).collect();
        if rng.random::<f64>() < self.cross_class_noise {
            let other = LabelClass::ALL[(class.index() + rng.random_range(1..4)) % 4];
            words[0] = self.keywords[other.index()].choose(rng).unwrap();
        }
        words.extend((0..self.filler_per_post).map(|_| self.filler.choose(rng).unwrap().as_str()));
        words.extend(drug);
        words.extend(extra);
        words.shuffle(rng);
        words.join(" ")
    }
}

fn class_counts(n: usize, nm_share: f64) -> [usize; 4] {
    let nm = (n as f64 * nm_share).round() as usize;
    let rest = n - nm;
    [nm, rest / 3 + usize::from(rest % 3 > 0), rest / 3 + usize::from(rest % 3 > 1), rest / 3]
}

/// `n` labelled texts with exactly `round(n · nm_share)` nonmedical-use
/// posts and the remainder split evenly over the other classes.
pub fn labeled_set(n: usize, nm_share: f64, recipe: &Recipe, seed: u64, id_prefix: &str) -> Vec<LabeledText> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels: Vec<LabelClass> = class_counts(n, nm_share)
        .iter()
        .zip(LabelClass::ALL)
        .flat_map(|(k, c)| std::iter::repeat(c).take(*k))
        .collect();
    labels.shuffle(&mut rng);
    labels
        .into_iter()
        .enumerate()
        .map(|(i, label)| {
            let drug = recipe.drug_terms.choose(&mut rng).map(String::as_str);
            LabeledText { post_id: format!("{id_prefix}{i:05}"), text: recipe.text(label, drug, &[], &mut rng), label }
        })
        .collect()
}

// ---------------------------------------------------------------- retrieval

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalSpec {
    /// Seed term → planted variants.
    pub planted: BTreeMap<String, Vec<String>>,
    pub seed_posts: usize,
    pub variant_only_posts: usize,
    /// Posts with lookalike tokens that must not match.
    pub decoy_posts: usize,
    pub noise_posts: usize,
    pub decoys: Vec<String>,
}

impl Default for RetrievalSpec {
    fn default() -> Self {
        RetrievalSpec {
            planted: BTreeMap::from([
                ("xanax".into(), strings(&["xanaxx", "xanex", "xannax"])),
                ("adderall".into(), strings(&["aderall"])),
                ("opioid".into(), strings(&["opiod"])),
            ]),
            seed_posts: 300,
            variant_only_posts: 120,
            decoy_posts: 40,
            noise_posts: 200,
            decoys: strings(&["xanaxxy", "zoloft", "opioids", "adderal1"]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalTruth {
    /// Posts matched by seeds alone.
    pub baseline_hits: u64,
    /// Posts matched once the planted variants are in the lexicon.
    pub expanded_hits: u64,
    pub expected_gain: f64,
}

/// Corpus where `seed_posts` mention a seed (some also a variant) and
/// `variant_only_posts` mention only a planted variant.
pub fn retrieval_corpus(spec: &RetrievalSpec, seed: u64) -> (Vec<PostRecord>, RetrievalTruth) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let recipe = Recipe::default();
    let seeds: Vec<&String> = spec.planted.keys().collect();
    let variants: Vec<&String> = spec.planted.values().flatten().collect();
    let t0 = Utc.with_ymd_and_hms(2023, 1, 1, 0, 0, 0).unwrap();
    let mut posts = Vec::new();
    let mut push = |text: String, rng: &mut ChaCha8Rng| {
        let i = posts.len();
        posts.push(PostRecord {
            post_id: format!("r{i:05}"),
            author_id: format!("ra{}", rng.random_range(0..500)),
            created_at: t0 + Duration::minutes(i as i64 * 7),
            text,
            source: Source::TwitterLike,
            region: None,
            is_repost: false,
        });
    };
    for _ in 0..spec.seed_posts {
        let s = seeds.choose(&mut rng).unwrap().as_str();
        let extra: Vec<&str> = if rng.random::<f64>() < 0.2 { vec![variants.choose(&mut rng).unwrap().as_str()] } else { vec![] };
        let class = LabelClass::ALL[rng.random_range(0..4)];
        let text = recipe.text(class, Some(s), &extra, &mut rng);
        push(text, &mut rng);
    }
    for _ in 0..spec.variant_only_posts {
        let v = variants.choose(&mut rng).unwrap().as_str();
        let class = LabelClass::ALL[rng.random_range(0..4)];
        let text = recipe.text(class, Some(v), &[], &mut rng);
        push(text, &mut rng);
    }
    for _ in 0..spec.decoy_posts {
        let d = spec.decoys.choose(&mut rng).unwrap().as_str();
        let text = recipe.text(LabelClass::Unrelated, Some(d), &[], &mut rng);
        push(text, &mut rng);
    }
    for _ in 0..spec.noise_posts {
        let class = LabelClass::ALL[rng.random_range(0..4)];
        let text = recipe.text(class, None, &[], &mut rng);
        push(text, &mut rng);
    }
    posts.shuffle(&mut rng);
    let baseline = spec.seed_posts as u64;
    let expanded = (spec.seed_posts + spec.variant_only_posts) as u64;
    let truth = RetrievalTruth {
        baseline_hits: baseline,
        expanded_hits: expanded,
        expected_gain: 100.0 * (expanded - baseline) as f64 / baseline as f64,
    };
    (posts, truth)
}

// ---------------------------------------------------------------- demo corpus

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoSpec {
    pub regions: usize,
    /// Matched (drug-mentioning) original posts per region.
    pub posts_per_region: usize,
    pub authors_per_region: usize,
    pub regionless_posts: usize,
    pub unmatched_posts: usize,
    pub reposts: usize,
    pub duplicates: usize,
    pub bots: usize,
    pub bot_history_posts: usize,
    pub train_posts: usize,
    pub nm_share_train: f64,
}

impl Default for DemoSpec {
    fn default() -> Self {
        DemoSpec {
            regions: 10,
            posts_per_region: 200,
            authors_per_region: 40,
            regionless_posts: 60,
            unmatched_posts: 400,
            reposts: 50,
            duplicates: 30,
            bots: 4,
            bot_history_posts: 120,
            train_posts: 2000,
            nm_share_train: 0.10,
        }
    }
}

/// Emotion words by class, each in exactly one category.
const EMOTION_WORDS: [(&str, &str); 12] = [
    ("thrilled", "joy"),
    ("elated", "joy"),
    ("eager", "anticipation"),
    ("reassured", "trust"),
    ("worried", "fear"),
    ("terrified", "fear"),
    ("shocked", "surprise"),
    ("heartbroken", "sadness"),
    ("gloomy", "sadness"),
    ("furious", "anger"),
    ("disgusted", "disgust"),
    ("grossed", "disgust"),
];

/// Which emotion words each class draws from.
const CLASS_EMOTIONS: [&[&str]; 4] = [
    &["thrilled", "elated", "eager", "furious"],
    &["reassured", "worried", "eager"],
    &["shocked", "worried", "heartbroken", "disgusted"],
    &["thrilled", "gloomy", "grossed", "shocked"],
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionTruth {
    pub nm_posts: u64,
    pub total_matched: u64,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoTruth {
    /// Over matched posts that survive dedup, excluding bot posts.
    pub regions: BTreeMap<String, RegionTruth>,
    pub regionless_matched: u64,
    pub table_metric: String,
    /// Pearson r between the planted rates and the reference table.
    pub table_r: f64,
    /// Emotion hits per class over surviving matched posts, in
    /// [`DEFAULT_EMOTIONS`] order.
    pub emotion_counts: BTreeMap<LabelClass, Vec<u64>>,
    pub gold: BTreeMap<String, LabelClass>,
    pub bot_authors: Vec<String>,
    pub bot_post_ids: Vec<String>,
    pub authors: Vec<String>,
    pub corpus_posts: usize,
    pub matched_after_dedup: usize,
}

pub struct DemoData {
    pub corpus: Vec<PostRecord>,
    pub history: Vec<PostRecord>,
    pub train: Vec<LabeledText>,
    pub table: RegionMetricTable,
    pub emotion_lexicon_tsv: String,
    pub seeds: Vec<String>,
    pub truth: DemoTruth,
}

fn region_code(i: usize) -> String {
    format!("R{:02}", i + 1)
}

/// Planted nonmedical-use share of region `i`.
fn planted_share(i: usize, n: usize) -> f64 {
    0.08 + 0.22 * i as f64 / (n.max(2) - 1) as f64
}

pub fn emotion_lexicon_tsv() -> String {
    let mut s = String::from("# token\tcategories\n");
    for (w, c) in EMOTION_WORDS {
        s.push_str(&format!("{w}\t{c}\n"));
    }
    s
}

fn emotion_index(word: &str) -> usize {
    let cat = EMOTION_WORDS.iter().find(|(t, _)| *t == word).unwrap().1;
    DEFAULT_EMOTIONS.iter().position(|c| *c == cat).unwrap()
}

struct Gen<'a> {
    recipe: &'a Recipe,
    seen: &'a mut HashSet<(String, String)>,
    t0: DateTime<Utc>,
    year_secs: i64,
}

impl Gen<'_> {
    /// Append one matched original post with a unique (author, normalised
    /// text) pair and record its ground truth.
    fn matched(
        &mut self,
        author: &str,
        region: Option<String>,
        class: LabelClass,
        rng: &mut ChaCha8Rng,
        corpus: &mut Vec<PostRecord>,
        truth: &mut DemoTruth,
        counted: bool,
    ) {
        loop {
            let drug = self.recipe.drug_terms.choose(rng).unwrap();
            let emo = *CLASS_EMOTIONS[class.index()].choose(rng).unwrap();
            let text = self.recipe.text(class, Some(drug), &[emo], rng);
            if !self.seen.insert((author.to_string(), normalize(&text))) {
                continue;
            }
            let id = format!("d{:06}", corpus.len());
            truth.gold.insert(id.clone(), class);
            if counted {
                truth.emotion_counts.get_mut(&class).unwrap()[emotion_index(emo)] += 1;
            } else {
                truth.bot_post_ids.push(id.clone());
            }
            corpus.push(PostRecord {
                post_id: id,
                author_id: author.to_string(),
                created_at: self.t0 + Duration::seconds(rng.random_range(0..self.year_secs)),
                text,
                source: if rng.random::<f64>() < 0.7 { Source::TwitterLike } else { Source::RedditLike },
                region,
                is_repost: false,
            });
            return;
        }
    }
}

/// Demo corpus for the end-to-end pipeline. Region rates, emotion hit
/// counts and gold labels are exact for the posts that survive dedup.
pub fn demo(spec: &DemoSpec, seed: u64) -> Result<DemoData> {
    if spec.regions < 3 || spec.posts_per_region == 0 || spec.authors_per_region == 0 {
        return Err(Error::Config("demo needs at least 3 regions with posts and authors".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let recipe = Recipe::default();
    let t0 = Utc.with_ymd_and_hms(2023, 1, 1, 0, 0, 0).unwrap();
    let year_secs = 364 * 86_400;

    let mut corpus: Vec<PostRecord> = Vec::new();
    let mut truth = DemoTruth {
        regions: BTreeMap::new(),
        regionless_matched: 0,
        table_metric: "overdose_deaths_per_100k".into(),
        table_r: 0.0,
        emotion_counts: LabelClass::ALL.iter().map(|c| (*c, vec![0u64; DEFAULT_EMOTIONS.len()])).collect(),
        gold: BTreeMap::new(),
        bot_authors: Vec::new(),
        bot_post_ids: Vec::new(),
        authors: Vec::new(),
        corpus_posts: 0,
        matched_after_dedup: 0,
    };

    let mut seen_texts: HashSet<(String, String)> = HashSet::new();
    let mut gen = Gen { recipe: &recipe, seen: &mut seen_texts, t0, year_secs };
    let mut author_pool: Vec<(String, Option<String>)> = Vec::new();
    for r in 0..spec.regions {
        let code = region_code(r);
        let authors: Vec<String> = (0..spec.authors_per_region).map(|a| format!("user_{code}_{a:03}")).collect();
        author_pool.extend(authors.iter().map(|a| (a.clone(), Some(code.clone()))));
        let m = spec.posts_per_region;
        let nm = (m as f64 * planted_share(r, spec.regions)).round() as usize;
        let mut classes: Vec<LabelClass> = class_counts(m, nm as f64 / m as f64)
            .iter()
            .zip(LabelClass::ALL)
            .flat_map(|(k, c)| std::iter::repeat(c).take(*k))
            .collect();
        classes.shuffle(&mut rng);
        for class in classes {
            let author = authors.choose(&mut rng).unwrap().clone();
            gen.matched(&author, Some(code.clone()), class, &mut rng, &mut corpus, &mut truth, true);
        }
        truth.regions.insert(code, RegionTruth { nm_posts: nm as u64, total_matched: m as u64, rate: nm as f64 / m as f64 });
    }
    let drifters: Vec<String> = (0..20).map(|a| format!("user_none_{a:03}")).collect();
    author_pool.extend(drifters.iter().map(|a| (a.clone(), None)));
    for _ in 0..spec.regionless_posts {
        let author = drifters.choose(&mut rng).unwrap().clone();
        let class = LabelClass::ALL[rng.random_range(0..4)];
        gen.matched(&author, None, class, &mut rng, &mut corpus, &mut truth, true);
        truth.regionless_matched += 1;
    }

    // Bots post one nonmedical-use-looking message each into the corpus.
    // Once filtered, their posts drop out of every statistic, so the
    // region and emotion truth leave them out.
    for b in 0..spec.bots {
        let author = format!("bot_{b:02}");
        let region = region_code(b % spec.regions);
        gen.matched(&author, Some(region.clone()), LabelClass::NonmedicalUse, &mut rng, &mut corpus, &mut truth, false);
        truth.bot_authors.push(author.clone());
        author_pool.push((author, Some(region)));
    }
    truth.matched_after_dedup = corpus.len();

    for _ in 0..spec.unmatched_posts {
        let (author, region) = author_pool.choose(&mut rng).unwrap().clone();
        let class = LabelClass::ALL[rng.random_range(0..4)];
        let id = format!("d{:06}", corpus.len());
        corpus.push(PostRecord {
            post_id: id,
            author_id: author,
            created_at: t0 + Duration::seconds(rng.random_range(0..year_secs)),
            text: recipe.text(class, None, &[], &mut rng),
            source: Source::TwitterLike,
            region,
            is_repost: false,
        });
    }
    // Reposts and same-author duplicates of matched posts; dedup drops them.
    let originals = truth.matched_after_dedup;
    for k in 0..spec.reposts + spec.duplicates {
        let src = corpus[rng.random_range(0..originals)].clone();
        let mut copy = PostRecord {
            post_id: format!("d{:06}", corpus.len()),
            created_at: src.created_at + Duration::minutes(5),
            ..src
        };
        if k < spec.reposts {
            copy.is_repost = true;
            copy.author_id = author_pool.choose(&mut rng).unwrap().0.clone();
            copy.text = format!("RT {}", copy.text);
        } else {
            copy.text = format!("{}  ", copy.text.to_uppercase());
        }
        corpus.push(copy);
    }
    corpus.sort_by(|a, b| (a.created_at, &a.post_id).cmp(&(b.created_at, &b.post_id)));
    truth.corpus_posts = corpus.len();

    // Platform history for recollection: humans post irregularly, bots
    // post the same link once a minute.
    let mut history = Vec::new();
    for (author, region) in &author_pool {
        if author.starts_with("bot_") {
            let start = t0 + Duration::days(rng.random_range(0..300));
            for i in 0..spec.bot_history_posts {
                history.push(PostRecord {
                    post_id: format!("h_{author}_{i:04}"),
                    author_id: author.clone(),
                    created_at: start + Duration::minutes(i as i64),
                    text: "limited offer pills online https://pharma-deals.example/buy".into(),
                    source: Source::TwitterLike,
                    region: region.clone(),
                    is_repost: false,
                });
            }
            continue;
        }
        let n = rng.random_range(8..25);
        let mut at = t0 + Duration::seconds(rng.random_range(0..86_400 * 30));
        for i in 0..n {
            at += Duration::seconds(rng.random_range(3_600..86_400 * 12));
            let class = LabelClass::ALL[rng.random_range(1..4)];
            history.push(PostRecord {
                post_id: format!("h_{author}_{i:04}"),
                author_id: author.clone(),
                created_at: at,
                text: format!("{} {i}", recipe.text(class, None, &[], &mut rng)),
                source: Source::TwitterLike,
                region: region.clone(),
                is_repost: false,
            });
        }
    }
    let mut authors: Vec<String> = author_pool.into_iter().map(|(a, _)| a).collect();
    authors.sort();
    truth.authors = authors;

    // Reference metric: linear in the planted rate plus bounded noise.
    let mut table = RegionMetricTable { name: truth.table_metric.clone(), units: "per 100k".into(), rows: BTreeMap::new() };
    for (code, rt) in &truth.regions {
        let noise: f64 = rng.random_range(-1.5..1.5);
        let value = 4.0 + 60.0 * rt.rate + noise;
        table.rows.insert(code.clone(), (value * 1000.0).round() / 1000.0);
    }
    let x: Vec<f64> = truth.regions.values().map(|r| r.rate).collect();
    let y: Vec<f64> = table.rows.values().copied().collect();
    truth.table_r = pearson(&x, &y)?;

    let train = labeled_set(spec.train_posts, spec.nm_share_train, &recipe, seed ^ 0x7472_6169_6e00, "t");
    Ok(DemoData {
        corpus,
        history,
        train,
        table,
        emotion_lexicon_tsv: emotion_lexicon_tsv(),
        seeds: strings(&["xanax", "adderall", "opioid"]),
        truth,
    })
}

/// Twelve-token, 8-dimensional embedding table covering the demo drug
/// terms and their planted variants.
pub const TOY_EMBEDDINGS: &str = "\
12 8
xanax 1.0000 0.0000 0.0000 0.0000 0.0000 0.0000 0.0000 0.0000
xanaxx 0.9500 0.3122 0.0000 0.0000 0.0000 0.0000 0.0000 0.0000
zoloft 0.8000 0.0000 0.6000 0.0000 0.0000 0.0000 0.0000 0.0000
xanex 0.7200 0.0000 0.0000 0.6940 0.0000 0.0000 0.0000 0.0000
zanax 0.7000 0.0000 0.0000 0.0000 0.7141 0.0000 0.0000 0.0000
xannax 0.5500 0.6966 0.0000 0.0000 0.0000 0.4608 0.0000 0.0000
opioid 0.0000 0.0000 0.0000 0.0000 0.0000 0.0000 1.0000 0.0000
opiod 0.0000 0.0000 0.0000 0.0000 0.0000 0.0000 0.9000 0.4359
withdrawal 0.0000 0.0000 0.0000 0.0000 0.0000 0.0000 0.3000 0.9539
withdrawl 0.0000 0.0000 0.0000 0.4214 0.0000 0.3161 0.2550 0.8108
adderall 0.0000 0.0000 0.6000 0.0000 0.0000 0.8000 0.0000 0.0000
aderall 0.0000 0.0000 0.5280 0.0000 0.4750 0.7040 0.0000 0.0000
";

pub fn write_jsonl<T: Serialize>(path: impl AsRef<Path>, items: &[T]) -> Result<()> {
    crate::corpus::write_jsonl_values(path, items)
}

/// Write demo data files into `dir`, ground truth included as `truth.json`.
pub fn write_demo(dir: impl AsRef<Path>, data: &DemoData) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_jsonl(dir.join("corpus.jsonl"), &data.corpus)?;
    write_jsonl(dir.join("history.jsonl"), &data.history)?;
    write_jsonl(dir.join("train.jsonl"), &data.train)?;
    let mut t = String::from("region,");
    t.push_str(&data.table.name);
    t.push('\n');
    for (k, v) in &data.table.rows {
        t.push_str(&format!("{k},{v}\n"));
    }
    let write = |name: &str, body: &[u8]| -> Result<()> {
        let p = dir.join(name);
        let mut f = fs::File::create(&p).map_err(|e| Error::io(&p, e))?;
        f.write_all(body).map_err(|e| Error::io(&p, e))
    };
    write("embeddings.txt", TOY_EMBEDDINGS.as_bytes())?;
    write("region_metrics.csv", t.as_bytes())?;
    write("emotions.tsv", data.emotion_lexicon_tsv.as_bytes())?;
    write("seeds.txt", (data.seeds.join("\n") + "\n").as_bytes())?;
    write("truth.json", &serde_json::to_vec_pretty(&data.truth)?)?;
    Ok(())
}

/// Timestamp after every generated post, used as the demo's "now".
pub fn demo_as_of() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2024, 3, 1, 0, 0, 0).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labeled_set_has_exact_prevalence() {
        let set = labeled_set(2000, 0.10, &Recipe::default(), 1, "x");
        let nm = set.iter().filter(|t| t.label == LabelClass::NonmedicalUse).count();
        assert_eq!(nm, 200);
        assert_eq!(set, labeled_set(2000, 0.10, &Recipe::default(), 1, "x"));
    }

    #[test]
    fn vocabularies_are_disjoint() {
        let r = Recipe::default();
        let mut seen = HashSet::new();
        let emo = EMOTION_WORDS.iter().map(|(w, _)| w.to_string());
        for w in r.keywords.iter().flatten().chain(&r.filler).chain(&r.drug_terms).cloned().chain(emo) {
            assert!(seen.insert(w.clone()), "{w} appears twice");
        }
    }

    #[test]
    fn retrieval_truth_is_consistent() {
        let (posts, truth) = retrieval_corpus(&RetrievalSpec::default(), 3);
        assert_eq!(posts.len(), 660);
        assert_eq!(truth.expected_gain, 40.0);
    }

    #[test]
    fn demo_is_deterministic() {
        let spec = DemoSpec { posts_per_region: 40, train_posts: 100, ..Default::default() };
        let a = demo(&spec, 5).unwrap();
        let b = demo(&spec, 5).unwrap();
        assert_eq!(a.corpus, b.corpus);
        assert_eq!(a.truth, b.truth);
        assert!(a.truth.table_r > 0.5);
    }
}
