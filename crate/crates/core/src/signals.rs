//! Region-level rates, correlation against reference metrics, emotion
//! profiles and group comparisons.
//!
//! Significance is always assessed by permutation. Monte Carlo replica `i`
//! draws from `ChaCha8(seed)` on stream `i`, so a p-value depends only on
//! the inputs and the seed, never on thread count.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{BufRead, BufReader, Read};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::annotation::LabelClass;
use crate::classify::ClassifiedPost;
use crate::corpus::normalize;
use crate::text::words;
use crate::{sha256_hex, Error, Exec, Result};

/// Two correlation values closer than this count as equal when tallying
/// permutation extremes.
pub const TIE_EPS: f64 = 1e-12;

pub const DEFAULT_EMOTIONS: [&str; 8] =
    ["anger", "anticipation", "disgust", "fear", "joy", "sadness", "surprise", "trust"];

fn rng_for(seed: u64, replica: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replica);
    rng
}

// ---------------------------------------------------------------- tables

/// Reference values per region, read from CSV `region,<metric>`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionMetricTable {
    pub name: String,
    #[serde(default)]
    pub units: String,
    pub rows: BTreeMap<String, f64>,
}

impl RegionMetricTable {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(f).map_err(|e| e.with_path(path))
    }

    pub fn read_csv(r: impl Read) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
        let headers = rdr.headers()?.clone();
        if headers.len() != 2 || headers.get(0) != Some("region") {
            return Err(Error::format_at(1, "header must be `region,<metric>`"));
        }
        let name = headers.get(1).unwrap_or_default().to_string();
        let mut rows = BTreeMap::new();
        for rec in rdr.records() {
            let rec = rec?;
            let line = rec.position().map_or(0, |p| p.line() as usize);
            let region = rec.get(0).unwrap_or_default();
            if region.is_empty() {
                return Err(Error::format_at(line, "empty region code"));
            }
            let value: f64 = rec
                .get(1)
                .unwrap_or_default()
                .parse()
                .map_err(|_| Error::format_at(line, format!("bad value for region {region}")))?;
            if !value.is_finite() {
                return Err(Error::format_at(line, format!("non-finite value for region {region}")));
            }
            if rows.insert(region.to_string(), value).is_some() {
                return Err(Error::format_at(line, format!("duplicate region {region}")));
            }
        }
        Ok(RegionMetricTable { name, units: String::new(), rows })
    }
}

// ---------------------------------------------------------------- rates

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RateOptions {
    pub min_support: u64,
}

impl Default for RateOptions {
    fn default() -> Self {
        RateOptions { min_support: 30 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionRate {
    pub nm_posts: u64,
    pub total_matched: u64,
    pub rate: f64,
    pub low_support: bool,
    /// Nonmedical-use posts per 100,000 population, when a population
    /// table was supplied.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_100k: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RegionRateReport {
    pub regions: BTreeMap<String, RegionRate>,
    /// Posts without a region code; counted, not attributed.
    pub regionless: u64,
    /// Known regions with no matched posts.
    pub empty_regions: Vec<String>,
    pub min_support: u64,
}

impl RegionRateReport {
    /// Attach per-capita rates from a population table.
    pub fn with_population(mut self, population: &RegionMetricTable) -> Self {
        for (region, r) in &mut self.regions {
            r.per_100k = population
                .rows
                .get(region)
                .filter(|p| **p > 0.0)
                .map(|p| r.nm_posts as f64 / p * 100_000.0);
        }
        self
    }
}

/// Per-region counts of nonmedical-use posts over all matched posts.
///
/// `labels` overrides predictions (e.g. gold labels) for the posts it
/// covers. `known_regions` only feeds the `empty_regions` list.
pub fn region_rates(
    posts: &[ClassifiedPost],
    labels: Option<&HashMap<String, LabelClass>>,
    known_regions: &[String],
    opts: RateOptions,
    exec: Exec,
) -> RegionRateReport {
    type Tally = (BTreeMap<String, (u64, u64)>, u64);
    let chunks: Vec<&[ClassifiedPost]> = posts.chunks(4096).collect();
    let partials: Vec<Tally> = exec.map(&chunks, |chunk| {
        let mut t: Tally = Default::default();
        for p in *chunk {
            let Some(region) = p.matched.post.region.as_deref() else {
                t.1 += 1;
                continue;
            };
            let label = labels
                .and_then(|l| l.get(&p.matched.post.post_id).copied())
                .unwrap_or(p.prediction.argmax);
            let e = t.0.entry(region.to_string()).or_default();
            e.0 += u64::from(label == LabelClass::NonmedicalUse);
            e.1 += 1;
        }
        t
    });
    let mut counts: BTreeMap<String, (u64, u64)> = BTreeMap::new();
    let mut regionless = 0;
    for (m, r) in partials {
        regionless += r;
        for (k, (nm, tot)) in m {
            let e = counts.entry(k).or_default();
            e.0 += nm;
            e.1 += tot;
        }
    }
    let regions = counts
        .into_iter()
        .map(|(k, (nm, tot))| {
            let r = RegionRate {
                nm_posts: nm,
                total_matched: tot,
                rate: nm as f64 / tot as f64,
                low_support: tot < opts.min_support,
                per_100k: None,
            };
            (k, r)
        })
        .collect::<BTreeMap<_, _>>();
    let empty_regions = known_regions
        .iter()
        .filter(|r| !regions.contains_key(*r))
        .cloned()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    RegionRateReport { regions, regionless, empty_regions, min_support: opts.min_support }
}

// ---------------------------------------------------------------- correlation

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Statistic {
    Pearson,
    Spearman,
}

impl FromStr for Statistic {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pearson" => Ok(Statistic::Pearson),
            "spearman" => Ok(Statistic::Spearman),
            _ => Err(Error::Contract(format!("unknown statistic {s:?}"))),
        }
    }
}

fn check_pair(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::Contract(format!("vectors differ in length ({} vs {})", x.len(), y.len())));
    }
    if x.len() < 3 {
        return Err(Error::Contract(format!("correlation needs at least 3 points, got {}", x.len())));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::Contract("correlation inputs must be finite".into()));
    }
    Ok(())
}

/// Mean-centred copy and its sum of squares.
fn centre(v: &[f64]) -> (Vec<f64>, f64) {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    let c: Vec<f64> = v.iter().map(|a| a - m).collect();
    let ss = c.iter().map(|a| a * a).sum();
    (c, ss)
}

/// Sample Pearson correlation, two-pass.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    let (xc, sxx) = centre(x);
    let (yc, syy) = centre(y);
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Domain("correlation of a constant vector".into()));
    }
    let sxy: f64 = xc.iter().zip(&yc).map(|(a, b)| a * b).sum();
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// 1-based ranks with ties sharing their average rank.
pub fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}

/// Spearman's rho: Pearson correlation of average ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    pearson(&ranks(x), &ranks(y))
}

pub fn correlation(stat: Statistic, x: &[f64], y: &[f64]) -> Result<f64> {
    match stat {
        Statistic::Pearson => pearson(x, y),
        Statistic::Spearman => spearman(x, y),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PermutationTest {
    pub observed: f64,
    pub p_value: f64,
    pub permutations: u64,
    /// True when every permutation was enumerated.
    pub exact: bool,
}

/// Rearrange `v` into the next permutation in lexicographic order of
/// indices; false once the last one has been produced.
fn next_permutation(v: &mut [usize]) -> bool {
    let Some(i) = (1..v.len()).rev().find(|&i| v[i - 1] < v[i]) else {
        return false;
    };
    let j = (i..v.len()).rev().find(|&j| v[j] > v[i - 1]).expect("pivot successor");
    v.swap(i - 1, j);
    v[i..].reverse();
    true
}

fn factorial_at_most(n: usize, cap: u64) -> Option<u64> {
    let mut f: u64 = 1;
    for k in 2..=n as u64 {
        f = f.checked_mul(k).filter(|f| *f <= cap)?;
    }
    Some(f)
}

/// Two-sided permutation test of association between `x` and `y`.
///
/// When `n!` does not exceed `permutations`, all `n!` orderings of `y` are
/// enumerated and `p = #{|stat| ≥ |observed|} / n!` (the identity counts).
/// Otherwise `permutations` random shuffles give
/// `p = (1 + #{|stat| ≥ |observed|}) / (permutations + 1)`.
pub fn permutation_pvalue(
    x: &[f64],
    y: &[f64],
    stat: Statistic,
    permutations: u64,
    seed: u64,
    exec: Exec,
) -> Result<PermutationTest> {
    if permutations < 100 {
        return Err(Error::Contract(format!("permutation test needs at least 100 permutations, got {permutations}")));
    }
    let observed = correlation(stat, x, y)?;
    let (x, y) = match stat {
        Statistic::Pearson => (x.to_vec(), y.to_vec()),
        Statistic::Spearman => (ranks(x), ranks(y)),
    };
    let (xc, sxx) = centre(&x);
    let (yc, syy) = centre(&y);
    let norm = (sxx * syy).sqrt();
    let stat_of = |perm: &[usize]| -> f64 {
        let s: f64 = xc.iter().zip(perm).map(|(a, &j)| a * yc[j]).sum();
        s / norm
    };
    let n = x.len();
    let identity: Vec<usize> = (0..n).collect();
    let threshold = stat_of(&identity).abs() - TIE_EPS;

    if let Some(total) = factorial_at_most(n, permutations) {
        let mut perm = identity;
        let mut hits = 0u64;
        loop {
            hits += u64::from(stat_of(&perm).abs() >= threshold);
            if !next_permutation(&mut perm) {
                break;
            }
        }
        return Ok(PermutationTest { observed, p_value: hits as f64 / total as f64, permutations: total, exact: true });
    }

    let hits = exec.count_range(permutations as usize, |i| {
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng_for(seed, i as u64));
        stat_of(&perm).abs() >= threshold
    }) as u64;
    Ok(PermutationTest {
        observed,
        p_value: (1 + hits) as f64 / (permutations + 1) as f64,
        permutations,
        exact: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorrelateOptions {
    pub permutations: u64,
    pub seed: u64,
    /// Keep regions flagged low-support in the rate report.
    pub keep_low_support: bool,
}

impl Default for CorrelateOptions {
    fn default() -> Self {
        CorrelateOptions { permutations: 9999, seed: 0, keep_low_support: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    LowSupport,
    NotInTable,
    NotInRates,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedRegion {
    pub region: String,
    pub reason: DropReason,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub metric: String,
    pub n: usize,
    pub regions: Vec<String>,
    pub pearson: PermutationTest,
    pub spearman: PermutationTest,
    pub seed: u64,
    pub dropped: Vec<DroppedRegion>,
    /// SHA-256 of the canonical JSON of each input.
    pub input_hashes: BTreeMap<String, String>,
}

/// Correlate region rates with a reference table over shared regions.
/// Both statistics use the same seed, hence the same shuffles.
pub fn correlate_report(
    rates: &RegionRateReport,
    table: &RegionMetricTable,
    opts: CorrelateOptions,
    exec: Exec,
) -> Result<CorrelationReport> {
    let mut dropped = Vec::new();
    let mut regions = Vec::new();
    for (region, r) in &rates.regions {
        if r.low_support && !opts.keep_low_support {
            dropped.push(DroppedRegion { region: region.clone(), reason: DropReason::LowSupport });
        } else if !table.rows.contains_key(region) {
            dropped.push(DroppedRegion { region: region.clone(), reason: DropReason::NotInTable });
        } else {
            regions.push(region.clone());
        }
    }
    for region in table.rows.keys() {
        if !rates.regions.contains_key(region) {
            dropped.push(DroppedRegion { region: region.clone(), reason: DropReason::NotInRates });
        }
    }
    if regions.len() < 3 {
        return Err(Error::Domain(format!(
            "correlation needs at least 3 regions present in both inputs, found {}",
            regions.len()
        )));
    }
    let x: Vec<f64> = regions.iter().map(|r| rates.regions[r].rate).collect();
    let y: Vec<f64> = regions.iter().map(|r| table.rows[r]).collect();
    let pearson = permutation_pvalue(&x, &y, Statistic::Pearson, opts.permutations, opts.seed, exec)?;
    let spearman = permutation_pvalue(&x, &y, Statistic::Spearman, opts.permutations, opts.seed, exec)?;
    let mut input_hashes = BTreeMap::new();
    input_hashes.insert("rates".to_string(), sha256_hex(serde_json::to_vec(rates)?));
    input_hashes.insert("table".to_string(), sha256_hex(serde_json::to_vec(table)?));
    Ok(CorrelationReport {
        metric: table.name.clone(),
        n: regions.len(),
        regions,
        pearson,
        spearman,
        seed: opts.seed,
        dropped,
        input_hashes,
    })
}

// ---------------------------------------------------------------- emotions

/// Token → emotion categories.
#[derive(Debug, Clone, PartialEq)]
pub struct EmotionLexicon {
    categories: Vec<String>,
    entries: HashMap<String, Vec<usize>>,
}

impl EmotionLexicon {
    pub fn new(categories: &[&str]) -> Self {
        EmotionLexicon { categories: categories.iter().map(|c| c.to_string()).collect(), entries: HashMap::new() }
    }

    pub fn categories(&self) -> &[String] {
        &self.categories
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn insert(&mut self, token: &str, category: &str) -> Result<()> {
        let c = self
            .categories
            .iter()
            .position(|k| k == category)
            .ok_or_else(|| Error::Contract(format!("unknown emotion category {category:?}")))?;
        let e = self.entries.entry(token.to_lowercase()).or_default();
        if !e.contains(&c) {
            e.push(c);
            e.sort_unstable();
        }
        Ok(())
    }

    pub fn lookup(&self, token: &str) -> &[usize] {
        self.entries.get(token).map_or(&[], Vec::as_slice)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_tsv(BufReader::new(f)).map_err(|e| e.with_path(path))
    }

    /// `token<TAB>category[,category...]` per line over the default eight
    /// categories. `#` starts a comment line.
    pub fn read_tsv(r: impl BufRead) -> Result<Self> {
        let mut lex = EmotionLexicon::new(&DEFAULT_EMOTIONS);
        for (i, line) in r.lines().enumerate() {
            let line = line.map_err(|e| Error::format_at(i + 1, e.to_string()))?;
            let line = line.trim_end();
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (token, cats) =
                line.split_once('\t').ok_or_else(|| Error::format_at(i + 1, "expected token<TAB>categories"))?;
            if token.trim().is_empty() {
                return Err(Error::format_at(i + 1, "empty token"));
            }
            for c in cats.split(',').map(str::trim).filter(|c| !c.is_empty()) {
                lex.insert(token.trim(), c).map_err(|e| Error::format_at(i + 1, e.to_string()))?;
            }
        }
        Ok(lex)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmotionProfile {
    pub categories: Vec<String>,
    pub counts: Vec<u64>,
    pub total_hits: u64,
    pub posts: u64,
    /// `counts / total_hits`; all zero when `zero_total`.
    pub distribution: Vec<f64>,
    pub zero_total: bool,
}

/// Count lexicon hits per category over normalised tokens. A token listed
/// under several categories counts once in each.
pub fn emotion_profile<T: AsRef<str> + Sync>(texts: &[T], lexicon: &EmotionLexicon, exec: Exec) -> Result<EmotionProfile> {
    if lexicon.is_empty() {
        return Err(Error::Contract("emotion lexicon is empty".into()));
    }
    let k = lexicon.categories.len();
    let per_post = exec.map(texts, |t| {
        let mut c = vec![0u64; k];
        let norm = normalize(t.as_ref());
        for w in words(&norm) {
            for &cat in lexicon.lookup(w) {
                c[cat] += 1;
            }
        }
        c
    });
    let mut counts = vec![0u64; k];
    for c in per_post {
        for (a, b) in counts.iter_mut().zip(c) {
            *a += b;
        }
    }
    let total_hits: u64 = counts.iter().sum();
    let distribution = if total_hits == 0 {
        vec![0.0; k]
    } else {
        counts.iter().map(|c| *c as f64 / total_hits as f64).collect()
    };
    Ok(EmotionProfile {
        categories: lexicon.categories.clone(),
        counts,
        total_hits,
        posts: texts.len() as u64,
        distribution,
        zero_total: total_hits == 0,
    })
}

// ---------------------------------------------------------------- chi-square

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChiSquareTest {
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
    pub permutations: u64,
    /// Category indices dropped for having zero hits in both groups.
    pub dropped_categories: Vec<usize>,
}

/// Pearson chi-square of a 2×K table, each cell term evaluated as
/// `(O·n − R·C)² / (n·R·C)` in integers before the final division.
fn chi_square(a: &[u64], b: &[u64]) -> f64 {
    let ra: u64 = a.iter().sum();
    let rb: u64 = b.iter().sum();
    let n = u128::from(ra + rb);
    let mut stat = 0.0;
    for (&oa, &ob) in a.iter().zip(b) {
        let c = u128::from(oa + ob);
        for (o, r) in [(oa, ra), (ob, rb)] {
            let lhs = u128::from(o) * n;
            let rhs = u128::from(r) * c;
            let d = lhs.abs_diff(rhs);
            let den = n * u128::from(r) * c;
            if den == 0 {
                continue;
            }
            stat += (d as f64) * (d as f64) / den as f64;
        }
    }
    stat
}

/// Chi-square homogeneity test between two groups' category hit counts.
/// The p-value comes from `permutations` reassignments of individual hits
/// to groups with the group totals fixed.
pub fn compare_groups(a: &[u64], b: &[u64], permutations: u64, seed: u64, exec: Exec) -> Result<ChiSquareTest> {
    if a.len() != b.len() {
        return Err(Error::Contract(format!("category counts differ in length ({} vs {})", a.len(), b.len())));
    }
    if a.iter().chain(b).all(|c| *c == 0) {
        return Err(Error::Domain("contingency table is all zero".into()));
    }
    if a.iter().sum::<u64>() == 0 || b.iter().sum::<u64>() == 0 {
        return Err(Error::Contract("each group needs at least one hit".into()));
    }
    if permutations < 100 {
        return Err(Error::Contract(format!("permutation test needs at least 100 permutations, got {permutations}")));
    }
    let dropped_categories: Vec<usize> = (0..a.len()).filter(|&i| a[i] + b[i] == 0).collect();
    let (a, b): (Vec<u64>, Vec<u64>) = a.iter().zip(b).filter(|(x, y)| **x + **y > 0).map(|(x, y)| (*x, *y)).unzip();
    let statistic = chi_square(&a, &b);

    let col: Vec<u64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
    let mut bounds = Vec::with_capacity(col.len());
    let mut acc = 0u64;
    for c in &col {
        acc += c;
        bounds.push(acc);
    }
    let n = acc as usize;
    let ra = a.iter().sum::<u64>() as usize;
    // Sample the smaller group; the other gets the remainder.
    let (k, first_is_a) = if ra <= n - ra { (ra, true) } else { (n - ra, false) };
    let threshold = statistic - 1e-9 * statistic.max(1.0);
    let hits = exec.count_range(permutations as usize, |i| {
        let mut rng = rng_for(seed, i as u64);
        let mut drawn = vec![0u64; col.len()];
        for idx in rand::seq::index::sample(&mut rng, n, k) {
            let cat = bounds.partition_point(|&b| b <= idx as u64);
            drawn[cat] += 1;
        }
        let rest: Vec<u64> = col.iter().zip(&drawn).map(|(c, d)| c - d).collect();
        let s = if first_is_a { chi_square(&drawn, &rest) } else { chi_square(&rest, &drawn) };
        s >= threshold
    }) as u64;
    Ok(ChiSquareTest {
        statistic,
        df: a.len().saturating_sub(1),
        p_value: (1 + hits) as f64 / (permutations + 1) as f64,
        permutations,
        dropped_categories,
    })
}

// ---------------------------------------------------------------- distributions

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionComparison {
    pub categories: Vec<String>,
    /// `None` with fewer than 3 categories or a constant distribution.
    pub pearson_r: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_unavailable: Option<String>,
    pub max_abs_diff: f64,
}

/// Compare an estimated categorical distribution with a reference one.
pub fn distribution_compare(
    estimated: &BTreeMap<String, f64>,
    reference: &BTreeMap<String, f64>,
) -> Result<DistributionComparison> {
    if estimated.keys().ne(reference.keys()) {
        return Err(Error::Contract("distributions are over different category sets".into()));
    }
    for (name, d) in [("estimated", estimated), ("reference", reference)] {
        let s: f64 = d.values().sum();
        if (s - 1.0).abs() > 1e-6 || d.values().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Contract(format!("{name} distribution does not sum to 1 (sum {s})")));
        }
    }
    let x: Vec<f64> = estimated.values().copied().collect();
    let y: Vec<f64> = reference.values().copied().collect();
    let max_abs_diff = x.iter().zip(&y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let (pearson_r, r_unavailable) = if x.len() < 3 {
        (None, Some(format!("needs at least 3 categories, got {}", x.len())))
    } else {
        match pearson(&x, &y) {
            Ok(r) => (Some(r), None),
            Err(Error::Domain(m)) => (None, Some(m)),
            Err(e) => return Err(e),
        }
    };
    Ok(DistributionComparison { categories: estimated.keys().cloned().collect(), pearson_r, r_unavailable, max_abs_diff })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classify::{Prediction, Scores};
    use crate::corpus::{MatchedPost, PostRecord, Source};
    use proptest::prelude::*;

    fn classified(id: usize, region: Option<&str>, label: LabelClass) -> ClassifiedPost {
        let mut s = [0.0; 4];
        s[label.index()] = 1.0;
        ClassifiedPost {
            matched: MatchedPost {
                post: PostRecord {
                    post_id: format!("p{id}"),
                    author_id: "a".into(),
                    created_at: "2024-01-01T00:00:00Z".parse().unwrap(),
                    text: "x".into(),
                    source: Source::TwitterLike,
                    region: region.map(String::from),
                    is_repost: false,
                },
                matched_terms: vec![],
            },
            prediction: Prediction::new(format!("p{id}"), Scores(s)),
        }
    }

    #[test]
    fn region_rate_basic() {
        let mut posts: Vec<_> = (0..10)
            .map(|i| classified(i, Some("R1"), if i < 3 { LabelClass::NonmedicalUse } else { LabelClass::Mention }))
            .collect();
        posts.push(classified(99, None, LabelClass::NonmedicalUse));
        let known = vec!["R1".to_string(), "R2".to_string()];
        let r = region_rates(&posts, None, &known, RateOptions::default(), Exec::Sequential);
        assert_eq!(r.regions["R1"].rate, 0.3);
        assert!(r.regions["R1"].low_support);
        assert_eq!(r.regionless, 1);
        assert_eq!(r.empty_regions, ["R2"]);
        assert!(!r.regions.contains_key("R2"));
        assert_eq!(r, region_rates(&posts, None, &known, RateOptions::default(), Exec::Parallel));
    }

    #[test]
    fn gold_labels_override_predictions() {
        let posts = vec![classified(0, Some("R"), LabelClass::Mention)];
        let gold = HashMap::from([("p0".to_string(), LabelClass::NonmedicalUse)]);
        let r = region_rates(&posts, Some(&gold), &[], RateOptions { min_support: 1 }, Exec::Sequential);
        assert_eq!(r.regions["R"].nm_posts, 1);
        assert!(!r.regions["R"].low_support);
    }

    #[test]
    fn metric_table_csv() {
        let t = RegionMetricTable::read_csv("region,overdose_deaths\nA,1.5\nB,2\n".as_bytes()).unwrap();
        assert_eq!(t.name, "overdose_deaths");
        assert_eq!(t.rows["B"], 2.0);
        let e = RegionMetricTable::read_csv("region,x\nA,1\nA,2\n".as_bytes()).unwrap_err();
        assert_eq!(e.line(), Some(3));
        assert!(RegionMetricTable::read_csv("region,x\nA,inf\n".as_bytes()).is_err());
        assert!(RegionMetricTable::read_csv("place,x\nA,1\n".as_bytes()).is_err());
    }

    #[test]
    fn pearson_examples() {
        assert!((pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((pearson(&[1.0, 2.0, 3.0], &[-1.0, -2.0, -3.0]).unwrap() + 1.0).abs() < 1e-15);
        assert!(matches!(pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), Err(Error::Domain(_))));
        assert!(matches!(pearson(&[1.0, 2.0], &[1.0, 2.0]), Err(Error::Contract(_))));
        // 4 points: sxy = 4, sxx = syy = 5
        assert!((pearson(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap() - 0.8).abs() < 1e-15);
    }

    #[test]
    fn spearman_examples() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 1.0, 2.0]).unwrap() + 0.5).abs() < 1e-15);
        assert_eq!(ranks(&[1.0, 1.0, 2.0]), [1.5, 1.5, 3.0]);
        let x = [0.3, 1.2, 5.0, 7.5, 9.0];
        let y: Vec<f64> = x.iter().map(|v: &f64| v.powi(3) + v.exp()).collect();
        assert!((spearman(&x, &y).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn permutation_contracts() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert!(matches!(
            permutation_pvalue(&x, &x, Statistic::Pearson, 0, 1, Exec::Sequential),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn perfect_correlation_of_ten() {
        let x: Vec<f64> = (0..10).map(f64::from).collect();
        let t = permutation_pvalue(&x, &x, Statistic::Pearson, 9999, 7, Exec::Parallel).unwrap();
        assert!(!t.exact);
        assert_eq!(t.p_value, 1.0 / 10_000.0);
    }

    #[test]
    fn permutation_is_deterministic_and_exec_independent() {
        let x: Vec<f64> = (0..12).map(|i| ((i * 37) % 11) as f64).collect();
        let y: Vec<f64> = (0..12).map(|i| ((i * 5) % 7) as f64 + 0.5 * i as f64).collect();
        for stat in [Statistic::Pearson, Statistic::Spearman] {
            let a = permutation_pvalue(&x, &y, stat, 2000, 3, Exec::Sequential).unwrap();
            let b = permutation_pvalue(&x, &y, stat, 2000, 3, Exec::Parallel).unwrap();
            assert_eq!(a, b);
            assert!(a.p_value > 0.0 && a.p_value <= 1.0);
        }
    }

    #[test]
    fn null_fixture_is_not_significant() {
        let mut rng = rng_for(11, 0);
        let x: Vec<f64> = (0..200).map(|_| rand::Rng::random::<f64>(&mut rng)).collect();
        let y: Vec<f64> = (0..200).map(|_| rand::Rng::random::<f64>(&mut rng)).collect();
        let t = permutation_pvalue(&x, &y, Statistic::Pearson, 999, 5, Exec::Parallel).unwrap();
        assert!(t.p_value > 0.01, "{t:?}");
    }

    fn rate_report(values: &[(&str, f64)]) -> RegionRateReport {
        RegionRateReport {
            regions: values
                .iter()
                .map(|(r, v)| {
                    (r.to_string(), RegionRate { nm_posts: 0, total_matched: 100, rate: *v, low_support: false, per_100k: None })
                })
                .collect(),
            ..Default::default()
        }
    }

    #[test]
    fn correlate_against_itself() {
        let vals = [("A", 0.1), ("B", 0.4), ("C", 0.2), ("D", 0.3)];
        let rates = rate_report(&vals);
        let table = RegionMetricTable {
            name: "self".into(),
            units: String::new(),
            rows: vals.iter().map(|(r, v)| (r.to_string(), *v)).collect(),
        };
        let rep = correlate_report(&rates, &table, CorrelateOptions { permutations: 999, ..Default::default() }, Exec::Parallel)
            .unwrap();
        assert_eq!(rep.n, 4);
        assert!((rep.pearson.observed - 1.0).abs() < 1e-15);
        assert!((rep.spearman.observed - 1.0).abs() < 1e-15);
        assert!(rep.pearson.exact);
        assert_eq!(rep.input_hashes.len(), 2);
    }

    #[test]
    fn correlate_drops_and_disjoint() {
        let mut rates = rate_report(&[("A", 0.1), ("B", 0.4), ("C", 0.2), ("D", 0.3)]);
        rates.regions.get_mut("D").unwrap().low_support = true;
        let table = RegionMetricTable {
            name: "m".into(),
            units: String::new(),
            rows: [("A", 1.0), ("B", 3.0), ("C", 2.0), ("Z", 9.0)].iter().map(|(r, v)| (r.to_string(), *v)).collect(),
        };
        let rep = correlate_report(&rates, &table, CorrelateOptions::default(), Exec::Sequential).unwrap();
        assert_eq!(rep.regions, ["A", "B", "C"]);
        let reasons: Vec<_> = rep.dropped.iter().map(|d| (d.region.as_str(), d.reason)).collect();
        assert_eq!(reasons, [("D", DropReason::LowSupport), ("Z", DropReason::NotInRates)]);

        let other = RegionMetricTable { name: "m".into(), units: String::new(), rows: BTreeMap::from([("Q".into(), 1.0)]) };
        assert!(matches!(correlate_report(&rates, &other, CorrelateOptions::default(), Exec::Sequential), Err(Error::Domain(_))));
    }

    fn lexicon() -> EmotionLexicon {
        EmotionLexicon::read_tsv("# test\nhappy\tjoy\nscared\tfear,surprise\nangry\tanger\n".as_bytes()).unwrap()
    }

    #[test]
    fn emotion_profile_examples() {
        let p = emotion_profile(&["so HAPPY today"], &lexicon(), Exec::Sequential).unwrap();
        let joy = p.categories.iter().position(|c| c == "joy").unwrap();
        assert_eq!(p.distribution[joy], 1.0);
        let empty: [&str; 0] = [];
        let p = emotion_profile(&empty, &lexicon(), Exec::Sequential).unwrap();
        assert!(p.zero_total);
        assert_eq!(p.total_hits, 0);
        let p = emotion_profile(&["scared scared angry"], &lexicon(), Exec::Parallel).unwrap();
        assert_eq!(p.total_hits, 5);
        assert!((p.distribution.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn emotion_lexicon_rejects_unknown_category() {
        let e = EmotionLexicon::read_tsv("ok\tjoy\nbad\tennui\n".as_bytes()).unwrap_err();
        assert_eq!(e.line(), Some(2));
        assert!(emotion_profile(&["x"], &EmotionLexicon::new(&DEFAULT_EMOTIONS), Exec::Sequential).is_err());
    }

    #[test]
    fn chi_square_examples() {
        let t = compare_groups(&[30, 70], &[10, 90], 999, 1, Exec::Sequential).unwrap();
        assert!((t.statistic - 12.5).abs() < 1e-9);
        assert_eq!(t.df, 1);
        let t = compare_groups(&[10, 20, 30], &[20, 40, 60], 999, 1, Exec::Sequential).unwrap();
        assert_eq!(t.statistic, 0.0);
        assert_eq!(t.p_value, 1.0);
        let t = compare_groups(&[50, 0, 0], &[0, 50, 0], 9999, 1, Exec::Parallel).unwrap();
        assert!(t.p_value <= 0.001);
        assert_eq!(t.dropped_categories, [2]);
        assert_eq!(t.df, 1);
        assert!(matches!(compare_groups(&[0, 0], &[0, 0], 999, 1, Exec::Sequential), Err(Error::Domain(_))));
        assert!(matches!(compare_groups(&[1], &[1, 2], 999, 1, Exec::Sequential), Err(Error::Contract(_))));
    }

    #[test]
    fn chi_square_p_is_exec_independent() {
        let a = compare_groups(&[12, 30, 8, 5], &[20, 18, 9, 11], 3000, 42, Exec::Sequential).unwrap();
        let b = compare_groups(&[12, 30, 8, 5], &[20, 18, 9, 11], 3000, 42, Exec::Parallel).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn distribution_compare_examples() {
        let d = |v: &[f64]| -> BTreeMap<String, f64> { v.iter().enumerate().map(|(i, x)| (format!("c{i}"), *x)).collect() };
        let same = distribution_compare(&d(&[0.5, 0.3, 0.2]), &d(&[0.5, 0.3, 0.2])).unwrap();
        assert!((same.pearson_r.unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(same.max_abs_diff, 0.0);
        let two = distribution_compare(&d(&[0.5, 0.5]), &d(&[0.4, 0.6])).unwrap();
        assert!(two.pearson_r.is_none() && two.r_unavailable.is_some());
        assert!((two.max_abs_diff - 0.1).abs() < 1e-12);
        let c = distribution_compare(&d(&[0.5, 0.3, 0.2]), &d(&[0.4, 0.4, 0.2])).unwrap();
        assert!((c.max_abs_diff - 0.1).abs() < 1e-12);
        // centred: x = (1/6, -1/30, -2/15), y = (1/15, 1/15, -2/15)
        let (sxy, sxx, syy): (f64, f64, f64) = (
            1.0 / 90.0 - 1.0 / 450.0 + 4.0 / 225.0,
            1.0 / 36.0 + 1.0 / 900.0 + 4.0 / 225.0,
            2.0 / 225.0 + 4.0 / 225.0,
        );
        assert!((c.pearson_r.unwrap() - sxy / (sxx * syy).sqrt()).abs() < 1e-12);
        let mut other = d(&[0.5, 0.3, 0.2]);
        other.insert("zz".into(), 0.0);
        assert!(matches!(distribution_compare(&d(&[0.5, 0.3, 0.2]), &other), Err(Error::Contract(_))));
    }

    fn vec_pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (3usize..30).prop_flat_map(|n| {
            (prop::collection::vec(-1e3f64..1e3, n), prop::collection::vec(-1e3f64..1e3, n))
        })
    }

    proptest! {
        #[test]
        fn pearson_affine_invariance((x, y) in vec_pair(), a in 0.1f64..10.0, b in -50f64..50.0, c in -10f64..-0.1, d in -50f64..50.0) {
            let Ok(r) = pearson(&x, &y) else { return Ok(()); };
            let xs: Vec<f64> = x.iter().map(|v| a * v + b).collect();
            let ys: Vec<f64> = y.iter().map(|v| c * v + d).collect();
            prop_assert!((pearson(&xs, &ys).unwrap() + r).abs() < 1e-9);
            prop_assert!(r.abs() <= 1.0 + 1e-12);
        }

        #[test]
        fn spearman_monotone_invariance((x, y) in vec_pair()) {
            let Ok(r) = spearman(&x, &y) else { return Ok(()); };
            let xs: Vec<f64> = x.iter().map(|v| (v / 100.0).exp()).collect();
            let ys: Vec<f64> = y.iter().map(|v| v * v * v).collect();
            prop_assert!((spearman(&xs, &ys).unwrap() - r).abs() < 1e-9);
            prop_assert!(r.abs() <= 1.0 + 1e-12);
        }

        #[test]
        fn chi_square_symmetry_and_zero(a in prop::collection::vec(0u64..50, 2..6), k in 1u64..5) {
            prop_assume!(a.iter().sum::<u64>() > 0);
            let b: Vec<u64> = a.iter().map(|v| v * k).collect();
            prop_assert_eq!(chi_square(&a, &b), 0.0);
            let c: Vec<u64> = a.iter().rev().cloned().collect();
            prop_assert!((chi_square(&a, &c) - chi_square(&c, &a)).abs() <= 1e-9 * chi_square(&a, &c).max(1.0));
        }
    }
}
