//! Independent reference implementations used as test oracles. Nothing
//! here calls into the library under test.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Signed, ToPrimitive, Zero};

// ------------------------------------------------------------ lexvar

/// Seed, theta_sem, theta_lex, max_depth, max_neighbors.
pub const EXPANSION_COMBOS: [(&str, f64, f64, usize, usize); 10] = [
    ("xanax", 0.70, 0.65, 3, 50),
    ("xanax", 0.70, 0.65, 1, 50),
    ("xanax", 0.90, 0.65, 3, 50),
    ("xanax", 0.50, 0.30, 3, 2),
    ("xanax", 0.70, 0.90, 3, 50),
    ("opioid", 0.70, 0.65, 3, 50),
    ("opioid", 0.20, 0.20, 3, 50),
    ("adderall", 0.70, 0.65, 3, 50),
    ("withdrawal", 0.30, 0.50, 2, 3),
    ("zoloft", 0.00, 0.00, 3, 50),
];

/// Plain two-row DP edit distance over chars.
pub fn edit_distance(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    for i in 1..=a.len() {
        let mut cur = vec![i; b.len() + 1];
        for j in 1..=b.len() {
            let sub = prev[j - 1] + usize::from(a[i - 1] != b[j - 1]);
            cur[j] = sub.min(prev[j] + 1).min(cur[j - 1] + 1);
        }
        prev = cur;
    }
    prev[b.len()]
}

pub fn lex_sim(a: &str, b: &str) -> f64 {
    let longest = a.chars().count().max(b.chars().count());
    1.0 - edit_distance(a, b) as f64 / longest as f64
}

pub fn cos(u: &[f64], v: &[f64]) -> Option<f64> {
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu = u.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nv = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        None
    } else {
        Some((dot / (nu * nv)).clamp(-1.0, 1.0))
    }
}

/// Parse a `token v1 v2 ...` table with an optional `count dim` header.
pub fn parse_embeddings(text: &str) -> Vec<(String, Vec<f64>)> {
    let mut out: Vec<(String, Vec<f64>)> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.is_empty() || (i == 0 && f.len() == 2 && f.iter().all(|x| x.parse::<usize>().is_ok())) {
            continue;
        }
        if out.iter().any(|(t, _)| t == f[0]) {
            continue;
        }
        out.push((f[0].to_string(), f[1..].iter().map(|x| x.parse().unwrap()).collect()));
    }
    out
}

/// Variants of `seed` by exhaustive search: a token is a variant when it is
/// reachable from the seed in at most `max_depth` steps, each step going
/// from a term to one of its `max_neighbors` most similar tokens (cosine,
/// ties by token) with cosine ≥ `theta_sem`, and every token on the way
/// has lexical similarity ≥ `theta_lex` to the seed.
pub fn expand_oracle(
    vocab: &[(String, Vec<f64>)],
    seed: &str,
    theta_sem: f64,
    theta_lex: f64,
    max_depth: usize,
    max_neighbors: usize,
) -> BTreeMap<String, usize> {
    let n = vocab.len();
    let Some(s) = vocab.iter().position(|(t, _)| t == seed) else { return BTreeMap::new() };
    let mut sim = vec![vec![None; n]; n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                sim[i][j] = cos(&vocab[i].1, &vocab[j].1);
            }
        }
    }
    let edges = |i: usize| -> Vec<usize> {
        let mut nb: Vec<(usize, f64)> = (0..n).filter_map(|j| sim[i][j].map(|c| (j, c))).collect();
        nb.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| vocab[a.0].0.cmp(&vocab[b.0].0)));
        nb.truncate(max_neighbors);
        nb.into_iter()
            .filter(|&(j, c)| {
                j != s && c >= theta_sem && lex_sim(&vocab[j].0.to_lowercase(), &seed.to_lowercase()) >= theta_lex
            })
            .map(|(j, _)| j)
            .collect()
    };
    let mut depth_of: BTreeMap<usize, usize> = BTreeMap::new();
    let mut frontier = BTreeSet::from([s]);
    for d in 1..=max_depth {
        let mut next = BTreeSet::new();
        for &u in &frontier {
            for v in edges(u) {
                if !depth_of.contains_key(&v) {
                    next.insert(v);
                }
            }
        }
        for &v in &next {
            depth_of.insert(v, d);
        }
        if next.is_empty() {
            break;
        }
        frontier = next;
    }
    depth_of.into_iter().map(|(i, d)| (vocab[i].0.clone(), d)).collect()
}

// ------------------------------------------------------------ correlation

pub fn rat(x: f64) -> BigRational {
    BigRational::from_float(x).expect("finite")
}

fn mean(v: &[BigRational]) -> BigRational {
    let n = BigRational::from_integer(BigInt::from(v.len()));
    v.iter().fold(BigRational::zero(), |a, b| a + b) / n
}

/// Exact `(Σ(x−x̄)(y−ȳ), Σ(x−x̄)², Σ(y−ȳ)²)`.
pub fn moments(x: &[BigRational], y: &[BigRational]) -> (BigRational, BigRational, BigRational) {
    let (mx, my) = (mean(x), mean(y));
    let mut sxy = BigRational::zero();
    let mut sxx = BigRational::zero();
    let mut syy = BigRational::zero();
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - &mx, b - &my);
        sxy += &dx * &dy;
        sxx += &dx * &dx;
        syy += &dy * &dy;
    }
    (sxy, sxx, syy)
}

/// Pearson r from the exact moments; only the final square root is
/// rounded.
pub fn pearson_exact(x: &[BigRational], y: &[BigRational]) -> f64 {
    let (sxy, sxx, syy) = moments(x, y);
    let r2 = (&sxy * &sxy) / (sxx * syy);
    let r = r2.to_f64().unwrap().sqrt();
    if sxy.is_negative() {
        -r
    } else {
        r
    }
}

pub fn pearson_f64_oracle(x: &[f64], y: &[f64]) -> f64 {
    let x: Vec<_> = x.iter().map(|v| rat(*v)).collect();
    let y: Vec<_> = y.iter().map(|v| rat(*v)).collect();
    pearson_exact(&x, &y)
}

/// Average ranks by counting: `1 + #smaller + (#equal − 1)/2`.
pub fn average_ranks(v: &[f64]) -> Vec<BigRational> {
    v.iter()
        .map(|a| {
            let less = v.iter().filter(|b| *b < a).count();
            let equal = v.iter().filter(|b| *b == a).count();
            BigRational::new(BigInt::from(2 * less + equal + 1), BigInt::from(2))
        })
        .collect()
}

pub fn spearman_oracle(x: &[f64], y: &[f64]) -> f64 {
    pearson_exact(&average_ranks(x), &average_ranks(y))
}

/// All permutations of `0..n` by Heap's algorithm.
pub fn heap_permutations(n: usize) -> Vec<Vec<usize>> {
    fn go(k: usize, a: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if k <= 1 {
            out.push(a.clone());
            return;
        }
        go(k - 1, a, out);
        for i in 0..k - 1 {
            if k % 2 == 0 {
                a.swap(i, k - 1);
            } else {
                a.swap(0, k - 1);
            }
            go(k - 1, a, out);
        }
    }
    let mut a: Vec<usize> = (0..n).collect();
    let mut out = Vec::new();
    go(n, &mut a, &mut out);
    out
}

/// Exact two-sided permutation p-value over every ordering of `y`: the
/// share of orderings whose |covariance| is at least the observed one.
/// The denominators of r do not depend on the ordering, so comparing the
/// exact covariances decides ties without rounding.
pub fn exhaustive_pvalue(x: &[BigRational], y: &[BigRational]) -> (usize, usize) {
    let observed = moments(x, y).0.abs();
    let perms = heap_permutations(y.len());
    let hits = perms
        .iter()
        .filter(|p| {
            let yp: Vec<BigRational> = p.iter().map(|&i| y[i].clone()).collect();
            moments(x, &yp).0.abs() >= observed
        })
        .count();
    (hits, perms.len())
}

// ------------------------------------------------------------ agreement

/// Cohen's kappa in exact rationals from the contingency counts of two
/// label sequences over `k` categories `0..k`.
pub fn kappa_exact(a: &[usize], b: &[usize], k: usize) -> BigRational {
    let n = BigInt::from(a.len());
    let mut table = vec![vec![0usize; k]; k];
    for (x, y) in a.iter().zip(b) {
        table[*x][*y] += 1;
    }
    let diag: usize = (0..k).map(|i| table[i][i]).sum();
    let chance: BigInt = (0..k)
        .map(|i| {
            let row: usize = table[i].iter().sum();
            let col: usize = table.iter().map(|r| r[i]).sum();
            BigInt::from(row) * BigInt::from(col)
        })
        .sum();
    let n2 = &n * &n;
    let po = BigRational::new(BigInt::from(diag), n.clone());
    let pe = BigRational::new(chance, n2);
    let one = BigRational::from_integer(BigInt::from(1));
    (po - &pe) / (one - pe)
}

/// Expand a 2×2 table `[[a, b], [c, d]]` (rows rater 1, columns rater 2)
/// into paired label sequences.
pub fn pairs_from_table(t: [[usize; 2]; 2]) -> (Vec<usize>, Vec<usize>) {
    let mut x = Vec::new();
    let mut y = Vec::new();
    for (i, row) in t.iter().enumerate() {
        for (j, &count) in row.iter().enumerate() {
            x.extend(std::iter::repeat(i).take(count));
            y.extend(std::iter::repeat(j).take(count));
        }
    }
    (x, y)
}
