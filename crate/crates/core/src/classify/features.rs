use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::text::words;

/// Hashed n-gram feature settings. A range with `max == 0` disables that
/// n-gram family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    /// Feature space has `2^hash_bits` slots.
    pub hash_bits: u32,
    pub word_ngram_min: usize,
    pub word_ngram_max: usize,
    pub char_ngram_min: usize,
    pub char_ngram_max: usize,
    pub hash_seed: u64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            hash_bits: 18,
            word_ngram_min: 1,
            word_ngram_max: 3,
            char_ngram_min: 2,
            char_ngram_max: 5,
            hash_seed: 0,
        }
    }
}

impl FeatureConfig {
    pub fn dimension(&self) -> usize {
        1usize << self.hash_bits
    }
}

/// Sparse vector with strictly increasing indices.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FeatureVector {
    pub entries: Vec<(u32, f64)>,
}

impl FeatureVector {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// FNV-1a, seeded by hashing the seed bytes first. Stable across platforms
/// and toolchains, which std's `DefaultHasher` is not.
fn fnv1a(seed: u64, parts: &[&[u8]]) -> u64 {
    let mut h = FNV_OFFSET;
    for b in seed.to_le_bytes().iter().chain(parts.iter().flat_map(|p| p.iter())) {
        h ^= u64::from(*b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Hash word and character n-grams of normalised text. Values are
/// `ln(1 + tf)` of the (collision-merged) slot counts.
pub fn featurize(text: &str, cfg: &FeatureConfig) -> FeatureVector {
    let mask = (cfg.dimension() - 1) as u64;
    let mut counts: BTreeMap<u32, u32> = BTreeMap::new();
    let mut bump = |h: u64| *counts.entry((h & mask) as u32).or_default() += 1;
    let toks = words(text);

    if cfg.word_ngram_max > 0 {
        for n in cfg.word_ngram_min.max(1)..=cfg.word_ngram_max {
            for win in toks.windows(n) {
                let tag = [b'w', n as u8];
                let joined = win.join(" ");
                bump(fnv1a(cfg.hash_seed, &[&tag, joined.as_bytes()]));
            }
        }
    }
    if cfg.char_ngram_max > 0 {
        for tok in &toks {
            let chars: Vec<char> = tok.chars().collect();
            for n in cfg.char_ngram_min.max(1)..=cfg.char_ngram_max {
                for win in chars.windows(n) {
                    let s: String = win.iter().collect();
                    bump(fnv1a(cfg.hash_seed, &[b"c", s.as_bytes()]));
                }
            }
        }
    }
    FeatureVector {
        entries: counts.into_iter().map(|(i, c)| (i, (1.0 + f64::from(c)).ln())).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_gives_empty_vector() {
        assert!(featurize("", &FeatureConfig::default()).is_empty());
    }

    #[test]
    fn deterministic() {
        let c = FeatureConfig::default();
        assert_eq!(featurize("took two xanax lol", &c), featurize("took two xanax lol", &c));
        let other = FeatureConfig { hash_seed: 9, ..c };
        assert_ne!(featurize("took two xanax lol", &c), featurize("took two xanax lol", &other));
    }

    #[test]
    fn single_char_bigram() {
        let c = FeatureConfig { word_ngram_max: 0, char_ngram_min: 2, char_ngram_max: 2, ..Default::default() };
        let v = featurize("ab", &c);
        assert_eq!(v.len(), 1);
        assert!((v.entries[0].1 - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn counts_are_log_scaled() {
        let c = FeatureConfig { word_ngram_min: 1, word_ngram_max: 1, char_ngram_max: 0, ..Default::default() };
        let v = featurize("pill pill pill", &c);
        assert_eq!(v.len(), 1);
        assert!((v.entries[0].1 - 4f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn indices_sorted_and_in_range() {
        let c = FeatureConfig { hash_bits: 6, ..Default::default() };
        let v = featurize("the quick brown fox jumps over the lazy dog", &c);
        assert!(v.entries.windows(2).all(|w| w[0].0 < w[1].0));
        assert!(v.entries.iter().all(|(i, x)| (*i as usize) < 64 && x.is_finite()));
    }
}
