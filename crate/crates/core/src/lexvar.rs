//! Lexical-variant (misspelling) generation.
//!
//! Variants of a seed term are discovered by a breadth-first walk over the
//! embedding space: each frontier term contributes its nearest neighbours by
//! cosine, and a neighbour is kept only if it is both semantically close to
//! the term that surfaced it and orthographically close to the seed.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Exec, Result};

/// Immutable token → vector table.
#[derive(Debug, Clone)]
pub struct EmbeddingModel {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    vectors: Vec<f64>,
    norms: Vec<f64>,
    dimension: usize,
    duplicates: usize,
}

impl EmbeddingModel {
    /// Build a model from `(token, vector)` pairs. Later duplicates (after
    /// case folding) are ignored and counted.
    pub fn from_pairs<I, S>(pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, Vec<f64>)>,
        S: Into<String>,
    {
        let mut model = EmbeddingModel {
            tokens: Vec::new(),
            index: HashMap::new(),
            vectors: Vec::new(),
            norms: Vec::new(),
            dimension: 0,
            duplicates: 0,
        };
        for (n, (tok, vec)) in pairs.into_iter().enumerate() {
            model.push(tok.into(), vec, n + 1)?;
        }
        if model.tokens.is_empty() {
            return Err(Error::Format {
                path: None,
                line: None,
                message: "embedding model is empty".into(),
            });
        }
        Ok(model)
    }

    fn push(&mut self, token: String, vec: Vec<f64>, line: usize) -> Result<()> {
        if vec.is_empty() {
            return Err(Error::format_at(line, "token has no vector components"));
        }
        if self.dimension == 0 {
            self.dimension = vec.len();
        } else if vec.len() != self.dimension {
            return Err(Error::format_at(
                line,
                format!("expected {} values, found {}", self.dimension, vec.len()),
            ));
        }
        if vec.iter().any(|v| !v.is_finite()) {
            return Err(Error::format_at(line, "non-finite vector component"));
        }
        let key = token.to_lowercase();
        if self.index.contains_key(&key) {
            self.duplicates += 1;
            return Ok(());
        }
        self.index.insert(key, self.tokens.len());
        self.norms.push(vec.iter().map(|v| v * v).sum::<f64>().sqrt());
        self.vectors.extend_from_slice(&vec);
        self.tokens.push(token);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    /// Number of duplicate tokens dropped at load time.
    pub fn duplicates(&self) -> usize {
        self.duplicates
    }

    /// Vocabulary in load order.
    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Case-insensitive lookup.
    pub fn position(&self, token: &str) -> Option<usize> {
        self.index.get(&token.to_lowercase()).copied()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.position(token).is_some()
    }

    pub fn vector(&self, token: &str) -> Option<&[f64]> {
        self.position(token).map(|i| self.row(i))
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.vectors[i * self.dimension..(i + 1) * self.dimension]
    }

    /// Cosine between two vocabulary rows; `None` when either has zero norm.
    fn row_cosine(&self, i: usize, j: usize) -> Option<f64> {
        let (ni, nj) = (self.norms[i], self.norms[j]);
        if ni == 0.0 || nj == 0.0 {
            return None;
        }
        let dot: f64 = self.row(i).iter().zip(self.row(j)).map(|(a, b)| a * b).sum();
        Some((dot / (ni * nj)).clamp(-1.0, 1.0))
    }

    /// Top `k` neighbours of row `i` by cosine, excluding `i` itself and
    /// zero-norm rows. Ties are broken by lexicographic token order.
    pub fn nearest(&self, token: &str, k: usize) -> Vec<(String, f64)> {
        match self.position(token) {
            Some(i) => self
                .nearest_rows(i, k)
                .into_iter()
                .map(|(j, c)| (self.tokens[j].clone(), c))
                .collect(),
            None => Vec::new(),
        }
    }

    fn nearest_rows(&self, i: usize, k: usize) -> Vec<(usize, f64)> {
        let mut scored: Vec<(usize, f64)> = (0..self.len())
            .filter(|&j| j != i)
            .filter_map(|j| self.row_cosine(i, j).map(|c| (j, c)))
            .collect();
        scored.sort_by(|a, b| {
            b.1.total_cmp(&a.1)
                .then_with(|| self.tokens[a.0].cmp(&self.tokens[b.0]))
        });
        scored.truncate(k);
        scored
    }
}

/// Load a whitespace-separated embedding file.
///
/// An optional first line `vocab_size dimension` is recognised when it has
/// exactly two fields that both parse as unsigned integers.
pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingModel> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_embeddings(BufReader::new(file)).map_err(|e| e.with_path(path))
}

pub fn read_embeddings(reader: impl BufRead) -> Result<EmbeddingModel> {
    let mut model = EmbeddingModel {
        tokens: Vec::new(),
        index: HashMap::new(),
        vectors: Vec::new(),
        norms: Vec::new(),
        dimension: 0,
        duplicates: 0,
    };
    for (n, line) in reader.lines().enumerate() {
        let lineno = n + 1;
        let line = line.map_err(|e| Error::format_at(lineno, e.to_string()))?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if lineno == 1 && fields.len() == 2 {
            if let (Ok(_), Ok(dim)) = (fields[0].parse::<usize>(), fields[1].parse::<usize>()) {
                if dim == 0 {
                    return Err(Error::format_at(1, "header declares dimension 0"));
                }
                model.dimension = dim;
                continue;
            }
        }
        let values = fields[1..]
            .iter()
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::format_at(lineno, format!("bad number: {e}")))?;
        model.push(fields[0].to_string(), values, lineno)?;
    }
    if model.tokens.is_empty() {
        return Err(Error::Format {
            path: None,
            line: None,
            message: "embedding file contains no vectors".into(),
        });
    }
    if model.duplicates > 0 {
        tracing::warn!(duplicates = model.duplicates, "duplicate embedding tokens ignored");
    }
    Ok(model)
}

/// Cosine similarity. Rejects mismatched dimensions and zero-norm input.
pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::Contract(format!(
            "cosine of vectors with dimensions {} and {}",
            u.len(),
            v.len()
        )));
    }
    let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::Domain("cosine of a zero-norm vector".into()));
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0))
}

/// Edit distance over Unicode scalar values.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// `1 - levenshtein(a, b) / max(|a|, |b|)`, lengths in characters.
pub fn lexical_similarity(a: &str, b: &str) -> Result<f64> {
    let longest = a.chars().count().max(b.chars().count());
    if longest == 0 {
        return Err(Error::Domain("lexical similarity of two empty strings".into()));
    }
    Ok(1.0 - levenshtein(a, b) as f64 / longest as f64)
}

/// Thresholds for the recursive expansion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExpansionConfig {
    /// Minimum cosine between a candidate and the term that surfaced it.
    pub theta_sem: f64,
    /// Minimum lexical similarity between a candidate and the seed.
    pub theta_lex: f64,
    pub max_depth: usize,
    /// Neighbours examined per frontier term.
    pub max_neighbors: usize,
    /// Multi-word phrases: maximum number of tokens replaced in one variant.
    pub max_altered_tokens: usize,
}

impl Default for ExpansionConfig {
    fn default() -> Self {
        ExpansionConfig {
            theta_sem: 0.70,
            theta_lex: 0.65,
            max_depth: 3,
            max_neighbors: 50,
            max_altered_tokens: 1,
        }
    }
}

impl ExpansionConfig {
    /// `theta_sem` may exceed 1 to express an unsatisfiable threshold; it
    /// must not be NaN or below -1.
    pub fn validate(&self) -> Result<()> {
        if self.theta_sem.is_nan() || self.theta_sem < -1.0 {
            return Err(Error::Config(format!("theta_sem {} must be >= -1", self.theta_sem)));
        }
        if !(0.0..=1.0).contains(&self.theta_lex) {
            return Err(Error::Config(format!("theta_lex {} outside [0, 1]", self.theta_lex)));
        }
        if self.max_neighbors == 0 {
            return Err(Error::Config("max_neighbors must be at least 1".into()));
        }
        Ok(())
    }
}

/// One accepted variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Variant {
    pub token: String,
    /// The frontier term whose neighbour list surfaced this variant.
    pub parent: String,
    pub cosine_to_parent: f64,
    pub lexical_similarity: f64,
    pub depth: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct VariantSet {
    pub seed: String,
    /// Accepted variants in discovery order.
    pub variants: Vec<Variant>,
    /// Set when the seed (or, for phrases, some token) is absent from the model.
    pub not_in_vocabulary: bool,
}

impl VariantSet {
    pub fn tokens(&self) -> Vec<&str> {
        self.variants.iter().map(|v| v.token.as_str()).collect()
    }

    pub fn len(&self) -> usize {
        self.variants.len()
    }

    pub fn is_empty(&self) -> bool {
        self.variants.is_empty()
    }
}

/// Breadth-first variant expansion of a single token.
pub fn expand_term(seed: &str, model: &EmbeddingModel, config: &ExpansionConfig) -> VariantSet {
    let mut out = VariantSet {
        seed: seed.to_string(),
        ..Default::default()
    };
    let Some(seed_row) = model.position(seed) else {
        out.not_in_vocabulary = true;
        return out;
    };
    let seed_key = seed.to_lowercase();
    let mut accepted: HashSet<usize> = HashSet::new();
    let mut frontier = vec![seed_row];
    for depth in 1..=config.max_depth {
        let mut next = Vec::new();
        for &term in &frontier {
            for (cand, cos) in model.nearest_rows(term, config.max_neighbors) {
                if cand == seed_row || accepted.contains(&cand) || cos < config.theta_sem {
                    continue;
                }
                let cand_key = model.tokens[cand].to_lowercase();
                let lex = lexical_similarity(&cand_key, &seed_key).unwrap_or(0.0);
                if lex < config.theta_lex {
                    continue;
                }
                accepted.insert(cand);
                next.push(cand);
                out.variants.push(Variant {
                    token: model.tokens[cand].clone(),
                    parent: model.tokens[term].clone(),
                    cosine_to_parent: cos,
                    lexical_similarity: lex,
                    depth,
                });
            }
        }
        if next.is_empty() {
            break;
        }
        frontier = next;
    }
    out
}

/// Variants of a multi-token phrase, built by substituting per-token variants.
///
/// Each output variant alters between 1 and `max_altered_tokens` positions.
/// Its `lexical_similarity` is the minimum over positions (unaltered
/// positions count as 1), `cosine_to_parent` the minimum over altered
/// positions and `depth` the maximum over altered positions.
pub fn expand_multiword(
    phrase: &[&str],
    model: &EmbeddingModel,
    config: &ExpansionConfig,
) -> Result<VariantSet> {
    if phrase.len() < 2 {
        return Err(Error::Contract(
            "expand_multiword needs at least two tokens; use expand_term for single tokens".into(),
        ));
    }
    let per_token: Vec<VariantSet> = phrase.iter().map(|t| expand_term(t, model, config)).collect();
    let mut out = VariantSet {
        seed: phrase.join(" "),
        not_in_vocabulary: per_token.iter().any(|v| v.not_in_vocabulary),
        ..Default::default()
    };
    let max_alter = config.max_altered_tokens.min(phrase.len());
    // Enumerate position subsets of size 1..=max_alter in lexicographic order,
    // then the Cartesian product of variants over the chosen positions.
    for size in 1..=max_alter {
        for positions in combinations(phrase.len(), size) {
            if positions.iter().any(|&p| per_token[p].is_empty()) {
                continue;
            }
            let mut choice = vec![0usize; size];
            'odometer: loop {
                let mut words: Vec<&str> = phrase.to_vec();
                let mut lex = 1.0f64;
                let mut cos = f64::INFINITY;
                let mut depth = 0;
                for (k, &p) in positions.iter().enumerate() {
                    let v = &per_token[p].variants[choice[k]];
                    words[p] = &v.token;
                    lex = lex.min(v.lexical_similarity);
                    cos = cos.min(v.cosine_to_parent);
                    depth = depth.max(v.depth);
                }
                out.variants.push(Variant {
                    token: words.join(" "),
                    parent: out.seed.clone(),
                    cosine_to_parent: cos,
                    lexical_similarity: lex,
                    depth,
                });
                let mut k = size;
                while k > 0 {
                    k -= 1;
                    choice[k] += 1;
                    if choice[k] < per_token[positions[k]].len() {
                        continue 'odometer;
                    }
                    choice[k] = 0;
                }
                break;
            }
        }
    }
    Ok(out)
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, k, &mut Vec::new(), &mut out);
    out
}

/// Percentage increase in hits from lexicon expansion.
pub fn retrieval_gain(baseline_hits: u64, expanded_hits: u64) -> Result<f64> {
    if baseline_hits == 0 {
        return Err(Error::Domain("retrieval gain with zero baseline hits".into()));
    }
    if expanded_hits < baseline_hits {
        return Err(Error::Contract(format!(
            "expanded hits {expanded_hits} below baseline {baseline_hits}"
        )));
    }
    Ok(100.0 * (expanded_hits - baseline_hits) as f64 / baseline_hits as f64)
}

/// One row of a lexicon file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LexiconEntry {
    pub seed: String,
    pub variant: String,
    pub cosine: f64,
    pub lexsim: f64,
    pub depth: usize,
}

/// Seeds and their accepted variants. Every seed is also present as its own
/// depth-0 entry, so a lexicon with no variants still matches its seeds.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Lexicon {
    entries: BTreeMap<String, Vec<LexiconEntry>>,
}

impl Lexicon {
    pub fn from_variant_sets(sets: impl IntoIterator<Item = VariantSet>) -> Self {
        let mut lex = Lexicon::default();
        for set in sets {
            lex.add_seed(&set.seed);
            for v in set.variants {
                lex.insert(LexiconEntry {
                    seed: set.seed.clone(),
                    variant: v.token,
                    cosine: v.cosine_to_parent,
                    lexsim: v.lexical_similarity,
                    depth: v.depth,
                });
            }
        }
        lex
    }

    /// Seeds only; the baseline for retrieval-gain comparisons.
    pub fn seeds_only(&self) -> Self {
        let mut lex = Lexicon::default();
        for seed in self.entries.keys() {
            lex.add_seed(seed);
        }
        lex
    }

    pub fn add_seed(&mut self, seed: &str) {
        self.insert(LexiconEntry {
            seed: seed.to_string(),
            variant: seed.to_string(),
            cosine: 1.0,
            lexsim: 1.0,
            depth: 0,
        });
    }

    pub fn insert(&mut self, entry: LexiconEntry) {
        let list = self.entries.entry(entry.seed.clone()).or_default();
        let key = entry.variant.to_lowercase();
        if !list.iter().any(|e| e.variant.to_lowercase() == key) {
            list.push(entry);
        }
    }

    pub fn seeds(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// All entries, seeds first within each seed group.
    pub fn entries(&self) -> impl Iterator<Item = &LexiconEntry> {
        self.entries.values().flatten()
    }

    pub fn len(&self) -> usize {
        self.entries.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Number of non-seed variants.
    pub fn variant_count(&self) -> usize {
        self.entries().filter(|e| e.depth > 0).count()
    }

    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        for e in self.entries() {
            wtr.serialize(e)?;
        }
        wtr.flush().map_err(|e| Error::io("<lexicon csv>", e))?;
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(f))
    }

    pub fn read_csv(r: impl std::io::Read) -> Result<Self> {
        let mut lex = Lexicon::default();
        let mut rdr = csv::Reader::from_reader(r);
        for (i, row) in rdr.deserialize::<LexiconEntry>().enumerate() {
            let e = row.map_err(|e| Error::format_at(i + 2, e.to_string()))?;
            lex.insert(e);
        }
        Ok(lex)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(BufReader::new(f)).map_err(|e| e.with_path(path))
    }
}

/// Expand every seed. Single tokens go through [`expand_term`], phrases
/// through [`expand_multiword`]. Seeds are independent and run in parallel
/// under `Exec::Parallel`.
pub fn expand_lexicon(
    seeds: &[String],
    model: &EmbeddingModel,
    config: &ExpansionConfig,
    exec: Exec,
) -> Result<Lexicon> {
    config.validate()?;
    let sets = exec.map(seeds, |seed| {
        let words: Vec<&str> = seed.split_whitespace().collect();
        if words.len() > 1 {
            expand_multiword(&words, model, config)
        } else {
            Ok(expand_term(seed.trim(), model, config))
        }
    });
    let sets = sets.into_iter().collect::<Result<Vec<_>>>()?;
    for s in sets.iter().filter(|s| s.not_in_vocabulary) {
        tracing::warn!(seed = %s.seed, "seed not in embedding vocabulary");
    }
    Ok(Lexicon::from_variant_sets(sets))
}

/// Seeds file: one seed per line, blank lines and `#` comments ignored.
pub fn load_seeds(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| l.split_whitespace().collect::<Vec<_>>().join(" "))
        .collect())
}
