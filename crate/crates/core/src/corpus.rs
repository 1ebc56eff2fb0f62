//! File-based post ingestion, text normalisation, lexicon matching and
//! deduplication.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::LazyLock;

use chrono::{DateTime, Utc};
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::lexvar::Lexicon;
use crate::text::tokens;
use crate::{Error, Exec, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Source {
    #[serde(rename = "twitter-like", alias = "twitter")]
    TwitterLike,
    #[serde(rename = "reddit-like", alias = "reddit")]
    RedditLike,
}

impl Source {
    pub fn as_str(self) -> &'static str {
        match self {
            Source::TwitterLike => "twitter-like",
            Source::RedditLike => "reddit-like",
        }
    }
}

/// One social-media post.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PostRecord {
    pub post_id: String,
    pub author_id: String,
    pub created_at: DateTime<Utc>,
    pub text: String,
    pub source: Source,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region: Option<String>,
    #[serde(default)]
    pub is_repost: bool,
}

/// Input line as it appears on disk. Reddit-like records may carry a
/// separate `title` that is folded into `text` at ingestion.
#[derive(Deserialize)]
struct RawPost {
    post_id: String,
    author_id: String,
    created_at: DateTime<Utc>,
    text: String,
    source: Source,
    #[serde(default)]
    title: Option<String>,
    #[serde(default)]
    region: Option<String>,
    #[serde(default)]
    is_repost: bool,
}

impl RawPost {
    fn into_record(self) -> std::result::Result<PostRecord, String> {
        if self.post_id.trim().is_empty() {
            return Err("empty post_id".into());
        }
        if self.created_at.timestamp() < 0 {
            return Err("created_at before 1970-01-01".into());
        }
        let text = match (self.source, self.title) {
            (Source::RedditLike, Some(title)) if !title.trim().is_empty() => {
                format!("{title}\n{}", self.text)
            }
            _ => self.text,
        };
        if text.trim().is_empty() {
            return Err("empty text".into());
        }
        Ok(PostRecord {
            post_id: self.post_id,
            author_id: self.author_id,
            created_at: self.created_at,
            text,
            source: self.source,
            region: self.region.filter(|r| !r.trim().is_empty()),
            is_repost: self.is_repost,
        })
    }
}

/// Parse one JSONL line into a record.
pub fn parse_post(line: &str) -> std::result::Result<PostRecord, String> {
    serde_json::from_str::<RawPost>(line)
        .map_err(|e| e.to_string())
        .and_then(RawPost::into_record)
}

/// Streaming JSONL reader.
///
/// Malformed lines are skipped and counted. When the input is exhausted and
/// more than half of the non-blank lines were malformed, the iterator yields
/// one final format error instead of ending quietly.
pub struct JsonlPosts<R> {
    lines: std::io::Lines<R>,
    path: Option<PathBuf>,
    lineno: usize,
    total: usize,
    skipped: usize,
    finished: bool,
}

impl<R: BufRead> JsonlPosts<R> {
    pub fn new(reader: R) -> Self {
        JsonlPosts {
            lines: reader.lines(),
            path: None,
            lineno: 0,
            total: 0,
            skipped: 0,
            finished: false,
        }
    }

    /// Non-blank lines seen so far.
    pub fn total(&self) -> usize {
        self.total
    }

    pub fn skipped(&self) -> usize {
        self.skipped
    }
}

impl<R: BufRead> Iterator for JsonlPosts<R> {
    type Item = Result<PostRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.finished {
            return None;
        }
        loop {
            match self.lines.next() {
                None => {
                    self.finished = true;
                    if self.skipped * 2 > self.total {
                        return Some(Err(Error::Format {
                            path: self.path.clone(),
                            line: None,
                            message: format!(
                                "{} of {} lines malformed; is this a post JSONL file?",
                                self.skipped, self.total
                            ),
                        }));
                    }
                    return None;
                }
                Some(Err(e)) => {
                    self.finished = true;
                    let path = self.path.clone().unwrap_or_else(|| "<input>".into());
                    return Some(Err(Error::io(path, e)));
                }
                Some(Ok(line)) => {
                    self.lineno += 1;
                    if line.trim().is_empty() {
                        continue;
                    }
                    self.total += 1;
                    match parse_post(&line) {
                        Ok(rec) => return Some(Ok(rec)),
                        Err(msg) => {
                            self.skipped += 1;
                            tracing::debug!(line = self.lineno, %msg, "skipping malformed post");
                        }
                    }
                }
            }
        }
    }
}

pub fn read_jsonl(path: impl AsRef<Path>) -> Result<JsonlPosts<BufReader<File>>> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut it = JsonlPosts::new(BufReader::new(f));
    it.path = Some(path.to_path_buf());
    Ok(it)
}

/// Read a whole file into memory, failing on the >50% malformed rule.
pub fn read_all(path: impl AsRef<Path>) -> Result<Vec<PostRecord>> {
    read_jsonl(path)?.collect()
}

static URL_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\b(?:https?://|www\.)\S+").unwrap());
static MENTION_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"@\w+").unwrap());

/// Canonical text form used for matching, dedup and features.
pub fn normalize(text: &str) -> String {
    let s = URL_RE.replace_all(text, " <url> ");
    let s = MENTION_RE.replace_all(&s, " <user> ");
    let s: String = s.chars().filter(|c| *c != '®' && *c != '™').collect();
    let s = s.to_lowercase();
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MatchedTerm {
    pub seed: String,
    /// Exact slice of the normalised text that matched.
    pub surface: String,
    /// Byte offset of `surface` in the normalised text.
    pub offset: usize,
}

impl MatchedTerm {
    /// True when the surface form is not the seed itself.
    pub fn is_variant(&self) -> bool {
        crate::text::words(&self.surface) != crate::text::words(&self.seed.to_lowercase())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedPost {
    #[serde(flatten)]
    pub post: PostRecord,
    pub matched_terms: Vec<MatchedTerm>,
}

impl MatchedPost {
    pub fn normalized_text(&self) -> String {
        normalize(&self.post.text)
    }

    pub fn has_variant_match(&self) -> bool {
        self.matched_terms.iter().any(MatchedTerm::is_variant)
    }

    pub fn has_seed_match(&self) -> bool {
        self.matched_terms.iter().any(|m| !m.is_variant())
    }
}

/// Token-boundary matcher compiled from a lexicon.
#[derive(Debug, Clone)]
pub struct Matcher {
    /// first token → (term tokens, seed)
    by_first: HashMap<String, Vec<(Vec<String>, String)>>,
}

impl Matcher {
    pub fn new(lexicon: &Lexicon) -> Result<Self> {
        if lexicon.is_empty() {
            return Err(Error::Contract("cannot match against an empty lexicon".into()));
        }
        let mut by_first: HashMap<String, Vec<(Vec<String>, String)>> = HashMap::new();
        for e in lexicon.entries() {
            let norm = normalize(&e.variant);
            let toks: Vec<String> = crate::text::words(&norm).into_iter().map(String::from).collect();
            if toks.is_empty() {
                continue;
            }
            let list = by_first.entry(toks[0].clone()).or_default();
            if !list.iter().any(|(t, s)| *t == toks && *s == e.seed) {
                list.push((toks, e.seed.clone()));
            }
        }
        Ok(Matcher { by_first })
    }

    /// All whole-token occurrences of lexicon terms in already-normalised
    /// text, ordered by offset then seed.
    pub fn find(&self, normalized: &str) -> Vec<MatchedTerm> {
        let toks = tokens(normalized);
        let mut out = Vec::new();
        for (i, t) in toks.iter().enumerate() {
            let Some(cands) = self.by_first.get(t.text) else { continue };
            for (term, seed) in cands {
                let end = i + term.len();
                if end > toks.len() {
                    continue;
                }
                if toks[i..end].iter().zip(term).all(|(a, b)| a.text == b) {
                    out.push(MatchedTerm {
                        seed: seed.clone(),
                        surface: normalized[t.start..toks[end - 1].end].to_string(),
                        offset: t.start,
                    });
                }
            }
        }
        out.sort_by(|a, b| a.offset.cmp(&b.offset).then_with(|| a.seed.cmp(&b.seed)).then_with(|| a.surface.cmp(&b.surface)));
        out.dedup();
        out
    }

    pub fn match_post(&self, post: &PostRecord) -> Option<MatchedPost> {
        let terms = self.find(&normalize(&post.text));
        (!terms.is_empty()).then(|| MatchedPost { post: post.clone(), matched_terms: terms })
    }

    /// Match a batch, preserving input order.
    pub fn match_batch(&self, posts: &[PostRecord], exec: Exec) -> Vec<MatchedPost> {
        exec.map(posts, |p| self.match_post(p)).into_iter().flatten().collect()
    }
}

/// Streaming matcher over any post iterator.
pub fn match_posts<'a, I>(posts: I, matcher: &'a Matcher) -> impl Iterator<Item = MatchedPost> + 'a
where
    I: IntoIterator<Item = PostRecord>,
    I::IntoIter: 'a,
{
    posts.into_iter().filter_map(move |p| matcher.match_post(&p))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DedupOptions {
    pub drop_reposts: bool,
    pub drop_duplicates: bool,
}

impl Default for DedupOptions {
    fn default() -> Self {
        DedupOptions { drop_reposts: true, drop_duplicates: true }
    }
}

/// Stateful, order-sensitive deduplicator.
///
/// State is one 128-bit digest per distinct (author, normalised text) pair,
/// so memory does not grow with the number of duplicate or repost lines.
#[derive(Debug, Default)]
pub struct Dedup {
    opts: DedupOptions,
    seen: HashSet<[u8; 16]>,
    dropped_reposts: usize,
    dropped_duplicates: usize,
}

impl Dedup {
    pub fn new(opts: DedupOptions) -> Self {
        Dedup { opts, ..Default::default() }
    }

    /// Returns true when `post` survives.
    pub fn admit(&mut self, post: &PostRecord) -> bool {
        if self.opts.drop_reposts && post.is_repost {
            self.dropped_reposts += 1;
            return false;
        }
        if self.opts.drop_duplicates {
            use sha2::{Digest, Sha256};
            let mut h = Sha256::new();
            h.update(post.author_id.as_bytes());
            h.update([0u8]);
            h.update(normalize(&post.text).as_bytes());
            let d = h.finalize();
            let mut key = [0u8; 16];
            key.copy_from_slice(&d[..16]);
            if !self.seen.insert(key) {
                self.dropped_duplicates += 1;
                return false;
            }
        }
        true
    }

    pub fn dropped_reposts(&self) -> usize {
        self.dropped_reposts
    }

    pub fn dropped_duplicates(&self) -> usize {
        self.dropped_duplicates
    }

    pub fn state_len(&self) -> usize {
        self.seen.len()
    }
}

/// Drop reposts and same-author repeats from a stream.
pub fn dedup<I>(posts: I, opts: DedupOptions) -> impl Iterator<Item = PostRecord>
where
    I: IntoIterator<Item = PostRecord>,
{
    let mut state = Dedup::new(opts);
    posts.into_iter().filter(move |p| state.admit(p))
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestStats {
    pub lines: usize,
    pub malformed: usize,
    pub reposts_dropped: usize,
    pub duplicates_dropped: usize,
    pub matched: usize,
    pub seed_matched: usize,
    pub variant_matched: usize,
    pub variant_only: usize,
}

/// Stream `input` through dedup and matching into a MatchedPost JSONL file.
/// Records are processed in chunks so matching can fan out under
/// `Exec::Parallel` while output order follows input order.
pub fn ingest_file(
    input: impl AsRef<Path>,
    matcher: &Matcher,
    opts: DedupOptions,
    out: impl Write,
    exec: Exec,
) -> Result<IngestStats> {
    const CHUNK: usize = 4096;
    let mut reader = read_jsonl(input)?;
    let mut dedup = Dedup::new(opts);
    let mut out = std::io::BufWriter::new(out);
    let mut stats = IngestStats::default();
    let mut chunk = Vec::with_capacity(CHUNK);
    let mut flush = |chunk: &mut Vec<PostRecord>, stats: &mut IngestStats| -> Result<()> {
        for m in matcher.match_batch(chunk, exec) {
            stats.matched += 1;
            let (seed, variant) = (m.has_seed_match(), m.has_variant_match());
            stats.seed_matched += usize::from(seed);
            stats.variant_matched += usize::from(variant);
            stats.variant_only += usize::from(variant && !seed);
            serde_json::to_writer(&mut out, &m)?;
            out.write_all(b"\n").map_err(|e| Error::io("<ingest output>", e))?;
        }
        chunk.clear();
        Ok(())
    };
    for rec in reader.by_ref() {
        let rec = rec?;
        if dedup.admit(&rec) {
            chunk.push(rec);
            if chunk.len() == CHUNK {
                flush(&mut chunk, &mut stats)?;
            }
        }
    }
    flush(&mut chunk, &mut stats)?;
    out.flush().map_err(|e| Error::io("<ingest output>", e))?;
    stats.lines = reader.total();
    stats.malformed = reader.skipped();
    stats.reposts_dropped = dedup.dropped_reposts();
    stats.duplicates_dropped = dedup.dropped_duplicates();
    Ok(stats)
}

/// Read a MatchedPost JSONL file.
pub fn read_matched(path: impl AsRef<Path>) -> Result<Vec<MatchedPost>> {
    read_jsonl_values(path)
}

pub(crate) fn read_jsonl_values<T: serde::de::DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| {
            Error::Format { path: Some(path.to_path_buf()), line: Some(i + 1), message: e.to_string() }
        })?);
    }
    Ok(out)
}

pub(crate) fn write_jsonl_values<T: Serialize>(path: impl AsRef<Path>, items: &[T]) -> Result<()> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(f);
    for it in items {
        serde_json::to_writer(&mut w, it)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
