//! Longitudinal cohort of authors admitted on detected nonmedical-use posts.
//!
//! Raw author handles never leave this module: members are keyed by a
//! salted SHA-256 of the author id, and timeline posts carry the member id
//! in place of the author.
//!
//! Persistence is a directory holding `events.jsonl` (append-only, one
//! event per line, strictly increasing `seq`) and `snapshot.json` (the
//! compacted state up to some `seq`). Opening replays every event newer
//! than the snapshot. Both files carry `format`/`version` markers.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};

use crate::annotation::LabelClass;
use crate::classify::Prediction;
use crate::corpus::{normalize, PostRecord};
use crate::{sha256_hex, Error, Exec, Result};

pub const STORE_FORMAT: &str = "toxipipe-cohort";
pub const STORE_VERSION: u32 = 1;

/// Salted author hashing.
#[derive(Debug, Clone)]
pub struct MemberHasher {
    salt: String,
}

impl MemberHasher {
    pub fn new(salt: impl Into<String>) -> Self {
        MemberHasher { salt: salt.into() }
    }

    pub fn member_id(&self, author_id: &str) -> String {
        sha256_hex(format!("member\0{}\0{author_id}", self.salt))
    }

    /// Independent second digest used to detect member-id collisions.
    fn check(&self, author_id: &str) -> String {
        sha256_hex(format!("check\0{}\0{author_id}", self.salt))
    }

    /// Identifies the salt without revealing it.
    pub fn fingerprint(&self) -> String {
        sha256_hex(format!("fingerprint\0{}", self.salt))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MemberStatus {
    Active,
    ExcludedBot,
    ExcludedManual,
}

/// A manual decision that bot filtering must not override.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ManualOverride {
    Keep,
    Exclude,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortMember {
    pub member_id: String,
    pub admitted_at: DateTime<Utc>,
    pub admitting_post_id: String,
    pub admitting_score: f64,
    pub bot_score: Option<f64>,
    pub status: MemberStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manual_override: Option<ManualOverride>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum AdmissionPolicy {
    #[default]
    Argmax,
    Threshold { t: f64 },
}

impl AdmissionPolicy {
    /// The nonmedical-use score if `pred` qualifies under this policy.
    pub fn qualifies(&self, pred: &Prediction) -> Option<f64> {
        let s = pred.scores.get(LabelClass::NonmedicalUse);
        let ok = match *self {
            AdmissionPolicy::Argmax => pred.argmax == LabelClass::NonmedicalUse,
            AdmissionPolicy::Threshold { t } => s >= t,
        };
        ok.then_some(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdmitOutcome {
    Admitted,
    EvidenceUpdated,
    Unchanged,
    NotQualified,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timeline {
    pub member_id: String,
    /// Sorted by `(created_at, post_id)`, unique post ids. `author_id`
    /// holds the member id.
    pub posts: Vec<PostRecord>,
    /// `None` until the first recollection.
    pub last_collected_at: Option<DateTime<Utc>>,
}

impl Timeline {
    pub fn new(member_id: impl Into<String>) -> Self {
        Timeline { member_id: member_id.into(), posts: Vec::new(), last_collected_at: None }
    }

    pub fn is_sorted_unique(&self) -> bool {
        let mut ids = HashSet::new();
        self.posts.iter().all(|p| ids.insert(p.post_id.as_str()))
            && self
                .posts
                .windows(2)
                .all(|w| (w[0].created_at, &w[0].post_id) < (w[1].created_at, &w[1].post_id))
    }
}

fn pseudonymize(post: &PostRecord, member_id: &str) -> PostRecord {
    PostRecord { author_id: member_id.to_string(), ..post.clone() }
}

/// Union `new_posts` into `existing` by post id; on conflict the existing
/// record wins. `last_collected_at` advances to the latest of its previous
/// value, `now` and the newest post.
pub fn merge_timeline(
    existing: &Timeline,
    new_posts: &[PostRecord],
    hasher: &MemberHasher,
    now: DateTime<Utc>,
) -> Result<Timeline> {
    let mut seen: HashSet<String> = existing.posts.iter().map(|p| p.post_id.clone()).collect();
    let mut posts = existing.posts.clone();
    for p in new_posts {
        if p.author_id != existing.member_id && hasher.member_id(&p.author_id) != existing.member_id {
            return Err(Error::Contract(format!(
                "post {} does not belong to member {}",
                p.post_id, existing.member_id
            )));
        }
        // Within one batch the first occurrence of an id wins too.
        if seen.insert(p.post_id.clone()) {
            posts.push(pseudonymize(p, &existing.member_id));
        }
    }
    posts.sort_by(|a, b| (a.created_at, &a.post_id).cmp(&(b.created_at, &b.post_id)));
    let newest = posts.last().map(|p| p.created_at);
    let last = [existing.last_collected_at, Some(now), newest].into_iter().flatten().max();
    Ok(Timeline { member_id: existing.member_id.clone(), posts, last_collected_at: last })
}

/// Bot heuristic cutoffs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BotConfig {
    pub min_posts: usize,
    pub max_posts_per_day: f64,
    pub max_duplicate_ratio: f64,
    pub max_url_ratio: f64,
    pub min_gap_cv: f64,
    pub min_gaps: usize,
}

impl Default for BotConfig {
    fn default() -> Self {
        BotConfig {
            min_posts: 10,
            max_posts_per_day: 50.0,
            max_duplicate_ratio: 0.5,
            max_url_ratio: 0.8,
            min_gap_cv: 0.1,
            min_gaps: 20,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BotFlags {
    pub high_rate: bool,
    pub duplicate_text: bool,
    pub url_heavy: bool,
    pub regular_intervals: bool,
}

impl BotFlags {
    pub fn count(&self) -> usize {
        [self.high_rate, self.duplicate_text, self.url_heavy, self.regular_intervals]
            .into_iter()
            .filter(|f| *f)
            .count()
    }

    pub fn score(&self) -> f64 {
        self.count() as f64 / 4.0
    }
}

/// Flags for a timeline, or `None` below `min_posts`.
pub fn bot_flags(timeline: &Timeline, cfg: &BotConfig) -> Option<BotFlags> {
    let posts = &timeline.posts;
    let n = posts.len();
    if n < cfg.min_posts.max(1) {
        return None;
    }
    let span_days = (posts[n - 1].created_at - posts[0].created_at).num_milliseconds() as f64 / 86_400_000.0;
    let rate = n as f64 / span_days.max(1.0);

    let normalized: Vec<String> = posts.iter().map(|p| normalize(&p.text)).collect();
    let mut seen = HashSet::new();
    let dups = normalized.iter().filter(|t| !seen.insert(t.as_str())).count();
    let urls = normalized.iter().filter(|t| t.contains("<url>")).count();

    let gaps: Vec<f64> = posts
        .windows(2)
        .map(|w| (w[1].created_at - w[0].created_at).num_milliseconds() as f64 / 1000.0)
        .collect();
    let regular = gaps.len() >= cfg.min_gaps && {
        let mean = gaps.iter().sum::<f64>() / gaps.len() as f64;
        if mean == 0.0 {
            true
        } else {
            let var = gaps.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / gaps.len() as f64;
            var.sqrt() / mean < cfg.min_gap_cv
        }
    };

    Some(BotFlags {
        high_rate: rate > cfg.max_posts_per_day,
        duplicate_text: dups as f64 / n as f64 > cfg.max_duplicate_ratio,
        url_heavy: urls as f64 / n as f64 > cfg.max_url_ratio,
        regular_intervals: regular,
    })
}

/// Mean of the four binary flags, `None` below `min_posts`.
pub fn bot_score(timeline: &Timeline, cfg: &BotConfig) -> Option<f64> {
    bot_flags(timeline, cfg).map(|f| f.score())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BotExclusion {
    pub member_id: String,
    pub bot_score: f64,
    pub flags: BotFlags,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BotReport {
    pub threshold: f64,
    pub scored: usize,
    pub unscored: usize,
    pub skipped_manual: usize,
    /// Every member excluded as a bot after this pass.
    pub excluded: Vec<BotExclusion>,
    pub newly_excluded: usize,
    pub restored: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RecollectStats {
    pub due: usize,
    pub merged_posts: usize,
    pub members_with_new_posts: usize,
}

/// Counts only, safe to publish.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CohortSummary {
    pub members: usize,
    pub active: usize,
    pub excluded_bot: usize,
    pub excluded_manual: usize,
    pub timeline_posts: usize,
    /// Cumulative admitted members by `YYYY-MM` of admission.
    pub size_by_month: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum CohortEvent {
    Admit { seq: u64, member: CohortMember, check: String, post: PostRecord },
    Evidence { seq: u64, member_id: String, post_id: String, score: f64 },
    Merge { seq: u64, member_id: String, posts: Vec<PostRecord>, collected_at: DateTime<Utc> },
    Status {
        seq: u64,
        member_id: String,
        status: MemberStatus,
        bot_score: Option<f64>,
        manual_override: Option<ManualOverride>,
    },
}

impl CohortEvent {
    pub fn seq(&self) -> u64 {
        match self {
            CohortEvent::Admit { seq, .. }
            | CohortEvent::Evidence { seq, .. }
            | CohortEvent::Merge { seq, .. }
            | CohortEvent::Status { seq, .. } => *seq,
        }
    }
}

/// In-memory cohort state. Every mutation is journalled as a
/// [`CohortEvent`] so a [`CohortStore`] can persist it.
#[derive(Debug, Clone)]
pub struct Cohort {
    hasher: MemberHasher,
    members: BTreeMap<String, CohortMember>,
    timelines: BTreeMap<String, Timeline>,
    checks: HashMap<String, String>,
    seq: u64,
    journal: Vec<CohortEvent>,
}

impl Cohort {
    pub fn new(salt: impl Into<String>) -> Self {
        Cohort {
            hasher: MemberHasher::new(salt),
            members: BTreeMap::new(),
            timelines: BTreeMap::new(),
            checks: HashMap::new(),
            seq: 0,
            journal: Vec::new(),
        }
    }

    pub fn hasher(&self) -> &MemberHasher {
        &self.hasher
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn members(&self) -> impl Iterator<Item = &CohortMember> {
        self.members.values()
    }

    pub fn member(&self, member_id: &str) -> Option<&CohortMember> {
        self.members.get(member_id)
    }

    pub fn timeline(&self, member_id: &str) -> Option<&Timeline> {
        self.timelines.get(member_id)
    }

    pub fn member_for_author(&self, author_id: &str) -> Option<&CohortMember> {
        self.members.get(&self.hasher.member_id(author_id))
    }

    pub fn take_events(&mut self) -> Vec<CohortEvent> {
        std::mem::take(&mut self.journal)
    }

    fn record(&mut self, event: CohortEvent) -> Result<()> {
        self.apply(&event)?;
        self.journal.push(event);
        Ok(())
    }

    fn next_seq(&self) -> u64 {
        self.seq + 1
    }

    fn apply(&mut self, event: &CohortEvent) -> Result<()> {
        if event.seq() <= self.seq {
            return Err(Error::Format {
                path: None,
                line: None,
                message: format!("cohort event seq {} is not after {}", event.seq(), self.seq),
            });
        }
        let missing = |id: &str| Error::NotFound(format!("cohort member {id}"));
        match event {
            CohortEvent::Admit { member, check, post, .. } => {
                if let Some(prev) = self.checks.get(&member.member_id) {
                    if prev != check {
                        return Err(Error::Contract(format!("member id collision on {}", member.member_id)));
                    }
                }
                self.checks.insert(member.member_id.clone(), check.clone());
                let mut tl = Timeline::new(member.member_id.clone());
                tl.posts.push(post.clone());
                self.timelines.insert(member.member_id.clone(), tl);
                self.members.insert(member.member_id.clone(), member.clone());
            }
            CohortEvent::Evidence { member_id, post_id, score, .. } => {
                let m = self.members.get_mut(member_id).ok_or_else(|| missing(member_id))?;
                m.admitting_post_id = post_id.clone();
                m.admitting_score = *score;
            }
            CohortEvent::Merge { member_id, posts, collected_at, .. } => {
                let tl = self.timelines.get(member_id).ok_or_else(|| missing(member_id))?;
                let merged = merge_timeline(tl, posts, &self.hasher, *collected_at)?;
                self.timelines.insert(member_id.clone(), merged);
            }
            CohortEvent::Status { member_id, status, bot_score, manual_override, .. } => {
                let m = self.members.get_mut(member_id).ok_or_else(|| missing(member_id))?;
                m.status = *status;
                m.bot_score = *bot_score;
                m.manual_override = *manual_override;
            }
        }
        self.seq = event.seq();
        Ok(())
    }

    /// Admit the author of `post` if `pred` qualifies. An existing member's
    /// evidence is replaced only by a strictly higher score.
    pub fn admit(
        &mut self,
        pred: &Prediction,
        post: &PostRecord,
        policy: AdmissionPolicy,
        now: DateTime<Utc>,
    ) -> Result<AdmitOutcome> {
        if pred.post_id != post.post_id {
            return Err(Error::Contract(format!(
                "prediction for {} paired with post {}",
                pred.post_id, post.post_id
            )));
        }
        let Some(score) = policy.qualifies(pred) else {
            return Ok(AdmitOutcome::NotQualified);
        };
        let member_id = self.hasher.member_id(&post.author_id);
        let check = self.hasher.check(&post.author_id);
        if let Some(prev) = self.checks.get(&member_id) {
            if *prev != check {
                return Err(Error::Contract(format!("member id collision on {member_id}")));
            }
        }
        match self.members.get(&member_id) {
            Some(m) if score > m.admitting_score => {
                let ev = CohortEvent::Evidence {
                    seq: self.next_seq(),
                    member_id,
                    post_id: post.post_id.clone(),
                    score,
                };
                self.record(ev)?;
                Ok(AdmitOutcome::EvidenceUpdated)
            }
            Some(_) => Ok(AdmitOutcome::Unchanged),
            None => {
                let member = CohortMember {
                    member_id: member_id.clone(),
                    admitted_at: now,
                    admitting_post_id: post.post_id.clone(),
                    admitting_score: score,
                    bot_score: None,
                    status: MemberStatus::Active,
                    manual_override: None,
                };
                let ev = CohortEvent::Admit {
                    seq: self.next_seq(),
                    post: pseudonymize(post, &member_id),
                    member,
                    check,
                };
                self.record(ev)?;
                Ok(AdmitOutcome::Admitted)
            }
        }
    }

    /// Active members whose last collection is at least `interval_days`
    /// before `now`, never-collected members first, then oldest first.
    pub fn due_for_recollection(&self, now: DateTime<Utc>, interval_days: i64) -> Vec<&Timeline> {
        let interval = Duration::days(interval_days);
        let mut due: Vec<&Timeline> = self
            .members
            .values()
            .filter(|m| m.status == MemberStatus::Active)
            .filter_map(|m| self.timelines.get(&m.member_id))
            .filter(|t| t.last_collected_at.map_or(true, |last| now - last >= interval))
            .collect();
        due.sort_by(|a, b| (a.last_collected_at, &a.member_id).cmp(&(b.last_collected_at, &b.member_id)));
        due
    }

    /// Merge newly collected posts into one member's timeline.
    pub fn merge(&mut self, member_id: &str, posts: &[PostRecord], now: DateTime<Utc>) -> Result<usize> {
        let tl = self.timelines.get(member_id).ok_or_else(|| Error::NotFound(format!("cohort member {member_id}")))?;
        let before = tl.posts.len();
        // Validate before journalling.
        merge_timeline(tl, posts, &self.hasher, now)?;
        let posts = posts.iter().map(|p| pseudonymize(p, member_id)).collect();
        let ev = CohortEvent::Merge { seq: self.next_seq(), member_id: member_id.to_string(), posts, collected_at: now };
        self.record(ev)?;
        Ok(self.timelines[member_id].posts.len() - before)
    }

    /// Recollect every due member from a pool of posts (any authors).
    /// Per-member merges are computed with `exec` and applied in member
    /// order.
    pub fn recollect(
        &mut self,
        pool: &[PostRecord],
        now: DateTime<Utc>,
        interval_days: i64,
        exec: Exec,
    ) -> Result<RecollectStats> {
        let due: Vec<String> = self.due_for_recollection(now, interval_days).iter().map(|t| t.member_id.clone()).collect();
        let wanted: HashSet<&str> = due.iter().map(String::as_str).collect();
        let mut by_member: HashMap<String, Vec<PostRecord>> = HashMap::new();
        let hashed = exec.map(pool, |p| self.hasher.member_id(&p.author_id));
        for (p, mid) in pool.iter().zip(hashed) {
            if wanted.contains(mid.as_str()) {
                by_member.entry(mid).or_default().push(p.clone());
            }
        }
        let mut stats = RecollectStats { due: due.len(), ..Default::default() };
        for mid in &due {
            let posts = by_member.remove(mid).unwrap_or_default();
            let added = self.merge(mid, &posts, now)?;
            stats.merged_posts += added;
            stats.members_with_new_posts += usize::from(added > 0);
        }
        Ok(stats)
    }

    /// Score every member (except manual overrides) and move those at or
    /// above `threshold` to `ExcludedBot`. Members previously excluded as
    /// bots who now score below the threshold are restored.
    pub fn filter_bots(&mut self, threshold: f64, cfg: &BotConfig, exec: Exec) -> Result<BotReport> {
        if !threshold.is_finite() || threshold < 0.0 {
            return Err(Error::Contract(format!("bot threshold must be a finite non-negative number, got {threshold}")));
        }
        let candidates: Vec<(&CohortMember, &Timeline)> = self
            .members
            .values()
            .filter(|m| m.manual_override.is_none() && m.status != MemberStatus::ExcludedManual)
            .filter_map(|m| self.timelines.get(&m.member_id).map(|t| (m, t)))
            .collect();
        let flags = exec.map(&candidates, |(_, t)| bot_flags(t, cfg));
        let mut report = BotReport {
            threshold,
            skipped_manual: self.members.len() - candidates.len(),
            ..Default::default()
        };
        let mut updates = Vec::new();
        for ((m, _), f) in candidates.iter().zip(flags) {
            let score = f.map(|f| f.score());
            let status = match score {
                Some(s) if s >= threshold => MemberStatus::ExcludedBot,
                _ => MemberStatus::Active,
            };
            match f {
                Some(f) => {
                    report.scored += 1;
                    if status == MemberStatus::ExcludedBot {
                        report.excluded.push(BotExclusion { member_id: m.member_id.clone(), bot_score: f.score(), flags: f });
                    }
                }
                None => report.unscored += 1,
            }
            if status != m.status {
                if status == MemberStatus::ExcludedBot {
                    report.newly_excluded += 1;
                } else {
                    report.restored += 1;
                }
            }
            if status != m.status || score != m.bot_score {
                updates.push((m.member_id.clone(), status, score));
            }
        }
        for (member_id, status, bot_score) in updates {
            let ev = CohortEvent::Status { seq: self.next_seq(), member_id, status, bot_score, manual_override: None };
            self.record(ev)?;
        }
        Ok(report)
    }

    /// Set or clear a manual decision for one member.
    pub fn set_override(&mut self, member_id: &str, decision: Option<ManualOverride>) -> Result<()> {
        let m = self.members.get(member_id).ok_or_else(|| Error::NotFound(format!("cohort member {member_id}")))?;
        let status = match decision {
            Some(ManualOverride::Exclude) => MemberStatus::ExcludedManual,
            Some(ManualOverride::Keep) | None => MemberStatus::Active,
        };
        let ev = CohortEvent::Status {
            seq: self.next_seq(),
            member_id: member_id.to_string(),
            status,
            bot_score: m.bot_score,
            manual_override: decision,
        };
        self.record(ev)
    }

    pub fn summary(&self) -> CohortSummary {
        let mut s = CohortSummary { members: self.members.len(), ..Default::default() };
        let mut monthly: BTreeMap<String, usize> = BTreeMap::new();
        for m in self.members.values() {
            match m.status {
                MemberStatus::Active => s.active += 1,
                MemberStatus::ExcludedBot => s.excluded_bot += 1,
                MemberStatus::ExcludedManual => s.excluded_manual += 1,
            }
            *monthly.entry(m.admitted_at.format("%Y-%m").to_string()).or_default() += 1;
        }
        let mut total = 0;
        for (month, n) in monthly {
            total += n;
            s.size_by_month.insert(month, total);
        }
        s.timeline_posts = self.timelines.values().map(|t| t.posts.len()).sum();
        s
    }

    /// Member ids of active members, for statistics restricted to them.
    pub fn active_ids(&self) -> HashSet<&str> {
        self.members
            .values()
            .filter(|m| m.status == MemberStatus::Active)
            .map(|m| m.member_id.as_str())
            .collect()
    }
}

#[derive(Serialize, Deserialize)]
struct Snapshot {
    format: String,
    version: u32,
    salt_fingerprint: String,
    seq: u64,
    members: Vec<CohortMember>,
    timelines: Vec<Timeline>,
    checks: BTreeMap<String, String>,
}

/// A cohort bound to a directory on disk.
#[derive(Debug)]
pub struct CohortStore {
    dir: PathBuf,
    pub cohort: Cohort,
}

impl CohortStore {
    const EVENTS: &'static str = "events.jsonl";
    const SNAPSHOT: &'static str = "snapshot.json";

    /// Open or create the store in `dir`. Fails if the directory was
    /// written with a different salt.
    pub fn open(dir: impl AsRef<Path>, salt: &str) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let mut cohort = Cohort::new(salt);
        let fp = cohort.hasher.fingerprint();

        let snap_path = dir.join(Self::SNAPSHOT);
        if snap_path.exists() {
            let text = fs::read_to_string(&snap_path).map_err(|e| Error::io(&snap_path, e))?;
            let snap: Snapshot = serde_json::from_str(&text).map_err(|e| Error::Format {
                path: Some(snap_path.clone()),
                line: None,
                message: e.to_string(),
            })?;
            if snap.format != STORE_FORMAT || snap.version != STORE_VERSION {
                return Err(Error::Format {
                    path: Some(snap_path),
                    line: None,
                    message: format!("unsupported snapshot {} v{}", snap.format, snap.version),
                });
            }
            if snap.salt_fingerprint != fp {
                return Err(Error::Config(format!("cohort store {} was created with a different salt", dir.display())));
            }
            cohort.seq = snap.seq;
            cohort.members = snap.members.into_iter().map(|m| (m.member_id.clone(), m)).collect();
            cohort.timelines = snap.timelines.into_iter().map(|t| (t.member_id.clone(), t)).collect();
            cohort.checks = snap.checks.into_iter().collect();
        }

        let log_path = dir.join(Self::EVENTS);
        if log_path.exists() {
            let f = File::open(&log_path).map_err(|e| Error::io(&log_path, e))?;
            for (i, line) in BufReader::new(f).lines().enumerate() {
                let line = line.map_err(|e| Error::io(&log_path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                if i == 0 {
                    let header: LogHeader = serde_json::from_str(&line)
                        .map_err(|e| Error::format_at(1, e.to_string()).with_path(&log_path))?;
                    if header.format != STORE_FORMAT || header.version != STORE_VERSION {
                        return Err(Error::format_at(1, "unsupported event log header").with_path(&log_path));
                    }
                    if header.salt_fingerprint != fp {
                        return Err(Error::Config(format!(
                            "cohort store {} was created with a different salt",
                            dir.display()
                        )));
                    }
                    continue;
                }
                let ev: CohortEvent = serde_json::from_str(&line)
                    .map_err(|e| Error::format_at(i + 1, e.to_string()).with_path(&log_path))?;
                if ev.seq() <= cohort.seq {
                    continue; // already folded into the snapshot
                }
                cohort.apply(&ev).map_err(|e| match e {
                    Error::Format { message, .. } => Error::format_at(i + 1, message).with_path(&log_path),
                    other => other,
                })?;
            }
        }
        Ok(CohortStore { dir, cohort })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Append journalled events to the log.
    pub fn save(&mut self) -> Result<usize> {
        let events = self.cohort.take_events();
        if events.is_empty() {
            return Ok(0);
        }
        let path = self.dir.join(Self::EVENTS);
        let fresh = !path.exists();
        let f = OpenOptions::new().create(true).append(true).open(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = std::io::BufWriter::new(f);
        if fresh {
            let header = LogHeader {
                format: STORE_FORMAT.into(),
                version: STORE_VERSION,
                salt_fingerprint: self.cohort.hasher.fingerprint(),
            };
            serde_json::to_writer(&mut w, &header)?;
            w.write_all(b"\n").map_err(|e| Error::io(&path, e))?;
        }
        for ev in &events {
            serde_json::to_writer(&mut w, ev)?;
            w.write_all(b"\n").map_err(|e| Error::io(&path, e))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        Ok(events.len())
    }

    /// Write a snapshot of the current state and truncate the event log.
    pub fn compact(&mut self) -> Result<()> {
        self.save()?;
        let snap = Snapshot {
            format: STORE_FORMAT.into(),
            version: STORE_VERSION,
            salt_fingerprint: self.cohort.hasher.fingerprint(),
            seq: self.cohort.seq,
            members: self.cohort.members.values().cloned().collect(),
            timelines: self.cohort.timelines.values().cloned().collect(),
            checks: self.cohort.checks.iter().map(|(k, v)| (k.clone(), v.clone())).collect(),
        };
        let tmp = self.dir.join("snapshot.json.tmp");
        let path = self.dir.join(Self::SNAPSHOT);
        fs::write(&tmp, serde_json::to_vec(&snap)?).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))?;
        let log = self.dir.join(Self::EVENTS);
        if log.exists() {
            fs::remove_file(&log).map_err(|e| Error::io(&log, e))?;
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct LogHeader {
    format: String,
    version: u32,
    salt_fingerprint: String,
}
