//! Four-class annotation workflow and inter-annotator agreement.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::hash::Hash;
use std::io::Write;
use std::str::FromStr;

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};

use crate::corpus::PostRecord;
use crate::{Error, Result};

/// Annotation classes in declaration order. The order matters: argmax ties
/// resolve to the earliest class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelClass {
    NonmedicalUse,
    Consumption,
    Mention,
    Unrelated,
}

impl LabelClass {
    pub const ALL: [LabelClass; 4] = [
        LabelClass::NonmedicalUse,
        LabelClass::Consumption,
        LabelClass::Mention,
        LabelClass::Unrelated,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LabelClass::NonmedicalUse => "nonmedical_use",
            LabelClass::Consumption => "consumption",
            LabelClass::Mention => "mention",
            LabelClass::Unrelated => "unrelated",
        }
    }
}

impl fmt::Display for LabelClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LabelClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LabelClass::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::Contract(format!("unknown label {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub post_id: String,
    pub annotator_id: String,
    pub label: LabelClass,
    pub labeled_at: DateTime<Utc>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GoldStatus {
    Resolved,
    NeedsAdjudication,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldLabel {
    pub post_id: String,
    /// Present only when resolved.
    pub label: Option<LabelClass>,
    pub status: GoldStatus,
}

/// Cohen's kappa between two aligned label sequences.
///
/// Computed from integer counts as `(n·agree − Σ ra·rb) / (n² − Σ ra·rb)`,
/// which equals `(p_o − p_e)/(1 − p_e)` without intermediate rounding.
pub fn cohens_kappa<T: Eq + Hash>(a: &[T], b: &[T]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Contract(format!(
            "kappa over sequences of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 2 {
        return Err(Error::Contract("kappa needs at least two paired labels".into()));
    }
    let n = a.len() as u128;
    let mut agree = 0u128;
    let mut marg: HashMap<&T, (u128, u128)> = HashMap::new();
    for (x, y) in a.iter().zip(b) {
        agree += u128::from(x == y);
        marg.entry(x).or_default().0 += 1;
        marg.entry(y).or_default().1 += 1;
    }
    let chance: u128 = marg.values().map(|(ra, rb)| ra * rb).sum();
    let denom = n * n - chance;
    if denom == 0 {
        // p_e = 1: both raters constant on the same class
        return if agree == n {
            Ok(1.0)
        } else {
            Err(Error::Domain("kappa undefined: chance agreement is 1".into()))
        };
    }
    let num = (n * agree) as f64 - chance as f64;
    Ok((num / denom as f64).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairKappa {
    pub annotator_a: String,
    pub annotator_b: String,
    pub shared_posts: usize,
    pub kappa: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcludedPair {
    pub annotator_a: String,
    pub annotator_b: String,
    pub shared_posts: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseAgreement {
    pub annotators: Vec<String>,
    pub pairs: Vec<PairKappa>,
    pub excluded: Vec<ExcludedPair>,
    pub average: f64,
}

impl PairwiseAgreement {
    /// Symmetric annotator × annotator matrix; `None` off eligible pairs,
    /// 1.0 on the diagonal.
    pub fn matrix(&self) -> BTreeMap<String, BTreeMap<String, Option<f64>>> {
        let mut m: BTreeMap<String, BTreeMap<String, Option<f64>>> = BTreeMap::new();
        for a in &self.annotators {
            for b in &self.annotators {
                m.entry(a.clone()).or_default().insert(b.clone(), (a == b).then_some(1.0));
            }
        }
        for p in &self.pairs {
            m.get_mut(&p.annotator_a).unwrap().insert(p.annotator_b.clone(), Some(p.kappa));
            m.get_mut(&p.annotator_b).unwrap().insert(p.annotator_a.clone(), Some(p.kappa));
        }
        m
    }
}

/// Unweighted mean kappa over annotator pairs sharing at least two posts.
pub fn pairwise_average_kappa(records: &[AnnotationRecord]) -> Result<PairwiseAgreement> {
    // annotator → post → label; later records overwrite earlier ones
    let mut by_annotator: BTreeMap<&str, BTreeMap<&str, LabelClass>> = BTreeMap::new();
    for r in records {
        by_annotator.entry(&r.annotator_id).or_default().insert(&r.post_id, r.label);
    }
    let names: Vec<&str> = by_annotator.keys().copied().collect();
    let mut pairs = Vec::new();
    let mut excluded = Vec::new();
    for (i, a) in names.iter().enumerate() {
        for b in &names[i + 1..] {
            let la = &by_annotator[a];
            let lb = &by_annotator[b];
            let (xs, ys): (Vec<LabelClass>, Vec<LabelClass>) = la
                .iter()
                .filter_map(|(post, x)| lb.get(post).map(|y| (*x, *y)))
                .unzip();
            if xs.len() < 2 {
                excluded.push(ExcludedPair {
                    annotator_a: a.to_string(),
                    annotator_b: b.to_string(),
                    shared_posts: xs.len(),
                });
                continue;
            }
            pairs.push(PairKappa {
                annotator_a: a.to_string(),
                annotator_b: b.to_string(),
                shared_posts: xs.len(),
                kappa: cohens_kappa(&xs, &ys)?,
            });
        }
    }
    if pairs.is_empty() {
        return Err(Error::Domain("no annotator pair shares at least two posts".into()));
    }
    let average = pairs.iter().map(|p| p.kappa).sum::<f64>() / pairs.len() as f64;
    Ok(PairwiseAgreement {
        annotators: names.into_iter().map(String::from).collect(),
        pairs,
        excluded,
        average,
    })
}

/// Strict-majority resolution of one post's labels. Fewer than
/// `min_annotators` labels, or no strict majority, needs adjudication.
pub fn adjudicate(records: &[AnnotationRecord], min_annotators: usize) -> Result<GoldLabel> {
    let first = records
        .first()
        .ok_or_else(|| Error::Contract("adjudicate needs at least one record".into()))?;
    if records.iter().any(|r| r.post_id != first.post_id) {
        return Err(Error::Contract("adjudicate called with records for several posts".into()));
    }
    let mut counts = [0usize; 4];
    for r in records {
        counts[r.label.index()] += 1;
    }
    let k = records.len();
    let winner = LabelClass::ALL.into_iter().find(|c| 2 * counts[c.index()] > k);
    Ok(match winner {
        Some(label) if k >= min_annotators.max(1) => GoldLabel {
            post_id: first.post_id.clone(),
            label: Some(label),
            status: GoldStatus::Resolved,
        },
        _ => GoldLabel {
            post_id: first.post_id.clone(),
            label: None,
            status: GoldStatus::NeedsAdjudication,
        },
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct AnnotationConfig {
    pub target_annotations: usize,
    pub lease_minutes: i64,
    pub open_enrollment: bool,
    /// Minimum labels for a gold label to resolve.
    pub min_annotators: usize,
}

impl Default for AnnotationConfig {
    fn default() -> Self {
        AnnotationConfig {
            target_annotations: 2,
            lease_minutes: 10,
            open_enrollment: true,
            min_annotators: 2,
        }
    }
}

#[derive(Debug, Clone)]
struct Lease {
    annotator: String,
    expires: DateTime<Utc>,
}

/// Single-writer labelling store with task leasing.
///
/// Callers serialise access (the HTTP layer wraps it in a mutex). Time is
/// passed in explicitly so lease behaviour is testable.
#[derive(Debug, Clone)]
pub struct AnnotationStore {
    config: AnnotationConfig,
    /// Sorted by (created_at, post_id).
    tasks: Vec<PostRecord>,
    task_index: HashMap<String, usize>,
    annotators: BTreeSet<String>,
    labels: BTreeMap<(String, String), AnnotationRecord>,
    label_counts: HashMap<String, usize>,
    leases: HashMap<String, Vec<Lease>>,
    guideline: String,
}

impl AnnotationStore {
    pub fn new(mut tasks: Vec<PostRecord>, config: AnnotationConfig) -> Result<Self> {
        tasks.sort_by(|a, b| a.created_at.cmp(&b.created_at).then_with(|| a.post_id.cmp(&b.post_id)));
        let mut task_index = HashMap::new();
        for (i, t) in tasks.iter().enumerate() {
            if task_index.insert(t.post_id.clone(), i).is_some() {
                return Err(Error::Contract(format!("duplicate task post_id {}", t.post_id)));
            }
        }
        Ok(AnnotationStore {
            config,
            tasks,
            task_index,
            annotators: BTreeSet::new(),
            labels: BTreeMap::new(),
            label_counts: HashMap::new(),
            leases: HashMap::new(),
            guideline: String::new(),
        })
    }

    pub fn config(&self) -> &AnnotationConfig {
        &self.config
    }

    /// Store the guideline document verbatim.
    pub fn set_guideline(&mut self, text: impl Into<String>) {
        self.guideline = text.into();
    }

    pub fn guideline(&self) -> &str {
        &self.guideline
    }

    pub fn register(&mut self, annotator: impl Into<String>) {
        self.annotators.insert(annotator.into());
    }

    pub fn annotators(&self) -> impl Iterator<Item = &str> {
        self.annotators.iter().map(String::as_str)
    }

    pub fn tasks(&self) -> &[PostRecord] {
        &self.tasks
    }

    pub fn task(&self, post_id: &str) -> Option<&PostRecord> {
        self.task_index.get(post_id).map(|&i| &self.tasks[i])
    }

    fn ensure_annotator(&mut self, annotator: &str) -> Result<()> {
        if self.annotators.contains(annotator) {
            return Ok(());
        }
        if self.config.open_enrollment && !annotator.trim().is_empty() {
            self.annotators.insert(annotator.to_string());
            Ok(())
        } else {
            Err(Error::Contract(format!("unknown annotator {annotator:?}")))
        }
    }

    /// Oldest eligible post for `annotator`, leased to them until the lease
    /// expires or they label it.
    ///
    /// Eligible: not labelled by this annotator, fewer than
    /// `target_annotations` labels, and not currently leased to this
    /// annotator. Posts nobody holds a lease on are preferred; a post leased
    /// to someone else is handed out only when labels plus active leases stay
    /// below the target.
    pub fn next_task(&mut self, annotator: &str, now: DateTime<Utc>) -> Result<Option<&PostRecord>> {
        self.ensure_annotator(annotator)?;
        for leases in self.leases.values_mut() {
            leases.retain(|l| l.expires > now);
        }
        self.leases.retain(|_, v| !v.is_empty());

        let target = self.config.target_annotations.max(1);
        let mut fallback = None;
        let mut chosen = None;
        for (i, t) in self.tasks.iter().enumerate() {
            let key = (t.post_id.clone(), annotator.to_string());
            if self.labels.contains_key(&key) {
                continue;
            }
            let count = self.label_counts.get(&t.post_id).copied().unwrap_or(0);
            if count >= target {
                continue;
            }
            let leases = self.leases.get(&t.post_id).map(Vec::as_slice).unwrap_or(&[]);
            if leases.iter().any(|l| l.annotator == annotator) {
                continue;
            }
            if leases.is_empty() {
                chosen = Some(i);
                break;
            }
            if fallback.is_none() && count + leases.len() < target {
                fallback = Some(i);
            }
        }
        let Some(i) = chosen.or(fallback) else { return Ok(None) };
        let post_id = self.tasks[i].post_id.clone();
        self.leases.entry(post_id).or_default().push(Lease {
            annotator: annotator.to_string(),
            expires: now + Duration::minutes(self.config.lease_minutes),
        });
        Ok(Some(&self.tasks[i]))
    }

    /// Store a label; resubmission overwrites. Unknown posts are
    /// `Error::NotFound`.
    pub fn submit(
        &mut self,
        post_id: &str,
        annotator: &str,
        label: LabelClass,
        now: DateTime<Utc>,
    ) -> Result<&AnnotationRecord> {
        if !self.task_index.contains_key(post_id) {
            return Err(Error::NotFound(format!("post {post_id}")));
        }
        self.ensure_annotator(annotator)?;
        let key = (post_id.to_string(), annotator.to_string());
        if !self.labels.contains_key(&key) {
            *self.label_counts.entry(post_id.to_string()).or_default() += 1;
        }
        if let Some(l) = self.leases.get_mut(post_id) {
            l.retain(|l| l.annotator != annotator);
        }
        self.labels.insert(
            key.clone(),
            AnnotationRecord {
                post_id: post_id.to_string(),
                annotator_id: annotator.to_string(),
                label,
                labeled_at: now,
            },
        );
        Ok(&self.labels[&key])
    }

    pub fn records(&self) -> Vec<AnnotationRecord> {
        self.labels.values().cloned().collect()
    }

    pub fn record(&self, post_id: &str, annotator: &str) -> Option<&AnnotationRecord> {
        self.labels.get(&(post_id.to_string(), annotator.to_string()))
    }

    pub fn agreement(&self) -> Result<PairwiseAgreement> {
        pairwise_average_kappa(&self.records())
    }

    /// Gold labels for every post with at least one label, in task order.
    pub fn gold(&self) -> Vec<GoldLabel> {
        let mut by_post: HashMap<&str, Vec<AnnotationRecord>> = HashMap::new();
        for r in self.labels.values() {
            by_post.entry(&r.post_id).or_default().push(r.clone());
        }
        self.tasks
            .iter()
            .filter_map(|t| by_post.get(t.post_id.as_str()))
            .map(|recs| adjudicate(recs, self.config.min_annotators).expect("non-empty, single post"))
            .collect()
    }
}

/// CSV `post_id,annotator_id,label,labeled_at`.
pub fn write_labels_csv(records: &[AnnotationRecord], w: impl Write) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["post_id", "annotator_id", "label", "labeled_at"])?;
    for r in records {
        wtr.write_record([
            r.post_id.as_str(),
            r.annotator_id.as_str(),
            r.label.as_str(),
            &r.labeled_at.to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        ])?;
    }
    wtr.flush().map_err(|e| Error::io("<labels csv>", e))
}

/// CSV `post_id,label,status`; the label is empty when unresolved.
pub fn write_gold_csv(gold: &[GoldLabel], w: impl Write) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["post_id", "label", "status"])?;
    for g in gold {
        let status = match g.status {
            GoldStatus::Resolved => "resolved",
            GoldStatus::NeedsAdjudication => "needs_adjudication",
        };
        wtr.write_record([g.post_id.as_str(), g.label.map(LabelClass::as_str).unwrap_or(""), status])?;
    }
    wtr.flush().map_err(|e| Error::io("<gold csv>", e))
}

/// Read resolved rows of a gold CSV into `post_id → label`.
pub fn read_gold_csv(r: impl std::io::Read) -> Result<HashMap<String, LabelClass>> {
    let mut rdr = csv::Reader::from_reader(r);
    let mut out = HashMap::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        let (Some(id), Some(label)) = (row.get(0), row.get(1)) else {
            return Err(Error::format_at(i + 2, "expected post_id,label[,status]"));
        };
        if label.is_empty() {
            continue;
        }
        let label = label.parse().map_err(|e: Error| Error::format_at(i + 2, e.to_string()))?;
        out.insert(id.to_string(), label);
    }
    Ok(out)
}
