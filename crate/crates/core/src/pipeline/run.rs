use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{Duration, Instant};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::export::{build_document, write_exports};
use super::PipelineConfig;
use crate::annotation::LabelClass;
use crate::classify::{
    classify_posts, featurize, ClassifiedPost, ExternalScorer, FeatureConfig, read_labeled, LinearModel, TrainConfig,
};
use crate::cohort::{AdmitOutcome, CohortStore, MemberStatus};
use crate::corpus::{self, DedupOptions, Matcher};
use crate::lexvar::{self, Lexicon};
use crate::signals::{
    compare_groups, correlate_report, emotion_profile, region_rates, ChiSquareTest, CorrelateOptions,
    CorrelationReport, EmotionLexicon, EmotionProfile, RateOptions, RegionMetricTable, RegionRateReport,
};
use crate::{Error, Exec, Result};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Expand,
    Ingest,
    Train,
    Classify,
    Cohort,
    Bots,
    Rates,
    Signals,
    Export,
}

impl Stage {
    pub const ALL: [Stage; 9] = [
        Stage::Expand,
        Stage::Ingest,
        Stage::Train,
        Stage::Classify,
        Stage::Cohort,
        Stage::Bots,
        Stage::Rates,
        Stage::Signals,
        Stage::Export,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Expand => "expand",
            Stage::Ingest => "ingest",
            Stage::Train => "train",
            Stage::Classify => "classify",
            Stage::Cohort => "cohort",
            Stage::Bots => "bots",
            Stage::Rates => "rates",
            Stage::Signals => "signals",
            Stage::Export => "export",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown stage {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    Completed,
    /// Output of an earlier run, picked up on resume.
    Reused,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: Stage,
    pub status: StageStatus,
    pub records: u64,
    pub wall_ms: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub tool_version: String,
    pub started_at: DateTime<Utc>,
    pub config_hash: String,
    pub input_hashes: BTreeMap<String, String>,
    pub stages: Vec<StageRecord>,
    /// True once the export stage has written its documents.
    pub completed: bool,
}

impl RunManifest {
    pub fn stage(&self, s: Stage) -> Option<&StageRecord> {
        self.stages.iter().find(|r| r.name == s)
    }

    pub fn load(work_dir: impl AsRef<Path>) -> Result<Self> {
        let p = work_dir.as_ref().join(MANIFEST);
        let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Format { path: Some(p), line: None, message: e.to_string() })
    }
}

/// Persisted per-stage result, `stages/<name>.json` in the work dir.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageOutput {
    pub stage: Stage,
    pub records: u64,
    pub details: serde_json::Value,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// First stage to execute; earlier stages reuse persisted output.
    pub from: Option<Stage>,
    /// Last stage to execute.
    pub to: Option<Stage>,
    pub exec: Exec,
}

pub(crate) const MANIFEST: &str = "manifest.json";
pub const LEXICON: &str = "lexicon.csv";
pub const MATCHED: &str = "matched.jsonl";
pub const CLASSIFIED: &str = "classified.jsonl";
pub const COHORT_DIR: &str = "cohort";
pub const RATES: &str = "rates.json";
pub const CORRELATION: &str = "correlation.json";
pub const EMOTIONS: &str = "emotions.json";

/// Emotion profiles per predicted class plus the nonmedical-use versus
/// everything-else test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmotionSummary {
    pub by_class: BTreeMap<LabelClass, EmotionProfile>,
    pub nonmedical_vs_rest: Option<ChiSquareTest>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub unavailable: Option<String>,
}

/// Correlation result, or why it could not be computed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationOutcome {
    pub report: Option<CorrelationReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub unavailable: Option<String>,
}

pub fn model_path(work: &Path, k: usize) -> PathBuf {
    work.join("models").join(format!("model-{k}.json"))
}

/// SHA-256 of a file's bytes.
pub fn file_sha256(path: &Path) -> Result<String> {
    use sha2::{Digest, Sha256};
    let mut f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format { path: Some(path.to_path_buf()), line: None, message: e.to_string() })
}

fn stage_output_path(work: &Path, s: Stage) -> PathBuf {
    work.join("stages").join(format!("{}.json", s.name()))
}

/// Run the configured pipeline. The config is validated before any stage
/// runs. A failing stage stops the run with [`Error::Stage`] after the
/// partial manifest is written.
pub fn run_pipeline(cfg: &PipelineConfig, opts: RunOptions) -> Result<RunManifest> {
    cfg.validate()?;
    let from = opts.from.unwrap_or(Stage::Expand);
    let to = opts.to.unwrap_or(Stage::Export);
    if from > to {
        return Err(Error::Config(format!("--from {from} comes after --to {to}")));
    }
    let work = cfg.work_dir();
    fs::create_dir_all(&work).map_err(|e| Error::io(&work, e))?;

    let started_at = Utc::now();
    let config_hash = cfg.hash();
    let mut input_hashes = BTreeMap::new();
    for (name, path) in cfg.inputs() {
        input_hashes.insert(name.to_string(), file_sha256(&path)?);
    }
    let run_id = format!("{}-{}", started_at.format("%Y%m%dT%H%M%S%.3fZ"), &config_hash[..12]);
    let mut manifest = RunManifest {
        run_id,
        tool_version: TOOL_VERSION.into(),
        started_at,
        config_hash,
        input_hashes,
        stages: Vec::new(),
        completed: false,
    };

    for s in Stage::ALL.into_iter().filter(|s| *s < from) {
        let out: StageOutput = read_json(&stage_output_path(&work, s)).map_err(|_| {
            Error::Contract(format!("cannot resume from {from}: stage {s} has no persisted output"))
        })?;
        manifest.stages.push(StageRecord {
            name: s,
            status: StageStatus::Reused,
            records: out.records,
            wall_ms: 0,
            error: None,
        });
    }

    let ctx = Ctx { cfg, work: work.clone(), exec: opts.exec, now: cfg.now() };
    for s in Stage::ALL.into_iter().filter(|s| (from..=to).contains(s)) {
        let _span = tracing::info_span!("stage", name = s.name()).entered();
        let t = Instant::now();
        let result = ctx.run(s);
        let wall_ms = t.elapsed().as_millis() as u64;
        match result {
            Ok((records, details)) => {
                tracing::info!(records, wall_ms, "stage done");
                write_json(&stage_output_path(&work, s), &StageOutput { stage: s, records, details })?;
                manifest.stages.push(StageRecord { name: s, status: StageStatus::Completed, records, wall_ms, error: None });
                manifest.completed = s == Stage::Export;
                write_json(&work.join(MANIFEST), &manifest)?;
            }
            Err(e) => {
                tracing::error!(error = %e, "stage failed");
                manifest.stages.push(StageRecord {
                    name: s,
                    status: StageStatus::Failed,
                    records: 0,
                    wall_ms,
                    error: Some(e.to_string()),
                });
                manifest.completed = false;
                write_json(&work.join(MANIFEST), &manifest)?;
                return Err(Error::Stage { stage: s.name().into(), source: Box::new(e) });
            }
        }
    }
    Ok(manifest)
}

struct Ctx<'a> {
    cfg: &'a PipelineConfig,
    work: PathBuf,
    exec: Exec,
    now: DateTime<Utc>,
}

type StageResult = Result<(u64, serde_json::Value)>;

impl Ctx<'_> {
    fn path(&self, p: &Path) -> PathBuf {
        self.cfg.resolve(p)
    }

    fn run(&self, s: Stage) -> StageResult {
        match s {
            Stage::Expand => self.expand(),
            Stage::Ingest => self.ingest(),
            Stage::Train => self.train(),
            Stage::Classify => self.classify(),
            Stage::Cohort => self.cohort(),
            Stage::Bots => self.bots(),
            Stage::Rates => self.rates(),
            Stage::Signals => self.signals(),
            Stage::Export => self.export(),
        }
    }

    fn expand(&self) -> StageResult {
        let model = lexvar::load_embeddings(self.path(&self.cfg.paths.embeddings))?;
        let seeds = lexvar::load_seeds(self.path(&self.cfg.paths.seeds))?;
        if seeds.is_empty() {
            return Err(Error::Contract("seed list is empty".into()));
        }
        let lex = lexvar::expand_lexicon(&seeds, &model, &self.cfg.lexvar, self.exec)?;
        lex.save(self.work.join(LEXICON))?;
        let details = json!({ "seeds": seeds.len(), "variants": lex.variant_count() });
        Ok((lex.len() as u64, details))
    }

    fn ingest(&self) -> StageResult {
        let lex = Lexicon::load(self.work.join(LEXICON))?;
        let matcher = Matcher::new(&lex)?;
        let out_path = self.work.join(MATCHED);
        let out = File::create(&out_path).map_err(|e| Error::io(&out_path, e))?;
        let dedup = DedupOptions {
            drop_reposts: self.cfg.ingest.drop_reposts,
            drop_duplicates: self.cfg.ingest.drop_duplicates,
        };
        let stats = corpus::ingest_file(self.path(&self.cfg.paths.corpus), &matcher, dedup, out, self.exec)?;
        if stats.matched == 0 {
            return Err(Error::Domain("no corpus post matched the lexicon".into()));
        }
        Ok((stats.matched as u64, serde_json::to_value(&stats)?))
    }

    fn train(&self) -> StageResult {
        let c = &self.cfg.classifier;
        let models_dir = self.work.join("models");
        if models_dir.exists() {
            fs::remove_dir_all(&models_dir).map_err(|e| Error::io(&models_dir, e))?;
        }
        fs::create_dir_all(&models_dir).map_err(|e| Error::io(&models_dir, e))?;
        if c.models == 0 {
            return Ok((0, json!({ "models": 0 })));
        }
        let train_path = self.path(self.cfg.paths.train.as_ref().expect("validated"));
        let data = read_labeled(&train_path)?;
        let mut per_class = [0u64; 4];
        for d in &data {
            per_class[d.label.index()] += 1;
        }
        let trained: Vec<Result<LinearModel>> = self.exec.map_range(c.models, |k| {
            let (features, train) = model_settings(self.cfg, k);
            let xy: Vec<_> = data.iter().map(|d| (featurize(&corpus::normalize(&d.text), &features), d.label)).collect();
            LinearModel::train(&xy, features, train)
        });
        let mut final_losses = Vec::new();
        for (k, m) in trained.into_iter().enumerate() {
            let m = m?;
            final_losses.push(m.report().epoch_losses.last().copied().unwrap_or(f64::NAN));
            m.save(model_path(&self.work, k))?;
        }
        let counts: BTreeMap<&str, u64> = LabelClass::ALL.iter().map(|c| (c.as_str(), per_class[c.index()])).collect();
        let details = json!({ "models": c.models, "examples_per_class": counts, "final_losses": final_losses });
        Ok((data.len() as u64, details))
    }

    fn classify(&self) -> StageResult {
        let c = &self.cfg.classifier;
        let models = (0..c.models).map(|k| LinearModel::load(model_path(&self.work, k))).collect::<Result<Vec<_>>>()?;
        let scorers = c
            .scorers
            .iter()
            .map(|s| Ok(ExternalScorer::new(s.parse()?).with_timeout(Duration::from_secs(c.scorer_timeout_secs))))
            .collect::<Result<Vec<_>>>()?;
        let matched = corpus::read_matched(self.work.join(MATCHED))?;
        let classified = classify_posts(&matched, &models, &scorers, c.fusion, self.exec)?;
        corpus::write_jsonl_values(self.work.join(CLASSIFIED), &classified)?;
        let mut predicted = BTreeMap::new();
        for p in &classified {
            *predicted.entry(p.prediction.argmax.as_str()).or_insert(0u64) += 1;
        }
        Ok((classified.len() as u64, json!({ "predicted": predicted })))
    }

    fn cohort(&self) -> StageResult {
        let dir = self.work.join(COHORT_DIR);
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        let mut store = CohortStore::open(&dir, &self.cfg.cohort.salt)?;
        let classified: Vec<ClassifiedPost> = corpus::read_jsonl_values(self.work.join(CLASSIFIED))?;
        let mut outcomes: BTreeMap<&str, u64> = BTreeMap::new();
        for p in &classified {
            let o = store.cohort.admit(&p.prediction, &p.matched.post, self.cfg.cohort.admission, self.now)?;
            let key = match o {
                AdmitOutcome::Admitted => "admitted",
                AdmitOutcome::EvidenceUpdated => "evidence_updated",
                AdmitOutcome::Unchanged => "unchanged",
                AdmitOutcome::NotQualified => "not_qualified",
            };
            *outcomes.entry(key).or_default() += 1;
        }
        let pool = match &self.cfg.paths.history {
            Some(h) => corpus::read_all(self.path(h))?,
            None => Vec::new(),
        };
        let stats = store.cohort.recollect(&pool, self.now, self.cfg.cohort.recollection_interval_days, self.exec)?;
        store.compact()?;
        let details = json!({ "admission": outcomes, "recollection": stats });
        Ok((store.cohort.len() as u64, details))
    }

    fn bots(&self) -> StageResult {
        let mut store = CohortStore::open(self.work.join(COHORT_DIR), &self.cfg.cohort.salt)?;
        let k = &self.cfg.cohort;
        let report = store.cohort.filter_bots(k.bot_threshold, &k.bots, self.exec)?;
        store.compact()?;
        let details = json!({
            "threshold": report.threshold,
            "scored": report.scored,
            "unscored": report.unscored,
            "skipped_manual": report.skipped_manual,
            "newly_excluded": report.newly_excluded,
            "restored": report.restored,
        });
        Ok((report.excluded.len() as u64, details))
    }

    /// Classified posts whose authors are not excluded cohort members.
    fn surviving_posts(&self) -> Result<(Vec<ClassifiedPost>, usize)> {
        let store = CohortStore::open(self.work.join(COHORT_DIR), &self.cfg.cohort.salt)?;
        let classified: Vec<ClassifiedPost> = corpus::read_jsonl_values(self.work.join(CLASSIFIED))?;
        let cohort = &store.cohort;
        let before = classified.len();
        let kept: Vec<ClassifiedPost> = classified
            .into_iter()
            .filter(|p| {
                cohort
                    .member_for_author(&p.matched.post.author_id)
                    .map_or(true, |m| m.status == MemberStatus::Active)
            })
            .collect();
        let dropped = before - kept.len();
        Ok((kept, dropped))
    }

    fn rates(&self) -> StageResult {
        let (posts, excluded) = self.surviving_posts()?;
        let table = RegionMetricTable::load(self.path(&self.cfg.paths.region_table))?;
        let known: Vec<String> = table.rows.keys().cloned().collect();
        let opts = RateOptions { min_support: self.cfg.signals.min_support };
        let mut report = region_rates(&posts, None, &known, opts, self.exec);
        if let Some(p) = &self.cfg.paths.population {
            report = report.with_population(&RegionMetricTable::load(self.path(p))?);
        }
        write_json(&self.work.join(RATES), &report)?;
        let details = json!({
            "posts": posts.len(),
            "excluded_bot_posts": excluded,
            "regionless": report.regionless,
            "empty_regions": report.empty_regions.len(),
        });
        Ok((report.regions.len() as u64, details))
    }

    fn signals(&self) -> StageResult {
        let s = &self.cfg.signals;
        let rates: RegionRateReport = read_json(&self.work.join(RATES))?;
        let table = RegionMetricTable::load(self.path(&self.cfg.paths.region_table))?;
        let copts = CorrelateOptions {
            permutations: s.permutations,
            seed: self.cfg.stage_seed("signals/correlation"),
            keep_low_support: s.keep_low_support,
        };
        let correlation = match correlate_report(&rates, &table, copts, self.exec) {
            Ok(r) => CorrelationOutcome { report: Some(r), unavailable: None },
            Err(e @ (Error::Domain(_) | Error::Contract(_))) => {
                tracing::warn!(error = %e, "correlation unavailable");
                CorrelationOutcome { report: None, unavailable: Some(e.to_string()) }
            }
            Err(e) => return Err(e),
        };
        write_json(&self.work.join(CORRELATION), &correlation)?;

        let lexicon = EmotionLexicon::load(self.path(&self.cfg.paths.emotion_lexicon))?;
        let (posts, _) = self.surviving_posts()?;
        let mut texts: HashMap<LabelClass, Vec<&str>> = HashMap::new();
        for p in &posts {
            texts.entry(p.prediction.argmax).or_default().push(&p.matched.post.text);
        }
        let mut by_class = BTreeMap::new();
        for c in LabelClass::ALL {
            let t = texts.remove(&c).unwrap_or_default();
            by_class.insert(c, emotion_profile(&t, &lexicon, self.exec)?);
        }
        let nm = &by_class[&LabelClass::NonmedicalUse].counts;
        let mut rest = vec![0u64; nm.len()];
        for (c, prof) in &by_class {
            if *c != LabelClass::NonmedicalUse {
                for (r, v) in rest.iter_mut().zip(&prof.counts) {
                    *r += v;
                }
            }
        }
        let test = compare_groups(nm, &rest, s.permutations, self.cfg.stage_seed("signals/emotions"), self.exec);
        let emotions = match test {
            Ok(t) => EmotionSummary { by_class, nonmedical_vs_rest: Some(t), unavailable: None },
            Err(e @ (Error::Domain(_) | Error::Contract(_))) => {
                tracing::warn!(error = %e, "emotion comparison unavailable");
                EmotionSummary { by_class, nonmedical_vs_rest: None, unavailable: Some(e.to_string()) }
            }
            Err(e) => return Err(e),
        };
        write_json(&self.work.join(EMOTIONS), &emotions)?;
        let n = correlation.report.as_ref().map_or(0, |r| r.n);
        let details = json!({
            "correlation_regions": n,
            "emotion_hits": emotions.by_class.values().map(|p| p.total_hits).sum::<u64>(),
        });
        Ok((n as u64, details))
    }

    fn export(&self) -> StageResult {
        let store = CohortStore::open(self.work.join(COHORT_DIR), &self.cfg.cohort.salt)?;
        let mut stage_records = BTreeMap::new();
        for s in Stage::ALL.into_iter().filter(|s| *s < Stage::Export) {
            let out: StageOutput = read_json(&stage_output_path(&self.work, s))?;
            stage_records.insert(s.name().to_string(), out.records);
        }
        let doc = build_document(
            stage_records,
            read_json(&self.work.join(RATES))?,
            read_json(&self.work.join(CORRELATION))?,
            read_json(&self.work.join(EMOTIONS))?,
            store.cohort.summary(),
        );
        let rows = write_exports(&self.work, &doc)?;
        Ok((rows as u64, json!({ "csv_rows": rows })))
    }
}

/// Feature and training settings of built-in model `k`. Models differ in
/// their SGD shuffle seed and their feature hash seed.
pub fn model_settings(cfg: &PipelineConfig, k: usize) -> (FeatureConfig, TrainConfig) {
    let c = &cfg.classifier;
    let features = FeatureConfig { hash_seed: c.features.hash_seed.wrapping_add(k as u64), ..c.features };
    let train = TrainConfig { seed: cfg.stage_seed(&format!("train/{k}")), ..c.train };
    (features, train)
}

/// Write through a temporary sibling file and rename into place.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let f = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        let mut w = BufWriter::new(f);
        w.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
        w.flush().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
