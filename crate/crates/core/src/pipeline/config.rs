use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::classify::{FeatureConfig, FusionStrategy, TrainConfig};
use crate::cohort::{AdmissionPolicy, BotConfig};
use crate::lexvar::ExpansionConfig;
use crate::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

/// Input and output locations. Relative paths resolve against the
/// directory holding the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub embeddings: PathBuf,
    pub seeds: PathBuf,
    pub corpus: PathBuf,
    /// Labelled JSONL for the built-in models. Required when `classifier.models > 0`.
    #[serde(default)]
    pub train: Option<PathBuf>,
    /// Labelled JSONL for `toxipipe eval`.
    #[serde(default)]
    pub test: Option<PathBuf>,
    /// Platform history used to extend cohort timelines.
    #[serde(default)]
    pub history: Option<PathBuf>,
    pub region_table: PathBuf,
    /// Region population table; adds per-100k rates.
    #[serde(default)]
    pub population: Option<PathBuf>,
    pub emotion_lexicon: PathBuf,
    #[serde(default)]
    pub guideline: Option<PathBuf>,
    /// Post JSONL to annotate. Defaults to the matched posts of the last run.
    #[serde(default)]
    pub annotation_tasks: Option<PathBuf>,
    #[serde(default = "default_work_dir")]
    pub work_dir: PathBuf,
}

fn default_work_dir() -> PathBuf {
    PathBuf::from("work")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestConfig {
    pub drop_reposts: bool,
    pub drop_duplicates: bool,
}

impl Default for IngestConfig {
    fn default() -> Self {
        IngestConfig { drop_reposts: true, drop_duplicates: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    pub features: FeatureConfig,
    pub train: TrainConfig,
    /// Number of built-in linear models, each with its own seed.
    pub models: usize,
    pub fusion: FusionStrategy,
    /// External scorer endpoints (`tcp://host:port` or a command line).
    pub scorers: Vec<String>,
    pub scorer_timeout_secs: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            features: FeatureConfig::default(),
            train: TrainConfig::default(),
            models: 3,
            fusion: FusionStrategy::Mean,
            scorers: Vec::new(),
            scorer_timeout_secs: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CohortConfig {
    /// Secret salt for member pseudonyms. Must be non-empty.
    pub salt: String,
    pub admission: AdmissionPolicy,
    pub recollection_interval_days: i64,
    pub bot_threshold: f64,
    pub bots: BotConfig,
}

impl Default for CohortConfig {
    fn default() -> Self {
        CohortConfig {
            salt: String::new(),
            admission: AdmissionPolicy::Argmax,
            recollection_interval_days: 14,
            bot_threshold: 0.5,
            bots: BotConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SignalsConfig {
    pub permutations: u64,
    pub min_support: u64,
    pub keep_low_support: bool,
}

impl Default for SignalsConfig {
    fn default() -> Self {
        SignalsConfig { permutations: 9999, min_support: 30, keep_low_support: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerConfig {
    pub bind: String,
    pub port: u16,
    pub open_enrollment: bool,
    /// Annotator ids accepted when enrollment is closed.
    pub annotators: Vec<String>,
    pub target_annotations: usize,
    pub min_annotators: usize,
    pub lease_minutes: i64,
    /// Cap on the number of posts loaded as annotation tasks.
    pub annotation_task_limit: usize,
    /// Built annotator UI assets, served at `/`.
    pub static_dir: Option<PathBuf>,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig {
            bind: "127.0.0.1".into(),
            port: 8080,
            open_enrollment: true,
            annotators: Vec::new(),
            target_annotations: 2,
            min_annotators: 2,
            lease_minutes: 10,
            annotation_task_limit: 500,
            static_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub schema_version: u32,
    /// Root seed; every stage derives its own with [`stage_seed`].
    #[serde(default)]
    pub seed: u64,
    /// Clock used for admission and recollection. Unset means wall-clock
    /// time, which makes cohort month buckets depend on when the run happens.
    #[serde(default)]
    pub as_of: Option<DateTime<Utc>>,
    pub paths: Paths,
    #[serde(default)]
    pub lexvar: ExpansionConfig,
    #[serde(default)]
    pub ingest: IngestConfig,
    #[serde(default)]
    pub classifier: ClassifierConfig,
    #[serde(default)]
    pub cohort: CohortConfig,
    #[serde(default)]
    pub signals: SignalsConfig,
    #[serde(default)]
    pub server: ServerConfig,
    #[serde(skip)]
    base_dir: PathBuf,
}

/// Seed for one stage: the first 8 bytes (little endian) of
/// `SHA-256(root_seed as 8 LE bytes || stage name)`.
pub fn stage_seed(root: u64, stage: &str) -> u64 {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    h.update(root.to_le_bytes());
    h.update(stage.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().unwrap())
}

impl PipelineConfig {
    /// Parse and validate a config file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let cfg = Self::from_json(&text, base)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parse without validating. `base_dir` anchors relative paths.
    pub fn from_json(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut cfg: PipelineConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))?;
        cfg.base_dir = base_dir.into();
        Ok(cfg)
    }

    pub fn base_dir(&self) -> &Path {
        &self.base_dir
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn work_dir(&self) -> PathBuf {
        self.resolve(&self.paths.work_dir)
    }

    pub fn now(&self) -> DateTime<Utc> {
        self.as_of.unwrap_or_else(Utc::now)
    }

    pub fn stage_seed(&self, stage: &str) -> u64 {
        stage_seed(self.seed, stage)
    }

    /// Hash of the canonical JSON form. Paths are hashed as written.
    pub fn hash(&self) -> String {
        crate::sha256_hex(serde_json::to_vec(self).expect("config serialises"))
    }

    /// Named input files, resolved, in a fixed order.
    pub fn inputs(&self) -> Vec<(&'static str, PathBuf)> {
        let p = &self.paths;
        let mut v = vec![
            ("embeddings", self.resolve(&p.embeddings)),
            ("seeds", self.resolve(&p.seeds)),
            ("corpus", self.resolve(&p.corpus)),
            ("region_table", self.resolve(&p.region_table)),
            ("emotion_lexicon", self.resolve(&p.emotion_lexicon)),
        ];
        let optional = [
            ("train", &p.train),
            ("test", &p.test),
            ("history", &p.history),
            ("population", &p.population),
            ("guideline", &p.guideline),
            ("annotation_tasks", &p.annotation_tasks),
        ];
        for (name, path) in optional {
            if let Some(path) = path {
                v.push((name, self.resolve(path)));
            }
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        for (name, path) in self.inputs() {
            if !path.is_file() {
                return Err(Error::Config(format!("paths.{name}: {} does not exist", path.display())));
            }
        }
        if let Some(dir) = &self.server.static_dir {
            let dir = self.resolve(dir);
            if !dir.is_dir() {
                return Err(Error::Config(format!("server.static_dir: {} is not a directory", dir.display())));
            }
        }
        self.lexvar.validate()?;

        let c = &self.classifier;
        if c.models == 0 && c.scorers.is_empty() {
            return Err(Error::Config("classifier needs models > 0 or at least one scorer".into()));
        }
        if c.models > 16 {
            return Err(Error::Config(format!("classifier.models {} exceeds 16", c.models)));
        }
        if c.models > 0 && self.paths.train.is_none() {
            return Err(Error::Config("paths.train is required when classifier.models > 0".into()));
        }
        if !(8..=24).contains(&c.features.hash_bits) {
            return Err(Error::Config(format!("classifier.features.hash_bits {} outside 8..=24", c.features.hash_bits)));
        }
        let t = &c.train;
        if t.epochs == 0 || !(t.learning_rate > 0.0 && t.learning_rate.is_finite()) {
            return Err(Error::Config("classifier.train needs epochs > 0 and a positive learning_rate".into()));
        }
        if !(t.l2 >= 0.0 && t.l2.is_finite()) || t.class_weights.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
            return Err(Error::Config("classifier.train l2 must be >= 0 and class_weights > 0".into()));
        }
        if c.scorer_timeout_secs == 0 {
            return Err(Error::Config("classifier.scorer_timeout_secs must be positive".into()));
        }
        for s in &c.scorers {
            s.parse::<crate::classify::ScorerEndpoint>()?;
        }

        let k = &self.cohort;
        if k.salt.is_empty() {
            return Err(Error::Config("cohort.salt must be set".into()));
        }
        if let AdmissionPolicy::Threshold { t } = k.admission {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::Config(format!("cohort.admission.t {t} outside [0, 1]")));
            }
        }
        if k.recollection_interval_days < 1 {
            return Err(Error::Config("cohort.recollection_interval_days must be >= 1".into()));
        }
        if !(k.bot_threshold.is_finite() && k.bot_threshold >= 0.0) {
            return Err(Error::Config(format!("cohort.bot_threshold {} must be finite and >= 0", k.bot_threshold)));
        }
        if self.signals.permutations < 100 {
            return Err(Error::Config("signals.permutations must be >= 100".into()));
        }

        let s = &self.server;
        if s.target_annotations == 0 || s.min_annotators == 0 || s.lease_minutes < 1 {
            return Err(Error::Config(
                "server.target_annotations, min_annotators and lease_minutes must be positive".into(),
            ));
        }
        if !s.open_enrollment && s.annotators.is_empty() {
            return Err(Error::Config("server.annotators must list ids when open_enrollment is off".into()));
        }
        Ok(())
    }
}
