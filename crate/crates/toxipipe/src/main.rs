use std::collections::HashMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use chrono::{DateTime, Utc};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;
use toxipipe::{demo, peer, server};
use toxipipe_core::annotation::LabelClass;
use toxipipe_core::classify::{
    classify_posts, evaluate, fuse, read_labeled, ExternalScorer, FusionStrategy, LabeledText, LinearModel, Prediction,
};
use toxipipe_core::cohort::{CohortStore, ManualOverride};
use toxipipe_core::corpus::{self, MatchedPost, PostRecord, Source};
use toxipipe_core::pipeline::{
    self, model_path, run_pipeline, ExportFilter, ExportFormat, PipelineConfig, RunOptions, Stage, StageOutput,
    COHORT_DIR, CORRELATION, EMOTIONS,
};
use toxipipe_core::synth::DemoSpec;
use toxipipe_core::{Error as CoreError, Exec};

const EXIT_CONFIG: u8 = 2;
const EXIT_STAGE: u8 = 3;

#[derive(Parser)]
#[command(name = "toxipipe", version, about = "Social-media toxicovigilance pipeline")]
struct Cli {
    /// Run data-parallel loops on one thread. Results are identical.
    #[arg(long, global = true)]
    sequential: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArg {
    #[arg(long, short)]
    config: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Run the whole pipeline, or a slice of it.
    Run {
        #[command(flatten)]
        cfg: ConfigArg,
        /// First stage to execute; earlier stages reuse their saved output.
        #[arg(long)]
        from: Option<Stage>,
        #[arg(long)]
        to: Option<Stage>,
    },
    /// Serve the annotation and statistics HTTP API.
    Serve {
        #[command(flatten)]
        cfg: ConfigArg,
        #[arg(long)]
        bind: Option<String>,
        #[arg(long)]
        port: Option<u16>,
    },
    /// Expand seed terms into the variant lexicon.
    ExpandLexicon {
        #[command(flatten)]
        cfg: ConfigArg,
        #[arg(long)]
        theta_sem: Option<f64>,
        #[arg(long)]
        theta_lex: Option<f64>,
        #[arg(long)]
        max_depth: Option<usize>,
    },
    /// Deduplicate the corpus and match it against the lexicon.
    Ingest {
        #[command(flatten)]
        cfg: ConfigArg,
        /// Keep reposts instead of dropping them.
        #[arg(long)]
        keep_reposts: bool,
    },
    /// Train the built-in linear models.
    Train {
        #[command(flatten)]
        cfg: ConfigArg,
        #[arg(long)]
        models: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Classify matched posts and fuse model outputs.
    Classify {
        #[command(flatten)]
        cfg: ConfigArg,
        #[arg(long, value_enum)]
        fusion: Option<Fusion>,
        /// Extra external scorer (`tcp://host:port` or a command line).
        #[arg(long)]
        scorer: Vec<String>,
    },
    /// Evaluate trained models and their fusion on a labelled set.
    Eval {
        #[command(flatten)]
        cfg: ConfigArg,
        /// Labelled JSONL; defaults to `paths.test`.
        #[arg(long)]
        test: Option<PathBuf>,
    },
    /// Cohort operations.
    #[command(subcommand)]
    Cohort(CohortCommand),
    /// Region rates and their correlation with the reference table.
    Correlate {
        #[command(flatten)]
        cfg: ConfigArg,
        #[arg(long)]
        permutations: Option<u64>,
    },
    /// Emotion profiles per predicted class.
    Emotions {
        #[command(flatten)]
        cfg: ConfigArg,
        #[arg(long)]
        permutations: Option<u64>,
    },
    /// Print the aggregated statistics of the last completed run.
    Export {
        #[command(flatten)]
        cfg: ConfigArg,
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
        #[arg(long)]
        region: Option<String>,
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Generate synthetic fixtures.
    #[command(subcommand)]
    Synth(SynthCommand),
    /// Score request lines from stdin with a saved model (scorer protocol peer).
    #[command(hide = true)]
    Scorer {
        #[arg(long)]
        model: PathBuf,
    },
}

#[derive(Subcommand)]
enum CohortCommand {
    /// Build the cohort from classified posts and recollect timelines.
    Admit {
        #[command(flatten)]
        cfg: ConfigArg,
    },
    /// List members due for recollection.
    Due {
        #[command(flatten)]
        cfg: ConfigArg,
        /// Defaults to the config's `as_of`, else the current time.
        #[arg(long)]
        now: Option<DateTime<Utc>>,
        #[arg(long)]
        interval_days: Option<i64>,
    },
    /// Merge newly collected posts into due members' timelines.
    Merge {
        #[command(flatten)]
        cfg: ConfigArg,
        /// Post JSONL from any authors.
        #[arg(long)]
        posts: PathBuf,
        #[arg(long)]
        now: Option<DateTime<Utc>>,
    },
    /// Score members and exclude likely bots.
    Bots {
        #[command(flatten)]
        cfg: ConfigArg,
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Pin or clear a manual bot decision for one member.
    Override {
        #[command(flatten)]
        cfg: ConfigArg,
        #[arg(long)]
        member: String,
        #[arg(long, value_enum)]
        decision: Decision,
    },
}

#[derive(Subcommand)]
enum SynthCommand {
    /// Demo corpus, reference table, lexicons and `config.json`.
    Demo {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = demo::DEMO_SEED)]
        seed: u64,
    },
    /// Labelled train/test split for the classifier benchmark.
    Classify {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2000)]
        train: usize,
        #[arg(long, default_value_t = 500)]
        test: usize,
        #[arg(long, default_value_t = 0.10)]
        nm_share: f64,
        #[arg(long, default_value_t = demo::CLASSIFY_SEED)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Fusion {
    Mean,
    Majority,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Clone, Copy, ValueEnum)]
enum Decision {
    Keep,
    Exclude,
    Clear,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "toxipipe=info,toxipipe_core=info".into()),
        )
        .with_writer(io::stderr)
        .init();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<CoreError>() {
        Some(CoreError::Config(_)) => EXIT_CONFIG,
        Some(CoreError::Stage { .. }) => EXIT_STAGE,
        _ => 1,
    }
}

fn load(c: &ConfigArg) -> Result<PipelineConfig> {
    // Keep the core error on top so the exit code can be derived from it.
    Ok(PipelineConfig::load(&c.config)?)
}

fn print_json(v: &impl serde::Serialize) -> Result<()> {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, v)?;
    writeln!(out)?;
    Ok(())
}

fn run_stages(cfg: &PipelineConfig, from: Stage, to: Stage, exec: Exec) -> Result<()> {
    run_pipeline(cfg, RunOptions { from: Some(from), to: Some(to), exec })?;
    Ok(())
}

fn print_stage(cfg: &PipelineConfig, s: Stage) -> Result<()> {
    let p = cfg.work_dir().join("stages").join(format!("{s}.json"));
    let out: StageOutput = serde_json::from_str(&fs::read_to_string(&p)?)?;
    print_json(&out)
}

fn dispatch(cli: Cli) -> Result<()> {
    let exec = if cli.sequential { Exec::Sequential } else { Exec::Parallel };
    match cli.command {
        Command::Run { cfg, from, to } => {
            let cfg = load(&cfg)?;
            let m = run_pipeline(&cfg, RunOptions { from, to, exec })?;
            print_json(&m)
        }
        Command::Serve { cfg, bind, port } => {
            let cfg = load(&cfg)?;
            let addr = format!(
                "{}:{}",
                bind.unwrap_or_else(|| cfg.server.bind.clone()),
                port.unwrap_or(cfg.server.port)
            );
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(server::serve(&cfg, &addr, shutdown_signal()))
        }
        Command::ExpandLexicon { cfg, theta_sem, theta_lex, max_depth } => {
            let mut cfg = load(&cfg)?;
            cfg.lexvar.theta_sem = theta_sem.unwrap_or(cfg.lexvar.theta_sem);
            cfg.lexvar.theta_lex = theta_lex.unwrap_or(cfg.lexvar.theta_lex);
            cfg.lexvar.max_depth = max_depth.unwrap_or(cfg.lexvar.max_depth);
            run_stages(&cfg, Stage::Expand, Stage::Expand, exec)?;
            print_stage(&cfg, Stage::Expand)
        }
        Command::Ingest { cfg, keep_reposts } => {
            let mut cfg = load(&cfg)?;
            cfg.ingest.drop_reposts &= !keep_reposts;
            run_stages(&cfg, Stage::Ingest, Stage::Ingest, exec)?;
            print_stage(&cfg, Stage::Ingest)
        }
        Command::Train { cfg, models, epochs } => {
            let mut cfg = load(&cfg)?;
            cfg.classifier.models = models.unwrap_or(cfg.classifier.models);
            cfg.classifier.train.epochs = epochs.unwrap_or(cfg.classifier.train.epochs);
            cfg.validate()?;
            run_stages(&cfg, Stage::Train, Stage::Train, exec)?;
            print_stage(&cfg, Stage::Train)
        }
        Command::Classify { cfg, fusion, scorer } => {
            let mut cfg = load(&cfg)?;
            if let Some(f) = fusion {
                cfg.classifier.fusion = match f {
                    Fusion::Mean => FusionStrategy::Mean,
                    Fusion::Majority => FusionStrategy::Majority,
                };
            }
            cfg.classifier.scorers.extend(scorer);
            cfg.validate()?;
            run_stages(&cfg, Stage::Classify, Stage::Classify, exec)?;
            print_stage(&cfg, Stage::Classify)
        }
        Command::Eval { cfg, test } => {
            let cfg = load(&cfg)?;
            eval(&cfg, test, exec)
        }
        Command::Cohort(c) => cohort(c, exec),
        Command::Correlate { cfg, permutations } => {
            let mut cfg = load(&cfg)?;
            cfg.signals.permutations = permutations.unwrap_or(cfg.signals.permutations);
            cfg.validate()?;
            run_stages(&cfg, Stage::Rates, Stage::Signals, exec)?;
            print_file(&cfg.work_dir().join(CORRELATION))
        }
        Command::Emotions { cfg, permutations } => {
            let mut cfg = load(&cfg)?;
            cfg.signals.permutations = permutations.unwrap_or(cfg.signals.permutations);
            cfg.validate()?;
            run_stages(&cfg, Stage::Rates, Stage::Signals, exec)?;
            print_file(&cfg.work_dir().join(EMOTIONS))
        }
        Command::Export { cfg, format, region, output } => {
            let cfg = load(&cfg)?;
            let format = match format {
                Format::Json => ExportFormat::Json,
                Format::Csv => ExportFormat::Csv,
            };
            let doc = pipeline::export_stats(cfg.work_dir(), format, &ExportFilter { region })?;
            match output {
                Some(p) => fs::write(&p, doc).with_context(|| format!("writing {}", p.display())),
                None => Ok(io::stdout().lock().write_all(doc.as_bytes())?),
            }
        }
        Command::Synth(SynthCommand::Demo { out, seed }) => {
            demo::write_demo(&out, &DemoSpec::default(), seed)?;
            eprintln!("demo written to {}", out.display());
            Ok(())
        }
        Command::Synth(SynthCommand::Classify { out, train, test, nm_share, seed }) => {
            demo::write_classify(&out, train, test, nm_share, seed)?;
            eprintln!("classifier fixtures written to {}", out.display());
            Ok(())
        }
        Command::Scorer { model } => {
            let model = LinearModel::load(&model)?;
            peer::run(&model, io::stdin().lock(), io::stdout().lock())?;
            Ok(())
        }
    }
}

fn print_file(p: &Path) -> Result<()> {
    let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
    io::stdout().lock().write_all(text.as_bytes())?;
    Ok(())
}

fn eval(cfg: &PipelineConfig, test: Option<PathBuf>, exec: Exec) -> Result<()> {
    let path = match test.or_else(|| cfg.paths.test.as_ref().map(|p| cfg.resolve(p))) {
        Some(p) => p,
        None => bail!("no test set: pass --test or set paths.test"),
    };
    let data: Vec<LabeledText> = read_labeled(&path)?;
    // Labelled texts go through the same path as matched posts.
    let posts: Vec<MatchedPost> = data
        .iter()
        .map(|d| MatchedPost {
            post: PostRecord {
                post_id: d.post_id.clone(),
                author_id: String::new(),
                created_at: DateTime::<Utc>::UNIX_EPOCH,
                text: d.text.clone(),
                source: Source::TwitterLike,
                region: None,
                is_repost: false,
            },
            matched_terms: Vec::new(),
        })
        .collect();
    let gold: HashMap<String, LabelClass> = data.iter().map(|d| (d.post_id.clone(), d.label)).collect();
    let c = &cfg.classifier;
    let work = cfg.work_dir();
    let models = (0..c.models).map(|k| LinearModel::load(model_path(&work, k))).collect::<Result<Vec<_>, _>>()?;
    let scorers = c
        .scorers
        .iter()
        .map(|s| Ok(ExternalScorer::new(s.parse()?).with_timeout(Duration::from_secs(c.scorer_timeout_secs))))
        .collect::<Result<Vec<_>, CoreError>>()?;
    let mut reports = Vec::new();
    let mut per_model: Vec<Vec<Prediction>> = Vec::new();
    for m in &models {
        let preds = classify_posts(&posts, std::slice::from_ref(m), &[], c.fusion, exec)?;
        per_model.push(preds.into_iter().map(|p| p.prediction).collect());
    }
    for s in &scorers {
        let batch: Vec<(String, String)> = data.iter().map(|d| (d.post_id.clone(), d.text.clone())).collect();
        per_model.push(s.score(&batch)?);
    }
    for preds in &per_model {
        reports.push(evaluate(preds, &gold)?);
    }
    let fused: Vec<Prediction> = (0..data.len())
        .map(|i| fuse(&per_model.iter().map(|m| m[i].clone()).collect::<Vec<_>>(), c.fusion))
        .collect::<Result<_, _>>()?;
    print_json(&json!({ "models": reports, "fused": evaluate(&fused, &gold)?, "fusion": c.fusion }))
}

fn cohort(c: CohortCommand, exec: Exec) -> Result<()> {
    match c {
        CohortCommand::Admit { cfg } => {
            let cfg = load(&cfg)?;
            run_stages(&cfg, Stage::Cohort, Stage::Cohort, exec)?;
            print_stage(&cfg, Stage::Cohort)
        }
        CohortCommand::Bots { cfg, threshold } => {
            let mut cfg = load(&cfg)?;
            cfg.cohort.bot_threshold = threshold.unwrap_or(cfg.cohort.bot_threshold);
            cfg.validate()?;
            run_stages(&cfg, Stage::Bots, Stage::Bots, exec)?;
            print_stage(&cfg, Stage::Bots)
        }
        CohortCommand::Due { cfg, now, interval_days } => {
            let cfg = load(&cfg)?;
            let store = open_cohort(&cfg)?;
            let now = now.unwrap_or_else(|| cfg.now());
            let interval = interval_days.unwrap_or(cfg.cohort.recollection_interval_days);
            let due: Vec<_> = store
                .cohort
                .due_for_recollection(now, interval)
                .into_iter()
                .map(|t| json!({ "member_id": t.member_id, "last_collected_at": t.last_collected_at }))
                .collect();
            print_json(&json!({ "now": now, "interval_days": interval, "due": due.len(), "members": due }))
        }
        CohortCommand::Merge { cfg, posts, now } => {
            let cfg = load(&cfg)?;
            let mut store = open_cohort(&cfg)?;
            let pool = corpus::read_all(&posts)?;
            let now = now.unwrap_or_else(|| cfg.now());
            let stats = store.cohort.recollect(&pool, now, cfg.cohort.recollection_interval_days, exec)?;
            store.compact()?;
            print_json(&stats)
        }
        CohortCommand::Override { cfg, member, decision } => {
            let cfg = load(&cfg)?;
            let mut store = open_cohort(&cfg)?;
            let d = match decision {
                Decision::Keep => Some(ManualOverride::Keep),
                Decision::Exclude => Some(ManualOverride::Exclude),
                Decision::Clear => None,
            };
            store.cohort.set_override(&member, d)?;
            store.compact()?;
            print_json(&store.cohort.member(&member))
        }
    }
}

fn open_cohort(cfg: &PipelineConfig) -> Result<CohortStore> {
    let dir = cfg.work_dir().join(COHORT_DIR);
    if !dir.is_dir() {
        bail!("no cohort store in {}; run `toxipipe cohort admit` first", dir.display());
    }
    Ok(CohortStore::open(&dir, &cfg.cohort.salt)?)
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {}
        _ = term => {}
    }
    tracing::info!("shutting down");
}
