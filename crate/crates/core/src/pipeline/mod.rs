//! Configuration, the staged end-to-end driver and aggregated exports.
//!
//! A run executes `expand → ingest → train → classify → cohort → bots →
//! rates → signals → export`. Each stage persists its output under the
//! work directory, so any stage can be rerun from the outputs of the
//! previous ones.

mod config;
mod export;
mod run;

pub use config::{
    stage_seed, ClassifierConfig, CohortConfig, IngestConfig, Paths, PipelineConfig, ServerConfig, SignalsConfig,
    SCHEMA_VERSION,
};
pub use export::{
    csv_rows, export_stats, load_stats, render, ExportFilter, ExportFormat, StatsDocument, CSV_HEADER, STATS_CSV,
    STATS_JSON,
};
pub use run::{
    file_sha256, model_path, model_settings, run_pipeline, CorrelationOutcome, EmotionSummary, RunManifest,
    RunOptions, Stage, StageOutput, StageRecord, StageStatus, CLASSIFIED, COHORT_DIR, CORRELATION, EMOTIONS, LEXICON,
    MATCHED, RATES, TOOL_VERSION,
};
