use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::run::{read_json, write_atomic, CorrelationOutcome, EmotionSummary, RunManifest, TOOL_VERSION};
use crate::cohort::CohortSummary;
use crate::signals::{PermutationTest, RegionRateReport};
use crate::{Error, Result};

pub const STATS_JSON: &str = "stats.json";
pub const STATS_CSV: &str = "stats.csv";
pub const CSV_HEADER: [&str; 4] = ["section", "key", "metric", "value"];

/// Aggregated run statistics. Counts and rates only: no post text and no
/// author or member identifiers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsDocument {
    pub schema_version: u32,
    pub tool_version: String,
    /// Record count of every stage before export.
    pub stage_records: BTreeMap<String, u64>,
    pub region_rates: RegionRateReport,
    pub correlation: CorrelationOutcome,
    pub emotions: EmotionSummary,
    pub cohort: CohortSummary,
}

pub(crate) fn build_document(
    stage_records: BTreeMap<String, u64>,
    region_rates: RegionRateReport,
    correlation: CorrelationOutcome,
    emotions: EmotionSummary,
    cohort: CohortSummary,
) -> StatsDocument {
    StatsDocument {
        schema_version: 1,
        tool_version: TOOL_VERSION.into(),
        stage_records,
        region_rates,
        correlation,
        emotions,
        cohort,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ExportFormat {
    #[default]
    Json,
    Csv,
}

impl FromStr for ExportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(ExportFormat::Json),
            "csv" => Ok(ExportFormat::Csv),
            _ => Err(Error::Contract(format!("unknown export format {s:?} (expected csv or json)"))),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ExportFilter {
    /// Keep only this region's rows. Sections that are not per region are
    /// left as they are.
    pub region: Option<String>,
}

/// Rows of the tidy CSV form: `section,key,metric,value`.
pub fn csv_rows(doc: &StatsDocument, filter: &ExportFilter) -> Vec<[String; 4]> {
    let mut rows: Vec<[String; 4]> = Vec::new();
    let mut push = |section: &str, key: &str, metric: &str, value: String| {
        rows.push([section.into(), key.into(), metric.into(), value]);
    };
    push("run", "", "schema_version", doc.schema_version.to_string());
    push("run", "", "tool_version", doc.tool_version.clone());
    for (stage, n) in &doc.stage_records {
        push("stage", stage, "records", n.to_string());
    }

    let rates = &doc.region_rates;
    for (region, r) in &rates.regions {
        if filter.region.as_ref().is_some_and(|f| f != region) {
            continue;
        }
        push("region", region, "nm_posts", r.nm_posts.to_string());
        push("region", region, "total_matched", r.total_matched.to_string());
        push("region", region, "rate", r.rate.to_string());
        push("region", region, "low_support", r.low_support.to_string());
        if let Some(p) = r.per_100k {
            push("region", region, "per_100k", p.to_string());
        }
    }
    if filter.region.is_none() {
        push("regions", "", "regionless", rates.regionless.to_string());
        push("regions", "", "min_support", rates.min_support.to_string());
        push("regions", "", "empty_regions", rates.empty_regions.len().to_string());
    }

    if let Some(c) = &doc.correlation.report {
        push("correlation", "", "metric", c.metric.clone());
        push("correlation", "", "n", c.n.to_string());
        push("correlation", "", "seed", c.seed.to_string());
        push("correlation", "", "dropped", c.dropped.len().to_string());
        for (name, t) in [("pearson", &c.pearson), ("spearman", &c.spearman)] {
            permutation_rows(&mut push, name, t);
        }
    }
    if let Some(why) = &doc.correlation.unavailable {
        push("correlation", "", "unavailable", why.clone());
    }

    for (class, p) in &doc.emotions.by_class {
        let key = class.as_str();
        push("emotion", key, "posts", p.posts.to_string());
        push("emotion", key, "total_hits", p.total_hits.to_string());
        for ((cat, n), share) in p.categories.iter().zip(&p.counts).zip(&p.distribution) {
            push("emotion", key, &format!("count.{cat}"), n.to_string());
            push("emotion", key, &format!("share.{cat}"), share.to_string());
        }
    }
    if let Some(t) = &doc.emotions.nonmedical_vs_rest {
        push("emotion_test", "nonmedical_use_vs_rest", "statistic", t.statistic.to_string());
        push("emotion_test", "nonmedical_use_vs_rest", "df", t.df.to_string());
        push("emotion_test", "nonmedical_use_vs_rest", "p_value", t.p_value.to_string());
        push("emotion_test", "nonmedical_use_vs_rest", "permutations", t.permutations.to_string());
    }
    if let Some(why) = &doc.emotions.unavailable {
        push("emotion_test", "nonmedical_use_vs_rest", "unavailable", why.clone());
    }

    let c = &doc.cohort;
    push("cohort", "", "members", c.members.to_string());
    push("cohort", "", "active", c.active.to_string());
    push("cohort", "", "excluded_bot", c.excluded_bot.to_string());
    push("cohort", "", "excluded_manual", c.excluded_manual.to_string());
    push("cohort", "", "timeline_posts", c.timeline_posts.to_string());
    for (month, n) in &c.size_by_month {
        push("cohort_size", month, "members", n.to_string());
    }
    rows
}

fn permutation_rows(push: &mut impl FnMut(&str, &str, &str, String), name: &str, t: &PermutationTest) {
    push("correlation", name, "r", t.observed.to_string());
    push("correlation", name, "p_value", t.p_value.to_string());
    push("correlation", name, "permutations", t.permutations.to_string());
    push("correlation", name, "exact", t.exact.to_string());
}

/// Render a document in the requested format.
pub fn render(doc: &StatsDocument, format: ExportFormat, filter: &ExportFilter) -> Result<String> {
    match format {
        ExportFormat::Json => {
            let mut doc = doc.clone();
            if let Some(region) = &filter.region {
                doc.region_rates.regions.retain(|k, _| k == region);
            }
            let mut s = serde_json::to_string_pretty(&doc)?;
            s.push('\n');
            Ok(s)
        }
        ExportFormat::Csv => {
            let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
            w.write_record(CSV_HEADER)?;
            for row in csv_rows(doc, filter) {
                w.write_record(&row)?;
            }
            let bytes = w.into_inner().map_err(|e| Error::Contract(format!("csv buffer: {e}")))?;
            Ok(String::from_utf8(bytes).expect("csv of utf-8 fields"))
        }
    }
}

/// Write `stats.json` and `stats.csv`; returns the number of CSV data rows.
pub(crate) fn write_exports(work: &Path, doc: &StatsDocument) -> Result<usize> {
    let all = ExportFilter::default();
    write_atomic(&work.join(STATS_JSON), render(doc, ExportFormat::Json, &all)?.as_bytes())?;
    write_atomic(&work.join(STATS_CSV), render(doc, ExportFormat::Csv, &all)?.as_bytes())?;
    Ok(csv_rows(doc, &all).len())
}

/// Load the stats document of the last completed run in `work_dir`.
pub fn load_stats(work_dir: impl AsRef<Path>) -> Result<StatsDocument> {
    let work = work_dir.as_ref();
    let completed = RunManifest::load(work).map(|m| m.completed).unwrap_or(false);
    let path = work.join(STATS_JSON);
    if !completed || !path.is_file() {
        return Err(Error::Domain(format!("no completed run in {}", work.display())));
    }
    read_json(&path)
}

/// Export the aggregated statistics of the last completed run.
pub fn export_stats(work_dir: impl AsRef<Path>, format: ExportFormat, filter: &ExportFilter) -> Result<String> {
    render(&load_stats(work_dir)?, format, filter)
}
