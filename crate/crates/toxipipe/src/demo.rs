//! Writers for the bundled demo and classifier fixtures.

use std::fs;
use std::path::Path;

use anyhow::Context;
use serde_json::json;
use toxipipe_core::synth::{self, DemoSpec, Recipe};

pub const DEMO_SEED: u64 = 20_240_301;
pub const CLASSIFY_SEED: u64 = 4_004;

const GUIDELINE: &str = "\
# Labelling guideline

Label each post by what it says about the medication it mentions.

- **nonmedical_use** (key 1): the author or someone they describe uses the drug without or beyond a prescription, e.g. to get high, to stay awake, in larger doses or by another route.
- **consumption** (key 2): the author or someone close takes the drug as prescribed, or talks about their prescription.
- **mention** (key 3): the drug is discussed (news, research, policy) without anyone's consumption.
- **unrelated** (key 4): the matched term does not refer to the medication, e.g. a song or a pet name.

When unsure between two classes, pick the less severe one and leave a note for adjudication.
";

/// Demo pipeline config; paths are relative to the demo directory.
pub fn demo_config(seed: u64) -> serde_json::Value {
    json!({
        "schema_version": 1,
        "seed": seed,
        "as_of": synth::demo_as_of(),
        "paths": {
            "embeddings": "embeddings.txt",
            "seeds": "seeds.txt",
            "corpus": "corpus.jsonl",
            "train": "train.jsonl",
            "history": "history.jsonl",
            "region_table": "region_metrics.csv",
            "emotion_lexicon": "emotions.tsv",
            "guideline": "guideline.md",
            "work_dir": "work"
        },
        "lexvar": { "theta_sem": 0.70, "theta_lex": 0.65, "max_depth": 3, "max_neighbors": 50 },
        "classifier": {
            "models": 3,
            "fusion": "mean",
            "features": { "hash_bits": 16 }
        },
        "cohort": {
            "salt": "demo-salt-not-secret",
            "admission": { "mode": "argmax" },
            "recollection_interval_days": 14,
            "bot_threshold": 0.5
        },
        "signals": { "permutations": 9999, "min_support": 30 },
        "server": { "bind": "127.0.0.1", "port": 8080 }
    })
}

/// Synthetic demo corpus, ground truth, guideline and `config.json`.
pub fn write_demo(dir: &Path, spec: &DemoSpec, seed: u64) -> anyhow::Result<()> {
    let data = synth::demo(spec, seed)?;
    synth::write_demo(dir, &data)?;
    fs::write(dir.join("guideline.md"), GUIDELINE)?;
    let cfg = serde_json::to_string_pretty(&demo_config(seed))? + "\n";
    fs::write(dir.join("config.json"), cfg).context("writing config.json")?;
    Ok(())
}

/// Train/test split for the classifier benchmark plus the recipe used.
pub fn write_classify(dir: &Path, train: usize, test: usize, nm_share: f64, seed: u64) -> anyhow::Result<()> {
    fs::create_dir_all(dir)?;
    let recipe = Recipe::default();
    let train_set = synth::labeled_set(train, nm_share, &recipe, seed, "tr");
    let test_set = synth::labeled_set(test, nm_share, &recipe, seed.wrapping_add(1), "te");
    synth::write_jsonl(dir.join("train.jsonl"), &train_set)?;
    synth::write_jsonl(dir.join("test.jsonl"), &test_set)?;
    let meta = json!({ "seed": seed, "train": train, "test": test, "nm_share": nm_share, "recipe": recipe });
    fs::write(dir.join("recipe.json"), serde_json::to_string_pretty(&meta)? + "\n")?;
    Ok(())
}
