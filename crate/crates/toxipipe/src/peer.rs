//! Scorer peer over stdin/stdout, backed by a saved linear model. Stands in
//! for an external model server when exercising the scorer adapter.

use std::io::{BufRead, Write};

use anyhow::Context;
use serde::Deserialize;
use serde_json::json;
use toxipipe_core::classify::{featurize, LinearModel};
use toxipipe_core::corpus::normalize;

#[derive(Deserialize)]
struct Request {
    id: String,
    text: String,
}

/// Answer every request line until EOF. Returns the number answered.
pub fn run(model: &LinearModel, input: impl BufRead, mut output: impl Write) -> anyhow::Result<usize> {
    let mut n = 0;
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let req: Request = serde_json::from_str(&line).context("malformed scorer request")?;
        let x = featurize(&normalize(&req.text), model.feature_config());
        let p = model.predict(&req.id, &x);
        serde_json::to_writer(&mut output, &json!({ "id": req.id, "scores": p.scores }))?;
        output.write_all(b"\n")?;
        n += 1;
    }
    output.flush()?;
    Ok(n)
}
