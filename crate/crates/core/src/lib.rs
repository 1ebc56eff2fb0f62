//! Toolkit for mining prescription-medication misuse signals from social
//! media archives.
//!
//! The crate is organised by pipeline stage:
//!
//! * [`lexvar`]: misspelling / lexical-variant generation from word embeddings
//! * [`corpus`]: JSONL ingestion, normalisation, lexicon matching and dedup
//! * [`annotation`]: four-class labelling workflow and Cohen's kappa
//! * [`classify`]: hashed features, logistic regression, external scorers, fusion
//! * [`cohort`]: longitudinal cohort with recollection scheduling and bot filtering
//! * [`signals`]: region rates, correlation with permutation tests, emotion profiles
//! * [`pipeline`]: configuration, the end-to-end driver and aggregated exports
//!
//! Inner loops that are embarrassingly parallel take an [`Exec`] argument.
//! With the `parallel` feature (default) `Exec::Parallel` runs on rayon;
//! without it, every call takes the sequential path. Both paths produce
//! identical results, including for seeded Monte Carlo procedures.

pub mod annotation;
pub mod classify;
pub mod cohort;
pub mod corpus;
mod error;
mod exec;
pub mod lexvar;
pub mod pipeline;
pub mod signals;
pub mod synth;
pub mod text;

pub use error::{Error, Result};
pub use exec::Exec;

/// Hex-encoded SHA-256 of `bytes`.
pub fn sha256_hex(bytes: impl AsRef<[u8]>) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(Sha256::digest(bytes.as_ref()))
}
