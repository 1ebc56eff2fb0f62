//! Gateway for the toxipipe pipeline: HTTP service, demo scaffolding and
//! a model-backed scorer peer for the external-scorer protocol.

pub mod demo;
pub mod peer;
pub mod server;
