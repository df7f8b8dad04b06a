//! Desk-scale simulator for multi-party classification with one-shot
//! generative-model exchange (MPCPA) and an iterative FedAvg baseline.
//!
//! Each client trains a conditional denoising diffusion model on its own
//! labeled data, ships the model (never the data) through a central server,
//! trains a local classifier on real plus generated samples, and the server
//! aggregates the classifiers' predictions. Every model-bearing message is
//! accounted in a [`protocol::Ledger`], so communication costs are auditable:
//! the one-shot exchange totals `3n` messages against FedAvg's `2n * iters`.
//!
//! The crate also carries the privacy-audit side: a nearest-neighbor
//! memorization scan over generated samples and a loss-threshold membership
//! inference attack, plus the bias-variance-covariance diagnostic used to
//! reason about ensemble gains.
//!
//! Data-parallel inner loops (sampling, scans, per-client phases) go through
//! [`exec`] and run on rayon when the default `parallel` feature is enabled;
//! results are bitwise independent of scheduling because every parallel unit
//! owns its own seeded RNG stream.

pub mod aggregate;
pub mod audit;
pub mod config;
pub mod data;
pub mod diffusion;
pub mod error;
pub mod exec;
pub mod experiment;
pub mod nn;
pub mod protocol;

pub(crate) mod seeds;

pub use error::{Error, Result};
