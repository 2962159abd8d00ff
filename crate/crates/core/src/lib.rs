// SPDX-License-Identifier: MIT OR Apache-2.0

//! Probes that read LLM hidden states and predict whether the answer will be
//! correct, plus the metrics, study protocols and threshold router built on
//! top of them.

pub mod cli;
pub mod error;
pub mod feature_store;
pub mod metrics;
pub mod nn;
pub mod plot;
pub mod pooling;
pub mod probes;
pub mod router;
pub mod training;

pub use error::{Error, Result};
