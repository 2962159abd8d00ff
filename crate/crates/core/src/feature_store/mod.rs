// SPDX-License-Identifier: MIT OR Apache-2.0

//! Hidden-state datasets: the in-memory record type, the HSDS file format,
//! validation, stratified splitting, segment selection and synthetic data.

mod format;
mod split;
mod synth;
mod validate;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use format::{
    decode_dataset, encode_dataset, encoded_len, read_dataset, write_dataset, FORMAT_VERSION,
    MAGIC,
};
pub use split::{apportion, split, split_indices, Split, SplitSpec};
pub use synth::{synth_dataset, synth_dataset_with, SignalPlacement, SynthConfig};
pub use validate::{validate, ValidationReport, Violation, ViolationKind};

use crate::error::{Error, Result};
use crate::pooling::TokenMatrix;

/// One (question, answer) example: hidden states of every token at a single
/// layer plus the correctness label (1 = correct, 0 = incorrect).
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenStateRecord {
    pub id: String,
    pub label: u8,
    pub n_question: usize,
    pub n_answer: usize,
    pub hidden_dim: usize,
    /// Row-major `(n_question + n_answer) x hidden_dim`.
    pub states: Vec<f32>,
}

impl HiddenStateRecord {
    pub fn new(
        id: impl Into<String>,
        label: u8,
        n_question: usize,
        n_answer: usize,
        hidden_dim: usize,
        states: Vec<f32>,
    ) -> Result<Self> {
        let id = id.into();
        if label > 1 {
            return Err(Error::InvalidArgument(format!(
                "record {id}: label must be 0 or 1, got {label}"
            )));
        }
        if hidden_dim == 0 {
            return Err(Error::InvalidArgument(format!(
                "record {id}: hidden_dim must be >= 1"
            )));
        }
        let expected = (n_question + n_answer) * hidden_dim;
        if states.len() != expected {
            return Err(Error::ShapeMismatch(format!(
                "record {id}: {} floats for {} rows x {hidden_dim}",
                states.len(),
                n_question + n_answer
            )));
        }
        Ok(Self {
            id,
            label,
            n_question,
            n_answer,
            hidden_dim,
            states,
        })
    }

    pub fn n_tokens(&self) -> usize {
        self.n_question + self.n_answer
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.states[i * self.hidden_dim..(i + 1) * self.hidden_dim]
    }

    pub fn is_correct(&self) -> bool {
        self.label == 1
    }
}

/// Dataset-level header. One file holds one (model, layer) pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetHeader {
    #[serde(skip)]
    pub format_version: u32,
    pub model_name: String,
    pub layer_index: usize,
    pub hidden_dim: usize,
    pub record_count: usize,
    /// Optional dataset-level key/values (dataset name and the like).
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub meta: BTreeMap<String, String>,
}

impl DatasetHeader {
    pub fn new(model_name: impl Into<String>, layer_index: usize, hidden_dim: usize) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            model_name: model_name.into(),
            layer_index,
            hidden_dim,
            record_count: 0,
            meta: BTreeMap::new(),
        }
    }

    pub fn with_record_count(mut self, n: usize) -> Self {
        self.record_count = n;
        self
    }

    pub fn with_meta(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.meta.insert(key.into(), value.into());
        self
    }
}

/// Which token rows feed the probe.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentMode {
    #[default]
    QuestionOnly,
    QuestionAndAnswer,
}

impl std::fmt::Display for SegmentMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SegmentMode::QuestionOnly => "question_only",
            SegmentMode::QuestionAndAnswer => "question_and_answer",
        })
    }
}

impl std::str::FromStr for SegmentMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "question_only" => Ok(SegmentMode::QuestionOnly),
            "question_and_answer" => Ok(SegmentMode::QuestionAndAnswer),
            other => Err(Error::InvalidArgument(format!("unknown mode {other:?}"))),
        }
    }
}

/// Rows of `record` used under `mode`, in original token order, widened to f64.
pub fn segment_select(record: &HiddenStateRecord, mode: SegmentMode) -> Result<TokenMatrix> {
    let rows = match mode {
        SegmentMode::QuestionOnly => record.n_question,
        SegmentMode::QuestionAndAnswer => record.n_tokens(),
    };
    if rows == 0 {
        return Err(Error::InvalidArgument(format!(
            "record {}: empty {mode} selection",
            record.id
        )));
    }
    let d = record.hidden_dim;
    TokenMatrix::from_f32(rows, d, &record.states[..rows * d])
}

/// Keep only the first `ceil(fraction * n_answer)` answer tokens.
pub fn truncate_answer(record: &HiddenStateRecord, fraction: f64) -> Result<HiddenStateRecord> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "answer fraction must be in (0, 1], got {fraction}"
        )));
    }
    let kept = kept_answer_tokens(record.n_answer, fraction);
    let rows = record.n_question + kept;
    Ok(HiddenStateRecord {
        id: record.id.clone(),
        label: record.label,
        n_question: record.n_question,
        n_answer: kept,
        hidden_dim: record.hidden_dim,
        states: record.states[..rows * record.hidden_dim].to_vec(),
    })
}

/// `ceil(fraction * n)` with slack for binary rounding (0.1 * 30 is not 3.0).
pub(crate) fn kept_answer_tokens(n_answer: usize, fraction: f64) -> usize {
    let kept = (fraction * n_answer as f64 - 1e-9).ceil();
    (kept.max(0.0) as usize).min(n_answer)
}
