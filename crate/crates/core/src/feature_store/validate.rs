// SPDX-License-Identifier: MIT OR Apache-2.0

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::HiddenStateRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    NonFinite,
    EmptyQuestion,
    InvalidLabel,
    ShapeMismatch,
    DimensionMismatch,
    DuplicateId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub id: String,
    pub kind: ViolationKind,
}

/// Label statistics in the Count/Accuracy style, plus any invariant violations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub total: usize,
    pub positives: usize,
    pub negatives: usize,
    /// positives / total; 0 for an empty dataset.
    pub accuracy: f64,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has_both_classes(&self) -> bool {
        self.positives > 0 && self.negatives > 0
    }
}

pub fn validate(records: &[HiddenStateRecord]) -> ValidationReport {
    let mut violations = Vec::new();
    let mut seen = HashSet::new();
    let dim = records.first().map(|r| r.hidden_dim);
    let mut positives = 0usize;

    for r in records {
        let mut flag = |kind| {
            violations.push(Violation {
                id: r.id.clone(),
                kind,
            })
        };
        if r.label == 1 {
            positives += 1;
        } else if r.label != 0 {
            flag(ViolationKind::InvalidLabel);
        }
        if r.n_question == 0 {
            flag(ViolationKind::EmptyQuestion);
        }
        if r.states.len() != r.n_tokens() * r.hidden_dim {
            flag(ViolationKind::ShapeMismatch);
        }
        if Some(r.hidden_dim) != dim {
            flag(ViolationKind::DimensionMismatch);
        }
        if r.states.iter().any(|v| !v.is_finite()) {
            flag(ViolationKind::NonFinite);
        }
        if !seen.insert(r.id.as_str()) {
            flag(ViolationKind::DuplicateId);
        }
    }

    let total = records.len();
    let accuracy = if total == 0 {
        0.0
    } else {
        positives as f64 / total as f64
    };
    ValidationReport {
        total,
        positives,
        negatives: total - positives,
        accuracy,
        violations,
    }
}
