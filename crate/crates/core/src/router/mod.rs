// SPDX-License-Identifier: MIT OR Apache-2.0

//! Threshold routing on probe scores, the scoring service and a trace-driven
//! latency simulator.

mod service;
mod simulate;

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

pub use service::{app, bind, probe_version, serve, HealthResponse, ScoreRequest, ScoreResponse, ServiceState};
pub use simulate::{simulate, ItemLedger, LatencyModel, SimReport, StrategyReport};

use crate::error::{Error, Result};
use crate::feature_store::{truncate_answer, HiddenStateRecord, SegmentMode};
use crate::pooling::TokenMatrix;
use crate::probes::{ProbeParams, Score};

/// Which part of the generation the router waits for before scoring.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicyMode {
    QuestionOnly,
    /// Score after the first `fraction` of the answer tokens.
    PartialAnswer { fraction: f64 },
}

impl PolicyMode {
    /// Segment mode a probe needs to serve this policy.
    pub fn segment_mode(&self) -> SegmentMode {
        match self {
            Self::QuestionOnly => SegmentMode::QuestionOnly,
            Self::PartialAnswer { .. } => SegmentMode::QuestionAndAnswer,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutePolicy {
    pub tau: f64,
    pub fallback_name: String,
    pub mode: PolicyMode,
}

impl RoutePolicy {
    pub fn new(tau: f64, fallback_name: impl Into<String>, mode: PolicyMode) -> Result<Self> {
        let p = Self {
            tau,
            fallback_name: fallback_name.into(),
            mode,
        };
        p.check()?;
        Ok(p)
    }

    pub fn check(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::InvalidArgument(format!("tau must lie in [0, 1], got {}", self.tau)));
        }
        if let PolicyMode::PartialAnswer { fraction } = self.mode {
            if !(fraction > 0.0 && fraction <= 1.0) {
                return Err(Error::InvalidArgument(format!("answer fraction {fraction} outside (0, 1]")));
            }
        }
        Ok(())
    }

    /// The probe must read the segment this policy scores.
    pub fn check_probe(&self, probe: &ProbeParams) -> Result<()> {
        let want = self.mode.segment_mode();
        if probe.mode != want {
            return Err(Error::ModeMismatch(format!(
                "policy scores {want} features but the probe was trained on {}",
                probe.mode
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Route {
    #[serde(rename = "ANSWER_DIRECT")]
    AnswerDirect,
    #[serde(rename = "FALLBACK")]
    Fallback,
}

impl std::fmt::Display for Route {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::AnswerDirect => "ANSWER_DIRECT",
            Self::Fallback => "FALLBACK",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RouteDecision {
    pub route: Route,
    pub p: Score,
    /// Time spent scoring and deciding; zero when only [`decide`] ran.
    pub decision_time: Duration,
}

/// `ANSWER_DIRECT` iff `p >= tau`.
pub fn decide(p: Score, policy: &RoutePolicy) -> RouteDecision {
    let route = if p.value() >= policy.tau {
        Route::AnswerDirect
    } else {
        Route::Fallback
    };
    RouteDecision {
        route,
        p,
        decision_time: Duration::ZERO,
    }
}

/// Score an already segment-selected token matrix, refusing features of the
/// wrong mode or width.
pub fn score_query(probe: &ProbeParams, mode: SegmentMode, features: &TokenMatrix) -> Result<Score> {
    if mode != probe.mode {
        return Err(Error::ModeMismatch(format!(
            "probe reads {} features, query carries {mode}",
            probe.mode
        )));
    }
    probe.score(features)
}

/// Apply the policy's answer cut, score and decide, timing the whole step.
pub fn route_record(probe: &ProbeParams, policy: &RoutePolicy, record: &HiddenStateRecord) -> Result<RouteDecision> {
    let started = Instant::now();
    policy.check_probe(probe)?;
    let p = match policy.mode {
        PolicyMode::QuestionOnly => probe.score_record(record)?,
        PolicyMode::PartialAnswer { fraction } => probe.score_record(&truncate_answer(record, fraction)?)?,
    };
    let mut d = decide(p, policy);
    d.decision_time = started.elapsed();
    Ok(d)
}
