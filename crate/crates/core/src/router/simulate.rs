// SPDX-License-Identifier: MIT OR Apache-2.0

//! Latency and accuracy of three serving strategies on a scored trace:
//!
//! * `always_default`: every answer comes from the default model.
//! * `post_hoc`: generate, then run the detector, then regenerate with the
//!   fallback when flagged.
//! * `parallel`: the detector reads the question's hidden states while the
//!   first default token is being generated; flagged queries start the
//!   fallback as soon as the score is known.
//!
//! Latency of an item is the time until its final answer is complete. Items
//! sent to the fallback count as correct with probability `fallback_accuracy`.

use serde::{Deserialize, Serialize};

use super::{decide, Route, RoutePolicy};
use crate::error::{Error, Result};
use crate::metrics::ScoredSet;
use crate::probes::Score;

/// All times in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatencyModel {
    pub default_token_secs: f64,
    pub fallback_token_secs: f64,
    pub probe_secs: f64,
    pub fallback_accuracy: f64,
}

impl LatencyModel {
    pub fn check(&self) -> Result<()> {
        let times = [self.default_token_secs, self.fallback_token_secs, self.probe_secs];
        if times.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
            return Err(Error::InvalidArgument(format!("latency model times must be > 0: {self:?}")));
        }
        if !(0.0..=1.0).contains(&self.fallback_accuracy) {
            return Err(Error::InvalidArgument(format!(
                "fallback accuracy {} outside [0, 1]",
                self.fallback_accuracy
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemLedger {
    pub index: usize,
    pub p: f64,
    pub label: u8,
    pub answer_tokens: usize,
    pub route: Route,
    pub latency_default: f64,
    pub latency_post_hoc: f64,
    pub latency_parallel: f64,
    /// Parallel latency minus the latency of the model that finally answers
    /// had it been chosen up front.
    pub added_parallel: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyReport {
    pub name: String,
    pub mean_latency: f64,
    pub accuracy: f64,
    pub n_direct: usize,
    pub n_fallback: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub n: usize,
    pub tau: f64,
    pub strategies: Vec<StrategyReport>,
    pub items: Vec<ItemLedger>,
    pub max_added_direct: f64,
    pub max_added_fallback: f64,
    /// One default-model token time.
    pub added_latency_bound: f64,
    /// Direct items add nothing and fallback items add at most one token time.
    pub bound_holds: bool,
}

pub fn simulate(trace: &ScoredSet, answer_tokens: &[usize], policy: &RoutePolicy, lm: &LatencyModel) -> Result<SimReport> {
    policy.check()?;
    lm.check()?;
    if trace.is_empty() {
        return Err(Error::InvalidArgument("empty trace".into()));
    }
    if answer_tokens.len() != trace.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} answer lengths for {} trace items",
            answer_tokens.len(),
            trace.len()
        )));
    }

    let (td, tf, tp) = (lm.default_token_secs, lm.fallback_token_secs, lm.probe_secs);
    let mut items = Vec::with_capacity(trace.len());
    for (i, ((&p, &label), &len)) in trace.scores().iter().zip(trace.labels()).zip(answer_tokens).enumerate() {
        let route = decide(Score::new(p)?, policy).route;
        let n = len as f64;
        let (post_hoc, parallel, added) = match route {
            Route::AnswerDirect => (n * td + tp, n * td, 0.0),
            Route::Fallback => (n * td + tp + n * tf, tp + n * tf, tp),
        };
        items.push(ItemLedger {
            index: i,
            p,
            label,
            answer_tokens: len,
            route,
            latency_default: n * td,
            latency_post_hoc: post_hoc,
            latency_parallel: parallel,
            added_parallel: added,
        });
    }

    let count = items.len() as f64;
    let n_fallback = items.iter().filter(|it| it.route == Route::Fallback).count();
    let n_direct = items.len() - n_fallback;
    let routed_accuracy = items
        .iter()
        .map(|it| match it.route {
            Route::AnswerDirect => f64::from(it.label),
            Route::Fallback => lm.fallback_accuracy,
        })
        .sum::<f64>()
        / count;
    let mean = |f: fn(&ItemLedger) -> f64| items.iter().map(f).sum::<f64>() / count;
    let strategies = vec![
        StrategyReport {
            name: "always_default".into(),
            mean_latency: mean(|it| it.latency_default),
            accuracy: trace.accuracy(),
            n_direct: items.len(),
            n_fallback: 0,
        },
        StrategyReport {
            name: "post_hoc".into(),
            mean_latency: mean(|it| it.latency_post_hoc),
            accuracy: routed_accuracy,
            n_direct,
            n_fallback,
        },
        StrategyReport {
            name: "parallel".into(),
            mean_latency: mean(|it| it.latency_parallel),
            accuracy: routed_accuracy,
            n_direct,
            n_fallback,
        },
    ];

    let max_added = |r: Route| {
        items
            .iter()
            .filter(|it| it.route == r)
            .map(|it| it.added_parallel)
            .fold(0.0, f64::max)
    };
    let (max_added_direct, max_added_fallback) = (max_added(Route::AnswerDirect), max_added(Route::Fallback));
    Ok(SimReport {
        n: items.len(),
        tau: policy.tau,
        strategies,
        bound_holds: max_added_direct == 0.0 && max_added_fallback <= td,
        max_added_direct,
        max_added_fallback,
        added_latency_bound: td,
        items,
    })
}
