// SPDX-License-Identifier: MIT OR Apache-2.0

//! Ranking and selective-prediction metrics over `(p, y)` pairs.
//!
//! Confidence is `p` itself: rejection drops the lowest-`p` samples first
//! and the accuracy of the retained set is the mean of their labels. Tied
//! scores form one group; a coverage level that cuts through a group
//! credits the group's mean label to each retained member, so every metric
//! is independent of input order.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scores with binary correctness labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredSet {
    scores: Vec<f64>,
    labels: Vec<u8>,
}

impl ScoredSet {
    pub fn new(scores: Vec<f64>, labels: Vec<u8>) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} scores, {} labels",
                scores.len(),
                labels.len()
            )));
        }
        if scores.is_empty() {
            return Err(Error::InvalidArgument("empty scored set".into()));
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite("scores".into()));
        }
        if labels.iter().any(|&y| y > 1) {
            return Err(Error::InvalidArgument("labels must be 0 or 1".into()));
        }
        Ok(Self { scores, labels })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&y| y == 1).count()
    }

    /// Mean label: accuracy when every query is answered.
    pub fn accuracy(&self) -> f64 {
        self.positives() as f64 / self.len() as f64
    }

    fn require_both_classes(&self) -> Result<(usize, usize)> {
        let p = self.positives();
        let n = self.len() - p;
        if p == 0 || n == 0 {
            return Err(Error::Degenerate(format!(
                "ROC needs both classes, got {p} positive / {n} negative"
            )));
        }
        Ok((p, n))
    }

    /// Groups of equal score in descending score order: `(score, size, positives)`.
    fn groups(&self) -> Vec<(f64, usize, usize)> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by(|&a, &b| self.scores[b].total_cmp(&self.scores[a]).then(a.cmp(&b)));
        let mut groups: Vec<(f64, usize, usize)> = Vec::new();
        for i in order {
            let (s, y) = (self.scores[i], self.labels[i] as usize);
            match groups.last_mut() {
                Some(g) if g.0 == s => {
                    g.1 += 1;
                    g.2 += y;
                }
                _ => groups.push((s, 1, y)),
            }
        }
        groups
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    /// Points at or above this score are predicted positive; +inf for the
    /// origin, written as `null` in JSON.
    #[serde(deserialize_with = "null_as_infinity")]
    pub threshold: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RacPoint {
    /// retained / total
    pub coverage: f64,
    pub accuracy: f64,
    /// Lowest score among the retained samples.
    pub threshold: f64,
}

fn null_as_infinity<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
}

/// ROC from (0,0) to (1,1), one step per distinct score.
pub fn roc_curve(s: &ScoredSet) -> Result<Vec<RocPoint>> {
    let (p, n) = s.require_both_classes()?;
    let mut points = vec![RocPoint {
        fpr: 0.0,
        tpr: 0.0,
        threshold: f64::INFINITY,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    for (score, size, pos) in s.groups() {
        tp += pos;
        fp += size - pos;
        points.push(RocPoint {
            fpr: fp as f64 / n as f64,
            tpr: tp as f64 / p as f64,
            threshold: score,
        });
    }
    Ok(points)
}

/// Trapezoidal area under the ROC curve.
pub fn auroc(s: &ScoredSet) -> Result<f64> {
    let roc = roc_curve(s)?;
    Ok(roc
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
        .sum())
}

/// Accuracy of the `k` most confident samples for every `k = 1..=n`.
pub fn rac_curve(s: &ScoredSet) -> Vec<RacPoint> {
    let n = s.len();
    let mut out = Vec::with_capacity(n);
    let (mut before, mut pos_before) = (0usize, 0usize);
    for (score, size, pos) in s.groups() {
        for taken in 1..=size {
            let k = before + taken;
            // taken * pos is an exact integer, so a whole group adds exactly `pos`.
            let correct = pos_before as f64 + (taken * pos) as f64 / size as f64;
            out.push(RacPoint {
                coverage: k as f64 / n as f64,
                accuracy: correct / k as f64,
                threshold: score,
            });
        }
        before += size;
        pos_before += pos;
    }
    out
}

/// Area under the RAC over coverage (0, 1]: trapezoids between the `k/n`
/// points, with the first point held flat back to coverage 0.
pub fn aurac(s: &ScoredSet) -> f64 {
    let rac = rac_curve(s);
    let w = 1.0 / rac.len() as f64;
    let first = rac[0].accuracy * w;
    first
        + rac
            .windows(2)
            .map(|p| (p[1].coverage - p[0].coverage) * (p[0].accuracy + p[1].accuracy) / 2.0)
            .sum::<f64>()
}

/// Number of samples retained at coverage `c`: `ceil(c * n)`.
fn retained(n: usize, c: f64) -> Result<usize> {
    if !(c > 0.0 && c <= 1.0) {
        return Err(Error::InvalidArgument(format!("coverage must be in (0, 1], got {c}")));
    }
    Ok(((c * n as f64 - 1e-9).ceil() as usize).clamp(1, n))
}

/// Accuracy over the `ceil(c * n)` most confident samples.
pub fn accuracy_at_coverage(s: &ScoredSet, c: f64) -> Result<f64> {
    let k = retained(s.len(), c)?;
    if k == s.len() {
        return Ok(s.accuracy());
    }
    Ok(rac_curve(s)[k - 1].accuracy)
}

/// Largest `tau` with at least a `c` fraction of scores `>= tau`.
pub fn threshold_for_coverage(s: &ScoredSet, c: f64) -> Result<f64> {
    let k = retained(s.len(), c)?;
    let mut sorted = s.scores.clone();
    sorted.sort_by(|a, b| b.total_cmp(a));
    Ok(sorted[k - 1])
}

/// Everything reported for one evaluation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub positives: usize,
    pub accuracy: f64,
    pub auroc: f64,
    pub aurac: f64,
    pub roc: Vec<RocPoint>,
    pub rac: Vec<RacPoint>,
    pub ids: Vec<String>,
    pub scores: Vec<f64>,
    pub labels: Vec<u8>,
}

impl EvalReport {
    /// Fails on a one-class set since AUROC is undefined there.
    pub fn new(ids: Vec<String>, scores: Vec<f64>, labels: Vec<u8>) -> Result<Self> {
        if ids.len() != scores.len() {
            return Err(Error::ShapeMismatch(format!("{} ids, {} scores", ids.len(), scores.len())));
        }
        let set = ScoredSet::new(scores, labels)?;
        let roc = roc_curve(&set)?;
        let auroc = auroc(&set)?;
        let rac = rac_curve(&set);
        Ok(Self {
            n: set.len(),
            positives: set.positives(),
            accuracy: set.accuracy(),
            auroc,
            aurac: aurac(&set),
            roc,
            rac,
            ids,
            scores: set.scores,
            labels: set.labels,
        })
    }

    pub fn scored_set(&self) -> ScoredSet {
        ScoredSet {
            scores: self.scores.clone(),
            labels: self.labels.clone(),
        }
    }
}

pub fn roc_csv(points: &[RocPoint]) -> String {
    let mut out = String::from("fpr,tpr,threshold\n");
    for p in points {
        writeln!(out, "{},{},{}", p.fpr, p.tpr, p.threshold).unwrap();
    }
    out
}

pub fn rac_csv(points: &[RacPoint]) -> String {
    let mut out = String::from("coverage,accuracy,threshold\n");
    for p in points {
        writeln!(out, "{},{},{}", p.coverage, p.accuracy, p.threshold).unwrap();
    }
    out
}
