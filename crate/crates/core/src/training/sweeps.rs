// SPDX-License-Identifier: MIT OR Apache-2.0

//! Layer sweep, OOD matrix and answer-truncation sweep.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{evaluate, train, DataSource, StudyConfig, TrainHistory};
use crate::error::{Error, Result};
use crate::feature_store::{read_dataset, split, truncate_answer, DatasetHeader, HiddenStateRecord, SegmentMode};
use crate::metrics::EvalReport;
use crate::probes::ProbeParams;

/// Name of the union-trained row in an OOD matrix.
pub const UNION_SOURCE: &str = "All";

/// Split (after sorting by id, so file order does not matter), train on the
/// train/val parts and evaluate on the held-out test part.
pub fn run_split_study(
    mut records: Vec<HiddenStateRecord>,
    source: &DataSource,
    study: &StudyConfig,
) -> Result<(ProbeParams, TrainHistory, EvalReport)> {
    study.check()?;
    records.sort_by(|a, b| a.id.cmp(&b.id));
    let parts = split(&records, &study.split)?;
    let (params, history) = train(&study.probe, study.mode, &parts.train, &parts.val, source, &study.train)?;
    let report = evaluate(&params, &parts.test)?;
    Ok((params, history, report))
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))
}

fn source_of(h: &DatasetHeader) -> DataSource {
    DataSource {
        model_name: h.model_name.clone(),
        layer_index: h.layer_index,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerRow {
    pub layer_index: usize,
    pub path: PathBuf,
    pub auroc: f64,
    pub aurac: f64,
    pub accuracy: f64,
    pub best_epoch: usize,
    pub n_test: usize,
}

fn id_labels(path: &Path) -> Result<(DatasetHeader, BTreeMap<String, u8>)> {
    let (h, records) = read_dataset(path)?;
    Ok((h, records.into_iter().map(|r| (r.id, r.label)).collect()))
}

/// Train one probe per layer file with shared settings and report test
/// metrics, sorted by layer. Every file must hold the same ids and labels.
pub fn layer_sweep(paths: &[PathBuf], study: &StudyConfig, jobs: usize) -> Result<Vec<LayerRow>> {
    if paths.is_empty() {
        return Err(Error::InvalidArgument("layer sweep needs at least one file".into()));
    }
    study.check()?;
    let (_, reference) = id_labels(&paths[0])?;
    for p in &paths[1..] {
        let (_, other) = id_labels(p)?;
        if other != reference {
            let detail = reference
                .iter()
                .find(|(id, l)| other.get(*id) != Some(l))
                .map(|(id, _)| format!("record {id}"))
                .or_else(|| other.keys().find(|id| !reference.contains_key(*id)).map(|id| format!("record {id}")))
                .unwrap_or_default();
            return Err(Error::InvalidArgument(format!(
                "{} and {} disagree on record ids or labels ({detail})",
                paths[0].display(),
                p.display()
            )));
        }
    }

    let mut rows = pool(jobs)?.install(|| {
        paths
            .par_iter()
            .map(|path| {
                let (h, records) = read_dataset(path)?;
                let (_, history, report) = run_split_study(records, &source_of(&h), study)?;
                tracing::info!(layer = h.layer_index, auroc = report.auroc, "layer done");
                Ok(LayerRow {
                    layer_index: h.layer_index,
                    path: path.clone(),
                    auroc: report.auroc,
                    aurac: report.aurac,
                    accuracy: report.accuracy,
                    best_epoch: history.best_epoch,
                    n_test: report.n,
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;
    rows.sort_by_key(|r| r.layer_index);
    Ok(rows)
}

pub fn layer_table_csv(rows: &[LayerRow]) -> String {
    let mut out = String::from("layer,auroc,aurac,accuracy,best_epoch,n_test\n");
    for r in rows {
        writeln!(out, "{},{},{},{},{},{}", r.layer_index, r.auroc, r.aurac, r.accuracy, r.best_epoch, r.n_test).unwrap();
    }
    out
}

/// Test AUROC (and AURAC) for each training source (rows, with the union
/// last) against each target's held-out test split (columns).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OodMatrix {
    pub layer_index: usize,
    pub sources: Vec<String>,
    pub targets: Vec<String>,
    pub auroc: Vec<Vec<f64>>,
    pub aurac: Vec<Vec<f64>>,
}

impl OodMatrix {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("source,target,auroc,aurac\n");
        for (i, s) in self.sources.iter().enumerate() {
            for (j, t) in self.targets.iter().enumerate() {
                writeln!(out, "{s},{t},{},{}", self.auroc[i][j], self.aurac[i][j]).unwrap();
            }
        }
        out
    }
}

/// Cross-dataset matrix at one fixed layer. Each source trains on its own
/// train/val splits; the union source trains on all of them. Targets are
/// always scored on their test splits only.
pub fn ood_matrix(
    datasets: &[(String, PathBuf)],
    study: &StudyConfig,
    fixed_layer: usize,
    jobs: usize,
) -> Result<OodMatrix> {
    if datasets.len() < 2 {
        return Err(Error::InvalidArgument("OOD matrix needs at least two datasets".into()));
    }
    study.check()?;
    let mut names: Vec<&str> = datasets.iter().map(|(n, _)| n.as_str()).collect();
    names.sort_unstable();
    if names.windows(2).any(|w| w[0] == w[1]) || names.contains(&UNION_SOURCE) {
        return Err(Error::InvalidArgument(format!(
            "dataset names must be distinct and not {UNION_SOURCE:?}"
        )));
    }

    let mut header0: Option<DatasetHeader> = None;
    let mut parts = Vec::with_capacity(datasets.len());
    for (name, path) in datasets {
        let (h, mut records) = read_dataset(path)?;
        if h.layer_index != fixed_layer {
            return Err(Error::InvalidArgument(format!(
                "{name} holds layer {}, matrix is fixed at layer {fixed_layer}",
                h.layer_index
            )));
        }
        if let Some(h0) = &header0 {
            if h.hidden_dim != h0.hidden_dim {
                return Err(Error::DimensionMismatch(format!(
                    "{name} has hidden dim {}, {} has {}",
                    h.hidden_dim, datasets[0].0, h0.hidden_dim
                )));
            }
        } else {
            header0 = Some(h.clone());
        }
        records.sort_by(|a, b| a.id.cmp(&b.id));
        parts.push(split(&records, &study.split)?);
    }
    let h0 = header0.expect("at least two datasets");

    let mut sources: Vec<(String, Vec<HiddenStateRecord>, Vec<HiddenStateRecord>)> = datasets
        .iter()
        .zip(&parts)
        .map(|((n, _), p)| (n.clone(), p.train.clone(), p.val.clone()))
        .collect();
    let prefixed = |n: &str, rs: &[HiddenStateRecord]| {
        rs.iter()
            .map(|r| HiddenStateRecord {
                id: format!("{n}/{}", r.id),
                ..r.clone()
            })
            .collect::<Vec<_>>()
    };
    let union_train = datasets.iter().zip(&parts).flat_map(|((n, _), p)| prefixed(n, &p.train)).collect();
    let union_val = datasets.iter().zip(&parts).flat_map(|((n, _), p)| prefixed(n, &p.val)).collect();
    sources.push((UNION_SOURCE.to_string(), union_train, union_val));

    let source = DataSource {
        model_name: h0.model_name.clone(),
        layer_index: fixed_layer,
    };
    let rows = pool(jobs)?.install(|| {
        sources
            .par_iter()
            .map(|(name, tr, va)| {
                let (params, _) = train(&study.probe, study.mode, tr, va, &source, &study.train)?;
                let reports = parts
                    .iter()
                    .map(|p| evaluate(&params, &p.test))
                    .collect::<Result<Vec<_>>>()?;
                tracing::info!(source = %name, "ood row done");
                Ok(reports)
            })
            .collect::<Result<Vec<_>>>()
    })?;

    Ok(OodMatrix {
        layer_index: fixed_layer,
        sources: sources.into_iter().map(|s| s.0).collect(),
        targets: datasets.iter().map(|(n, _)| n.clone()).collect(),
        auroc: rows.iter().map(|r| r.iter().map(|e| e.auroc).collect()).collect(),
        aurac: rows.iter().map(|r| r.iter().map(|e| e.aurac).collect()).collect(),
    })
}

/// `0.05, 0.10, ..., 1.0`.
pub fn default_fractions() -> Vec<f64> {
    (1..=20).map(|i| f64::from(i) / 20.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruncationRow {
    pub fraction: f64,
    pub report: EvalReport,
}

/// Evaluate a question+answer probe seeing only the first `x` of each answer.
pub fn truncation_sweep(
    params: &ProbeParams,
    records: &[HiddenStateRecord],
    fractions: &[f64],
) -> Result<Vec<TruncationRow>> {
    if params.mode != SegmentMode::QuestionAndAnswer {
        return Err(Error::ModeMismatch(format!(
            "truncation sweep needs a {} probe, this one reads {}",
            SegmentMode::QuestionAndAnswer,
            params.mode
        )));
    }
    if let Some(x) = fractions.iter().find(|x| !(**x > 0.0 && **x <= 1.0)) {
        return Err(Error::InvalidArgument(format!("fraction {x} outside (0, 1]")));
    }
    fractions
        .iter()
        .map(|&x| {
            let cut = records.iter().map(|r| truncate_answer(r, x)).collect::<Result<Vec<_>>>()?;
            Ok(TruncationRow {
                fraction: x,
                report: evaluate(params, &cut)?,
            })
        })
        .collect()
}

pub fn truncation_table_csv(rows: &[TruncationRow]) -> String {
    let mut out = String::from("fraction,auroc,aurac,accuracy\n");
    for r in rows {
        writeln!(out, "{},{},{},{}", r.fraction, r.report.auroc, r.report.aurac, r.report.accuracy).unwrap();
    }
    out
}
