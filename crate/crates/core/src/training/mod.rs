// SPDX-License-Identifier: MIT OR Apache-2.0

//! Probe training with early stopping on validation AUROC, plus the three
//! study protocols (layer sweep, OOD matrix, truncation sweep).

mod adam;
mod sweeps;

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::{adam_step, AdamHyper, AdamState};
pub use sweeps::{
    default_fractions, layer_sweep, layer_table_csv, ood_matrix, run_split_study, truncation_sweep,
    truncation_table_csv, LayerRow, OodMatrix, TruncationRow,
};

use crate::error::{Error, Result};
use crate::feature_store::{segment_select, HiddenStateRecord, SegmentMode, SplitSpec};
use crate::metrics::{auroc, EvalReport, ScoredSet};
use crate::nn::{bce_with_logit, sigmoid};
use crate::pooling::{pca_fit, PoolingSpec, TokenMatrix};
use crate::probes::{forward_backward, Example, Features, ProbeMeta, ProbeParams, TransformerConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a val-AUROC gain before stopping.
    pub patience: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Loss weight on the positive (correct) class; `None` means 1.
    pub pos_weight: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 64,
            max_epochs: 100,
            patience: 10,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            pos_weight: None,
        }
    }
}

impl TrainConfig {
    pub fn hyper(&self) -> AdamHyper {
        AdamHyper {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }

    pub fn check(&self) -> Result<()> {
        self.hyper().check()?;
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return Err(Error::InvalidArgument(
                "batch_size, max_epochs and patience must be >= 1".into(),
            ));
        }
        if let Some(w) = self.pos_weight {
            if !(w > 0.0 && w.is_finite()) {
                return Err(Error::InvalidArgument(format!("pos_weight must be positive, got {w}")));
            }
        }
        Ok(())
    }
}

/// Architecture and shape choices for a probe to be trained; dims that depend
/// on the data are filled in by [`train`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "arch", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProbeSpec {
    Mlp {
        hidden_dim: usize,
        #[serde(default = "default_mlp_layers")]
        n_layers: usize,
        pooling: PoolingSpec,
    },
    Transformer {
        model_dim: usize,
        n_layers: usize,
        #[serde(default)]
        n_heads: Option<usize>,
        #[serde(default)]
        ff_dim: Option<usize>,
        #[serde(default = "default_true")]
        positional_encoding: bool,
    },
}

fn default_mlp_layers() -> usize {
    4
}

fn default_true() -> bool {
    true
}

impl ProbeSpec {
    pub fn mlp(hidden_dim: usize, pooling: PoolingSpec) -> Self {
        Self::Mlp {
            hidden_dim,
            n_layers: default_mlp_layers(),
            pooling,
        }
    }

    pub fn transformer(model_dim: usize, n_layers: usize) -> Self {
        Self::Transformer {
            model_dim,
            n_layers,
            n_heads: None,
            ff_dim: None,
            positional_encoding: true,
        }
    }

    pub fn transformer_config(&self, input_dim: usize) -> Option<TransformerConfig> {
        match *self {
            Self::Transformer {
                model_dim,
                n_layers,
                n_heads,
                ff_dim,
                positional_encoding,
            } => {
                let mut c = TransformerConfig::new(input_dim, model_dim, n_layers);
                if let Some(h) = n_heads {
                    c.n_heads = h;
                }
                if let Some(f) = ff_dim {
                    c.ff_dim = f;
                }
                c.positional_encoding = positional_encoding;
                Some(c)
            }
            Self::Mlp { .. } => None,
        }
    }
}

impl Default for ProbeSpec {
    fn default() -> Self {
        Self::transformer(256, 4)
    }
}

/// Full description of one train/evaluate run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct StudyConfig {
    pub probe: ProbeSpec,
    pub mode: SegmentMode,
    pub train: TrainConfig,
    pub split: SplitSpec,
}

impl StudyConfig {
    pub fn check(&self) -> Result<()> {
        self.train.check()?;
        self.split.check()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_auroc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
    /// Index into `epochs` of the returned checkpoint.
    pub best_epoch: usize,
    pub wall_time_secs: f64,
}

impl TrainHistory {
    pub fn best(&self) -> &EpochStats {
        &self.epochs[self.best_epoch]
    }

    /// Equal apart from wall time.
    pub fn same_trajectory(&self, other: &Self) -> bool {
        self.epochs == other.epochs && self.best_epoch == other.best_epoch
    }
}

/// Where the training data came from, recorded in the checkpoint.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataSource {
    pub model_name: String,
    pub layer_index: usize,
}

fn check_both_classes(records: &[HiddenStateRecord], what: &str) -> Result<()> {
    let pos = records.iter().filter(|r| r.label == 1).count();
    if records.is_empty() || pos == 0 || pos == records.len() {
        return Err(Error::Degenerate(format!(
            "{what} split has {pos} correct of {} records; both classes are required",
            records.len()
        )));
    }
    Ok(())
}

fn token_dim(train: &[HiddenStateRecord], val: &[HiddenStateRecord]) -> Result<usize> {
    let d = train[0].hidden_dim;
    if let Some(r) = train.iter().chain(val).find(|r| r.hidden_dim != d) {
        return Err(Error::DimensionMismatch(format!(
            "record {} has dim {}, expected {d}",
            r.id, r.hidden_dim
        )));
    }
    Ok(d)
}

/// Fresh probe for `spec` with any data-dependent pooling stage fitted on the
/// training records.
pub fn build_probe(
    spec: &ProbeSpec,
    mode: SegmentMode,
    train: &[HiddenStateRecord],
    source: &DataSource,
    token_dim: usize,
    seed: u64,
) -> Result<ProbeParams> {
    let meta = ProbeMeta {
        mode,
        token_dim,
        model_name: source.model_name.clone(),
        layer_index: source.layer_index,
    };
    match *spec {
        ProbeSpec::Mlp {
            hidden_dim,
            n_layers,
            pooling,
        } => {
            let pca = match pooling {
                PoolingSpec::Pca { n_components } => {
                    let mats = train
                        .iter()
                        .map(|r| segment_select(r, mode))
                        .collect::<Result<Vec<TokenMatrix>>>()?;
                    Some(pca_fit(&mats, n_components)?)
                }
                _ => None,
            };
            ProbeParams::new_mlp(hidden_dim, n_layers, pooling, pca, meta, seed)
        }
        ProbeSpec::Transformer { .. } => {
            let cfg = spec.transformer_config(token_dim).expect("transformer spec");
            ProbeParams::new_transformer(cfg, meta, seed)
        }
    }
}

fn examples(params: &ProbeParams, records: &[HiddenStateRecord]) -> Result<Vec<Example>> {
    records
        .iter()
        .map(|r| {
            Ok(Example {
                features: params.prepare_record(r)?,
                label: f64::from(r.label),
            })
        })
        .collect()
}

/// Mean loss and AUROC of `params` on prepared examples, scored in chunks.
fn validation(params: &ProbeParams, val: &[Example], chunk: usize, pos_weight: f64) -> Result<(f64, f64)> {
    let mut logits = Vec::with_capacity(val.len());
    for c in val.chunks(chunk) {
        let feats: Vec<&Features> = c.iter().map(|e| &e.features).collect();
        logits.extend(params.logits(&feats)?);
    }
    let loss = logits
        .iter()
        .zip(val)
        .map(|(&z, e)| bce_with_logit(z, e.label, pos_weight).0)
        .sum::<f64>()
        / val.len() as f64;
    let scores = logits.iter().map(|&z| sigmoid(z)).collect();
    let labels = val.iter().map(|e| e.label as u8).collect();
    Ok((loss, auroc(&ScoredSet::new(scores, labels)?)?))
}

/// Train a probe with Adam on mean BCE, keeping the weights from the epoch
/// with the best validation AUROC. Deterministic for a given `cfg.seed`.
pub fn train(
    spec: &ProbeSpec,
    mode: SegmentMode,
    train: &[HiddenStateRecord],
    val: &[HiddenStateRecord],
    source: &DataSource,
    cfg: &TrainConfig,
) -> Result<(ProbeParams, TrainHistory)> {
    let started = Instant::now();
    cfg.check()?;
    check_both_classes(train, "train")?;
    check_both_classes(val, "validation")?;
    let d = token_dim(train, val)?;

    let mut params = build_probe(spec, mode, train, source, d, cfg.seed)?;
    let train_ex = examples(&params, train)?;
    let val_ex = examples(&params, val)?;
    let pos_weight = cfg.pos_weight.unwrap_or(1.0);
    let hyper = cfg.hyper();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..train_ex.len()).collect();
    let mut state = AdamState::new(&params.weights);
    let mut epochs = Vec::new();
    let mut best: Option<(usize, f64, crate::probes::ParamSet)> = None;
    let mut stale = 0;

    for epoch in 0..cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for idx in order.chunks(cfg.batch_size) {
            let batch: Vec<&Example> = idx.iter().map(|&i| &train_ex[i]).collect();
            let (loss, grads) = forward_backward(&params.config, &params.weights, &batch, pos_weight)?;
            adam_step(&mut params.weights, &grads, &mut state, &hyper)?;
            total += loss * batch.len() as f64;
        }
        let (val_loss, val_auroc) = validation(&params, &val_ex, cfg.batch_size, pos_weight)?;
        tracing::debug!(epoch, train_loss = total / train_ex.len() as f64, val_loss, val_auroc);
        epochs.push(EpochStats {
            epoch,
            train_loss: total / train_ex.len() as f64,
            val_loss,
            val_auroc,
        });
        if best.as_ref().is_none_or(|b| val_auroc > b.1) {
            best = Some((epoch, val_auroc, params.weights.clone()));
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }

    let (best_epoch, _, weights) = best.expect("at least one epoch");
    params.weights = weights;
    let history = TrainHistory {
        epochs,
        best_epoch,
        wall_time_secs: started.elapsed().as_secs_f64(),
    };
    Ok((params, history))
}

/// Score every record one at a time (identical to serving) and report metrics.
pub fn evaluate(params: &ProbeParams, records: &[HiddenStateRecord]) -> Result<EvalReport> {
    let scores = params.score_records(records)?;
    EvalReport::new(
        records.iter().map(|r| r.id.clone()).collect(),
        scores.into_iter().map(|s| s.value()).collect(),
        records.iter().map(|r| r.label).collect(),
    )
}
