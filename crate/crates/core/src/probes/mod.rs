// SPDX-License-Identifier: MIT OR Apache-2.0

//! Correctness probes: an MLP over a pooled vector and a small transformer
//! encoder over the raw token matrix. Both output `p = sigmoid(logit)` and
//! have exact analytic gradients of the mean binary cross-entropy.

mod checkpoint;
mod mlp;
mod params;
mod transformer;

use std::borrow::Borrow;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use mlp::MlpConfig;
pub use params::{ParamSet, Tensor};
pub use transformer::{sinusoidal_encoding, TransformerConfig};

use crate::error::{Error, Result};
use crate::feature_store::{segment_select, HiddenStateRecord, SegmentMode};
use crate::nn::{bce_with_logit, sigmoid};
use crate::pooling::{pool, pooled_dim, PcaBasis, PoolingSpec, TokenMatrix};

/// Probe architecture and its shape hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "arch", rename_all = "snake_case")]
pub enum ProbeConfig {
    Mlp(MlpConfig),
    Transformer(TransformerConfig),
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        match self {
            ProbeConfig::Mlp(c) => c.validate(),
            ProbeConfig::Transformer(c) => c.validate(),
        }
    }

    pub fn layout(&self) -> Vec<(String, [usize; 2])> {
        match self {
            ProbeConfig::Mlp(c) => c.layout(),
            ProbeConfig::Transformer(c) => c.layout(),
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            ProbeConfig::Mlp(c) => c.param_count(),
            ProbeConfig::Transformer(c) => c.param_count(),
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            ProbeConfig::Mlp(c) => c.input_dim,
            ProbeConfig::Transformer(c) => c.input_dim,
        }
    }

    pub fn arch_name(&self) -> &'static str {
        match self {
            ProbeConfig::Mlp(_) => "mlp",
            ProbeConfig::Transformer(_) => "transformer",
        }
    }
}

/// Probability that the answer is correct.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Score(f64);

impl Score {
    pub fn from_logit(z: f64) -> Self {
        Score(sigmoid(z))
    }

    pub fn new(p: f64) -> Result<Self> {
        if (0.0..=1.0).contains(&p) {
            Ok(Score(p))
        } else {
            Err(Error::InvalidArgument(format!("score {p} outside [0, 1]")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Fan-in scaled Gaussian weights, zero biases, unit layer-norm gains.
pub fn init_params(config: &ProbeConfig, seed: u64) -> Result<ParamSet> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut set = match config {
        ProbeConfig::Mlp(c) => mlp::zero_tensors(c),
        ProbeConfig::Transformer(c) => transformer::zero_tensors(c),
    };
    let gains = match config {
        ProbeConfig::Mlp(_) => Vec::new(),
        ProbeConfig::Transformer(c) => transformer::gain_indices(c),
    };
    for (i, t) in set.tensors_mut().iter_mut().enumerate() {
        if gains.contains(&i) {
            t.value.fill(1.0);
        } else if t.name.ends_with(".weight") {
            let std = 1.0 / (t.value.nrows() as f64).sqrt();
            t.value.mapv_inplace(|_| std * rng.sample::<f64, _>(StandardNormal));
        }
    }
    Ok(set)
}

/// Input to a probe's network, after any fixed input-stage pooling.
#[derive(Debug, Clone, PartialEq)]
pub enum Features {
    Pooled(Array1<f64>),
    Tokens(TokenMatrix),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub features: Features,
    /// 1.0 = correct, 0.0 = incorrect.
    pub label: f64,
}

/// Everything needed to score hidden states: weights, the fixed pooling
/// stage, and what the probe was trained on.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeParams {
    pub config: ProbeConfig,
    pub weights: ParamSet,
    /// MLP input-stage pooling; `None` for the transformer.
    pub pooling: Option<PoolingSpec>,
    pub pca: Option<PcaBasis>,
    pub mode: SegmentMode,
    /// Width of the hidden states the probe reads.
    pub token_dim: usize,
    pub model_name: String,
    pub layer_index: usize,
}

/// Where a probe's inputs come from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeMeta {
    pub mode: SegmentMode,
    pub token_dim: usize,
    pub model_name: String,
    pub layer_index: usize,
}

impl ProbeParams {
    /// Fresh MLP probe. PCA pooling needs its fitted basis up front.
    pub fn new_mlp(
        hidden_dim: usize,
        n_layers: usize,
        pooling: PoolingSpec,
        pca: Option<PcaBasis>,
        meta: ProbeMeta,
        seed: u64,
    ) -> Result<Self> {
        if let PoolingSpec::Pca { n_components } = pooling {
            match &pca {
                Some(b) if b.n_components() == n_components && b.dim() == meta.token_dim => {}
                _ => return Err(Error::InvalidArgument("PCA pooling needs a basis matching the token dim".into())),
            }
        }
        let config = ProbeConfig::Mlp(MlpConfig {
            input_dim: pooled_dim(pooling, meta.token_dim),
            hidden_dim,
            n_layers,
        });
        Ok(Self {
            weights: init_params(&config, seed)?,
            config,
            pooling: Some(pooling),
            pca,
            mode: meta.mode,
            token_dim: meta.token_dim,
            model_name: meta.model_name,
            layer_index: meta.layer_index,
        })
    }

    pub fn new_transformer(config: TransformerConfig, meta: ProbeMeta, seed: u64) -> Result<Self> {
        if config.input_dim != meta.token_dim {
            return Err(Error::DimensionMismatch(format!(
                "transformer input_dim {} vs token dim {}",
                config.input_dim, meta.token_dim
            )));
        }
        let config = ProbeConfig::Transformer(config);
        Ok(Self {
            weights: init_params(&config, seed)?,
            config,
            pooling: None,
            pca: None,
            mode: meta.mode,
            token_dim: meta.token_dim,
            model_name: meta.model_name,
            layer_index: meta.layer_index,
        })
    }

    pub fn meta(&self) -> ProbeMeta {
        ProbeMeta {
            mode: self.mode,
            token_dim: self.token_dim,
            model_name: self.model_name.clone(),
            layer_index: self.layer_index,
        }
    }

    /// Check the invariants a loaded or hand-built probe must satisfy.
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let want = self.config.layout();
        let have = self.weights.shapes();
        if want != have {
            return Err(Error::ShapeMismatch(format!(
                "weights do not match the {} config layout",
                self.config.arch_name()
            )));
        }
        if let Some(name) = self.weights.first_non_finite() {
            return Err(Error::NonFinite(name.to_string()));
        }
        match (&self.config, self.pooling) {
            (ProbeConfig::Mlp(c), Some(spec)) => {
                if c.input_dim != pooled_dim(spec, self.token_dim) {
                    return Err(Error::ShapeMismatch(format!(
                        "MLP input_dim {} does not match pooled dim {}",
                        c.input_dim,
                        pooled_dim(spec, self.token_dim)
                    )));
                }
                if let PoolingSpec::Pca { n_components } = spec {
                    let ok = self
                        .pca
                        .as_ref()
                        .is_some_and(|b| b.n_components() == n_components && b.dim() == self.token_dim);
                    if !ok {
                        return Err(Error::ShapeMismatch("PCA basis missing or mis-shaped".into()));
                    }
                }
            }
            (ProbeConfig::Mlp(_), None) => return Err(Error::InvalidArgument("MLP probe without pooling".into())),
            (ProbeConfig::Transformer(c), _) => {
                if c.input_dim != self.token_dim {
                    return Err(Error::ShapeMismatch("transformer input_dim differs from token dim".into()));
                }
            }
        }
        Ok(())
    }

    /// Apply the fixed input stage (pooling for the MLP, nothing for the
    /// transformer).
    pub fn prepare(&self, m: &TokenMatrix) -> Result<Features> {
        if m.dim() != self.token_dim {
            return Err(Error::DimensionMismatch(format!(
                "probe reads dim {}, got {}",
                self.token_dim,
                m.dim()
            )));
        }
        match self.config {
            ProbeConfig::Mlp(_) => {
                let spec = self.pooling.ok_or_else(|| Error::InvalidArgument("MLP probe without pooling".into()))?;
                Ok(Features::Pooled(pool(spec, m, self.pca.as_ref())?))
            }
            ProbeConfig::Transformer(_) => Ok(Features::Tokens(m.clone())),
        }
    }

    pub fn prepare_record(&self, record: &HiddenStateRecord) -> Result<Features> {
        self.prepare(&segment_select(record, self.mode)?)
    }

    pub fn logits(&self, batch: &[&Features]) -> Result<Array1<f64>> {
        Ok(forward(&self.config, &self.weights, batch)?.0)
    }

    pub fn score_features(&self, batch: &[&Features]) -> Result<Vec<Score>> {
        Ok(self.logits(batch)?.iter().map(|&z| Score::from_logit(z)).collect())
    }

    pub fn score(&self, m: &TokenMatrix) -> Result<Score> {
        let f = self.prepare(m)?;
        Ok(self.score_features(&[&f])?[0])
    }

    pub fn score_record(&self, record: &HiddenStateRecord) -> Result<Score> {
        self.score(&segment_select(record, self.mode)?)
    }

    /// Score records one at a time. Each score equals `score_record` exactly.
    pub fn score_records(&self, records: &[HiddenStateRecord]) -> Result<Vec<Score>> {
        records.iter().map(|r| self.score_record(r)).collect()
    }
}

/// `p` from an MLP over a pooled vector.
pub fn mlp_forward(params: &ProbeParams, pooled: &Array1<f64>) -> Result<Score> {
    if !matches!(params.config, ProbeConfig::Mlp(_)) {
        return Err(Error::InvalidArgument("mlp_forward on a non-MLP probe".into()));
    }
    Ok(params.score_features(&[&Features::Pooled(pooled.clone())])?[0])
}

/// `p` from the transformer encoder over a token matrix.
pub fn transformer_forward(params: &ProbeParams, m: &TokenMatrix) -> Result<Score> {
    if !matches!(params.config, ProbeConfig::Transformer(_)) {
        return Err(Error::InvalidArgument("transformer_forward on a non-transformer probe".into()));
    }
    Ok(params.score_features(&[&Features::Tokens(m.clone())])?[0])
}

enum Cache {
    Mlp(mlp::MlpCache),
    Transformer(transformer::TransformerCache),
}

fn forward(config: &ProbeConfig, weights: &ParamSet, batch: &[&Features]) -> Result<(Array1<f64>, Cache)> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    match config {
        ProbeConfig::Mlp(c) => {
            let mut x = Array2::zeros((batch.len(), c.input_dim));
            for (i, f) in batch.iter().enumerate() {
                match f {
                    Features::Pooled(v) if v.len() == c.input_dim => x.row_mut(i).assign(v),
                    Features::Pooled(v) => {
                        return Err(Error::ShapeMismatch(format!(
                            "MLP expects input length {}, got {}",
                            c.input_dim,
                            v.len()
                        )))
                    }
                    Features::Tokens(_) => return Err(Error::ShapeMismatch("MLP needs pooled features".into())),
                }
            }
            let (logits, cache) = mlp::forward_batch(c, weights, x)?;
            Ok((logits, Cache::Mlp(cache)))
        }
        ProbeConfig::Transformer(c) => {
            let tokens = batch
                .iter()
                .map(|f| match f {
                    Features::Tokens(m) => Ok(m),
                    Features::Pooled(_) => Err(Error::ShapeMismatch("transformer needs token features".into())),
                })
                .collect::<Result<Vec<_>>>()?;
            let packed = transformer::Packed::new(&tokens)?;
            let (logits, cache) = transformer::forward_batch(c, weights, packed)?;
            Ok((logits, Cache::Transformer(cache)))
        }
    }
}

/// Mean BCE over the batch without gradients.
pub fn batch_loss<E: Borrow<Example>>(
    config: &ProbeConfig,
    weights: &ParamSet,
    batch: &[E],
    pos_weight: f64,
) -> Result<f64> {
    let feats: Vec<&Features> = batch.iter().map(|e| &e.borrow().features).collect();
    let (logits, _) = forward(config, weights, &feats)?;
    let total: f64 = logits
        .iter()
        .zip(batch)
        .map(|(&z, e)| bce_with_logit(z, e.borrow().label, pos_weight).0)
        .sum();
    Ok(total / batch.len() as f64)
}

/// Mean BCE over the batch and its gradient with respect to every tensor.
pub fn forward_backward<E: Borrow<Example>>(
    config: &ProbeConfig,
    weights: &ParamSet,
    batch: &[E],
    pos_weight: f64,
) -> Result<(f64, ParamSet)> {
    let feats: Vec<&Features> = batch.iter().map(|e| &e.borrow().features).collect();
    let (logits, cache) = forward(config, weights, &feats)?;
    let n = batch.len() as f64;
    let mut loss = 0.0;
    let mut dlogits = Array1::zeros(batch.len());
    for (i, (&z, e)) in logits.iter().zip(batch).enumerate() {
        let (l, dz) = bce_with_logit(z, e.borrow().label, pos_weight);
        loss += l;
        dlogits[i] = dz / n;
    }
    loss /= n;
    if !loss.is_finite() {
        return Err(Error::NonFinite("loss".into()));
    }
    let grads = match (config, &cache) {
        (ProbeConfig::Mlp(c), Cache::Mlp(cache)) => mlp::backward_batch(c, weights, cache, &dlogits),
        (ProbeConfig::Transformer(c), Cache::Transformer(cache)) => {
            transformer::backward_batch(c, weights, cache, &dlogits)
        }
        _ => unreachable!("cache matches config"),
    };
    if let Some(name) = grads.first_non_finite() {
        return Err(Error::NonFinite(format!("gradient of {name}")));
    }
    Ok((loss, grads))
}

/// Attention-pooling weights the transformer assigns to each token of `m`.
pub fn transformer_pool_weights(params: &ProbeParams, m: &TokenMatrix) -> Result<Array1<f64>> {
    let ProbeConfig::Transformer(c) = &params.config else {
        return Err(Error::InvalidArgument("not a transformer probe".into()));
    };
    let packed = transformer::Packed::new(&[m])?;
    let (_, cache) = transformer::forward_batch(c, &params.weights, packed)?;
    Ok(cache.pool_weights().remove(0))
}
