// SPDX-License-Identifier: MIT OR Apache-2.0

//! Fully connected probe over a pooled vector: `n_layers` affine maps with
//! GELU between them and a scalar logit at the end.

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use super::params::{ParamSet, Tensor};
use crate::error::{Error, Result};
use crate::nn::{gelu, gelu_grad};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub input_dim: usize,
    pub hidden_dim: usize,
    /// Number of affine layers, including the output layer.
    pub n_layers: usize,
}

impl MlpConfig {
    pub fn new(input_dim: usize, hidden_dim: usize) -> Self {
        Self {
            input_dim,
            hidden_dim,
            n_layers: 4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden_dim == 0 {
            return Err(Error::InvalidArgument(format!("MLP dims must be >= 1: {self:?}")));
        }
        if self.n_layers < 2 {
            return Err(Error::InvalidArgument(format!("MLP needs n_layers >= 2: {self:?}")));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` of each affine layer.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        (0..self.n_layers)
            .map(|i| {
                let fan_in = if i == 0 { self.input_dim } else { self.hidden_dim };
                let fan_out = if i + 1 == self.n_layers { 1 } else { self.hidden_dim };
                (fan_in, fan_out)
            })
            .collect()
    }

    pub fn layout(&self) -> Vec<(String, [usize; 2])> {
        self.layer_dims()
            .into_iter()
            .enumerate()
            .flat_map(|(i, (fi, fo))| [(format!("mlp.{i}.weight"), [fi, fo]), (format!("mlp.{i}.bias"), [1, fo])])
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims().iter().map(|(fi, fo)| fi * fo + fo).sum()
    }
}

/// Forward state kept for the backward pass.
pub(crate) struct MlpCache {
    /// Layer inputs: `inputs[0]` is the batch, `inputs[i]` = gelu(pre[i-1]).
    inputs: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
}

pub(crate) fn forward_batch(cfg: &MlpConfig, params: &ParamSet, x: Array2<f64>) -> Result<(Array1<f64>, MlpCache)> {
    if x.ncols() != cfg.input_dim {
        return Err(Error::ShapeMismatch(format!(
            "MLP expects input length {}, got {}",
            cfg.input_dim,
            x.ncols()
        )));
    }
    let mut inputs = vec![x];
    let mut pre = Vec::with_capacity(cfg.n_layers);
    for i in 0..cfg.n_layers {
        let mut z = inputs[i].dot(&params[2 * i]);
        z += &params[2 * i + 1];
        if i + 1 < cfg.n_layers {
            inputs.push(z.mapv(gelu));
        }
        pre.push(z);
    }
    let logits = pre[cfg.n_layers - 1].column(0).to_owned();
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("mlp logits".into()));
    }
    Ok((logits, MlpCache { inputs, pre }))
}

/// Gradients of `sum_b dlogits[b] * logit_b` with respect to every tensor.
pub(crate) fn backward_batch(cfg: &MlpConfig, params: &ParamSet, cache: &MlpCache, dlogits: &Array1<f64>) -> ParamSet {
    let mut grads = params.zeros_like();
    let mut dz = dlogits.view().insert_axis(Axis(1)).to_owned();
    for i in (0..cfg.n_layers).rev() {
        grads[2 * i] = cache.inputs[i].t().dot(&dz);
        grads[2 * i + 1] = dz.sum_axis(Axis(0)).insert_axis(Axis(0));
        if i > 0 {
            let mut da = dz.dot(&params[2 * i].t());
            da.zip_mut_with(&cache.pre[i - 1], |d, &z| *d *= gelu_grad(z));
            dz = da;
        }
    }
    grads
}

pub(crate) fn zero_tensors(cfg: &MlpConfig) -> ParamSet {
    ParamSet::new(
        cfg.layout()
            .into_iter()
            .map(|(name, [r, c])| Tensor {
                name,
                value: Array2::zeros((r, c)),
            })
            .collect(),
    )
}
