// SPDX-License-Identifier: MIT OR Apache-2.0

//! Probe checkpoints: `"DRFT" | version u32 | json_len u32 | JSON | f64 blobs`.
//!
//! The JSON declares the config, pooling, PCA shape and every tensor's name
//! and shape; blobs follow in the declared order (weights, then PCA mean,
//! components and variances), little-endian.

use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::{ParamSet, ProbeConfig, ProbeParams, Tensor};
use crate::error::{Error, Result};
use crate::feature_store::SegmentMode;
use crate::pooling::{PcaBasis, PoolingSpec};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"DRFT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct TensorDecl {
    name: String,
    shape: [usize; 2],
}

#[derive(Debug, Serialize, Deserialize)]
struct PcaDecl {
    n_components: usize,
    dim: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    config: ProbeConfig,
    pooling: Option<PoolingSpec>,
    pca: Option<PcaDecl>,
    mode: SegmentMode,
    token_dim: usize,
    model_name: String,
    layer_index: usize,
    tensors: Vec<TensorDecl>,
}

pub fn encode_checkpoint(params: &ProbeParams) -> Result<Vec<u8>> {
    params.validate()?;
    let header = Header {
        config: params.config,
        pooling: params.pooling,
        pca: params.pca.as_ref().map(|b| PcaDecl {
            n_components: b.n_components(),
            dim: b.dim(),
        }),
        mode: params.mode,
        token_dim: params.token_dim,
        model_name: params.model_name.clone(),
        layer_index: params.layer_index,
        tensors: params
            .weights
            .shapes()
            .into_iter()
            .map(|(name, shape)| TensorDecl { name, shape })
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(12 + json.len() + 8 * params.weights.n_scalars());
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    let mut put = |v: f64| out.extend_from_slice(&v.to_le_bytes());
    params.weights.iter_scalars().for_each(&mut put);
    if let Some(b) = &params.pca {
        b.mean.iter().copied().for_each(&mut put);
        b.components.iter().copied().for_each(&mut put);
        b.explained_variance.iter().copied().for_each(&mut put);
    }
    Ok(out)
}

pub fn save_checkpoint(params: &ProbeParams, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_checkpoint(params)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ProbeParams> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let remaining = self.buf.len() - self.pos;
        if n > remaining {
            return Err(Error::Truncated {
                offset: self.pos,
                needed: n - remaining,
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::Corrupt("blob size overflow".into()))?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<ProbeParams> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let magic: [u8; 4] = r.take(4)?.try_into().unwrap();
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::BadMagic {
            expected: CHECKPOINT_MAGIC,
            found: magic,
        });
    }
    let version = u32::from_le_bytes(r.take(4)?.try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let json_len = u32::from_le_bytes(r.take(4)?.try_into().unwrap()) as usize;
    let header: Header =
        serde_json::from_slice(r.take(json_len)?).map_err(|e| Error::Corrupt(format!("checkpoint header: {e}")))?;

    header.config.validate()?;
    let declared: Vec<(String, [usize; 2])> = header.tensors.iter().map(|t| (t.name.clone(), t.shape)).collect();
    let layout = header.config.layout();
    if declared != layout {
        let detail = declared
            .iter()
            .zip(&layout)
            .find(|(a, b)| a != b)
            .map(|(a, b)| format!("{} {:?} declared, config implies {} {:?}", a.0, a.1, b.0, b.1))
            .unwrap_or_else(|| format!("{} tensors declared, config implies {}", declared.len(), layout.len()));
        return Err(Error::ShapeMismatch(detail));
    }

    let mut tensors = Vec::with_capacity(declared.len());
    for (name, [rows, cols]) in declared {
        let data = r.f64s(rows * cols)?;
        let value = Array2::from_shape_vec((rows, cols), data).expect("length matches shape");
        tensors.push(Tensor { name, value });
    }
    let pca = match header.pca {
        Some(PcaDecl { n_components: n, dim: d }) => {
            let mean = Array1::from(r.f64s(d)?);
            let components = Array2::from_shape_vec((n, d), r.f64s(n * d)?).expect("length matches shape");
            let explained_variance = Array1::from(r.f64s(n)?);
            Some(PcaBasis {
                mean,
                components,
                explained_variance,
            })
        }
        None => None,
    };
    if r.pos != bytes.len() {
        return Err(Error::Corrupt(format!("{} trailing bytes in checkpoint", bytes.len() - r.pos)));
    }
    let params = ProbeParams {
        config: header.config,
        weights: ParamSet::new(tensors),
        pooling: header.pooling,
        pca,
        mode: header.mode,
        token_dim: header.token_dim,
        model_name: header.model_name,
        layer_index: header.layer_index,
    };
    params.validate()?;
    Ok(params)
}
