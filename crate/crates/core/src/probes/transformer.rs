// SPDX-License-Identifier: MIT OR Apache-2.0

//! Bidirectional pre-norm transformer encoder over raw token states, closed by
//! attention pooling and a linear head.
//!
//! A batch is packed row-wise: every example's tokens are stacked into one
//! `T x D` matrix and `spans` records each example's `(start, len)`. All
//! position-wise layers run as one matrix product over the packed rows;
//! attention and pooling run per span.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::params::{ParamSet, Tensor};
use crate::error::{Error, Result};
use crate::nn::{gelu, gelu_grad, softmax_in_place};
use crate::pooling::TokenMatrix;

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransformerConfig {
    pub input_dim: usize,
    pub model_dim: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub ff_dim: usize,
    /// Hidden width of the attention-pooling scorer.
    pub scorer_hidden: usize,
    /// Add fixed sinusoidal position codes after the input projection.
    pub positional_encoding: bool,
}

impl TransformerConfig {
    /// One head per 64 model dims, 4x feed-forward, scorer width `model_dim / 4`.
    pub fn new(input_dim: usize, model_dim: usize, n_layers: usize) -> Self {
        Self {
            input_dim,
            model_dim,
            n_layers,
            n_heads: (model_dim / 64).max(1),
            ff_dim: 4 * model_dim,
            scorer_hidden: (model_dim / 4).max(1),
            positional_encoding: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [self.input_dim, self.model_dim, self.n_layers, self.n_heads, self.ff_dim, self.scorer_hidden];
        if dims.contains(&0) {
            return Err(Error::InvalidArgument(format!("transformer dims must be >= 1: {self:?}")));
        }
        if self.model_dim % self.n_heads != 0 {
            return Err(Error::InvalidArgument(format!(
                "model_dim {} not divisible by n_heads {}",
                self.model_dim, self.n_heads
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.n_heads
    }

    pub fn layout(&self) -> Vec<(String, [usize; 2])> {
        let (d, ff, hp) = (self.model_dim, self.ff_dim, self.scorer_hidden);
        let mut out = vec![
            ("input.weight".to_string(), [self.input_dim, d]),
            ("input.bias".to_string(), [1, d]),
        ];
        for l in 0..self.n_layers {
            let shapes = [
                ("ln1.gain", [1, d]),
                ("ln1.bias", [1, d]),
                ("attn.q.weight", [d, d]),
                ("attn.q.bias", [1, d]),
                ("attn.k.weight", [d, d]),
                ("attn.k.bias", [1, d]),
                ("attn.v.weight", [d, d]),
                ("attn.v.bias", [1, d]),
                ("attn.out.weight", [d, d]),
                ("attn.out.bias", [1, d]),
                ("ln2.gain", [1, d]),
                ("ln2.bias", [1, d]),
                ("ff.in.weight", [d, ff]),
                ("ff.in.bias", [1, ff]),
                ("ff.out.weight", [ff, d]),
                ("ff.out.bias", [1, d]),
            ];
            debug_assert_eq!(shapes.len(), PER_BLOCK);
            out.extend(shapes.iter().map(|(n, s)| (format!("block.{l}.{n}"), *s)));
        }
        out.extend([
            ("final_ln.gain".to_string(), [1, d]),
            ("final_ln.bias".to_string(), [1, d]),
            ("pool.hidden.weight".to_string(), [d, hp]),
            ("pool.hidden.bias".to_string(), [1, hp]),
            ("pool.score.weight".to_string(), [hp, 1]),
            ("pool.score.bias".to_string(), [1, 1]),
            ("head.weight".to_string(), [d, 1]),
            ("head.bias".to_string(), [1, 1]),
        ]);
        out
    }

    pub fn param_count(&self) -> usize {
        self.layout().iter().map(|(_, [r, c])| r * c).sum()
    }

    fn tail(&self) -> usize {
        2 + PER_BLOCK * self.n_layers
    }
}

// Tensor indices.
const IN_W: usize = 0;
const IN_B: usize = 1;
const PER_BLOCK: usize = 16;
const LN1_G: usize = 0;
const LN1_B: usize = 1;
const WQ: usize = 2;
const BQ: usize = 3;
const WK: usize = 4;
const BK: usize = 5;
const WV: usize = 6;
const BV: usize = 7;
const WO: usize = 8;
const BO: usize = 9;
const LN2_G: usize = 10;
const LN2_B: usize = 11;
const FF_W1: usize = 12;
const FF_B1: usize = 13;
const FF_W2: usize = 14;
const FF_B2: usize = 15;
const LNF_G: usize = 0;
const LNF_B: usize = 1;
const POOL_W1: usize = 2;
const POOL_B1: usize = 3;
const POOL_W2: usize = 4;
const POOL_B2: usize = 5;
const HEAD_W: usize = 6;
const HEAD_B: usize = 7;

fn block(l: usize) -> usize {
    2 + PER_BLOCK * l
}

/// Tensor indices that hold layer-norm gains (initialised to one).
pub(crate) fn gain_indices(cfg: &TransformerConfig) -> Vec<usize> {
    let mut v: Vec<usize> = (0..cfg.n_layers)
        .flat_map(|l| [block(l) + LN1_G, block(l) + LN2_G])
        .collect();
    v.push(cfg.tail() + LNF_G);
    v
}

pub(crate) fn zero_tensors(cfg: &TransformerConfig) -> ParamSet {
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

/// Fixed sinusoidal codes: even columns sin, odd columns cos.
pub fn sinusoidal_encoding(n: usize, d: usize) -> Array2<f64> {
    Array2::from_shape_fn((n, d), |(pos, j)| {
        let pair = (j / 2) as f64;
        let angle = pos as f64 / 10_000f64.powf(2.0 * pair / d as f64);
        if j % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

/// Token matrices stacked row-wise.
pub(crate) struct Packed {
    pub x: Array2<f64>,
    pub spans: Vec<(usize, usize)>,
}

impl Packed {
    pub fn new(items: &[&TokenMatrix]) -> Result<Self> {
        let d = items.first().map_or(0, |m| m.dim());
        let total: usize = items.iter().map(|m| m.n_tokens()).sum();
        let mut x = Array2::zeros((total, d));
        let mut spans = Vec::with_capacity(items.len());
        let mut start = 0;
        for m in items {
            if m.dim() != d {
                return Err(Error::ShapeMismatch(format!("token dims {d} and {} in one batch", m.dim())));
            }
            let n = m.n_tokens();
            x.slice_mut(s![start..start + n, ..]).assign(&m.view());
            spans.push((start, n));
            start += n;
        }
        Ok(Self { x, spans })
    }
}

struct LnCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
}

fn ln_forward(x: &Array2<f64>, gain: &Array2<f64>, bias: &Array2<f64>) -> (Array2<f64>, LnCache) {
    let d = x.ncols() as f64;
    let mean = x.mean_axis(Axis(1)).expect("d >= 1");
    let mut xhat = x - &mean.view().insert_axis(Axis(1));
    let var = xhat.mapv(|v| v * v).sum_axis(Axis(1)) / d;
    let inv_std = var.mapv(|v| 1.0 / (v + LN_EPS).sqrt());
    xhat *= &inv_std.view().insert_axis(Axis(1));
    let mut y = &xhat * gain;
    y += bias;
    (y, LnCache { xhat, inv_std })
}

/// Returns `(dx, dgain, dbias)`.
fn ln_backward(dy: &Array2<f64>, gain: &Array2<f64>, cache: &LnCache) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
    let d = dy.ncols() as f64;
    let dgain = (dy * &cache.xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
    let dbias = dy.sum_axis(Axis(0)).insert_axis(Axis(0));
    let dxhat = dy * gain;
    let mean_d = dxhat.sum_axis(Axis(1)) / d;
    let mean_dx = (&dxhat * &cache.xhat).sum_axis(Axis(1)) / d;
    let mut dx = dxhat - &mean_d.view().insert_axis(Axis(1));
    dx -= &(&cache.xhat * &mean_dx.view().insert_axis(Axis(1)));
    dx *= &cache.inv_std.view().insert_axis(Axis(1));
    (dx, dgain, dbias)
}

fn affine(x: &Array2<f64>, w: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    let mut y = x.dot(w);
    y += b;
    y
}

fn bias_grad(d: &Array2<f64>) -> Array2<f64> {
    d.sum_axis(Axis(0)).insert_axis(Axis(0))
}

struct BlockCache {
    ln1: LnCache,
    a1: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    /// Attention probabilities, indexed `example * n_heads + head`.
    probs: Vec<Array2<f64>>,
    o: Array2<f64>,
    ln2: LnCache,
    a2: Array2<f64>,
    f1: Array2<f64>,
    g: Array2<f64>,
}

pub(crate) struct TransformerCache {
    x: Array2<f64>,
    spans: Vec<(usize, usize)>,
    blocks: Vec<BlockCache>,
    lnf: LnCache,
    z: Array2<f64>,
    u: Array2<f64>,
    gu: Array2<f64>,
    weights: Array1<f64>,
    pooled: Array2<f64>,
}

impl TransformerCache {
    /// Per-example attention-pooling weights.
    pub fn pool_weights(&self) -> Vec<Array1<f64>> {
        self.spans
            .iter()
            .map(|&(start, len)| self.weights.slice(s![start..start + len]).to_owned())
            .collect()
    }
}

fn head_cols(start: usize, len: usize, head: usize, dh: usize) -> ndarray::SliceInfo<[ndarray::SliceInfoElem; 2], ndarray::Ix2, ndarray::Ix2> {
    s![start..start + len, head * dh..(head + 1) * dh]
}

pub(crate) fn forward_batch(cfg: &TransformerConfig, p: &ParamSet, packed: Packed) -> Result<(Array1<f64>, TransformerCache)> {
    let Packed { x, spans } = packed;
    if x.ncols() != cfg.input_dim {
        return Err(Error::ShapeMismatch(format!(
            "transformer expects token dim {}, got {}",
            cfg.input_dim,
            x.ncols()
        )));
    }
    if spans.iter().any(|&(_, n)| n == 0) || spans.is_empty() {
        return Err(Error::InvalidArgument("transformer input with no tokens".into()));
    }
    let (n_heads, dh) = (cfg.n_heads, cfg.head_dim());
    let scale = 1.0 / (dh as f64).sqrt();

    let mut h = affine(&x, &p[IN_W], &p[IN_B]);
    if cfg.positional_encoding {
        let longest = spans.iter().map(|s| s.1).max().unwrap_or(0);
        let pe = sinusoidal_encoding(longest, cfg.model_dim);
        for &(start, len) in &spans {
            let mut rows = h.slice_mut(s![start..start + len, ..]);
            rows += &pe.slice(s![..len, ..]);
        }
    }

    let mut blocks = Vec::with_capacity(cfg.n_layers);
    for l in 0..cfg.n_layers {
        let b = block(l);
        let (a1, ln1) = ln_forward(&h, &p[b + LN1_G], &p[b + LN1_B]);
        let q = affine(&a1, &p[b + WQ], &p[b + BQ]);
        let k = affine(&a1, &p[b + WK], &p[b + BK]);
        let v = affine(&a1, &p[b + WV], &p[b + BV]);
        let mut o = Array2::zeros(h.raw_dim());
        let mut probs = Vec::with_capacity(spans.len() * n_heads);
        for &(start, len) in &spans {
            for head in 0..n_heads {
                let cols = head_cols(start, len, head, dh);
                let mut scores = q.slice(cols).dot(&k.slice(cols).t());
                scores *= scale;
                for mut row in scores.rows_mut() {
                    softmax_in_place(row.as_slice_mut().expect("owned rows are contiguous"));
                }
                o.slice_mut(cols).assign(&scores.dot(&v.slice(cols)));
                probs.push(scores);
            }
        }
        h += &affine(&o, &p[b + WO], &p[b + BO]);
        let (a2, ln2) = ln_forward(&h, &p[b + LN2_G], &p[b + LN2_B]);
        let f1 = affine(&a2, &p[b + FF_W1], &p[b + FF_B1]);
        let g = f1.mapv(gelu);
        h += &affine(&g, &p[b + FF_W2], &p[b + FF_B2]);
        blocks.push(BlockCache {
            ln1,
            a1,
            q,
            k,
            v,
            probs,
            o,
            ln2,
            a2,
            f1,
            g,
        });
    }

    let t = cfg.tail();
    let (z, lnf) = ln_forward(&h, &p[t + LNF_G], &p[t + LNF_B]);
    let u = affine(&z, &p[t + POOL_W1], &p[t + POOL_B1]);
    let gu = u.mapv(gelu);
    let raw = affine(&gu, &p[t + POOL_W2], &p[t + POOL_B2]);
    let mut weights = raw.column(0).to_owned();
    let mut pooled = Array2::zeros((spans.len(), cfg.model_dim));
    for (e, &(start, len)) in spans.iter().enumerate() {
        let mut w = weights.slice_mut(s![start..start + len]);
        softmax_in_place(w.as_slice_mut().expect("contiguous"));
        pooled.row_mut(e).assign(&w.dot(&z.slice(s![start..start + len, ..])));
    }
    let logits = affine(&pooled, &p[t + HEAD_W], &p[t + HEAD_B]).column(0).to_owned();
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("transformer logits".into()));
    }
    Ok((
        logits,
        TransformerCache {
            x,
            spans,
            blocks,
            lnf,
            z,
            u,
            gu,
            weights,
            pooled,
        },
    ))
}

/// Gradients of `sum_b dlogits[b] * logit_b` with respect to every tensor.
pub(crate) fn backward_batch(cfg: &TransformerConfig, p: &ParamSet, c: &TransformerCache, dlogits: &Array1<f64>) -> ParamSet {
    let mut g = p.zeros_like();
    let (n_heads, head_dim) = (cfg.n_heads, cfg.head_dim());
    let scale = 1.0 / (head_dim as f64).sqrt();
    let t = cfg.tail();

    // Head.
    let dl = dlogits.view().insert_axis(Axis(1)).to_owned();
    g[t + HEAD_W] = c.pooled.t().dot(&dl);
    g[t + HEAD_B] = bias_grad(&dl);
    let dpooled = dl.dot(&p[t + HEAD_W].t());

    // Attention pooling.
    let mut dz = Array2::<f64>::zeros(c.z.raw_dim());
    let mut ds = Array2::<f64>::zeros((c.z.nrows(), 1));
    for (e, &(start, len)) in c.spans.iter().enumerate() {
        let w = c.weights.slice(s![start..start + len]);
        let dp = dpooled.row(e);
        let dw = c.z.slice(s![start..start + len, ..]).dot(&dp);
        let avg = w.dot(&dw);
        for i in 0..len {
            ds[[start + i, 0]] = w[i] * (dw[i] - avg);
            dz.row_mut(start + i).scaled_add(w[i], &dp);
        }
    }
    g[t + POOL_W2] = c.gu.t().dot(&ds);
    g[t + POOL_B2] = bias_grad(&ds);
    let mut du = ds.dot(&p[t + POOL_W2].t());
    du.zip_mut_with(&c.u, |d, &x| *d *= gelu_grad(x));
    g[t + POOL_W1] = c.z.t().dot(&du);
    g[t + POOL_B1] = bias_grad(&du);
    dz += &du.dot(&p[t + POOL_W1].t());

    let (mut dh, dgain, dbias) = ln_backward(&dz, &p[t + LNF_G], &c.lnf);
    g[t + LNF_G] = dgain;
    g[t + LNF_B] = dbias;

    for l in (0..cfg.n_layers).rev() {
        let b = block(l);
        let bc = &c.blocks[l];

        // Feed-forward sublayer; dh is the gradient at the block output.
        g[b + FF_W2] = bc.g.t().dot(&dh);
        g[b + FF_B2] = bias_grad(&dh);
        let mut df1 = dh.dot(&p[b + FF_W2].t());
        df1.zip_mut_with(&bc.f1, |d, &x| *d *= gelu_grad(x));
        g[b + FF_W1] = bc.a2.t().dot(&df1);
        g[b + FF_B1] = bias_grad(&df1);
        let da2 = df1.dot(&p[b + FF_W1].t());
        let (dx, dgain, dbias) = ln_backward(&da2, &p[b + LN2_G], &bc.ln2);
        g[b + LN2_G] = dgain;
        g[b + LN2_B] = dbias;
        dh += &dx;

        // Attention sublayer; dh is now the gradient after the attention residual.
        g[b + WO] = bc.o.t().dot(&dh);
        g[b + BO] = bias_grad(&dh);
        let d_o = dh.dot(&p[b + WO].t());
        let mut dq = Array2::<f64>::zeros(bc.q.raw_dim());
        let mut dk = Array2::<f64>::zeros(bc.k.raw_dim());
        let mut dv = Array2::<f64>::zeros(bc.v.raw_dim());
        for (e, &(start, len)) in c.spans.iter().enumerate() {
            for head in 0..n_heads {
                let cols = head_cols(start, len, head, head_dim);
                let probs = &bc.probs[e * n_heads + head];
                let d_oh = d_o.slice(cols);
                let mut dscores = d_oh.dot(&bc.v.slice(cols).t());
                dv.slice_mut(cols).assign(&probs.t().dot(&d_oh));
                softmax_backward_rows(&mut dscores, probs.view());
                dscores *= scale;
                dq.slice_mut(cols).assign(&dscores.dot(&bc.k.slice(cols)));
                dk.slice_mut(cols).assign(&dscores.t().dot(&bc.q.slice(cols)));
            }
        }
        g[b + WQ] = bc.a1.t().dot(&dq);
        g[b + BQ] = bias_grad(&dq);
        g[b + WK] = bc.a1.t().dot(&dk);
        g[b + BK] = bias_grad(&dk);
        g[b + WV] = bc.a1.t().dot(&dv);
        g[b + BV] = bias_grad(&dv);
        let mut da1 = dq.dot(&p[b + WQ].t());
        da1 += &dk.dot(&p[b + WK].t());
        da1 += &dv.dot(&p[b + WV].t());
        let (dx, dgain, dbias) = ln_backward(&da1, &p[b + LN1_G], &bc.ln1);
        g[b + LN1_G] = dgain;
        g[b + LN1_B] = dbias;
        dh += &dx;
    }

    g[IN_W] = c.x.t().dot(&dh);
    g[IN_B] = bias_grad(&dh);
    g
}

/// In place: `d <- P * (d - rowsum(P * d))`, the row-softmax Jacobian product.
fn softmax_backward_rows(d: &mut Array2<f64>, probs: ArrayView2<'_, f64>) {
    for (mut drow, prow) in d.rows_mut().into_iter().zip(probs.rows()) {
        let dot = drow.dot(&prow);
        drow.zip_mut_with(&prow, |dv, &pv| *dv = pv * (*dv - dot));
    }
}
