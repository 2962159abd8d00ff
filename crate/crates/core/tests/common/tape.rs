// SPDX-License-Identifier: MIT OR Apache-2.0

//! A second, independent implementation of both probe networks as a flat
//! list of ops, used for finite differences.
//!
//! Every parameter enters through an affine op (`x W + b` or `xhat * g + b`),
//! so nudging one scalar changes that op's output by an exact rank-1 term.
//! Finite differences therefore start from the cached output of the op that
//! owns the scalar and rerun only the ops downstream of it, with many nudged
//! copies stacked along the row axis.

use std::collections::HashMap;

use hsprobe::probes::{Example, Features, MlpConfig, ParamSet, ProbeConfig, TransformerConfig};
use ndarray::{concatenate, s, Array2, ArrayView2, Axis};

#[derive(Debug, Clone, Copy)]
enum Op {
    Input,
    /// `x W + b` with tensor indices.
    Linear { x: usize, w: usize, b: usize },
    /// Sinusoidal position codes added per sequence.
    Positions { x: usize },
    /// Zero-mean, unit-variance rows (eps 1e-5).
    Normalize { x: usize },
    /// `x * g + b` column-wise.
    Scale { x: usize, g: usize, b: usize },
    Add { a: usize, b: usize },
    Gelu { x: usize },
    Attention { q: usize, k: usize, v: usize, heads: usize },
    /// Softmax of score column `s` within each sequence, then weighted sum of `z` rows.
    Pool { z: usize, s: usize },
}

pub struct Tape {
    ops: Vec<Op>,
    /// Per-sequence row counts in the input; `None` for pooled inputs.
    lens: Option<Vec<usize>>,
    input: Array2<f64>,
    labels: Vec<f64>,
    /// Which op reads each tensor.
    owner: HashMap<usize, usize>,
}

fn idx(params: &ParamSet, name: &str) -> usize {
    params
        .tensors()
        .iter()
        .position(|t| t.name == name)
        .unwrap_or_else(|| panic!("no tensor {name}"))
}

impl Tape {
    pub fn new(config: &ProbeConfig, params: &ParamSet, batch: &[Example]) -> Self {
        let labels = batch.iter().map(|e| e.label).collect();
        let (ops, lens, input) = match config {
            ProbeConfig::Mlp(c) => {
                let rows: Vec<_> = batch
                    .iter()
                    .map(|e| match &e.features {
                        Features::Pooled(v) => v.clone().insert_axis(Axis(0)),
                        _ => panic!("pooled features expected"),
                    })
                    .collect();
                let views: Vec<_> = rows.iter().map(|r| r.view()).collect();
                (mlp_ops(c, params), None, concatenate(Axis(0), &views).unwrap())
            }
            ProbeConfig::Transformer(c) => {
                let mats: Vec<_> = batch
                    .iter()
                    .map(|e| match &e.features {
                        Features::Tokens(m) => m.view().to_owned(),
                        _ => panic!("token features expected"),
                    })
                    .collect();
                let lens = mats.iter().map(|m| m.nrows()).collect();
                let views: Vec<_> = mats.iter().map(|m| m.view()).collect();
                (transformer_ops(c, params), Some(lens), concatenate(Axis(0), &views).unwrap())
            }
        };
        let mut owner = HashMap::new();
        for (i, op) in ops.iter().enumerate() {
            let used = match *op {
                Op::Linear { w, b, .. } => vec![w, b],
                Op::Scale { g, b, .. } => vec![g, b],
                _ => vec![],
            };
            for t in used {
                assert!(owner.insert(t, i).is_none(), "tensor {t} used twice");
            }
        }
        assert_eq!(owner.len(), params.len(), "every tensor must be used");
        Self {
            ops,
            lens,
            input,
            labels,
            owner,
        }
    }

    /// Mean BCE of the unperturbed network.
    pub fn loss(&self, params: &ParamSet) -> f64 {
        let vals = self.forward(params);
        self.losses(vals.last().unwrap(), 1)[0]
    }

    fn forward(&self, params: &ParamSet) -> Vec<Array2<f64>> {
        let mut vals: Vec<Array2<f64>> = Vec::with_capacity(self.ops.len());
        for i in 0..self.ops.len() {
            let v = self.eval(i, params, 1, |j| vals[j].view());
            vals.push(v);
        }
        vals
    }

    fn spans(&self, copies: usize) -> Vec<(usize, usize)> {
        let lens = self.lens.as_ref().expect("token input");
        let mut out = Vec::new();
        let mut start = 0;
        for _ in 0..copies {
            for &n in lens {
                out.push((start, n));
                start += n;
            }
        }
        out
    }

    fn eval<'a>(&self, i: usize, p: &ParamSet, copies: usize, get: impl Fn(usize) -> ArrayView2<'a, f64>) -> Array2<f64> {
        match self.ops[i] {
            Op::Input => tile(&self.input, copies),
            Op::Linear { x, w, b } => get(x).dot(&p[w]) + &p[b],
            Op::Positions { x } => {
                let mut h = get(x).to_owned();
                let d = h.ncols();
                for (start, n) in self.spans(copies) {
                    for pos in 0..n {
                        for j in 0..d {
                            let freq = 10_000f64.powf((2 * (j / 2)) as f64 / d as f64);
                            let a = pos as f64 / freq;
                            h[[start + pos, j]] += if j % 2 == 0 { a.sin() } else { a.cos() };
                        }
                    }
                }
                h
            }
            Op::Normalize { x } => {
                let mut h = get(x).to_owned();
                for mut row in h.rows_mut() {
                    let n = row.len() as f64;
                    let mu = row.sum() / n;
                    let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
                    let r = 1.0 / (var + 1e-5).sqrt();
                    row.mapv_inplace(|v| (v - mu) * r);
                }
                h
            }
            Op::Scale { x, g, b } => &get(x) * &p[g] + &p[b],
            Op::Add { a, b } => &get(a) + &get(b),
            Op::Gelu { x } => get(x).mapv(|v| {
                // tanh(u) = 1 - 2 / (e^{2u} + 1)
                let u = (2.0 / std::f64::consts::PI).sqrt() * (v + 0.044715 * v * v * v);
                0.5 * v * (2.0 - 2.0 / ((2.0 * u).exp() + 1.0))
            }),
            Op::Attention { q, k, v, heads } => {
                let (q, k, v) = (get(q), get(k), get(v));
                let d = q.ncols() / heads;
                let mut out = Array2::zeros(q.raw_dim());
                for (start, n) in self.spans(copies) {
                    for hd in 0..heads {
                        let c = hd * d..(hd + 1) * d;
                        let qs = q.slice(s![start..start + n, c.clone()]);
                        let ks = k.slice(s![start..start + n, c.clone()]);
                        let vs = v.slice(s![start..start + n, c.clone()]);
                        for r in 0..n {
                            let logits: Vec<f64> =
                                (0..n).map(|t| qs.row(r).dot(&ks.row(t)) / (d as f64).sqrt()).collect();
                            let w = softmax(&logits);
                            for t in 0..n {
                                out.slice_mut(s![start + r, c.clone()]).scaled_add(w[t], &vs.row(t));
                            }
                        }
                    }
                }
                out
            }
            Op::Pool { z, s } => {
                let (z, sc) = (get(z), get(s));
                let spans = self.spans(copies);
                let col = sc.column(0).to_vec();
                let mut out = Array2::zeros((spans.len(), z.ncols()));
                for (e, (start, n)) in spans.into_iter().enumerate() {
                    let w = softmax(&col[start..start + n]);
                    for t in 0..n {
                        out.row_mut(e).scaled_add(w[t], &z.row(start + t));
                    }
                }
                out
            }
        }
    }

    /// Mean BCE of each stacked copy from stacked logits.
    fn losses(&self, logits: &Array2<f64>, copies: usize) -> Vec<f64> {
        let b = self.labels.len();
        (0..copies)
            .map(|c| {
                (0..b)
                    .map(|i| {
                        let z = logits[[c * b + i, 0]];
                        let y = self.labels[i];
                        z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()
                    })
                    .sum::<f64>()
                    / b as f64
            })
            .collect()
    }

    /// Central differences `(L(w + h) - L(w - h)) / 2h` for every scalar,
    /// processing up to `chunk` scalars of a tensor per stacked pass.
    pub fn finite_differences(&self, params: &ParamSet, h: f64, chunk: usize) -> ParamSet {
        let cache = self.forward(params);
        let mut out = params.zeros_like();
        for t in 0..params.len() {
            let k = self.owner[&t];
            let cols = params[t].ncols();
            let n = params[t].len();
            let mut start = 0;
            while start < n {
                let m = chunk.min(n - start);
                let copies = 2 * m;
                // Output of op k for every nudged copy.
                let mut first = tile(&cache[k], copies);
                let rows = cache[k].nrows();
                for j in 0..m {
                    let flat = start + j;
                    let (r, c) = (flat / cols, flat % cols);
                    for (sign, copy) in [(1.0, 2 * j), (-1.0, 2 * j + 1)] {
                        let delta = sign * h;
                        let mut col = first.slice_mut(s![copy * rows..(copy + 1) * rows, ..]);
                        match self.ops[k] {
                            Op::Linear { x, w, .. } if w == t => {
                                col.column_mut(c).scaled_add(delta, &cache[x].column(r))
                            }
                            Op::Scale { x, g, .. } if g == t => {
                                col.column_mut(c).scaled_add(delta, &cache[x].column(c))
                            }
                            Op::Linear { .. } | Op::Scale { .. } => col.column_mut(c).mapv_inplace(|v| v + delta),
                            _ => unreachable!(),
                        }
                    }
                }
                let mut stacked: HashMap<usize, Array2<f64>> = HashMap::new();
                let mut tiled: HashMap<usize, Array2<f64>> = HashMap::new();
                stacked.insert(k, first);
                for i in k + 1..self.ops.len() {
                    let ins = inputs(self.ops[i]);
                    if !ins.iter().any(|j| stacked.contains_key(j)) {
                        continue;
                    }
                    for &j in &ins {
                        if !stacked.contains_key(&j) && !tiled.contains_key(&j) {
                            tiled.insert(j, tile(&cache[j], copies));
                        }
                    }
                    let v = self.eval(i, params, copies, |j| stacked.get(&j).unwrap_or_else(|| &tiled[&j]).view());
                    stacked.insert(i, v);
                }
                let losses = self.losses(&stacked[&(self.ops.len() - 1)], copies);
                let slice = out[t].as_slice_mut().unwrap();
                for j in 0..m {
                    slice[start + j] = (losses[2 * j] - losses[2 * j + 1]) / (2.0 * h);
                }
                start += m;
            }
        }
        out
    }
}

fn inputs(op: Op) -> Vec<usize> {
    match op {
        Op::Input => vec![],
        Op::Linear { x, .. } | Op::Positions { x } | Op::Normalize { x } | Op::Scale { x, .. } | Op::Gelu { x } => {
            vec![x]
        }
        Op::Add { a, b } => vec![a, b],
        Op::Attention { q, k, v, .. } => vec![q, k, v],
        Op::Pool { z, s } => vec![z, s],
    }
}

fn tile(a: &Array2<f64>, copies: usize) -> Array2<f64> {
    let views = vec![a.view(); copies];
    concatenate(Axis(0), &views).unwrap()
}

fn softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

struct Builder<'a> {
    ops: Vec<Op>,
    params: &'a ParamSet,
}

impl Builder<'_> {
    fn push(&mut self, op: Op) -> usize {
        self.ops.push(op);
        self.ops.len() - 1
    }

    fn linear(&mut self, x: usize, name: &str) -> usize {
        let (w, b) = (idx(self.params, &format!("{name}.weight")), idx(self.params, &format!("{name}.bias")));
        self.push(Op::Linear { x, w, b })
    }

    fn layer_norm(&mut self, x: usize, name: &str) -> usize {
        let n = self.push(Op::Normalize { x });
        let (g, b) = (idx(self.params, &format!("{name}.gain")), idx(self.params, &format!("{name}.bias")));
        self.push(Op::Scale { x: n, g, b })
    }
}

fn mlp_ops(c: &MlpConfig, params: &ParamSet) -> Vec<Op> {
    let mut b = Builder { ops: vec![], params };
    let mut h = b.push(Op::Input);
    for i in 0..c.n_layers {
        h = b.linear(h, &format!("mlp.{i}"));
        if i + 1 < c.n_layers {
            h = b.push(Op::Gelu { x: h });
        }
    }
    b.ops
}

fn transformer_ops(c: &TransformerConfig, params: &ParamSet) -> Vec<Op> {
    let mut b = Builder { ops: vec![], params };
    let x = b.push(Op::Input);
    let mut h = b.linear(x, "input");
    if c.positional_encoding {
        h = b.push(Op::Positions { x: h });
    }
    for l in 0..c.n_layers {
        let p = |s: &str| format!("block.{l}.{s}");
        let a = b.layer_norm(h, &p("ln1"));
        let q = b.linear(a, &p("attn.q"));
        let k = b.linear(a, &p("attn.k"));
        let v = b.linear(a, &p("attn.v"));
        let o = b.push(Op::Attention { q, k, v, heads: c.n_heads });
        let o = b.linear(o, &p("attn.out"));
        h = b.push(Op::Add { a: h, b: o });
        let a = b.layer_norm(h, &p("ln2"));
        let f = b.linear(a, &p("ff.in"));
        let f = b.push(Op::Gelu { x: f });
        let f = b.linear(f, &p("ff.out"));
        h = b.push(Op::Add { a: h, b: f });
    }
    let z = b.layer_norm(h, "final_ln");
    let u = b.linear(z, "pool.hidden");
    let u = b.push(Op::Gelu { x: u });
    let s = b.linear(u, "pool.score");
    let pooled = b.push(Op::Pool { z, s });
    b.linear(pooled, "head");
    b.ops
}
