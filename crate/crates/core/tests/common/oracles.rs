// SPDX-License-Identifier: MIT OR Apache-2.0

//! Slow, direct reference computations. Nothing here calls into the library
//! except to read weights.

use hsprobe::probes::{ParamSet, TransformerConfig};

/// Fraction of (positive, negative) pairs ordered correctly, ties counted 1/2.
pub fn mann_whitney(scores: &[f64], labels: &[u8]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0usize;
    for (i, &si) in scores.iter().enumerate() {
        if labels[i] != 1 {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] != 0 {
                continue;
            }
            pairs += 1;
            if si > sj {
                wins += 1.0;
            } else if si == sj {
                wins += 0.5;
            }
        }
    }
    wins / pairs as f64
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for at in 0..=p.len() {
            let mut q = p.clone();
            q.insert(at, n - 1);
            out.push(q);
        }
    }
    out
}

/// Accuracy of the top `k` (k = 1..=n), averaged over every ranking that
/// sorts the scores in nonincreasing order. Exponential; keep n small.
pub fn rac_brute_force(scores: &[f64], labels: &[u8]) -> Vec<f64> {
    let n = scores.len();
    let rankings: Vec<Vec<usize>> = permutations(n)
        .into_iter()
        .filter(|p| p.windows(2).all(|w| scores[w[0]] >= scores[w[1]]))
        .collect();
    (1..=n)
        .map(|k| {
            let total: f64 = rankings
                .iter()
                .map(|r| r[..k].iter().map(|&i| f64::from(labels[i])).sum::<f64>() / k as f64)
                .sum();
            total / rankings.len() as f64
        })
        .collect()
}

/// Smallest tau reached by scanning every candidate (each score) from the
/// top down: the largest tau keeping at least `c * n` scores.
pub fn threshold_scan(scores: &[f64], c: f64) -> f64 {
    let need = c * scores.len() as f64;
    let mut candidates = scores.to_vec();
    candidates.sort_by(|a, b| b.total_cmp(a));
    for &t in &candidates {
        let kept = scores.iter().filter(|&&s| s >= t).count() as f64;
        if kept >= need - 1e-9 {
            return t;
        }
    }
    candidates[candidates.len() - 1]
}

/// Cyclic Jacobi rotations on a symmetric matrix. Returns eigenvalues and
/// eigenvectors (as columns), unsorted.
pub fn jacobi_eigen(mut a: Vec<Vec<f64>>) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut v: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| f64::from(u8::from(i == j))).collect()).collect();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum();
        if off < 1e-26 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let (vp, vq) = (row[p], row[q]);
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    ((0..n).map(|i| a[i][i]).collect(), v)
}

fn tensor(w: &ParamSet, name: &str) -> Vec<Vec<f64>> {
    let t = w
        .tensors()
        .iter()
        .find(|t| t.name == name)
        .unwrap_or_else(|| panic!("no tensor {name}"));
    t.value.rows().into_iter().map(|r| r.to_vec()).collect()
}

/// `x W + b` for a row vector.
fn affine(x: &[f64], w: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    (0..b.len())
        .map(|j| b[j] + x.iter().zip(w).map(|(xi, row)| xi * row[j]).sum::<f64>())
        .collect()
}

pub fn gelu(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * x * (1.0 + (c * (x + 0.044715 * x * x * x)).tanh())
}

/// MLP logit by explicit loops.
pub fn mlp_logit(w: &ParamSet, n_layers: usize, x: &[f64]) -> f64 {
    let mut h = x.to_vec();
    for i in 0..n_layers {
        h = affine(&h, &tensor(w, &format!("mlp.{i}.weight")), &tensor(w, &format!("mlp.{i}.bias"))[0]);
        if i + 1 < n_layers {
            h = h.into_iter().map(gelu).collect();
        }
    }
    h[0]
}

fn layer_norm(x: &[f64], gain: &[f64], bias: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let s = (var + 1e-5).sqrt();
    x.iter().zip(gain).zip(bias).map(|((v, g), b)| (v - mean) / s * g + b).collect()
}

fn add(a: &mut [f64], b: &[f64]) {
    a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
}

/// Transformer logit for a single token. Attention over one token is the
/// identity mixing, so each block reduces to its value/output projections
/// plus the feed-forward path, and the pooling weight is 1.
pub fn transformer_single_token_logit(w: &ParamSet, cfg: &TransformerConfig, x: &[f64]) -> f64 {
    let mut h = affine(x, &tensor(w, "input.weight"), &tensor(w, "input.bias")[0]);
    if cfg.positional_encoding {
        // Position 0: sin(0) on even columns, cos(0) on odd ones.
        for (j, v) in h.iter_mut().enumerate() {
            *v += if j % 2 == 0 { 0.0 } else { 1.0 };
        }
    }
    for l in 0..cfg.n_layers {
        let t = |n: &str| tensor(w, &format!("block.{l}.{n}"));
        let a = layer_norm(&h, &t("ln1.gain")[0], &t("ln1.bias")[0]);
        let v = affine(&a, &t("attn.v.weight"), &t("attn.v.bias")[0]);
        add(&mut h, &affine(&v, &t("attn.out.weight"), &t("attn.out.bias")[0]));
        let f = layer_norm(&h, &t("ln2.gain")[0], &t("ln2.bias")[0]);
        let inner: Vec<f64> = affine(&f, &t("ff.in.weight"), &t("ff.in.bias")[0]).into_iter().map(gelu).collect();
        add(&mut h, &affine(&inner, &t("ff.out.weight"), &t("ff.out.bias")[0]));
    }
    let z = layer_norm(&h, &tensor(w, "final_ln.gain")[0], &tensor(w, "final_ln.bias")[0]);
    affine(&z, &tensor(w, "head.weight"), &tensor(w, "head.bias")[0])[0]
}

pub fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}
