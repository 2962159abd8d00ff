// SPDX-License-Identifier: MIT OR Apache-2.0

//! Test-only oracles, independent of the code paths they check.

#![allow(dead_code)]

pub mod oracles;
pub mod tape;

use hsprobe::probes::{batch_loss, Example, Features, ParamSet, ProbeConfig};
use hsprobe::metrics::ScoredSet;
use hsprobe::pooling::TokenMatrix;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Central differences through the library's own loss at selected scalars
/// `(tensor, flat index)`.
pub fn finite_differences_at(
    config: &ProbeConfig,
    weights: &ParamSet,
    batch: &[Example],
    h: f64,
    picks: &[(usize, usize)],
) -> Vec<f64> {
    let mut w = weights.clone();
    picks
        .iter()
        .map(|&(t, j)| {
            let orig = w[t].as_slice().unwrap()[j];
            w[t].as_slice_mut().unwrap()[j] = orig + h;
            let up = batch_loss(config, &w, batch, 1.0).unwrap();
            w[t].as_slice_mut().unwrap()[j] = orig - h;
            let down = batch_loss(config, &w, batch, 1.0).unwrap();
            w[t].as_slice_mut().unwrap()[j] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `|a - b| / max(|a|, |b|, floor)` for each scalar, with the worst entry's
/// tensor name.
pub fn worst_relative_error(analytic: &ParamSet, numeric: &ParamSet, floor: f64) -> (f64, String) {
    let mut worst = (0.0, String::new());
    for (a, b) in analytic.tensors().iter().zip(numeric.tensors()) {
        for (x, y) in a.value.iter().zip(b.value.iter()) {
            let err = (x - y).abs() / x.abs().max(y.abs()).max(floor);
            if err > worst.0 {
                worst = (err, format!("{} (analytic {x:e}, numeric {y:e})", a.name));
            }
        }
    }
    worst
}

/// Floor on the denominator of the relative gradient error. Structurally
/// zero gradients (e.g. attention key biases, which softmax ignores) have
/// finite-difference noise near 1e-11 and no meaningful relative error.
pub const GRAD_FLOOR: f64 = 1e-6;

/// Analytic gradients against tape finite differences for every scalar.
/// Returns the worst relative error, where it occurred and the parameter count.
pub fn gradient_check(config: &ProbeConfig, seed: u64, batch: &[Example]) -> (f64, String, usize) {
    let w = hsprobe::probes::init_params(config, seed).unwrap();
    let (loss, analytic) = hsprobe::probes::forward_backward(config, &w, batch, 1.0).unwrap();
    let tape = tape::Tape::new(config, &w, batch);
    assert!((tape.loss(&w) - loss).abs() < 1e-12, "oracle forward disagrees");
    let numeric = tape.finite_differences(&w, 1e-5, 16);
    let (err, at) = worst_relative_error(&analytic, &numeric, GRAD_FLOOR);
    (err, at, w.n_scalars())
}

pub fn random_tokens(rng: &mut ChaCha8Rng, n: usize, d: usize) -> TokenMatrix {
    TokenMatrix::new(Array2::from_shape_fn((n, d), |_| rng.sample(StandardNormal))).unwrap()
}

pub fn token_batch(seed: u64, size: usize, d: usize, len: (usize, usize)) -> Vec<Example> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..size)
        .map(|i| {
            let n = rng.random_range(len.0..=len.1);
            Example {
                features: Features::Tokens(random_tokens(&mut rng, n, d)),
                label: (i % 2) as f64,
            }
        })
        .collect()
}

pub fn pooled_batch(seed: u64, size: usize, d: usize) -> Vec<Example> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..size)
        .map(|i| Example {
            features: Features::Pooled((0..d).map(|_| rng.sample(StandardNormal)).collect()),
            label: (i % 2) as f64,
        })
        .collect()
}

/// Random set with both classes; every third set has heavily tied scores.
pub fn random_scored_set(rng: &mut ChaCha8Rng, max_n: usize, tied: bool) -> ScoredSet {
    let n = rng.random_range(2..=max_n);
    let mut labels: Vec<u8> = (0..n).map(|_| u8::from(rng.random_bool(0.4))).collect();
    labels[0] = 1;
    labels[1] = 0;
    let scores = (0..n)
        .map(|_| {
            let s: f64 = rng.random();
            if tied {
                (s * 8.0).floor() / 8.0
            } else {
                s
            }
        })
        .collect();
    ScoredSet::new(scores, labels).unwrap()
}

/// Rows drawn along fixed axes with well separated variances, then rotated.
pub fn anisotropic_rows(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Array2<f64> {
    let spread = [5.0, 3.0, 2.0, 1.0, 0.5, 0.25, 0.1];
    let z = Array2::from_shape_fn((n, d), |(_, j)| spread[j % spread.len()] * rng.sample::<f64, _>(StandardNormal));
    let g = Array2::from_shape_fn((d, d), |_| rng.sample::<f64, _>(StandardNormal));
    // Gram-Schmidt for a random rotation.
    let mut q = Array2::<f64>::zeros((d, d));
    for i in 0..d {
        let mut v = g.row(i).to_owned();
        for k in 0..i {
            let r = q.row(k).dot(&v);
            v = &v - &(&q.row(k) * r);
        }
        let norm = v.dot(&v).sqrt();
        q.row_mut(i).assign(&(&v / norm));
    }
    z.dot(&q) + 0.7
}
