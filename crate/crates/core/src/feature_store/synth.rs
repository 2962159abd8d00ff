// SPDX-License-Identifier: MIT OR Apache-2.0

//! Two-class Gaussian token sequences for testing without an LLM.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::HiddenStateRecord;
use crate::error::{Error, Result};

/// Which tokens carry the class signal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalPlacement {
    AllTokens,
    /// Only the final quarter of the answer tokens (at least one).
    LateAnswer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n: usize,
    pub hidden_dim: usize,
    /// Distance between class means along the signal direction.
    pub separation: f64,
    pub seed: u64,
    /// Seed for the signal direction; defaults to `seed`. Two datasets with
    /// the same direction seed are identically distributed.
    pub direction_seed: Option<u64>,
    pub question_len: (usize, usize),
    pub answer_len: (usize, usize),
    pub signal: SignalPlacement,
    pub id_prefix: String,
}

impl SynthConfig {
    pub fn new(n: usize, hidden_dim: usize, separation: f64, seed: u64) -> Self {
        Self {
            n,
            hidden_dim,
            separation,
            seed,
            direction_seed: None,
            question_len: (3, 30),
            answer_len: (0, 60),
            signal: SignalPlacement::AllTokens,
            id_prefix: "synth".into(),
        }
    }
}

pub fn synth_dataset(n: usize, hidden_dim: usize, separation: f64, seed: u64) -> Result<Vec<HiddenStateRecord>> {
    synth_dataset_with(&SynthConfig::new(n, hidden_dim, separation, seed))
}

/// Unit vector drawn uniformly from the sphere.
fn random_direction(d: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

pub fn synth_dataset_with(cfg: &SynthConfig) -> Result<Vec<HiddenStateRecord>> {
    if cfg.n < 2 || cfg.hidden_dim < 2 {
        return Err(Error::InvalidArgument(format!(
            "synthetic data needs n >= 2 and hidden_dim >= 2 (got {}, {})",
            cfg.n, cfg.hidden_dim
        )));
    }
    if !cfg.separation.is_finite() || cfg.separation < 0.0 {
        return Err(Error::InvalidArgument(format!("separation {}", cfg.separation)));
    }
    let (q_lo, q_hi) = cfg.question_len;
    let (a_lo, a_hi) = cfg.answer_len;
    if q_lo == 0 || q_lo > q_hi || a_lo > a_hi {
        return Err(Error::InvalidArgument(format!(
            "bad length ranges question {:?} answer {:?}",
            cfg.question_len, cfg.answer_len
        )));
    }

    let d = cfg.hidden_dim;
    let direction = random_direction(d, cfg.direction_seed.unwrap_or(cfg.seed));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let half = cfg.separation / 2.0;

    (0..cfg.n)
        .map(|i| {
            let label = u8::from(i % 2 == 0);
            let nq = rng.random_range(q_lo..=q_hi);
            let na = rng.random_range(a_lo..=a_hi);
            let rows = nq + na;
            let signal_from = match cfg.signal {
                SignalPlacement::AllTokens => 0,
                SignalPlacement::LateAnswer if na == 0 => rows,
                SignalPlacement::LateAnswer => rows - (na / 4).max(1),
            };
            let shift = if label == 1 { half } else { -half };
            let mut states = Vec::with_capacity(rows * d);
            for t in 0..rows {
                let s = if t >= signal_from { shift } else { 0.0 };
                for u in &direction {
                    let noise: f64 = rng.sample(StandardNormal);
                    states.push((noise + s * u) as f32);
                }
            }
            HiddenStateRecord::new(format!("{}-{i:06}", cfg.id_prefix), label, nq, na, d, states)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_seed() {
        let a = synth_dataset(20, 4, 2.0, 11).unwrap();
        let b = synth_dataset(20, 4, 2.0, 11).unwrap();
        let c = synth_dataset(20, 4, 2.0, 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn balanced_and_in_range() {
        let rs = synth_dataset(101, 3, 1.0, 0).unwrap();
        let pos = rs.iter().filter(|r| r.label == 1).count();
        assert_eq!(pos, 51);
        for r in &rs {
            assert!((3..=30).contains(&r.n_question));
            assert!(r.n_answer <= 60);
        }
    }

    #[test]
    fn class_means_differ_by_separation() {
        let cfg = SynthConfig {
            question_len: (20, 20),
            answer_len: (0, 0),
            ..SynthConfig::new(400, 2, 6.0, 5)
        };
        let rs = synth_dataset_with(&cfg).unwrap();
        let dir = random_direction(2, 5);
        let mut sums = [0.0f64; 2];
        let mut counts = [0usize; 2];
        for r in &rs {
            for t in 0..r.n_tokens() {
                let row = r.row(t);
                sums[r.label as usize] += row[0] as f64 * dir[0] + row[1] as f64 * dir[1];
                counts[r.label as usize] += 1;
            }
        }
        let gap = sums[1] / counts[1] as f64 - sums[0] / counts[0] as f64;
        assert!((gap - 6.0).abs() < 0.1, "{gap}");
    }

    #[test]
    fn rejects_tiny_inputs() {
        assert!(synth_dataset(1, 4, 1.0, 0).is_err());
        assert!(synth_dataset(4, 1, 1.0, 0).is_err());
    }
}
