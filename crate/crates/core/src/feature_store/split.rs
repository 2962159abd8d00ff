// SPDX-License-Identifier: MIT OR Apache-2.0

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::HiddenStateRecord;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train: 0.8,
            val: 0.1,
            test: 0.1,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn new(train: f64, val: f64, test: f64, seed: u64) -> Result<Self> {
        let spec = Self {
            train,
            val,
            test,
            seed,
        };
        spec.check()?;
        Ok(spec)
    }

    pub fn check(&self) -> Result<()> {
        let f = self.fractions();
        if f.iter().any(|x| !(0.0..=1.0).contains(x)) {
            return Err(Error::InvalidArgument(format!("split fractions out of [0,1]: {f:?}")));
        }
        let sum: f64 = f.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!("split fractions sum to {sum}, not 1")));
        }
        Ok(())
    }

    pub fn fractions(&self) -> [f64; 3] {
        [self.train, self.val, self.test]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Vec<HiddenStateRecord>,
    pub val: Vec<HiddenStateRecord>,
    pub test: Vec<HiddenStateRecord>,
}

/// Largest-remainder apportionment of `total` items by `weights` (which sum
/// to 1). Every share is the floor or ceiling of its exact quota; leftover
/// items go to the largest fractional parts, earlier index first on ties.
pub fn apportion(total: usize, weights: &[f64]) -> Vec<usize> {
    let quotas: Vec<f64> = weights.iter().map(|w| w * total as f64).collect();
    let mut shares: Vec<usize> = quotas.iter().map(|q| (q + 1e-9).floor() as usize).collect();
    let assigned: usize = shares.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - shares[a] as f64;
        let fb = quotas[b] - shares[b] as f64;
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        shares[i] += 1;
    }
    shares
}

/// Indices for (train, val, test), stratified by label. Each split keeps its
/// original record order.
pub fn split_indices(records: &[HiddenStateRecord], spec: &SplitSpec) -> Result<[Vec<usize>; 3]> {
    spec.check()?;
    let mut ids = HashSet::with_capacity(records.len());
    for r in records {
        if !ids.insert(r.id.as_str()) {
            return Err(Error::InvalidArgument(format!("duplicate record id {}", r.id)));
        }
    }

    let n = records.len();
    let sizes = apportion(n, &spec.fractions());
    let mut pos: Vec<usize> = (0..n).filter(|&i| records[i].label == 1).collect();
    let mut neg: Vec<usize> = (0..n).filter(|&i| records[i].label != 1).collect();

    let pos_share = if n == 0 {
        vec![0; 3]
    } else {
        let w: Vec<f64> = sizes.iter().map(|&s| s as f64 / n as f64).collect();
        apportion(pos.len(), &w)
    };

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);

    let mut out: [Vec<usize>; 3] = Default::default();
    let (mut p, mut q) = (0, 0);
    for s in 0..3 {
        let np = pos_share[s];
        let nn = sizes[s] - np;
        out[s].extend_from_slice(&pos[p..p + np]);
        out[s].extend_from_slice(&neg[q..q + nn]);
        out[s].sort_unstable();
        p += np;
        q += nn;
    }
    debug_assert_eq!(p + q, n);
    Ok(out)
}

pub fn split(records: &[HiddenStateRecord], spec: &SplitSpec) -> Result<Split> {
    let [train, val, test] = split_indices(records, spec)?;
    let pick = |idx: Vec<usize>| idx.into_iter().map(|i| records[i].clone()).collect();
    Ok(Split {
        train: pick(train),
        val: pick(val),
        test: pick(test),
    })
}
