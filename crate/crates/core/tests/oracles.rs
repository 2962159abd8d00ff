// SPDX-License-Identifier: MIT OR Apache-2.0

mod common;

use hsprobe::feature_store::SegmentMode;
use hsprobe::metrics::{accuracy_at_coverage, aurac, auroc, rac_curve, roc_curve, threshold_for_coverage, ScoredSet};
use hsprobe::pooling::{attention_pool_weighted, mean_pool, pca_fit, pca_project, AttentionScorer, PoolingSpec, TokenMatrix};
use hsprobe::probes::{ProbeConfig, ProbeMeta, ProbeParams, TransformerConfig};
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use common::oracles::*;
use common::{anisotropic_rows, random_scored_set, random_tokens};

fn meta(d: usize) -> ProbeMeta {
    ProbeMeta {
        mode: SegmentMode::QuestionOnly,
        token_dim: d,
        model_name: "oracle".into(),
        layer_index: 0,
    }
}

#[test]
fn auroc_equals_mann_whitney() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for i in 0..200 {
        let s = random_scored_set(&mut rng, 1000, i % 3 == 0);
        let a = auroc(&s).unwrap();
        let b = mann_whitney(s.scores(), s.labels());
        assert!((a - b).abs() <= 1e-12, "set {i}: {a} vs {b}");
    }
}

#[test]
fn roc_points_match_threshold_enumeration() {
    let s = ScoredSet::new(vec![0.8, 0.3, 0.3, 0.9, 0.1, 0.6], vec![1, 0, 1, 1, 0, 0]).unwrap();
    let roc = roc_curve(&s).unwrap();
    let mut cuts: Vec<f64> = s.scores().to_vec();
    cuts.sort_by(|a, b| b.total_cmp(a));
    cuts.dedup();
    assert_eq!(roc.len(), cuts.len() + 1);
    assert_eq!((roc[0].fpr, roc[0].tpr), (0.0, 0.0));
    for (pt, &t) in roc[1..].iter().zip(&cuts) {
        let tp = (0..6).filter(|&i| s.scores()[i] >= t && s.labels()[i] == 1).count() as f64;
        let fp = (0..6).filter(|&i| s.scores()[i] >= t && s.labels()[i] == 0).count() as f64;
        assert_eq!((pt.fpr, pt.tpr, pt.threshold), (fp / 3.0, tp / 3.0, t));
    }
}

#[test]
fn rac_matches_ranking_enumeration() {
    let cases: [(&[f64], &[u8]); 4] = [
        (&[0.9, 0.7, 0.5, 0.3, 0.1], &[1, 0, 1, 1, 0]),
        (&[0.5, 0.5, 0.5, 0.2, 0.9], &[1, 0, 0, 1, 1]),
        (&[0.4, 0.4, 0.4, 0.4, 0.4], &[1, 1, 0, 0, 1]),
        (&[0.1, 0.8, 0.8, 0.3, 0.3], &[0, 1, 0, 1, 1]),
    ];
    for (scores, labels) in cases {
        let s = ScoredSet::new(scores.to_vec(), labels.to_vec()).unwrap();
        let want = rac_brute_force(scores, labels);
        let got: Vec<f64> = rac_curve(&s).iter().map(|p| p.accuracy).collect();
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-12, "{scores:?}: {got:?} vs {want:?}");
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        let n = rng.random_range(1..=6);
        let scores: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(0..3u8)) / 2.0).collect();
        let labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
        let s = ScoredSet::new(scores.clone(), labels.clone()).unwrap();
        let got: Vec<f64> = rac_curve(&s).iter().map(|p| p.accuracy).collect();
        for (g, w) in got.iter().zip(rac_brute_force(&scores, &labels)) {
            assert!((g - w).abs() < 1e-12);
        }
    }
}

#[test]
fn aurac_hand_values() {
    // Perfect detector, 2 of 4 correct: accuracies 1, 1, 2/3, 1/2.
    let s = ScoredSet::new(vec![0.9, 0.8, 0.2, 0.1], vec![1, 1, 0, 0]).unwrap();
    let want = 0.25 + 0.25 * (1.0 + 1.0) / 2.0 + 0.25 * (1.0 + 2.0 / 3.0) / 2.0 + 0.25 * (2.0 / 3.0 + 0.5) / 2.0;
    assert!((aurac(&s) - want).abs() < 1e-15);
    let flat = ScoredSet::new(vec![0.3; 7], vec![1, 0, 1, 1, 0, 0, 1]).unwrap();
    assert!((aurac(&flat) - 4.0 / 7.0).abs() < 1e-12);
    assert_eq!(accuracy_at_coverage(&flat, 1.0).unwrap(), flat.accuracy());
}

#[test]
fn coverage_thresholds_match_exhaustive_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for _ in 0..30 {
        let scores: Vec<f64> = (0..7).map(|_| f64::from(rng.random_range(0..5u8)) / 4.0).collect();
        let s = ScoredSet::new(scores.clone(), vec![1, 0, 1, 0, 1, 0, 1]).unwrap();
        for k in 1..=7 {
            let c = k as f64 / 7.0;
            assert_eq!(threshold_for_coverage(&s, c).unwrap(), threshold_scan(&scores, c), "{scores:?} c={c}");
        }
    }
}

#[test]
fn pca_matches_jacobi_decomposition() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for case in 0..20 {
        let rows = anisotropic_rows(&mut rng, 50, 5);
        let m = TokenMatrix::new(rows.clone()).unwrap();
        let basis = pca_fit(std::slice::from_ref(&m), 3).unwrap();

        let mean: Vec<f64> = (0..5).map(|j| rows.column(j).sum() / 50.0).collect();
        let cov: Vec<Vec<f64>> = (0..5)
            .map(|a| {
                (0..5)
                    .map(|b| (0..50).map(|i| (rows[[i, a]] - mean[a]) * (rows[[i, b]] - mean[b])).sum::<f64>() / 49.0)
                    .collect()
            })
            .collect();
        let (values, vectors) = jacobi_eigen(cov);
        let mut order: Vec<usize> = (0..5).collect();
        order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));

        let probe = random_tokens(&mut rng, 6, 5);
        let got = pca_project(&basis, &probe).unwrap();
        let pooled = mean_pool(&probe);
        for (k, &i) in order.iter().take(3).enumerate() {
            let v: Vec<f64> = (0..5).map(|j| vectors[j][i]).collect();
            let c = basis.components.row(k);
            let sign = if c.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>() < 0.0 { -1.0 } else { 1.0 };
            for j in 0..5 {
                assert!((c[j] - sign * v[j]).abs() < 1e-6, "case {case} component {k}");
            }
            assert!((basis.explained_variance[k] - values[i]).abs() < 1e-9 * values[i].max(1.0));
            let proj: f64 = (0..5).map(|j| (pooled[j] - mean[j]) * v[j]).sum();
            assert!((got[k] - sign * proj).abs() < 1e-6, "case {case} projection {k}");
        }
    }
}

#[test]
fn constant_scorer_attention_is_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for n in [1, 2, 5, 40] {
        let m = random_tokens(&mut rng, n, 7);
        let scorer = AttentionScorer {
            w1: Array2::from_shape_fn((7, 3), |_| rng.sample(StandardNormal)),
            b1: Array1::zeros(3),
            w2: Array1::zeros(3),
            b2: 3.5,
        };
        let (pooled, weights) = attention_pool_weighted(&m, &scorer).unwrap();
        let mean = mean_pool(&m);
        assert!((weights.sum() - 1.0).abs() < 1e-12);
        for (a, b) in pooled.iter().zip(mean.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn mlp_matches_unrolled_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for layers in [2, 4] {
        let mut p = ProbeParams::new_mlp(16, layers, PoolingSpec::Mean, None, meta(6), 3).unwrap();
        p.weights.tensors_mut()[1].value.fill(0.1);
        for _ in 0..10 {
            let x: Vec<f64> = (0..6).map(|_| rng.sample(StandardNormal)).collect();
            let got = p.score_features(&[&hsprobe::probes::Features::Pooled(Array1::from(x.clone()))]).unwrap()[0];
            let want = sigmoid(mlp_logit(&p.weights, layers, &x));
            assert!((got.value() - want).abs() < 1e-12, "{} vs {want}", got.value());
        }
    }
}

fn transformer(d: usize, pe: bool, seed: u64) -> ProbeParams {
    let mut c = TransformerConfig::new(d, 16, 2);
    c.n_heads = 2;
    c.positional_encoding = pe;
    ProbeParams::new_transformer(c, meta(d), seed).unwrap()
}

#[test]
fn single_token_transformer_matches_unrolled() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for pe in [true, false] {
        let p = transformer(5, pe, 4);
        let ProbeConfig::Transformer(cfg) = &p.config else { unreachable!() };
        for _ in 0..5 {
            let m = random_tokens(&mut rng, 1, 5);
            let want = sigmoid(transformer_single_token_logit(&p.weights, cfg, &m.row(0).to_vec()));
            let got = p.score(&m).unwrap().value();
            assert!((got - want).abs() < 1e-12, "pe {pe}: {got} vs {want}");
        }
    }
}

#[test]
fn zero_weights_give_one_half_and_saturated_bias_gives_certainty() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let m = random_tokens(&mut rng, 4, 5);
    let mlp = ProbeParams::new_mlp(8, 3, PoolingSpec::Mean, None, meta(5), 1).unwrap();
    for mut p in [transformer(5, true, 1), mlp] {
        for t in p.weights.tensors_mut() {
            t.value.fill(0.0);
        }
        assert_eq!(p.score(&m).unwrap().value(), 0.5);
        let last = p.weights.len() - 1;
        p.weights.tensors_mut()[last].value.fill(20.0);
        assert!(p.score(&m).unwrap().value() > 0.999_999);
    }
}

#[test]
fn duplicating_tokens_leaves_score_unchanged_without_positions() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let p = transformer(5, false, 6);
    for n in [1, 3, 8] {
        let m = random_tokens(&mut rng, n, 5);
        let twice = ndarray::concatenate![ndarray::Axis(0), m.view(), m.view()];
        let a = p.score(&m).unwrap().value();
        let b = p.score(&TokenMatrix::new(twice).unwrap()).unwrap().value();
        assert!((a - b).abs() < 1e-9, "n {n}: {a} vs {b}");
    }
}
