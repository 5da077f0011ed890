mod common;

use common::{cond, random_grouped_model, random_model};
use latent_ensemble::synthetic::{generate, population_covariance};
use latent_ensemble::{
    conditional_covariance, sample_covariance, score_matrix, AccuracyPair, CovarianceMatrix, GroupStructure,
    LatentModel, PredictionMatrix,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `E[f_i f_j] - E[f_i] E[f_j]` by summing the exact joint of
/// `(Y, alpha_{c(i)}, alpha_{c(j)}, f_i, f_j)`.
fn covariance_by_enumeration(model: &LatentModel, i: usize, j: usize) -> f64 {
    let (gi, gj) = (model.structure.group_of(i), model.structure.group_of(j));
    let (mut e_i, mut e_j, mut e_ij) = (0.0, 0.0, 0.0);
    for y in [1i8, -1] {
        let py = 0.5 * (1.0 + f64::from(y) * model.b);
        for ai in [1i8, -1] {
            for aj in [1i8, -1] {
                let pa = if gi == gj {
                    if ai != aj {
                        continue;
                    }
                    cond(model.latent_acc[gi], ai, y)
                } else {
                    cond(model.latent_acc[gi], ai, y) * cond(model.latent_acc[gj], aj, y)
                };
                for fi in [1i8, -1] {
                    for fj in [1i8, -1] {
                        let p = py * pa * cond(model.child_acc[i], fi, ai) * cond(model.child_acc[j], fj, aj);
                        e_i += p * f64::from(fi);
                        e_j += p * f64::from(fj);
                        e_ij += p * f64::from(fi * fj);
                    }
                }
            }
        }
    }
    e_ij - e_i * e_j
}

fn informedness(a: AccuracyPair) -> f64 {
    a.psi + a.eta - 1.0
}

#[test]
fn population_covariance_factors_into_two_rank_one_patterns() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..100 {
        let m = rng.gen_range(2..=12);
        let k = rng.gen_range(1..=m);
        let b = rng.gen_range(-0.6..0.6);
        let model = random_grouped_model(&mut rng, m, k, 0.55, 0.98, b);
        let r = population_covariance(&model);
        let p = 0.5 * (1.0 + b);
        let v_off: Vec<f64> = (0..m)
            .map(|i| {
                let g = model.latent_acc[model.structure.group_of(i)];
                let c = model.child_acc[i];
                let psi = g.psi * c.psi + (1.0 - g.psi) * (1.0 - c.eta);
                let eta = g.eta * c.eta + (1.0 - g.eta) * (1.0 - c.psi);
                (1.0 - b * b).sqrt() * (psi + eta - 1.0)
            })
            .collect();
        let v_on: Vec<f64> = (0..m)
            .map(|i| {
                let g = model.latent_acc[model.structure.group_of(i)];
                let mean_alpha = p * (2.0 * g.psi - 1.0) + (1.0 - p) * (1.0 - 2.0 * g.eta);
                (1.0 - mean_alpha * mean_alpha).sqrt() * informedness(model.child_acc[i])
            })
            .collect();
        for i in 0..m {
            for j in (0..m).filter(|&j| j != i) {
                let factored = if model.structure.same_group(i, j) {
                    v_on[i] * v_on[j]
                } else {
                    v_off[i] * v_off[j]
                };
                assert!((r.get(i, j) - factored).abs() < 1e-12, "({i},{j}) factor");
                let direct = covariance_by_enumeration(&model, i, j);
                assert!((r.get(i, j) - direct).abs() < 1e-12, "({i},{j}) enumeration");
            }
        }
    }
}

fn symmetric_model(sizes: &[usize], child: f64, latent: f64, b: f64) -> LatentModel {
    let g = GroupStructure::from_sizes(sizes).unwrap();
    let m = g.m();
    let k = g.k();
    LatentModel::new(g, vec![AccuracyPair::symmetric(child); m], vec![AccuracyPair::symmetric(latent); k], b).unwrap()
}

#[test]
fn independent_pair_covariance_by_simulation() {
    let model = symmetric_model(&[1, 1], 1.0, 0.8, 0.0);
    assert!((population_covariance(&model).get(0, 1) - 0.36).abs() < 1e-15);
    let (z, _) = generate(&model, 1_000_000, 3).unwrap();
    let r = sample_covariance(&z).unwrap();
    assert!((r.get(0, 1) - 0.36).abs() < 0.01, "{}", r.get(0, 1));
}

#[test]
fn within_group_covariance_by_simulation() {
    // E[alpha] = 0 because b = 0 and the latent channel is symmetric
    let model = symmetric_model(&[2, 1], 0.9, 0.8, 0.0);
    assert!((population_covariance(&model).get(0, 1) - 0.64).abs() < 1e-12);
    let (z, y) = generate(&model, 1_000_000, 5).unwrap();
    let r = sample_covariance(&z).unwrap();
    assert!((r.get(0, 1) - 0.64).abs() < 0.01, "{}", r.get(0, 1));
    let (c_pos, c_neg) = conditional_covariance(&z, &y).unwrap();
    // 4 gamma (1 - gamma) (2 pi_i - 1)(2 pi_j - 1) with gamma = 0.8, pi = 0.9
    for c in [&c_pos, &c_neg] {
        assert!((c.get(0, 1) - 0.4096).abs() < 0.01, "{}", c.get(0, 1));
        assert!(c.get(0, 2).abs() < 0.01);
    }
}

#[test]
fn conditionally_independent_classifiers_have_vanishing_conditional_covariance() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let model = common::with_exact_singletons(&random_model(&mut rng, &[0, 1, 2, 3, 4], 0.6, 0.9, 0.1));
    let (z, y) = generate(&model, 100_000, 9).unwrap();
    let (c_pos, c_neg) = conditional_covariance(&z, &y).unwrap();
    assert!(c_pos.max_abs_off_diagonal() < 0.01);
    assert!(c_neg.max_abs_off_diagonal() < 0.01);
}

#[test]
fn cross_group_pairs_are_conditionally_independent_given_the_label() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let model = random_model(&mut rng, &[0, 0, 0, 1, 1, 2], 0.6, 0.9, -0.2);
    let (z, y) = generate(&model, 1_000_000, 1).unwrap();
    let (c_pos, c_neg) = conditional_covariance(&z, &y).unwrap();
    for i in 0..6 {
        for j in (0..6).filter(|&j| !model.structure.same_group(i, j)) {
            assert!(c_pos.get(i, j).abs() < 0.01 && c_neg.get(i, j).abs() < 0.01, "({i},{j})");
        }
    }
}

#[test]
fn sample_covariance_converges_to_population() {
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let model = random_grouped_model(&mut rng, 6, 3, 0.55, 0.95, 0.3);
        let (z, _) = generate(&model, 1_000_000, seed).unwrap();
        let r = sample_covariance(&z).unwrap();
        let p = population_covariance(&model);
        let dev = (r.matrix() - p.matrix()).abs().max();
        assert!(dev < 0.01, "seed {seed}: {dev}");
    }
}

#[test]
fn generated_frequencies_match_parameters() {
    let model = LatentModel::new(
        GroupStructure::from_sizes(&[3, 1]).unwrap(),
        vec![
            AccuracyPair { psi: 0.85, eta: 0.7 },
            AccuracyPair { psi: 0.75, eta: 0.9 },
            AccuracyPair { psi: 0.6, eta: 0.8 },
            AccuracyPair::PERFECT,
        ],
        vec![AccuracyPair { psi: 0.8, eta: 0.65 }, AccuracyPair { psi: 0.7, eta: 0.75 }],
        0.2,
    )
    .unwrap();
    let (z, y) = generate(&model, 1_000_000, 77).unwrap();
    let n = y.len() as f64;
    let b_hat = (y.count(1) as f64 - y.count(-1) as f64) / n;
    assert!((b_hat - 0.2).abs() < 0.005, "{b_hat}");
    let composed = model.composed_accuracies();
    for i in 0..4 {
        let (mut pos, mut pos_hit, mut neg, mut neg_hit) = (0.0, 0.0, 0.0, 0.0);
        for (j, &label) in y.as_slice().iter().enumerate() {
            if label == 1 {
                pos += 1.0;
                pos_hit += f64::from(u8::from(z.get(i, j) == 1));
            } else {
                neg += 1.0;
                neg_hit += f64::from(u8::from(z.get(i, j) == -1));
            }
        }
        assert!((pos_hit / pos - composed[i].psi).abs() < 0.005, "psi {i}");
        assert!((neg_hit / neg - composed[i].eta).abs() < 0.005, "eta {i}");
    }
}

#[test]
fn child_frequencies_match_given_the_latent_value() {
    // classifier 0 is a perfect child, so its output is alpha itself
    let model = LatentModel::new(
        GroupStructure::from_sizes(&[3]).unwrap(),
        vec![AccuracyPair::PERFECT, AccuracyPair { psi: 0.8, eta: 0.7 }, AccuracyPair { psi: 0.65, eta: 0.9 }],
        vec![AccuracyPair { psi: 0.7, eta: 0.6 }],
        0.0,
    )
    .unwrap();
    let (z, _) = generate(&model, 1_000_000, 4).unwrap();
    for (i, acc) in [(1, model.child_acc[1]), (2, model.child_acc[2])] {
        let (mut pos, mut pos_hit, mut neg, mut neg_hit) = (0.0, 0.0, 0.0, 0.0);
        for j in 0..z.n() {
            if z.get(0, j) == 1 {
                pos += 1.0;
                pos_hit += f64::from(u8::from(z.get(i, j) == 1));
            } else {
                neg += 1.0;
                neg_hit += f64::from(u8::from(z.get(i, j) == -1));
            }
        }
        assert!((pos_hit / pos - acc.psi).abs() < 0.005);
        assert!((neg_hit / neg - acc.eta).abs() < 0.005);
    }
}

fn small_matrix() -> impl Strategy<Value = (usize, Vec<i8>)> {
    (5usize..8, 3usize..30).prop_flat_map(|(m, n)| {
        (Just(m), proptest::collection::vec(prop_oneof![Just(-1i8), Just(1i8)], m * n))
    })
}

proptest! {
    #[test]
    fn sample_covariance_ignores_instance_order((m, entries) in small_matrix(), seed in any::<u64>()) {
        let n = entries.len() / m;
        let z = PredictionMatrix::new(m, n, entries).unwrap();
        let mut cols: Vec<usize> = (0..n).collect();
        use rand::seq::SliceRandom;
        cols.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let a = sample_covariance(&z).unwrap();
        let b = sample_covariance(&z.select_columns(&cols).unwrap()).unwrap();
        prop_assert!((a.matrix() - b.matrix()).abs().max() < 1e-12);
    }

    #[test]
    fn score_is_quadratic_in_covariance_scale((m, entries) in small_matrix(), c in 0.1f64..5.0) {
        let n = entries.len() / m;
        let r = sample_covariance(&PredictionMatrix::new(m, n, entries).unwrap()).unwrap();
        let s = score_matrix(&r).unwrap();
        let sc = score_matrix(&r.scaled(c)).unwrap();
        let expected = s.matrix() * (c * c);
        prop_assert!((sc.matrix() - &expected).abs().max() <= 1e-9 * (1.0 + expected.abs().max()));
    }

    #[test]
    fn population_covariance_is_symmetric(seed in any::<u64>(), m in 2usize..10) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = rng.gen_range(1..=m);
        let model = random_grouped_model(&mut rng, m, k, 0.5, 1.0, 0.0);
        let r: CovarianceMatrix = population_covariance(&model);
        prop_assert_eq!(r.matrix(), &r.matrix().transpose());
    }
}
