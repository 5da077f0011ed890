#![allow(dead_code)]

use latent_ensemble::{AccuracyPair, GroupStructure, LatentModel};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn pair(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> AccuracyPair {
    AccuracyPair {
        psi: rng.gen_range(lo..hi),
        eta: rng.gen_range(lo..hi),
    }
}

/// Random assignment of `m` classifiers to exactly `k` non-empty groups.
pub fn random_assignment(rng: &mut ChaCha8Rng, m: usize, k: usize) -> Vec<usize> {
    let mut a: Vec<usize> = (0..m).map(|i| if i < k { i } else { rng.gen_range(0..k) }).collect();
    a.shuffle(rng);
    a
}

/// Model with every accuracy drawn from `[lo, hi)`, including the children
/// of singletons.
pub fn random_model(rng: &mut ChaCha8Rng, assignment: &[usize], lo: f64, hi: f64, b: f64) -> LatentModel {
    let g = GroupStructure::from_assignment(assignment).unwrap();
    let child = (0..g.m()).map(|_| pair(rng, lo, hi)).collect();
    let latent = (0..g.k()).map(|_| pair(rng, lo, hi)).collect();
    LatentModel::new(g, child, latent, b).unwrap()
}

/// The model with every singleton's child accuracy folded into its latent
/// accuracy, so singletons carry `(1, 1)` children.
pub fn with_exact_singletons(model: &LatentModel) -> LatentModel {
    let mut child = model.child_acc.clone();
    let mut latent = model.latent_acc.clone();
    for (k, members) in model.structure.groups().iter().enumerate() {
        if let [i] = members[..] {
            let (c, g) = (child[i], latent[k]);
            latent[k] = AccuracyPair {
                psi: g.psi * c.psi + (1.0 - g.psi) * (1.0 - c.eta),
                eta: g.eta * c.eta + (1.0 - g.eta) * (1.0 - c.psi),
            };
            child[i] = AccuracyPair::PERFECT;
        }
    }
    LatentModel::new(model.structure.clone(), child, latent, model.b).unwrap()
}

/// `Pr(v | parent)` for a binary node with the given accuracy.
pub fn cond(acc: AccuracyPair, v: i8, parent: i8) -> f64 {
    match (parent, v) {
        (1, 1) => acc.psi,
        (1, _) => 1.0 - acc.psi,
        (_, -1) => acc.eta,
        _ => 1.0 - acc.eta,
    }
}

/// `Pr(Y = y, f = column)` by summing the joint over all `2^K` latent
/// configurations.
pub fn joint_by_enumeration(model: &LatentModel, column: &[i8], y: i8) -> f64 {
    let k = model.k();
    let prior = if y == 1 { 0.5 * (1.0 + model.b) } else { 0.5 * (1.0 - model.b) };
    let mut total = 0.0;
    for mask in 0u32..(1 << k) {
        let alpha: Vec<i8> = (0..k).map(|g| if mask >> g & 1 == 1 { 1 } else { -1 }).collect();
        let mut p = prior;
        for g in 0..k {
            p *= cond(model.latent_acc[g], alpha[g], y);
        }
        for (i, &f) in column.iter().enumerate() {
            p *= cond(model.child_acc[i], f, alpha[model.structure.group_of(i)]);
        }
        total += p;
    }
    total
}

/// [`random_model`] over a random assignment into `k` groups.
pub fn random_grouped_model(rng: &mut ChaCha8Rng, m: usize, k: usize, lo: f64, hi: f64, b: f64) -> LatentModel {
    let a = random_assignment(rng, m, k);
    random_model(rng, &a, lo, hi, b)
}
