//! Ground-truth latent models, data drawn from them, their exact covariance
//! and the two oracle meta-learners.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{CovarianceMatrix, LabelVector, PredictionMatrix};
use crate::dawid_skene::ds_predict;
use crate::error::{invalid, Result};
use crate::latent::{self, compose_marginal_accuracy, LatentModel};
use crate::stats::AccuracyPair;
use crate::structure::GroupStructure;

/// Parameters of a random latent model and the dataset drawn from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    pub m: usize,
    pub group_sizes: Vec<usize>,
    #[serde(default)]
    pub b: f64,
    /// Range of `Pr(alpha = 1 | Y = 1)` and `Pr(alpha = -1 | Y = -1)`.
    #[serde(default = "default_latent_range")]
    pub latent_range: (f64, f64),
    /// Range of the child sensitivities and specificities.
    #[serde(default = "default_child_range")]
    pub child_range: (f64, f64),
    pub n: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_latent_range() -> (f64, f64) {
    (0.5, 0.8)
}

fn default_child_range() -> (f64, f64) {
    (0.7, 0.9)
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.group_sizes.is_empty() || self.group_sizes.contains(&0) {
            return invalid("group sizes must be positive");
        }
        let total: usize = self.group_sizes.iter().sum();
        if total != self.m {
            return invalid(format!("group sizes sum to {total}, expected m = {}", self.m));
        }
        if !(-1.0..=1.0).contains(&self.b) {
            return invalid(format!("class imbalance {} outside [-1, 1]", self.b));
        }
        for (name, (lo, hi)) in [("latent_range", self.latent_range), ("child_range", self.child_range)] {
            if !(0.5 <= lo && lo <= hi && hi <= 1.0) {
                return invalid(format!("{name} ({lo}, {hi}) must satisfy 0.5 <= lo <= hi <= 1"));
            }
        }
        if self.n == 0 {
            return invalid("instance count n must be positive");
        }
        Ok(())
    }
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    lo + (hi - lo) * rng.gen::<f64>()
}

/// Draws a model: every latent and child accuracy uniformly from its range,
/// groups as contiguous blocks. A singleton's child and latent draws are
/// composed into its latent accuracy and its child accuracy set to `(1, 1)`.
pub fn sample_model(cfg: &GeneratorConfig) -> Result<LatentModel> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut child_acc = Vec::with_capacity(cfg.m);
    let mut latent_acc = Vec::with_capacity(cfg.group_sizes.len());
    for &size in &cfg.group_sizes {
        let gamma = AccuracyPair {
            psi: uniform(&mut rng, cfg.latent_range),
            eta: uniform(&mut rng, cfg.latent_range),
        };
        let children: Vec<AccuracyPair> = (0..size)
            .map(|_| AccuracyPair {
                psi: uniform(&mut rng, cfg.child_range),
                eta: uniform(&mut rng, cfg.child_range),
            })
            .collect();
        if size == 1 {
            let c = children[0];
            latent_acc.push(AccuracyPair {
                psi: gamma.psi * c.psi + (1.0 - gamma.psi) * (1.0 - c.eta),
                eta: gamma.eta * c.eta + (1.0 - gamma.eta) * (1.0 - c.psi),
            });
            child_acc.push(AccuracyPair::PERFECT);
        } else {
            latent_acc.push(gamma);
            child_acc.extend(children);
        }
    }
    LatentModel::new(GroupStructure::from_sizes(&cfg.group_sizes)?, child_acc, latent_acc, cfg.b)
}

/// Draws `n` instances from the model. Instance `j` uses stream `j` of a
/// ChaCha generator seeded with `seed`, so the output does not depend on
/// how the work is scheduled.
pub fn generate(model: &LatentModel, n: usize, seed: u64) -> Result<(PredictionMatrix, LabelVector)> {
    if n == 0 {
        return invalid("instance count n must be positive");
    }
    let m = model.m();
    let p = 0.5 * (1.0 + model.b);
    let groups = model.structure.groups();
    let columns: Vec<(i8, Vec<i8>)> = (0..n)
        .into_par_iter()
        .map(|j| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(j as u64);
            let draw = |rng: &mut ChaCha8Rng, prob: f64| -> i8 {
                if rng.gen::<f64>() < prob {
                    1
                } else {
                    -1
                }
            };
            let y = draw(&mut rng, p);
            let mut col = vec![0i8; m];
            for (k, members) in groups.iter().enumerate() {
                let alpha = draw(&mut rng, model.latent_acc[k].prob(1, y));
                for &i in members {
                    col[i] = draw(&mut rng, model.child_acc[i].prob(1, alpha));
                }
            }
            (y, col)
        })
        .collect();
    let mut entries = vec![0i8; m * n];
    let mut labels = Vec::with_capacity(n);
    for (j, (y, col)) in columns.into_iter().enumerate() {
        labels.push(y);
        for (i, f) in col.into_iter().enumerate() {
            entries[i * n + j] = f;
        }
    }
    Ok((PredictionMatrix::new(m, n, entries)?, LabelVector::new(labels)?))
}

/// Exact covariance of the classifier outputs under the model.
///
/// Cross-group entries are `v_off_i v_off_j` with
/// `v_off_i = sqrt(1 - b^2) (psi_i + eta_i - 1)`; within-group entries are
/// `v_on_i v_on_j` with `v_on_i = sqrt(1 - E[alpha]^2) (psi_i^a + eta_i^a - 1)`;
/// the diagonal is the variance `1 - E[f_i]^2`.
pub fn population_covariance(model: &LatentModel) -> CovarianceMatrix {
    let m = model.m();
    let composed = model.composed_accuracies();
    let mean_f: Vec<f64> = composed
        .iter()
        .map(|a| (a.psi - a.eta) + model.b * a.informedness())
        .collect();
    let scale_off = (1.0 - model.b * model.b).max(0.0).sqrt();
    let v_off: Vec<f64> = composed.iter().map(|a| scale_off * a.informedness()).collect();
    let v_on: Vec<f64> = (0..m)
        .map(|i| {
            let e = model.latent_mean(model.structure.group_of(i));
            (1.0 - e * e).max(0.0).sqrt() * model.child_acc[i].informedness()
        })
        .collect();
    CovarianceMatrix::from_fn(m, |i, j| {
        if i == j {
            1.0 - mean_f[i] * mean_f[i]
        } else if model.structure.same_group(i, j) {
            v_on[i] * v_on[j]
        } else {
            v_off[i] * v_off[j]
        }
    })
    .expect("entries are finite and symmetric by construction")
}

/// Linear rule given the exact marginal accuracies of the model.
pub fn oracle_ci_predict(z: &PredictionMatrix, model: &LatentModel) -> Result<LabelVector> {
    Ok(ds_predict(z, &model.to_ci())?.0)
}

/// Maximum-likelihood rule given the exact model.
pub fn oracle_latent_predict(z: &PredictionMatrix, model: &LatentModel) -> Result<LabelVector> {
    Ok(latent::predict(z, model)?.0)
}

/// Marginal accuracies of the model's classifiers.
pub fn true_accuracies(model: &LatentModel) -> Vec<AccuracyPair> {
    (0..model.m()).map(|i| compose_marginal_accuracy(model, i)).collect()
}

/// One correlated group of size `g1` followed by `m - g1` singletons.
pub fn one_group_sizes(m: usize, g1: usize) -> Vec<usize> {
    std::iter::once(g1).chain(std::iter::repeat_n(1, m - g1)).collect()
}
