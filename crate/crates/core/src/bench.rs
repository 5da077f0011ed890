//! Seeded sweep over the size of one correlated group, comparing five meta
//! learners on data drawn from the latent model.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::statistics::{Data, OrderStatistics};

use crate::dawid_skene::{ds_predict, fit_ci, majority_vote};
use crate::error::{invalid, Result};
use crate::latent;
use crate::stats::{accuracy_mse, balanced_error};
use crate::structure::{estimate_structure_with, StructureOptions};
use crate::synthetic::{generate, one_group_sizes, oracle_ci_predict, oracle_latent_predict, sample_model, true_accuracies, GeneratorConfig};

pub const METHODS: [&str; 5] = ["vote", "sml_em", "oracle_ci", "l_sml", "oracle_l"];

/// Sweep configuration: a model family with one group of varying size and
/// all other classifiers conditionally independent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub m: usize,
    pub n: usize,
    #[serde(default)]
    pub b: f64,
    pub latent_range: (f64, f64),
    pub child_range: (f64, f64),
    /// Sizes of the correlated group to sweep over.
    pub group_sizes: Vec<usize>,
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            m: 20,
            n: 10_000,
            b: 0.0,
            latent_range: (0.5, 0.8),
            child_range: (0.7, 0.9),
            group_sizes: (1..=10).collect(),
            trials: 20,
            seed: 0,
        }
    }
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return invalid("trials must be positive");
        }
        if self.group_sizes.is_empty() {
            return invalid("no group sizes to sweep");
        }
        if self.m < 5 {
            return invalid(format!("the sweep needs m >= 5, got {}", self.m));
        }
        for &g in &self.group_sizes {
            self.config(g, 0).validate()?;
        }
        Ok(())
    }

    fn config(&self, g1: usize, seed: u64) -> GeneratorConfig {
        GeneratorConfig {
            m: self.m,
            group_sizes: if g1 >= 1 && g1 <= self.m { one_group_sizes(self.m, g1) } else { vec![0] },
            b: self.b,
            latent_range: self.latent_range,
            child_range: self.child_range,
            n: self.n,
            seed,
        }
    }

    /// Seed of one trial; distinct for every `(g1, trial)` pair.
    pub fn trial_seed(&self, g1: usize, trial: usize) -> u64 {
        self.seed
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(((g1 as u64) << 32) | trial as u64)
    }
}

/// Outcome of one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub g1: usize,
    pub trial: usize,
    /// Balanced accuracy per method, in the order of [`METHODS`].
    pub balanced_accuracy: [f64; 5],
    pub recovered: bool,
    pub estimated_k: usize,
    pub mse_sml_em: f64,
    pub mse_l_sml: f64,
    /// Every EM trace of the trial was non-decreasing.
    pub em_monotone: bool,
}

pub fn run_trial(scenario: &Scenario, g1: usize, trial: usize) -> Result<TrialResult> {
    let seed = scenario.trial_seed(g1, trial);
    let model = sample_model(&scenario.config(g1, seed))?;
    let (z, y) = generate(&model, scenario.n, seed ^ 0xDA7A)?;
    let truth = true_accuracies(&model);
    let bacc = |pred: &crate::data::LabelVector| -> Result<f64> { Ok(1.0 - balanced_error(pred, &y)?) };

    let vote = majority_vote(&z, None)?;
    let ci = fit_ci(&z)?;
    let (ci_labels, _) = ds_predict(&z, &ci.params)?;
    let oracle_ci = oracle_ci_predict(&z, &model)?;
    let oracle_l = oracle_latent_predict(&z, &model)?;

    let opts = StructureOptions {
        seed,
        ..StructureOptions::default()
    };
    let (structure, _) = estimate_structure_with(&z, &opts)?;
    let fit = latent::fit_with_report(&z, &structure)?;
    let (l_labels, _) = latent::predict(&z, &fit.model)?;

    let em_monotone = ci.is_monotone() && fit.em_traces.iter().all(|t| crate::dawid_skene::monotone(t));
    Ok(TrialResult {
        g1,
        trial,
        balanced_accuracy: [bacc(&vote)?, bacc(&ci_labels)?, bacc(&oracle_ci)?, bacc(&l_labels)?, bacc(&oracle_l)?],
        recovered: structure.same_partition(&model.structure),
        estimated_k: structure.k(),
        mse_sml_em: accuracy_mse(&ci.params.acc, &truth)?,
        mse_l_sml: accuracy_mse(&fit.model.composed_accuracies(), &truth)?,
        em_monotone,
    })
}

/// Summary of one method at one sweep point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub mean: f64,
    pub q10: f64,
    pub median: f64,
    pub q90: f64,
}

/// Aggregate over the trials of one sweep point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub g1: usize,
    pub methods: Vec<MethodSummary>,
    pub recovery_probability: f64,
    pub mse_sml_em: f64,
    pub mse_l_sml: f64,
    pub trials: Vec<TrialResult>,
}

impl SweepPoint {
    pub fn mean_of(&self, method: &str) -> Option<f64> {
        self.methods.iter().find(|s| s.method == method).map(|s| s.mean)
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Runs every trial of the scenario (in parallel) and aggregates per point.
pub fn run_benchmark(scenario: &Scenario) -> Result<Vec<SweepPoint>> {
    scenario.validate()?;
    let jobs: Vec<(usize, usize)> = scenario
        .group_sizes
        .iter()
        .flat_map(|&g| (0..scenario.trials).map(move |t| (g, t)))
        .collect();
    let results: Vec<TrialResult> = jobs
        .par_iter()
        .map(|&(g, t)| run_trial(scenario, g, t))
        .collect::<Result<_>>()?;

    Ok(scenario
        .group_sizes
        .iter()
        .map(|&g| {
            let trials: Vec<TrialResult> = results.iter().filter(|r| r.g1 == g).cloned().collect();
            let methods = METHODS
                .iter()
                .enumerate()
                .map(|(k, name)| {
                    let values: Vec<f64> = trials.iter().map(|r| r.balanced_accuracy[k]).collect();
                    let mut data = Data::new(values.clone());
                    MethodSummary {
                        method: name.to_string(),
                        mean: mean(&values),
                        q10: data.quantile(0.1),
                        median: data.quantile(0.5),
                        q90: data.quantile(0.9),
                    }
                })
                .collect();
            SweepPoint {
                g1: g,
                methods,
                recovery_probability: trials.iter().filter(|r| r.recovered).count() as f64 / trials.len() as f64,
                mse_sml_em: mean(&trials.iter().map(|r| r.mse_sml_em).collect::<Vec<_>>()),
                mse_l_sml: mean(&trials.iter().map(|r| r.mse_l_sml).collect::<Vec<_>>()),
                trials,
            }
        })
        .collect())
}
