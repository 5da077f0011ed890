//! Three-layer model `Y -> alpha_1..alpha_K -> f_1..f_m`: two-stage fitting,
//! composed accuracies, exact maximum-likelihood prediction and
//! group-aware classifier selection.

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{LabelVector, PredictionMatrix};
use crate::dawid_skene::{ds_predict, fit_ci_with, majority_vote, CIParams, EmOptions, Posteriors, PROB_EPS};
use crate::error::{invalid, Error, Result};
use crate::stats::{balanced_accuracy, log_add_exp, logistic, sample_covariance, AccuracyPair};
use crate::structure::GroupStructure;

/// Full parameterisation of the latent model.
///
/// A classifier alone in its group has child accuracy `(1, 1)`; its whole
/// accuracy then sits in the latent layer, since the two are not separately
/// identifiable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawLatentModel")]
pub struct LatentModel {
    pub structure: GroupStructure,
    /// `(Pr(f_i = 1 | alpha = 1), Pr(f_i = -1 | alpha = -1))` per classifier.
    pub child_acc: Vec<AccuracyPair>,
    /// `(Pr(alpha_k = 1 | Y = 1), Pr(alpha_k = -1 | Y = -1))` per group.
    pub latent_acc: Vec<AccuracyPair>,
    pub b: f64,
}

#[derive(Deserialize)]
struct RawLatentModel {
    structure: GroupStructure,
    child_acc: Vec<AccuracyPair>,
    latent_acc: Vec<AccuracyPair>,
    b: f64,
}

impl TryFrom<RawLatentModel> for LatentModel {
    type Error = Error;

    fn try_from(raw: RawLatentModel) -> Result<Self> {
        LatentModel::new(raw.structure, raw.child_acc, raw.latent_acc, raw.b)
    }
}

impl LatentModel {
    pub fn new(
        structure: GroupStructure,
        child_acc: Vec<AccuracyPair>,
        latent_acc: Vec<AccuracyPair>,
        b: f64,
    ) -> Result<Self> {
        if child_acc.len() != structure.m() {
            return Err(Error::DimensionMismatch {
                expected: structure.m(),
                actual: child_acc.len(),
            });
        }
        if latent_acc.len() != structure.k() {
            return Err(Error::DimensionMismatch {
                expected: structure.k(),
                actual: latent_acc.len(),
            });
        }
        if !(-1.0..=1.0).contains(&b) {
            return invalid(format!("class imbalance {b} outside [-1, 1]"));
        }
        for a in child_acc.iter().chain(&latent_acc) {
            AccuracyPair::new(a.psi, a.eta)?;
        }
        Ok(Self {
            structure,
            child_acc,
            latent_acc,
            b,
        })
    }

    /// Conditionally independent model: every classifier is its own group.
    pub fn from_ci(params: &CIParams) -> Result<Self> {
        let m = params.m();
        Self::new(
            GroupStructure::singletons(m),
            vec![AccuracyPair::PERFECT; m],
            params.acc.clone(),
            params.b,
        )
    }

    pub fn m(&self) -> usize {
        self.structure.m()
    }

    pub fn k(&self) -> usize {
        self.structure.k()
    }

    /// `E[alpha_k]`.
    pub fn latent_mean(&self, k: usize) -> f64 {
        let p = 0.5 * (1.0 + self.b);
        let g = self.latent_acc[k];
        2.0 * (p * g.psi + (1.0 - p) * (1.0 - g.eta)) - 1.0
    }

    /// The same model with the two classes exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            structure: self.structure.clone(),
            child_acc: self.child_acc.iter().map(AccuracyPair::swapped).collect(),
            latent_acc: self.latent_acc.iter().map(AccuracyPair::swapped).collect(),
            b: -self.b,
        }
    }

    /// Marginal accuracies of all classifiers.
    pub fn composed_accuracies(&self) -> Vec<AccuracyPair> {
        (0..self.m()).map(|i| compose_marginal_accuracy(self, i)).collect()
    }

    /// Conditionally independent parameters with the same marginal accuracies.
    pub fn to_ci(&self) -> CIParams {
        CIParams {
            acc: self.composed_accuracies(),
            b: self.b,
        }
    }
}

/// Marginal `(psi_i, eta_i)` of classifier `i` given the true label.
///
/// Panics if `i` is out of range.
pub fn compose_marginal_accuracy(model: &LatentModel, i: usize) -> AccuracyPair {
    let c = model.child_acc[i];
    let g = model.latent_acc[model.structure.group_of(i)];
    AccuracyPair {
        psi: g.psi * c.psi + (1.0 - g.psi) * (1.0 - c.eta),
        eta: g.eta * c.eta + (1.0 - g.eta) * (1.0 - c.psi),
    }
}

/// Estimated values of the latent variables, one row per group.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentValueMatrix(PredictionMatrix);

impl LatentValueMatrix {
    pub fn new(values: PredictionMatrix) -> Self {
        Self(values)
    }

    pub fn k(&self) -> usize {
        self.0.m()
    }

    pub fn n(&self) -> usize {
        self.0.n()
    }

    pub fn as_matrix(&self) -> &PredictionMatrix {
        &self.0
    }
}

/// A fitted model together with diagnostics from both stages.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentFit {
    pub model: LatentModel,
    pub latent_values: LatentValueMatrix,
    /// Log-likelihood traces of every EM run, stage one first.
    pub em_traces: Vec<Vec<f64>>,
    /// Set when the latent layer has fewer than three groups, so its
    /// accuracies are not identifiable and a fallback was used.
    pub latent_non_identifiable: bool,
    /// Estimated accuracy of each row of `latent_values` against the latent
    /// variable it stands for; used to correct the stage-two accuracies.
    pub latent_value_acc: Vec<AccuracyPair>,
    pub warnings: Vec<String>,
}

/// Two-stage fit of the latent model for a given structure.
pub fn fit(z: &PredictionMatrix, g: &GroupStructure) -> Result<LatentModel> {
    Ok(fit_with_report(z, g)?.model)
}

/// Two-stage fit returning diagnostics.
///
/// Stage one fits every group of three or more classifiers as a
/// conditionally independent ensemble whose label is the group's latent
/// variable, and estimates that variable per instance by the group's linear
/// rule. Stage two fits the estimated latent values as a conditionally
/// independent ensemble for `Y`.
///
/// Stage two measures how well the *estimated* latent values track `Y`,
/// which understates the accuracy of the latent variables themselves. Each
/// latent accuracy is therefore corrected by inverting the channel from the
/// latent variable to its estimate, whose accuracy comes from the stage-one
/// posteriors (pairs use the lead member's accuracy, singletons are exact).
pub fn fit_with_report(z: &PredictionMatrix, g: &GroupStructure) -> Result<LatentFit> {
    fit_with_options(z, g, &EmOptions::default())
}

/// [`fit_with_report`] with explicit EM stopping rules.
pub fn fit_with_options(z: &PredictionMatrix, g: &GroupStructure, opts: &EmOptions) -> Result<LatentFit> {
    if g.m() != z.m() {
        return Err(Error::DimensionMismatch {
            expected: z.m(),
            actual: g.m(),
        });
    }
    let n = z.n();
    let mut child_acc = vec![AccuracyPair::PERFECT; z.m()];
    let mut alpha_rows: Vec<Vec<i8>> = Vec::with_capacity(g.k());
    let mut traces = Vec::new();
    let mut warnings = Vec::new();
    // accuracy of each estimated latent value against the true latent value
    let mut value_acc = Vec::with_capacity(g.k());

    for members in g.groups() {
        let row = match members.len() {
            1 => {
                value_acc.push(AccuracyPair::PERFECT);
                z.row(members[0]).to_vec()
            }
            2 => {
                let sub = z.select_rows(&members)?;
                let pair = pair_fallback(&sub)?;
                warnings.extend(pair.warning.map(|w| format!("classifiers ({}, {}): {w}", members[0], members[1])));
                for (&i, acc) in members.iter().zip(pair.acc) {
                    child_acc[i] = acc;
                }
                value_acc.push(pair.acc[pair.lead]);
                pair.values
            }
            _ => {
                let sub = z.select_rows(&members)?;
                let em = fit_ci_with(&sub, opts)?;
                for (&i, acc) in members.iter().zip(&em.params.acc) {
                    child_acc[i] = *acc;
                }
                let (alpha, _) = ds_predict(&sub, &em.params)?;
                value_acc.push(posterior_agreement(alpha.as_slice(), em.posteriors.as_slice()));
                traces.push(em.trace);
                alpha.as_slice().to_vec()
            }
        };
        alpha_rows.push(row);
    }
    let alpha = PredictionMatrix::from_rows(&alpha_rows)?;

    let k = g.k();
    let (latent_acc, b, non_identifiable) = match k {
        1 => {
            let mean = alpha.row_sums()[0] as f64 / n as f64;
            let b = mean.clamp(-1.0 + 2.0 * PROB_EPS, 1.0 - 2.0 * PROB_EPS);
            warnings.push("single latent group: its accuracy is not identifiable and was fixed near 1".to_string());
            (vec![AccuracyPair::symmetric(1.0 - PROB_EPS)], b, true)
        }
        2 => {
            let pair = pair_fallback(&alpha)?;
            warnings.extend(pair.warning.map(|w| format!("latent pair: {w}")));
            warnings.push("two latent groups: latent accuracies assume equal informedness".to_string());
            (pair.acc.to_vec(), pair.mean, true)
        }
        _ => {
            let em = fit_ci_with(&alpha, opts)?;
            traces.push(em.trace);
            (em.params.acc, em.params.b, false)
        }
    };
    let latent_acc = if k == 1 {
        latent_acc
    } else {
        latent_acc
            .iter()
            .zip(&value_acc)
            .map(|(rho, a)| remove_estimation_error(*rho, *a))
            .collect()
    };
    for w in &warnings {
        warn!("{w}");
    }

    Ok(LatentFit {
        model: LatentModel::new(g.clone(), child_acc, latent_acc, b)?,
        latent_values: LatentValueMatrix::new(alpha),
        em_traces: traces,
        latent_non_identifiable: non_identifiable,
        latent_value_acc: value_acc,
        warnings,
    })
}

/// Posterior-weighted agreement `(Pr(est = 1 | alpha = 1), Pr(est = -1 | alpha = -1))`
/// of hard estimates with a latent variable whose posteriors are `q`.
fn posterior_agreement(estimate: &[i8], q: &[f64]) -> AccuracyPair {
    let (mut pos, mut neg, mut hit_pos, mut hit_neg) = (0.0, 0.0, 0.0, 0.0);
    for (&e, &qj) in estimate.iter().zip(q) {
        pos += qj;
        neg += 1.0 - qj;
        if e > 0 {
            hit_pos += qj;
        } else {
            hit_neg += 1.0 - qj;
        }
    }
    AccuracyPair {
        psi: if pos > 0.0 { hit_pos / pos } else { 1.0 },
        eta: if neg > 0.0 { hit_neg / neg } else { 1.0 },
    }
}

/// Accuracy of `alpha` given `Y` from the accuracy `rho` of its estimate
/// given `Y` and the accuracy `a` of the estimate given `alpha`, inverting
/// `rho_+ = g_+ a_+ + (1 - g_+)(1 - a_-)` and
/// `rho_- = g_- a_- + (1 - g_-)(1 - a_+)`.
fn remove_estimation_error(rho: AccuracyPair, a: AccuracyPair) -> AccuracyPair {
    let informed = a.informedness();
    if informed <= 1e-6 {
        return rho;
    }
    AccuracyPair {
        psi: (rho.psi - (1.0 - a.eta)) / informed,
        eta: (rho.eta - (1.0 - a.psi)) / informed,
    }
    .clipped(PROB_EPS)
}

struct PairFit {
    acc: [AccuracyPair; 2],
    /// Member whose outputs stand in for the parent.
    lead: usize,
    /// Estimated mean of the common parent.
    mean: f64,
    values: Vec<i8>,
    warning: Option<String>,
}

/// Moment fit of two classifiers sharing a parent, assuming both have the
/// same informedness `s = psi + eta - 1`.
///
/// With `mu_i = E[f_i]` and `r = cov(f_1, f_2)`: `r = s^2 - mu_bar^2`, so
/// `s = sqrt(max(r, 0) + mu_bar^2)`, `E[parent] = mu_bar / s` and
/// `psi_i - eta_i = mu_i - mu_bar`. Where the two disagree the parent is taken
/// from the member with the larger variance (the first on ties).
fn pair_fallback(z: &PredictionMatrix) -> Result<PairFit> {
    debug_assert_eq!(z.m(), 2);
    let n = z.n() as f64;
    let r = sample_covariance(z)?.get(0, 1);
    let mu: Vec<f64> = z.row_sums().iter().map(|&s| s as f64 / n).collect();
    let mu_bar = 0.5 * (mu[0] + mu[1]);
    let warning = (r < 0.0).then(|| format!("negative covariance {r:.4}; informedness taken from the means only"));
    let s = (r.max(0.0) + mu_bar * mu_bar).sqrt().min(1.0);
    let mean = if s > 0.0 { mu_bar / s } else { 0.0 };
    let acc = [0, 1].map(|i| {
        let gap = mu[i] - mu_bar;
        AccuracyPair {
            psi: 0.5 * (1.0 + s + gap),
            eta: 0.5 * (1.0 + s - gap),
        }
        .clipped(PROB_EPS)
    });
    let lead = if 1.0 - mu[1] * mu[1] > 1.0 - mu[0] * mu[0] { 1 } else { 0 };
    let values = z.row(lead).to_vec();
    Ok(PairFit {
        acc,
        lead,
        mean: mean.clamp(-1.0 + 2.0 * PROB_EPS, 1.0 - 2.0 * PROB_EPS),
        values,
        warning,
    })
}

/// `(ln Pr(f | Y = 1), ln Pr(f | Y = -1))` for one instance.
fn class_log_likelihoods(column: &[i8], model: &LatentModel, groups: &[Vec<usize>]) -> (f64, f64) {
    let mut out = [0.0, 0.0];
    for (k, members) in groups.iter().enumerate() {
        // ln Pr(f_G | alpha = a) for a = +1, -1
        let mut given = [0.0, 0.0];
        for &i in members {
            let c = model.child_acc[i];
            given[0] += c.prob(column[i], 1).ln();
            given[1] += c.prob(column[i], -1).ln();
        }
        let g = model.latent_acc[k];
        for (slot, y) in [1i8, -1].into_iter().enumerate() {
            let up = g.prob(1, y).ln() + given[0];
            let down = g.prob(-1, y).ln() + given[1];
            out[slot] += log_add_exp(up, down);
        }
    }
    (out[0], out[1])
}

/// Maximum-likelihood labels and posteriors `Pr(Y = 1 | f)` under the latent
/// model. Ties go to +1.
pub fn predict(z: &PredictionMatrix, model: &LatentModel) -> Result<(LabelVector, Posteriors)> {
    if model.m() != z.m() {
        return Err(Error::DimensionMismatch {
            expected: model.m(),
            actual: z.m(),
        });
    }
    let groups = model.structure.groups();
    let p = 0.5 * (1.0 + model.b);
    let (prior_pos, prior_neg) = (p.ln(), (1.0 - p).ln());
    let scored: Vec<(i8, f64)> = (0..z.n())
        .into_par_iter()
        .map(|j| {
            let (lp, lm) = class_log_likelihoods(&z.column(j), model, &groups);
            let (lp, lm) = (lp + prior_pos, lm + prior_neg);
            if lp == f64::NEG_INFINITY && lm == f64::NEG_INFINITY {
                return (1, 0.5);
            }
            let label = if lp >= lm { 1 } else { -1 };
            (label, logistic(lp - lm))
        })
        .collect();
    let (labels, post): (Vec<i8>, Vec<f64>) = scored.into_iter().unzip();
    Ok((LabelVector::new(labels)?, Posteriors(post)))
}

/// The `count` most accurate classifiers subject to taking at most one from
/// each group, ordered by decreasing composed balanced accuracy.
pub fn select_classifiers(model: &LatentModel, count: usize) -> Result<Vec<usize>> {
    let k = model.k();
    if count == 0 {
        return invalid("must select at least one classifier");
    }
    if count > k {
        return invalid(format!(
            "cannot select {count} classifiers from distinct groups: M <= K is required and K = {k}"
        ));
    }
    let score: Vec<f64> = model.composed_accuracies().into_iter().map(balanced_accuracy).collect();
    let better = |a: usize, b: usize| score[a] > score[b] || (score[a] == score[b] && a < b);
    let mut best: Vec<usize> = model
        .structure
        .groups()
        .into_iter()
        .map(|members| {
            members
                .into_iter()
                .reduce(|a, b| if better(b, a) { b } else { a })
                .expect("groups are non-empty")
        })
        .collect();
    best.sort_by(|&a, &b| score[b].total_cmp(&score[a]).then(a.cmp(&b)));
    best.truncate(count);
    Ok(best)
}

/// Prediction of a sparse ensemble: a plain vote of the chosen classifiers.
pub fn sparse_predict(z: &PredictionMatrix, chosen: &[usize]) -> Result<LabelVector> {
    majority_vote(z, Some(chosen))
}
