//! Conditionally independent (Dawid–Skene) ensemble: spectral initialisation,
//! EM refinement and the linear maximum-likelihood meta-learner.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::data::{LabelVector, PredictionMatrix};
use crate::error::{invalid, Error, Result};
use crate::stats::{log_add_exp, logistic, sample_covariance, AccuracyPair};
use crate::structure::{complete_rank_one, full_mask};

/// Probability clipping applied to every sensitivity, specificity and prior.
pub const PROB_EPS: f64 = 1e-3;
pub const DEFAULT_TOL: f64 = 1e-6;
pub const DEFAULT_MAX_ITER: usize = 500;

/// Parameters of a conditionally independent ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CIParams {
    pub acc: Vec<AccuracyPair>,
    /// Class imbalance `Pr(Y = 1) - Pr(Y = -1)`.
    pub b: f64,
}

impl CIParams {
    pub fn new(acc: Vec<AccuracyPair>, b: f64) -> Result<Self> {
        if !(b > -1.0 && b < 1.0) {
            return invalid(format!("class imbalance {b} outside (-1, 1)"));
        }
        Ok(Self { acc, b })
    }

    pub fn m(&self) -> usize {
        self.acc.len()
    }

    /// All probabilities clipped to `[PROB_EPS, 1 - PROB_EPS]`.
    pub fn clipped(&self) -> Self {
        let p = prior_from_imbalance(self.b).clamp(PROB_EPS, 1.0 - PROB_EPS);
        Self {
            acc: self.acc.iter().map(|a| a.clipped(PROB_EPS)).collect(),
            b: 2.0 * p - 1.0,
        }
    }

    /// The same model with the two classes exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            acc: self.acc.iter().map(AccuracyPair::swapped).collect(),
            b: -self.b,
        }
    }

    /// Per-classifier weights `w_i` and the intercept `w_0` of the linear
    /// decision rule `sign(sum_i w_i f_i + w_0)`.
    pub fn linear_weights(&self) -> (Vec<f64>, f64) {
        let c = self.clipped();
        let mut w0 = ((1.0 + c.b) / (1.0 - c.b)).ln();
        let w = c
            .acc
            .iter()
            .map(|a| {
                let (psi, eta) = (a.psi, a.eta);
                w0 += 0.5 * ((psi * (1.0 - psi)) / (eta * (1.0 - eta))).ln();
                0.5 * ((psi * eta) / ((1.0 - psi) * (1.0 - eta))).ln()
            })
            .collect();
        (w, w0)
    }
}

fn prior_from_imbalance(b: f64) -> f64 {
    0.5 * (1.0 + b)
}

/// Per-instance posterior probabilities of the positive class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Posteriors(pub Vec<f64>);

impl Posteriors {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Distinct instance columns of a prediction matrix with their multiplicities,
/// in order of first occurrence.
#[derive(Debug, Clone)]
pub(crate) struct PatternTable {
    pub patterns: Vec<Vec<i8>>,
    pub counts: Vec<f64>,
    /// Pattern index of every instance.
    pub index: Vec<usize>,
}

impl PatternTable {
    pub fn new(z: &PredictionMatrix) -> Self {
        let mut lookup: HashMap<Vec<i8>, usize> = HashMap::new();
        let mut patterns = Vec::new();
        let mut counts = Vec::new();
        let mut index = Vec::with_capacity(z.n());
        for j in 0..z.n() {
            let col = z.column(j);
            let next = patterns.len();
            let p = *lookup.entry(col.clone()).or_insert_with(|| {
                patterns.push(col);
                counts.push(0.0);
                next
            });
            counts[p] += 1.0;
            index.push(p);
        }
        Self {
            patterns,
            counts,
            index,
        }
    }
}

/// The class log-joints are affine in the prediction column:
/// `ln Pr(f, Y = y) = base_y + sum_i f_i slope_y[i]`.
struct LogTable {
    base: [f64; 2],
    slope_pos: Vec<f64>,
    slope_neg: Vec<f64>,
}

impl LogTable {
    fn new(params: &CIParams) -> Self {
        let p = prior_from_imbalance(params.b);
        let mut base = [p.ln(), (1.0 - p).ln()];
        let mut slope_pos = Vec::with_capacity(params.m());
        let mut slope_neg = Vec::with_capacity(params.m());
        for a in &params.acc {
            let (hit_p, miss_p) = (a.psi.ln(), (1.0 - a.psi).ln());
            let (miss_n, hit_n) = ((1.0 - a.eta).ln(), a.eta.ln());
            base[0] += 0.5 * (hit_p + miss_p);
            base[1] += 0.5 * (miss_n + hit_n);
            slope_pos.push(0.5 * (hit_p - miss_p));
            slope_neg.push(0.5 * (miss_n - hit_n));
        }
        Self {
            base,
            slope_pos,
            slope_neg,
        }
    }

    /// `(ln Pr(f, Y = +1), ln Pr(f, Y = -1))` for one prediction column.
    fn joint(&self, column: &[i8]) -> (f64, f64) {
        let (mut lp, mut lm) = (self.base[0], self.base[1]);
        for ((&f, &sp), &sn) in column.iter().zip(&self.slope_pos).zip(&self.slope_neg) {
            let f = f64::from(f);
            lp += f * sp;
            lm += f * sn;
        }
        (lp, lm)
    }
}

fn pattern_log_likelihood(table: &PatternTable, params: &CIParams) -> f64 {
    let logs = LogTable::new(params);
    table
        .patterns
        .iter()
        .zip(&table.counts)
        .map(|(col, &c)| {
            let (lp, lm) = logs.joint(col);
            c * log_add_exp(lp, lm)
        })
        .sum()
}

/// Per-pattern posteriors `Pr(Y = +1 | f)` and the total log-likelihood.
fn e_step(table: &PatternTable, params: &CIParams) -> (Vec<f64>, f64) {
    let logs = LogTable::new(params);
    let mut ll = 0.0;
    let q = table
        .patterns
        .iter()
        .zip(&table.counts)
        .map(|(col, &c)| {
            let (lp, lm) = logs.joint(col);
            ll += c * log_add_exp(lp, lm);
            logistic(lp - lm)
        })
        .collect();
    (q, ll)
}

/// Marginal log-likelihood of `z` under a conditionally independent model.
pub fn log_likelihood(z: &PredictionMatrix, params: &CIParams) -> Result<f64> {
    check_dims(z, params)?;
    Ok(pattern_log_likelihood(&PatternTable::new(z), &params.clipped()))
}

fn check_dims(z: &PredictionMatrix, params: &CIParams) -> Result<()> {
    if params.m() != z.m() {
        return Err(Error::DimensionMismatch {
            expected: z.m(),
            actual: params.m(),
        });
    }
    Ok(())
}

/// Spectral initial guess of the accuracies.
///
/// The leading rank-one factor `u` of the off-diagonal sample covariance
/// satisfies `u_i = sqrt(1 - b^2) (psi_i + eta_i - 1)`. Given a value of `b`,
/// the row means `mu_i = (psi_i - eta_i) + b (psi_i + eta_i - 1)` then fix the
/// split into sensitivity and specificity. `b` is picked from the grid
/// `-0.99, -0.98, ..., 0.99` by maximum likelihood (ties towards 0).
pub fn sml_initialize(z: &PredictionMatrix) -> Result<CIParams> {
    let m = z.m();
    if m < 3 {
        return invalid(format!(
            "spectral initialisation needs at least 3 classifiers, got {m}"
        ));
    }
    let r = sample_covariance(z)?;
    let u = complete_rank_one(&r, &full_mask(m))?.v;
    let n = z.n() as f64;
    let means: Vec<f64> = z.row_sums().iter().map(|&s| s as f64 / n).collect();
    let table = PatternTable::new(z);

    let params_for = |b: f64| -> CIParams {
        let scale = (1.0 - b * b).sqrt();
        let acc = u
            .iter()
            .zip(&means)
            .map(|(&ui, &mu)| {
                let informed = ui / scale;
                let gap = mu - b * informed;
                AccuracyPair {
                    psi: 0.5 * (1.0 + informed + gap),
                    eta: 0.5 * (1.0 + informed - gap),
                }
            })
            .collect();
        CIParams { acc, b }.clipped()
    };

    let mut grid: Vec<i32> = (-99..=99).collect();
    grid.sort_by_key(|k| (k.abs(), *k));
    let mut best: Option<(f64, CIParams)> = None;
    for k in grid {
        let params = params_for(f64::from(k) / 100.0);
        let ll = pattern_log_likelihood(&table, &params);
        if best.as_ref().is_none_or(|(b, _)| ll > *b) {
            best = Some((ll, params));
        }
    }
    Ok(best.expect("non-empty grid").1)
}

/// Outcome of an EM run.
#[derive(Debug, Clone, PartialEq)]
pub struct EmFit {
    pub params: CIParams,
    pub posteriors: Posteriors,
    pub log_likelihood: f64,
    /// Log-likelihood of the initial point followed by every iteration.
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl EmFit {
    /// True when the log-likelihood never decreased by more than rounding.
    pub fn is_monotone(&self) -> bool {
        monotone(&self.trace)
    }
}

pub(crate) fn monotone(trace: &[f64]) -> bool {
    trace
        .windows(2)
        .all(|w| w[1] >= w[0] - 1e-10 * w[0].abs().max(1.0))
}

/// Dawid–Skene EM for binary labels.
///
/// The E-step computes `Pr(Y = +1 | f)` per instance; the M-step sets each
/// sensitivity/specificity to its posterior-weighted agreement rate and `b`
/// from the mean posterior, all clipped to `[PROB_EPS, 1 - PROB_EPS]` (the
/// clipped value is the constrained maximiser, so the likelihood still never
/// decreases). Stops when no parameter moves by more than `tol`.
pub fn em_refine(z: &PredictionMatrix, init: &CIParams, tol: f64, max_iter: usize) -> Result<EmFit> {
    check_dims(z, init)?;
    if !(tol >= 0.0) {
        return invalid(format!("EM tolerance must be non-negative, got {tol}"));
    }
    let table = PatternTable::new(z);
    let n = z.n() as f64;
    let m = z.m();
    let mut params = init.clipped();
    // the E-step yields the log-likelihood of the current parameters as a
    // by-product, so each iteration scores the patterns once
    let (mut q, mut ll) = e_step(&table, &params);
    let mut trace = vec![ll];
    let mut iterations = 0;
    let mut converged = false;

    while iterations < max_iter {
        iterations += 1;
        let mut w_pos = 0.0;
        let mut w_neg = 0.0;
        let mut agree_pos = vec![0.0; m];
        let mut agree_neg = vec![0.0; m];
        for ((col, &c), &qp) in table.patterns.iter().zip(&table.counts).zip(&q) {
            let (a, b) = (c * qp, c * (1.0 - qp));
            w_pos += a;
            w_neg += b;
            for (i, &f) in col.iter().enumerate() {
                if f > 0 {
                    agree_pos[i] += a;
                } else {
                    agree_neg[i] += b;
                }
            }
        }
        let acc: Vec<AccuracyPair> = params
            .acc
            .iter()
            .enumerate()
            .map(|(i, old)| AccuracyPair {
                psi: if w_pos > 0.0 { agree_pos[i] / w_pos } else { old.psi },
                eta: if w_neg > 0.0 { agree_neg[i] / w_neg } else { old.eta },
            })
            .collect();
        let p = (w_pos / n).clamp(PROB_EPS, 1.0 - PROB_EPS);
        let next = CIParams { acc, b: 2.0 * p - 1.0 }.clipped();

        let delta = next
            .acc
            .iter()
            .zip(&params.acc)
            .map(|(a, o)| (a.psi - o.psi).abs().max((a.eta - o.eta).abs()))
            .fold((next.b - params.b).abs(), f64::max);
        let (next_q, next_ll) = e_step(&table, &next);
        debug_assert!(
            next_ll >= ll - 1e-10 * ll.abs().max(1.0),
            "EM log-likelihood decreased: {ll} -> {next_ll}"
        );
        params = next;
        q = next_q;
        ll = next_ll;
        trace.push(ll);
        if delta < tol {
            converged = true;
            break;
        }
    }

    let posteriors = table.index.iter().map(|&p| q[p]).collect();
    Ok(EmFit {
        params,
        posteriors: Posteriors(posteriors),
        log_likelihood: ll,
        trace,
        iterations,
        converged,
    })
}

/// Stopping rule of the EM iterations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for EmOptions {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
        }
    }
}

/// Spectral initialisation followed by EM with the default tolerances.
pub fn fit_ci(z: &PredictionMatrix) -> Result<EmFit> {
    fit_ci_with(z, &EmOptions::default())
}

pub fn fit_ci_with(z: &PredictionMatrix, opts: &EmOptions) -> Result<EmFit> {
    em_refine(z, &sml_initialize(z)?, opts.tol, opts.max_iter)
}

/// Linear maximum-likelihood labels `sign(sum_i w_i f_i + w_0)` (zero maps to
/// +1) and the logistic posteriors of the same score.
pub fn ds_predict(z: &PredictionMatrix, params: &CIParams) -> Result<(LabelVector, Posteriors)> {
    check_dims(z, params)?;
    let (w, w0) = params.linear_weights();
    let scores: Vec<f64> = (0..z.n())
        .map(|j| w0 + w.iter().enumerate().map(|(i, wi)| wi * f64::from(z.get(i, j))).sum::<f64>())
        .collect();
    let labels = scores.iter().map(|&s| if s >= 0.0 { 1 } else { -1 }).collect();
    let post = scores.iter().map(|&s| logistic(s)).collect();
    Ok((LabelVector::new(labels)?, Posteriors(post)))
}

/// Unweighted vote of the given classifiers (all when `rows` is `None`);
/// ties go to +1.
pub fn majority_vote(z: &PredictionMatrix, rows: Option<&[usize]>) -> Result<LabelVector> {
    let all: Vec<usize> = (0..z.m()).collect();
    let rows = rows.unwrap_or(&all);
    if rows.is_empty() {
        return invalid("majority vote over an empty set of classifiers");
    }
    if let Some(&bad) = rows.iter().find(|&&i| i >= z.m()) {
        return invalid(format!("classifier index {bad} out of range"));
    }
    let labels = (0..z.n())
        .map(|j| {
            let s: i64 = rows.iter().map(|&i| i64::from(z.get(i, j))).sum();
            if s >= 0 {
                1
            } else {
                -1
            }
        })
        .collect();
    LabelVector::new(labels)
}

/// Empirical sensitivity and specificity of every classifier against `y`.
pub fn empirical_accuracies(z: &PredictionMatrix, y: &LabelVector) -> Result<Vec<AccuracyPair>> {
    if y.len() != z.n() {
        return Err(Error::DimensionMismatch {
            expected: z.n(),
            actual: y.len(),
        });
    }
    let pos = y.count(1);
    let neg = y.count(-1);
    if pos == 0 || neg == 0 {
        return invalid("empirical accuracies need both classes in the reference labels");
    }
    Ok(z
        .rows()
        .map(|row| {
            let (mut tp, mut tn) = (0usize, 0usize);
            for (&f, &t) in row.iter().zip(y.as_slice()) {
                if t > 0 && f > 0 {
                    tp += 1;
                } else if t < 0 && f < 0 {
                    tn += 1;
                }
            }
            AccuracyPair {
                psi: tp as f64 / pos as f64,
                eta: tn as f64 / neg as f64,
            }
        })
        .collect())
}
