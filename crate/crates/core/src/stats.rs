//! Sample statistics and accuracy arithmetic shared by the estimators.

use serde::{Deserialize, Serialize};

use crate::data::{CovarianceMatrix, LabelVector, PredictionMatrix};
use crate::error::{invalid, Error, Result};

/// Sensitivity `psi = Pr(f = 1 | parent = 1)` and specificity
/// `eta = Pr(f = -1 | parent = -1)` of a binary predictor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccuracyPair {
    pub psi: f64,
    pub eta: f64,
}

impl AccuracyPair {
    pub fn new(psi: f64, eta: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&psi) || !(0.0..=1.0).contains(&eta) {
            return invalid(format!("accuracy pair ({psi}, {eta}) outside [0, 1]"));
        }
        Ok(Self { psi, eta })
    }

    /// Both probabilities equal to one: the predictor copies its parent.
    pub const PERFECT: AccuracyPair = AccuracyPair { psi: 1.0, eta: 1.0 };

    pub fn symmetric(p: f64) -> Self {
        Self { psi: p, eta: p }
    }

    pub fn balanced(&self) -> f64 {
        balanced_accuracy(*self)
    }

    /// `psi + eta - 1`, the signed strength of the link to the parent.
    pub fn informedness(&self) -> f64 {
        self.psi + self.eta - 1.0
    }

    pub fn clipped(&self, eps: f64) -> Self {
        Self {
            psi: self.psi.clamp(eps, 1.0 - eps),
            eta: self.eta.clamp(eps, 1.0 - eps),
        }
    }

    /// The same predictor seen with the class roles exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            psi: self.eta,
            eta: self.psi,
        }
    }

    /// `Pr(f = value | parent = parent)`.
    #[inline]
    pub fn prob(&self, value: i8, parent: i8) -> f64 {
        match (parent > 0, value > 0) {
            (true, true) => self.psi,
            (true, false) => 1.0 - self.psi,
            (false, false) => self.eta,
            (false, true) => 1.0 - self.eta,
        }
    }
}

/// Mean of sensitivity and specificity.
pub fn balanced_accuracy(acc: AccuracyPair) -> f64 {
    0.5 * (acc.psi + acc.eta)
}

/// Unbiased (divisor `n - 1`) sample covariance of the rows of `z`.
///
/// Computed from exact integer co-occurrence counts, so the result does not
/// depend on the order of the instances.
pub fn sample_covariance(z: &PredictionMatrix) -> Result<CovarianceMatrix> {
    let n = z.n();
    if n < 2 {
        return invalid(format!("sample covariance needs at least 2 instances, got {n}"));
    }
    let sums = z.row_sums();
    let nf = n as f64;
    let denom = nf * (nf - 1.0);
    CovarianceMatrix::from_fn(z.m(), |i, j| {
        let cross: i64 = if i == j {
            n as i64
        } else {
            z.row(i)
                .iter()
                .zip(z.row(j))
                .map(|(&a, &b)| i64::from(a * b))
                .sum()
        };
        let num = n as i64 as i128 * cross as i128 - sums[i] as i128 * sums[j] as i128;
        num as f64 / denom
    })
}

/// Class-conditional sample covariances `(C+, C-)` computed over the
/// instances with `y = +1` and `y = -1` respectively.
pub fn conditional_covariance(
    z: &PredictionMatrix,
    y: &LabelVector,
) -> Result<(CovarianceMatrix, CovarianceMatrix)> {
    if y.len() != z.n() {
        return Err(Error::DimensionMismatch {
            expected: z.n(),
            actual: y.len(),
        });
    }
    let split = |label: i8| -> Result<CovarianceMatrix> {
        let cols: Vec<usize> = (0..y.len()).filter(|&j| y.as_slice()[j] == label).collect();
        if cols.len() < 2 {
            return invalid(format!(
                "class {label:+} has {} instances, need at least 2",
                cols.len()
            ));
        }
        sample_covariance(&z.select_columns(&cols)?)
    };
    Ok((split(1)?, split(-1)?))
}

/// Mean of the two class-conditional error rates of `pred` against `truth`.
pub fn balanced_error(pred: &LabelVector, truth: &LabelVector) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::DimensionMismatch {
            expected: truth.len(),
            actual: pred.len(),
        });
    }
    let (mut pos, mut neg, mut fn_, mut fp) = (0usize, 0usize, 0usize, 0usize);
    for (&p, &t) in pred.as_slice().iter().zip(truth.as_slice()) {
        if t > 0 {
            pos += 1;
            fn_ += usize::from(p < 0);
        } else {
            neg += 1;
            fp += usize::from(p > 0);
        }
    }
    if pos == 0 || neg == 0 {
        return invalid("balanced error needs both classes present in the ground truth");
    }
    Ok(0.5 * (fn_ as f64 / pos as f64 + fp as f64 / neg as f64))
}

/// Mean squared error of sensitivity/specificity estimates,
/// `1/(2m) * sum_i ((psi_hat - psi)^2 + (eta_hat - eta)^2)`.
pub fn accuracy_mse(estimate: &[AccuracyPair], truth: &[AccuracyPair]) -> Result<f64> {
    if estimate.len() != truth.len() {
        return Err(Error::DimensionMismatch {
            expected: truth.len(),
            actual: estimate.len(),
        });
    }
    if truth.is_empty() {
        return invalid("accuracy MSE over an empty set");
    }
    let total: f64 = estimate
        .iter()
        .zip(truth)
        .map(|(e, t)| (e.psi - t.psi).powi(2) + (e.eta - t.eta).powi(2))
        .sum();
    Ok(total / (2.0 * truth.len() as f64))
}

/// Numerically stable `ln(exp(a) + exp(b))`; handles `-inf` operands.
#[inline]
pub(crate) fn log_add_exp(a: f64, b: f64) -> f64 {
    let hi = a.max(b);
    if hi == f64::NEG_INFINITY {
        return hi;
    }
    hi + ((a - hi).exp() + (b - hi).exp()).ln()
}

#[inline]
pub(crate) fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
