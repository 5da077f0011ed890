//! Dependence scores built from 2x2 covariance determinants.
//!
//! If the off-diagonal part of `R` has the two-rank-one structure of the
//! latent model, the determinant
//!
//! ```text
//! M(i, j, k, l) = r_ij * r_kl - r_il * r_kj
//! ```
//!
//! vanishes whenever three of the four indices share a group or every one of
//! the four pairs `(i,j), (k,l), (i,l), (k,j)` crosses groups. Summing the
//! magnitudes over `(k, l)` therefore yields a score that is large for pairs
//! of classifiers sharing a latent variable and small otherwise.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::data::CovarianceMatrix;
use crate::error::{invalid, Result};

/// Non-negative `m x m` affinity with zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix(DMatrix<f64>);

impl ScoreMatrix {
    /// Wraps an affinity matrix; it must be square, symmetric, non-negative
    /// and have a zero diagonal.
    pub fn new(entries: DMatrix<f64>) -> Result<Self> {
        if !entries.is_square() {
            return invalid("score matrix must be square");
        }
        let m = entries.nrows();
        for i in 0..m {
            if entries[(i, i)] != 0.0 {
                return invalid(format!("score matrix diagonal entry {i} is not zero"));
            }
            for j in 0..m {
                let v = entries[(i, j)];
                if !(v >= 0.0) || !v.is_finite() {
                    return invalid(format!("score entry ({i}, {j}) = {v} is not a finite non-negative value"));
                }
                if v != entries[(j, i)] {
                    return invalid(format!("score matrix is not symmetric at ({i}, {j})"));
                }
            }
        }
        Ok(Self(entries))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn submatrix(&self, idx: &[usize]) -> Self {
        let k = idx.len();
        Self(DMatrix::from_fn(k, k, |a, b| self.0[(idx[a], idx[b])]))
    }
}

/// `r_ij * r_kl - r_il * r_kj`.
#[inline]
pub fn minor(r: &CovarianceMatrix, i: usize, j: usize, k: usize, l: usize) -> f64 {
    r.get(i, j) * r.get(k, l) - r.get(i, l) * r.get(k, j)
}

/// Score for one unordered pair: the sum over ordered `(k, l)`, `k != l`,
/// both outside `{i, j}`, of `|r_ij r_kl - r_il r_kj|`.
fn pair_score(r: &CovarianceMatrix, i: usize, j: usize) -> f64 {
    let m = r.dim();
    let mut total = 0.0;
    for k in (0..m).filter(|&k| k != i && k != j) {
        for l in (0..m).filter(|&l| l != i && l != j && l != k) {
            total += minor(r, i, j, k, l).abs();
        }
    }
    total
}

/// Dependence score matrix of a covariance matrix. Only off-diagonal entries
/// of `r` are read. Requires `m >= 5`.
pub fn score_matrix(r: &CovarianceMatrix) -> Result<ScoreMatrix> {
    let m = r.dim();
    if m < 5 {
        return invalid(format!("score matrix needs at least 5 classifiers, got {m}"));
    }
    let pairs: Vec<(usize, usize)> = (0..m)
        .flat_map(|i| ((i + 1)..m).map(move |j| (i, j)))
        .collect();
    // each entry is an independent reduction, so the parallel schedule
    // cannot change the result
    let values: Vec<f64> = pairs.par_iter().map(|&(i, j)| pair_score(r, i, j)).collect();
    let mut s = DMatrix::zeros(m, m);
    for (&(i, j), &v) in pairs.iter().zip(&values) {
        s[(i, j)] = v;
        s[(j, i)] = v;
    }
    Ok(ScoreMatrix(s))
}

/// Exact group-membership test for an ideal (population) covariance.
///
/// Compares, over all ordered triples `(j, k, l)` of distinct indices outside
/// `{i1, i2}`, which of `M(i1, j, k, l)` and `M(i2, j, k, l)` vanish. The two
/// classifiers share a latent variable iff the zero patterns coincide.
/// `tol` is relative to the squared largest off-diagonal magnitude. All
/// conditionally independent classifiers test as one group.
pub fn exact_group_match(r: &CovarianceMatrix, i1: usize, i2: usize, tol: f64) -> Result<bool> {
    let m = r.dim();
    if i1 == i2 {
        return invalid("exact_group_match needs two distinct classifiers");
    }
    if i1 >= m || i2 >= m {
        return invalid(format!("classifier index out of range for m = {m}"));
    }
    if !(tol > 0.0) {
        return invalid("tolerance must be positive");
    }
    let scale = r.max_abs_off_diagonal().powi(2);
    let thresh = tol * if scale > 0.0 { scale } else { 1.0 };
    let others: Vec<usize> = (0..m).filter(|&x| x != i1 && x != i2).collect();
    for &j in &others {
        for &k in others.iter().filter(|&&k| k != j) {
            for &l in others.iter().filter(|&&l| l != j && l != k) {
                let z1 = minor(r, i1, j, k, l).abs() <= thresh;
                let z2 = minor(r, i2, j, k, l).abs() <= thresh;
                if z1 != z2 {
                    return Ok(false);
                }
            }
        }
    }
    Ok(true)
}

/// Default relative tolerance for [`exact_group_match`].
pub const EXACT_MATCH_TOL: f64 = 1e-9;
