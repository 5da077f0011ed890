//! Observed data containers: the classifier prediction matrix, label vectors
//! and covariance matrices.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// An `m x n` matrix of binary classifier outputs in `{-1, +1}`.
///
/// Row `i` holds the predictions of classifier `i` over all `n` instances.
/// Entries are stored as signed bytes, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PredictionMatrix {
    m: usize,
    n: usize,
    entries: Vec<i8>,
}

impl PredictionMatrix {
    /// Builds a matrix from row-major entries. Every entry must be exactly -1 or +1.
    pub fn new(m: usize, n: usize, entries: Vec<i8>) -> Result<Self> {
        if m == 0 || n == 0 {
            return invalid(format!("prediction matrix must be non-empty, got {m}x{n}"));
        }
        if entries.len() != m * n {
            return Err(Error::DimensionMismatch {
                expected: m * n,
                actual: entries.len(),
            });
        }
        if let Some(pos) = entries.iter().position(|&v| v != 1 && v != -1) {
            return invalid(format!(
                "entry ({}, {}) = {} is not in {{-1, +1}}",
                pos / n,
                pos % n,
                entries[pos]
            ));
        }
        Ok(Self { m, n, entries })
    }

    pub fn from_rows(rows: &[Vec<i8>]) -> Result<Self> {
        let m = rows.len();
        let n = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != n) {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: bad.len(),
            });
        }
        Self::new(m, n, rows.concat())
    }

    /// Number of classifiers.
    pub fn m(&self) -> usize {
        self.m
    }

    /// Number of instances.
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> i8 {
        self.entries[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[i8] {
        &self.entries[i * self.n..(i + 1) * self.n]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[i8]> {
        self.entries.chunks_exact(self.n)
    }

    pub fn column(&self, j: usize) -> Vec<i8> {
        (0..self.m).map(|i| self.get(i, j)).collect()
    }

    /// Sub-matrix made of the given classifier rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        let mut entries = Vec::with_capacity(rows.len() * self.n);
        for &i in rows {
            if i >= self.m {
                return invalid(format!("row index {i} out of range for m = {}", self.m));
            }
            entries.extend_from_slice(self.row(i));
        }
        Self::new(rows.len(), self.n, entries)
    }

    /// Sub-matrix made of the given instance columns.
    pub fn select_columns(&self, cols: &[usize]) -> Result<Self> {
        let mut entries = Vec::with_capacity(self.m * cols.len());
        for row in self.rows() {
            for &j in cols {
                if j >= self.n {
                    return invalid(format!("column index {j} out of range for n = {}", self.n));
                }
                entries.push(row[j]);
            }
        }
        Self::new(self.m, cols.len(), entries)
    }

    /// Every entry multiplied by -1.
    pub fn negated(&self) -> Self {
        Self {
            m: self.m,
            n: self.n,
            entries: self.entries.iter().map(|v| -v).collect(),
        }
    }

    /// Row sums `sum_j Z_ij`.
    pub fn row_sums(&self) -> Vec<i64> {
        self.rows()
            .map(|r| r.iter().map(|&v| i64::from(v)).sum())
            .collect()
    }

    /// Classifiers whose predictions never change across instances.
    pub fn constant_rows(&self) -> Vec<usize> {
        self.rows()
            .enumerate()
            .filter(|(_, r)| r.iter().all(|&v| v == r[0]))
            .map(|(i, _)| i)
            .collect()
    }
}

/// A vector of binary labels in `{-1, +1}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<i8>", into = "Vec<i8>")]
pub struct LabelVector(Vec<i8>);

impl LabelVector {
    pub fn new(labels: Vec<i8>) -> Result<Self> {
        if let Some(pos) = labels.iter().position(|&v| v != 1 && v != -1) {
            return invalid(format!("label {pos} = {} is not in {{-1, +1}}", labels[pos]));
        }
        Ok(Self(labels))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[i8] {
        &self.0
    }

    pub fn negated(&self) -> Self {
        Self(self.0.iter().map(|v| -v).collect())
    }

    pub fn count(&self, label: i8) -> usize {
        self.0.iter().filter(|&&v| v == label).count()
    }
}

impl TryFrom<Vec<i8>> for LabelVector {
    type Error = Error;

    fn try_from(v: Vec<i8>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<LabelVector> for Vec<i8> {
    fn from(v: LabelVector) -> Self {
        v.0
    }
}

/// Symmetric `m x m` covariance matrix of classifier outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceMatrix(DMatrix<f64>);

pub(crate) const SYMMETRY_TOL: f64 = 1e-12;

impl CovarianceMatrix {
    /// Wraps a square matrix, checking symmetry to within `1e-12` and finiteness.
    pub fn new(entries: DMatrix<f64>) -> Result<Self> {
        if !entries.is_square() {
            return invalid(format!(
                "covariance matrix must be square, got {}x{}",
                entries.nrows(),
                entries.ncols()
            ));
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return invalid("covariance matrix has non-finite entries");
        }
        let m = entries.nrows();
        for i in 0..m {
            for j in (i + 1)..m {
                if (entries[(i, j)] - entries[(j, i)]).abs() > SYMMETRY_TOL {
                    return invalid(format!("covariance matrix is not symmetric at ({i}, {j})"));
                }
            }
        }
        Ok(Self(entries))
    }

    /// Builds a matrix from a function of `(i, j)` evaluated on the upper
    /// triangle and mirrored, so the result is exactly symmetric.
    pub fn from_fn(m: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut entries = DMatrix::zeros(m, m);
        for i in 0..m {
            for j in i..m {
                let v = f(i, j);
                entries[(i, j)] = v;
                entries[(j, i)] = v;
            }
        }
        Self::new(entries)
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

    pub fn scaled(&self, c: f64) -> Self {
        Self(&self.0 * c)
    }

    /// Principal sub-matrix on the given indices.
    pub fn submatrix(&self, idx: &[usize]) -> Self {
        let k = idx.len();
        Self(DMatrix::from_fn(k, k, |a, b| self.0[(idx[a], idx[b])]))
    }

    /// Largest absolute off-diagonal entry.
    pub fn max_abs_off_diagonal(&self) -> f64 {
        let m = self.dim();
        let mut best = 0.0_f64;
        for i in 0..m {
            for j in 0..m {
                if i != j {
                    best = best.max(self.0[(i, j)].abs());
                }
            }
        }
        best
    }
}
