//! Rank-one completion of a partially observed symmetric matrix.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::data::CovarianceMatrix;
use crate::error::{invalid, Result};

const MAX_ITER: usize = 500;
const REL_TOL: f64 = 1e-10;

/// Result of fitting `r_ij ~ v_i v_j` over a set of observed pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct RankOneFit {
    pub v: Vec<f64>,
    /// Sum of squared errors over the unordered observed pairs.
    pub residual: f64,
    pub iterations: usize,
    /// Indices that appear in no observed pair; their entry is 0.
    pub unidentified: Vec<usize>,
}

/// Fits `v` minimising `sum_{(i,j) in mask} (v_i v_j - r_ij)^2` by
/// alternating least squares.
///
/// `mask` lists unordered off-diagonal pairs. The iteration starts from the
/// leading eigenpair of `R` restricted to the mask (other entries and the
/// diagonal zeroed) and stops when the relative change of the residual drops
/// below `1e-10` or after 500 sweeps. The returned vector has a non-negative
/// sum.
pub fn complete_rank_one(r: &CovarianceMatrix, mask: &[(usize, usize)]) -> Result<RankOneFit> {
    let m = r.dim();
    let mut neighbours: Vec<Vec<(usize, f64)>> = vec![Vec::new(); m];
    let mut seen = vec![vec![false; m]; m];
    for &(i, j) in mask {
        if i >= m || j >= m {
            return invalid(format!("mask pair ({i}, {j}) out of range for m = {m}"));
        }
        if i == j {
            return invalid(format!("mask contains diagonal entry ({i}, {i})"));
        }
        if seen[i][j] {
            continue;
        }
        seen[i][j] = true;
        seen[j][i] = true;
        let rij = r.get(i, j);
        neighbours[i].push((j, rij));
        neighbours[j].push((i, rij));
    }
    let unidentified: Vec<usize> = (0..m).filter(|&i| neighbours[i].is_empty()).collect();

    let observed = DMatrix::from_fn(m, m, |i, j| if seen[i][j] { r.get(i, j) } else { 0.0 });
    let mut v = leading_factor(observed);

    let sse = |v: &[f64]| -> f64 {
        neighbours
            .iter()
            .enumerate()
            .flat_map(|(i, nb)| nb.iter().filter(move |(j, _)| *j > i).map(move |&(j, rij)| (i, j, rij)))
            .map(|(i, j, rij)| (v[i] * v[j] - rij).powi(2))
            .sum()
    };

    let mut residual = sse(&v);
    let mut iterations = 0;
    while iterations < MAX_ITER {
        iterations += 1;
        for i in 0..m {
            let (num, den) = neighbours[i]
                .iter()
                .fold((0.0, 0.0), |(num, den), &(j, rij)| (num + rij * v[j], den + v[j] * v[j]));
            v[i] = if den > 0.0 { num / den } else { 0.0 };
        }
        let next = sse(&v);
        let change = (residual - next).abs();
        residual = next;
        if residual <= f64::MIN_POSITIVE || change <= REL_TOL * residual {
            break;
        }
    }

    for &i in &unidentified {
        v[i] = 0.0;
    }
    if v.iter().sum::<f64>() < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
    Ok(RankOneFit {
        v,
        residual,
        iterations,
        unidentified,
    })
}

/// `sqrt(lambda) * x` for the largest eigenpair of a symmetric matrix, or
/// the zero vector when that eigenvalue is not positive.
fn leading_factor(a: DMatrix<f64>) -> Vec<f64> {
    let m = a.nrows();
    if m == 0 {
        return Vec::new();
    }
    let eig = SymmetricEigen::new(a);
    let (best, lambda) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (k, &l)| if l > acc.1 { (k, l) } else { acc });
    if !(lambda > 0.0) {
        return vec![0.0; m];
    }
    let scale = lambda.sqrt();
    eig.eigenvectors.column(best).iter().map(|x| x * scale).collect()
}

/// All unordered off-diagonal pairs of an `m x m` matrix.
pub fn full_mask(m: usize) -> Vec<(usize, usize)> {
    (0..m).flat_map(|i| ((i + 1)..m).map(move |j| (i, j))).collect()
}
