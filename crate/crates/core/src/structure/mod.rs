//! Recovery of the group structure (number of latent variables, assignment
//! of classifiers to them, and the two rank-one factors of the covariance)
//! from unlabeled predictions.

mod completion;
mod spectral;

pub use completion::{complete_rank_one, full_mask, RankOneFit};
pub use spectral::{canonical_labels, kmeans, spectral_cluster, KMeansResult, SpectralEmbedding, KMEANS_RESTARTS};

use std::collections::BTreeMap;

use log::debug;
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::data::{CovarianceMatrix, PredictionMatrix};
use crate::error::{invalid, Error, Result};
use crate::score::score_matrix;
use crate::stats::sample_covariance;

/// Assignment of `m` classifiers to `k` latent groups together with the
/// within-group (`v_on`) and cross-group (`v_off`) rank-one factors.
///
/// Group labels are zero-based and numbered in order of first appearance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawStructure")]
pub struct GroupStructure {
    k: usize,
    assignment: Vec<usize>,
    v_on: Vec<f64>,
    v_off: Vec<f64>,
}

#[derive(Deserialize)]
struct RawStructure {
    k: usize,
    assignment: Vec<usize>,
    v_on: Vec<f64>,
    v_off: Vec<f64>,
}

impl TryFrom<RawStructure> for GroupStructure {
    type Error = Error;

    fn try_from(raw: RawStructure) -> Result<Self> {
        let g = GroupStructure::with_vectors(raw.assignment, raw.v_on, raw.v_off)?;
        if g.k != raw.k {
            return invalid(format!("structure declares k = {} but uses {} groups", raw.k, g.k));
        }
        Ok(g)
    }
}

impl GroupStructure {
    /// Structure from an assignment with arbitrary labels; factors are zero.
    pub fn from_assignment(assignment: &[usize]) -> Result<Self> {
        let m = assignment.len();
        Self::with_vectors(assignment.to_vec(), vec![0.0; m], vec![0.0; m])
    }

    pub fn with_vectors(assignment: Vec<usize>, v_on: Vec<f64>, v_off: Vec<f64>) -> Result<Self> {
        let m = assignment.len();
        if m == 0 {
            return invalid("group structure over zero classifiers");
        }
        if v_on.len() != m || v_off.len() != m {
            return Err(Error::DimensionMismatch {
                expected: m,
                actual: v_on.len().min(v_off.len()),
            });
        }
        let assignment = canonical_labels(&assignment);
        let k = assignment.iter().max().map_or(0, |&x| x + 1);
        Ok(Self {
            k,
            assignment,
            v_on,
            v_off,
        })
    }

    /// Every classifier in a group of its own.
    pub fn singletons(m: usize) -> Self {
        Self::from_assignment(&(0..m).collect::<Vec<_>>()).expect("m > 0")
    }

    /// Contiguous blocks of the given sizes.
    pub fn from_sizes(sizes: &[usize]) -> Result<Self> {
        if sizes.contains(&0) {
            return invalid("group sizes must be positive");
        }
        let a: Vec<usize> = sizes
            .iter()
            .enumerate()
            .flat_map(|(g, &s)| std::iter::repeat_n(g, s))
            .collect();
        Self::from_assignment(&a)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn m(&self) -> usize {
        self.assignment.len()
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    #[inline]
    pub fn group_of(&self, i: usize) -> usize {
        self.assignment[i]
    }

    #[inline]
    pub fn same_group(&self, i: usize, j: usize) -> bool {
        self.assignment[i] == self.assignment[j]
    }

    pub fn v_on(&self) -> &[f64] {
        &self.v_on
    }

    pub fn v_off(&self) -> &[f64] {
        &self.v_off
    }

    pub fn members(&self, group: usize) -> Vec<usize> {
        (0..self.m()).filter(|&i| self.assignment[i] == group).collect()
    }

    pub fn groups(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.k];
        for (i, &g) in self.assignment.iter().enumerate() {
            out[g].push(i);
        }
        out
    }

    pub fn group_sizes(&self) -> Vec<usize> {
        self.groups().iter().map(Vec::len).collect()
    }

    /// True when both structures induce the same partition of classifiers.
    pub fn same_partition(&self, other: &GroupStructure) -> bool {
        self.assignment == other.assignment
    }

    /// Splits `group` into singletons.
    fn dissolved(&self, group: usize) -> Self {
        let a: Vec<usize> = self
            .assignment
            .iter()
            .enumerate()
            .map(|(i, &g)| if g == group { self.k + i } else { g })
            .collect();
        Self::from_assignment(&a).expect("non-empty")
    }

    /// Moves classifier `i` into a new singleton group.
    fn ejected(&self, i: usize) -> Self {
        let mut a = self.assignment.clone();
        a[i] = self.k;
        Self::from_assignment(&a).expect("non-empty")
    }

    /// Number of fitted factor entries: one `v_off` entry per classifier, one
    /// `v_on` entry per member of groups with three or more members and a
    /// single shared value for pairs.
    fn parameter_count(&self) -> usize {
        self.m()
            + self
                .group_sizes()
                .iter()
                .map(|&s| match s {
                    1 => 0,
                    2 => 1,
                    s => s,
                })
                .sum::<usize>()
    }
}

/// Squared-error fit of a structure's factors to the off-diagonal of `r`,
/// summed over ordered pairs `i != j`.
pub fn residual(r: &CovarianceMatrix, g: &GroupStructure) -> Result<f64> {
    let m = r.dim();
    if g.m() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            actual: g.m(),
        });
    }
    let mut total = 0.0;
    for i in 0..m {
        for j in 0..m {
            if i == j {
                continue;
            }
            let fit = if g.same_group(i, j) {
                g.v_on[i] * g.v_on[j]
            } else {
                g.v_off[i] * g.v_off[j]
            };
            total += (fit - r.get(i, j)).powi(2);
        }
    }
    Ok(total)
}

/// Fits `v_on` and `v_off` for the partition of `g` by rank-one completion.
///
/// `v_off` is fitted on all cross-group pairs; `v_on` separately on the
/// internal pairs of each group with three or more members. Pairs use the
/// symmetric value `sqrt(max(r_ij, 0))`, singletons copy their `v_off` entry.
pub fn fit_factors(r: &CovarianceMatrix, g: &GroupStructure) -> Result<GroupStructure> {
    let m = r.dim();
    if g.m() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            actual: g.m(),
        });
    }
    let cross: Vec<(usize, usize)> = full_mask(m).into_iter().filter(|&(i, j)| !g.same_group(i, j)).collect();
    let v_off = complete_rank_one(r, &cross)?.v;
    let mut v_on = v_off.clone();
    for members in g.groups() {
        match members.len() {
            1 => {}
            2 => {
                let (i, j) = (members[0], members[1]);
                let rij = r.get(i, j);
                if rij < 0.0 {
                    debug!("negative covariance {rij:.4} inside the pair ({i}, {j}); factor set to 0");
                }
                let v = rij.max(0.0).sqrt();
                v_on[i] = v;
                v_on[j] = v;
            }
            _ => {
                let sub = r.submatrix(&members);
                let fit = complete_rank_one(&sub, &full_mask(members.len()))?;
                for (&i, &v) in members.iter().zip(&fit.v) {
                    v_on[i] = v;
                }
            }
        }
    }
    GroupStructure::with_vectors(g.assignment.clone(), v_on, v_off)
}

/// Options for [`estimate_structure_with`].
#[derive(Debug, Clone, PartialEq)]
pub struct StructureOptions {
    /// Largest number of groups to try; defaults to `m - 1`.
    pub k_max: Option<usize>,
    pub seed: u64,
    /// Choose among the candidates (and their simplifications) by a
    /// noise-weighted residual with a per-parameter penalty instead of the
    /// raw residual.
    pub refine: bool,
    /// Family-wise level behind the per-parameter penalty.
    pub significance: f64,
}

impl Default for StructureOptions {
    fn default() -> Self {
        Self {
            k_max: None,
            seed: 0,
            refine: true,
            significance: 1e-3,
        }
    }
}

/// One accepted simplification during refinement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Expansion {
    /// `"dissolve"` (whole group to singletons) or `"eject"` (one member).
    pub kind: String,
    pub classifiers: Vec<usize>,
    /// Change of the penalised criterion (negative).
    pub change: f64,
}

/// Per-candidate residuals and the selection made from them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    /// Residual of each candidate, keyed by its number of groups.
    pub residuals: BTreeMap<usize, f64>,
    /// Number of groups of the minimal-residual candidate (ties to smaller).
    pub selected_k: usize,
    /// Penalised criterion of each candidate (empty without refinement).
    pub criteria: BTreeMap<usize, f64>,
    /// Penalty charged per fitted factor entry.
    pub penalty: Option<f64>,
    /// Number of groups of the returned structure.
    pub final_k: usize,
    pub final_residual: f64,
    /// Simplifications applied to the starting candidate of the returned
    /// structure.
    pub expansions: Vec<Expansion>,
    /// Classifiers with constant output, forced into singleton groups.
    pub constant_classifiers: Vec<usize>,
    /// Laplacian eigendecompositions performed.
    pub laplacian_decompositions: usize,
}

/// Structure estimate with default options and an explicit `k_max`.
pub fn estimate_structure(z: &PredictionMatrix, k_max: Option<usize>) -> Result<(GroupStructure, ResidualReport)> {
    estimate_structure_with(
        z,
        &StructureOptions {
            k_max,
            ..StructureOptions::default()
        },
    )
}

/// Estimates the group structure of the classifiers in `z`.
///
/// Candidates come from spectral clustering of the score matrix of the sample
/// covariance for every group count from 2 to `k_max`, plus the all-singleton
/// structure. Constant classifiers are left out of the clustering and kept as
/// singletons.
///
/// Without refinement the candidate with the smallest residual is returned
/// (ties to fewer groups). The residual always favours richer structures,
/// though: a group of conditionally independent classifiers fits the noise
/// of its internal covariances and beats the equivalent singletons. With
/// refinement, every candidate is scored by its residual weighted with the
/// estimated sampling variance of each covariance entry plus a penalty per
/// fitted factor entry; the penalty is the chi-square(1) quantile at the
/// significance level split over all classifier pairs. Each candidate is
/// then simplified greedily, dissolving groups into singletons or ejecting
/// single members while that lowers the criterion, and the best result wins
/// (ties to fewer groups).
pub fn estimate_structure_with(z: &PredictionMatrix, opts: &StructureOptions) -> Result<(GroupStructure, ResidualReport)> {
    let m = z.m();
    if m < 5 {
        return invalid(format!("structure estimation needs at least 5 classifiers, got {m}"));
    }
    let r = sample_covariance(z)?;
    let k_max = opts.k_max.unwrap_or(m - 1).min(m - 1);
    if k_max < 2 {
        return invalid(format!("k_max must be at least 2, got {k_max}"));
    }

    let constant = z.constant_rows();
    let active: Vec<usize> = (0..m).filter(|i| !constant.contains(i)).collect();
    if active.len() < 5 {
        return invalid(format!(
            "structure estimation needs at least 5 non-constant classifiers, got {}",
            active.len()
        ));
    }
    let s = score_matrix(&r.submatrix(&active))?;
    let embedding = SpectralEmbedding::new(&s);

    let n_const = constant.len();
    let ks: Vec<usize> = (2..active.len()).filter(|&k| k + n_const <= k_max).collect();
    let mut candidates: Vec<(GroupStructure, f64)> = ks
        .par_iter()
        .map(|&k| -> Result<(GroupStructure, f64)> {
            let labels = embedding.cluster(k, opts.seed)?;
            let mut full = vec![0usize; m];
            for (&i, &l) in active.iter().zip(&labels) {
                full[i] = l;
            }
            for (t, &i) in constant.iter().enumerate() {
                full[i] = k + t;
            }
            let g = fit_factors(&r, &GroupStructure::from_assignment(&full)?)?;
            let res = residual(&r, &g)?;
            Ok((g, res))
        })
        .collect::<Result<_>>()?;
    let ci = fit_factors(&r, &GroupStructure::singletons(m))?;
    let ci_res = residual(&r, &ci)?;
    candidates.push((ci, ci_res));

    let residuals: BTreeMap<usize, f64> = candidates.iter().map(|(g, res)| (g.k(), *res)).collect();
    let selected = candidates
        .iter()
        .enumerate()
        .min_by(|a, b| a.1 .1.total_cmp(&b.1 .1).then(a.1 .0.k().cmp(&b.1 .0.k())))
        .map(|(i, _)| i)
        .expect("the singleton candidate is always present");
    let selected_k = candidates[selected].0.k();

    let mut report = ResidualReport {
        residuals,
        selected_k,
        criteria: BTreeMap::new(),
        penalty: None,
        final_k: selected_k,
        final_residual: candidates[selected].1,
        expansions: Vec::new(),
        constant_classifiers: constant,
        laplacian_decompositions: 1,
    };
    if !opts.refine {
        let best = candidates.swap_remove(selected).0;
        return Ok((best, report));
    }

    if !(opts.significance > 0.0 && opts.significance < 1.0) {
        return invalid(format!("significance must lie in (0, 1), got {}", opts.significance));
    }
    let pairs = m * (m - 1) / 2;
    let penalty = ChiSquared::new(1.0)
        .expect("one degree of freedom")
        .inverse_cdf(1.0 - opts.significance / pairs as f64);
    let weights = entry_weights(z);
    let criterion = |g: &GroupStructure| weighted_residual(&r, g, &weights) + penalty * g.parameter_count() as f64;

    let scored: Vec<f64> = candidates.iter().map(|(g, _)| criterion(g)).collect();
    report.criteria = candidates.iter().zip(&scored).map(|((g, _), &c)| (g.k(), c)).collect();
    report.penalty = Some(penalty);

    // greedy descent from every candidate; the spectral candidate with the
    // best raw criterion often carries a spurious group that a coarser
    // candidate does not
    let refined: Vec<(f64, GroupStructure, Vec<Expansion>)> = candidates
        .into_par_iter()
        .zip(scored)
        .map(|((start, _), score)| descend(&r, start, score, &criterion))
        .collect::<Result<_>>()?;
    let (_, current, expansions) = refined
        .into_iter()
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.k().cmp(&b.1.k())))
        .expect("the singleton candidate is always present");
    report.expansions = expansions;
    report.final_k = current.k();
    report.final_residual = residual(&r, &current)?;
    Ok((current, report))
}

/// Applies the simplification that lowers `criterion` most until none does.
fn descend(
    r: &CovarianceMatrix,
    mut current: GroupStructure,
    mut current_score: f64,
    criterion: &(impl Fn(&GroupStructure) -> f64 + Sync),
) -> Result<(f64, GroupStructure, Vec<Expansion>)> {
    let mut steps = Vec::new();
    loop {
        let mut best: Option<(f64, Expansion, GroupStructure)> = None;
        for (kind, who, candidate) in simplifications(&current) {
            let fitted = fit_factors(r, &candidate)?;
            let change = criterion(&fitted) - current_score;
            if change < 0.0 && best.as_ref().is_none_or(|b| change < b.0) {
                let step = Expansion {
                    kind: kind.to_string(),
                    classifiers: who,
                    change,
                };
                best = Some((change, step, fitted));
            }
        }
        match best {
            Some((change, step, fitted)) => {
                steps.push(step);
                current = fitted;
                current_score += change;
            }
            None => return Ok((current_score, current, steps)),
        }
    }
}

/// Dissolutions of every group and ejections of every member of groups with
/// three or more classifiers.
fn simplifications(g: &GroupStructure) -> Vec<(&'static str, Vec<usize>, GroupStructure)> {
    let mut moves = Vec::new();
    for (gi, members) in g.groups().into_iter().enumerate() {
        if members.len() < 2 {
            continue;
        }
        moves.push(("dissolve", members.clone(), g.dissolved(gi)));
        if members.len() >= 3 {
            for &i in &members {
                moves.push(("eject", vec![i], g.ejected(i)));
            }
        }
    }
    moves
}

/// Inverse sampling variances of the off-diagonal sample covariances.
///
/// The variance of `r_ij` is estimated by the sample variance of the
/// products `(f_i - mean_i)(f_j - mean_j)` divided by `n`, computed from the
/// 2x2 table of joint outcomes. Degenerate entries get the floor `1 / n^2`.
fn entry_weights(z: &PredictionMatrix) -> DMatrix<f64> {
    let m = z.m();
    let n = z.n() as f64;
    let sums = z.row_sums();
    let floor = 1.0 / (n * n);
    let mut w = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in (i + 1)..m {
            let cross: i64 = z.row(i).iter().zip(z.row(j)).map(|(&a, &b)| i64::from(a * b)).sum();
            let (si, sj, c) = (sums[i] as f64, sums[j] as f64, cross as f64);
            let (mi, mj) = (si / n, sj / n);
            let mut cells = [0.0; 4];
            let mut values = [0.0; 4];
            for (t, (a, b)) in [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)].into_iter().enumerate() {
                cells[t] = 0.25 * (n + a * si + b * sj + a * b * c);
                values[t] = (a - mi) * (b - mj);
            }
            let mean: f64 = cells.iter().zip(&values).map(|(c, v)| c * v).sum::<f64>() / n;
            let var: f64 = cells.iter().zip(&values).map(|(c, v)| c * (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
            let weight = 1.0 / (var / n).max(floor);
            w[(i, j)] = weight;
            w[(j, i)] = weight;
        }
    }
    w
}

/// Residual over unordered pairs, each squared error scaled by its weight.
fn weighted_residual(r: &CovarianceMatrix, g: &GroupStructure, w: &DMatrix<f64>) -> f64 {
    let m = r.dim();
    let mut total = 0.0;
    for i in 0..m {
        for j in (i + 1)..m {
            let fit = if g.same_group(i, j) {
                g.v_on[i] * g.v_on[j]
            } else {
                g.v_off[i] * g.v_off[j]
            };
            total += w[(i, j)] * (fit - r.get(i, j)).powi(2);
        }
    }
    total
}
