//! Spectral clustering of a score matrix with the symmetric normalized
//! Laplacian `L = I - D^{-1/2} S D^{-1/2}`.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Result};
use crate::score::ScoreMatrix;

pub const KMEANS_RESTARTS: usize = 20;
const KMEANS_MAX_ITER: usize = 300;

/// Laplacian eigenvectors of an affinity matrix, computed once and reused for
/// every requested number of clusters.
#[derive(Debug, Clone)]
pub struct SpectralEmbedding {
    m: usize,
    /// Vertices with zero degree; each is placed in a cluster of its own.
    isolated: Vec<usize>,
    connected: Vec<usize>,
    /// Columns are eigenvectors of the Laplacian on `connected`, sorted by
    /// ascending eigenvalue.
    eigenvectors: DMatrix<f64>,
    eigenvalues: Vec<f64>,
}

impl SpectralEmbedding {
    pub fn new(s: &ScoreMatrix) -> Self {
        let m = s.dim();
        let degree: Vec<f64> = (0..m).map(|i| s.matrix().row(i).sum()).collect();
        let (connected, isolated): (Vec<usize>, Vec<usize>) = (0..m).partition(|&i| degree[i] > 0.0);

        let c = connected.len();
        let inv_sqrt: Vec<f64> = connected.iter().map(|&i| degree[i].sqrt().recip()).collect();
        let lap = DMatrix::from_fn(c, c, |a, b| {
            let off = s.get(connected[a], connected[b]) * inv_sqrt[a] * inv_sqrt[b];
            if a == b {
                1.0 - off
            } else {
                -off
            }
        });
        if c == 0 {
            return Self {
                m,
                isolated,
                connected,
                eigenvectors: DMatrix::zeros(0, 0),
                eigenvalues: Vec::new(),
            };
        }
        let eig = SymmetricEigen::new(lap);
        let mut order: Vec<usize> = (0..c).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]).then(a.cmp(&b)));
        let eigenvectors = DMatrix::from_fn(c, c, |row, col| eig.eigenvectors[(row, order[col])]);
        let eigenvalues = order.iter().map(|&k| eig.eigenvalues[k]).collect();
        Self {
            m,
            isolated,
            connected,
            eigenvectors,
            eigenvalues,
        }
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn isolated(&self) -> &[usize] {
        &self.isolated
    }

    /// Partition into `k` clusters; labels are numbered by first appearance.
    pub fn cluster(&self, k: usize, seed: u64) -> Result<Vec<usize>> {
        let m = self.m;
        if k == 0 || k > m {
            return invalid(format!("cannot form {k} clusters from {m} vertices"));
        }
        let n_iso = self.isolated.len();
        let mut labels = vec![usize::MAX; m];

        if k == 1 {
            return Ok(vec![0; m]);
        }
        if n_iso >= k {
            // not enough connected structure: connected vertices share one
            // cluster, isolated ones are dealt out round-robin
            if self.connected.is_empty() {
                for (i, l) in labels.iter_mut().enumerate() {
                    *l = i % k;
                }
            } else {
                for &i in &self.connected {
                    labels[i] = 0;
                }
                for (t, &i) in self.isolated.iter().enumerate() {
                    labels[i] = 1 + t % (k - 1);
                }
            }
            return Ok(canonical_labels(&labels));
        }

        let k_conn = k - n_iso;
        let conn_labels = if k_conn == 1 {
            vec![0; self.connected.len()]
        } else {
            let points: Vec<Vec<f64>> = (0..self.connected.len())
                .map(|row| {
                    let mut p: Vec<f64> = (0..k_conn).map(|col| self.eigenvectors[(row, col)]).collect();
                    let norm = p.iter().map(|x| x * x).sum::<f64>().sqrt();
                    if norm > 0.0 {
                        p.iter_mut().for_each(|x| *x /= norm);
                    }
                    p
                })
                .collect();
            kmeans(&points, k_conn, KMEANS_RESTARTS, seed).labels
        };
        for (&i, &l) in self.connected.iter().zip(&conn_labels) {
            labels[i] = l;
        }
        for (t, &i) in self.isolated.iter().enumerate() {
            labels[i] = k_conn + t;
        }
        Ok(canonical_labels(&labels))
    }
}

/// Spectral clustering of `s` into `k` groups, `2 <= k <= m - 1`.
pub fn spectral_cluster(s: &ScoreMatrix, k: usize, seed: u64) -> Result<Vec<usize>> {
    let m = s.dim();
    if k < 2 || k + 1 > m {
        return invalid(format!("number of groups must lie in [2, {}], got {k}", m.saturating_sub(1)));
    }
    SpectralEmbedding::new(s).cluster(k, seed)
}

/// Relabels so that groups are numbered in order of first appearance.
pub fn canonical_labels(labels: &[usize]) -> Vec<usize> {
    let mut map = std::collections::HashMap::new();
    labels
        .iter()
        .map(|&l| {
            let next = map.len();
            *map.entry(l).or_insert(next)
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct KMeansResult {
    pub labels: Vec<usize>,
    pub inertia: f64,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Lloyd's k-means with `restarts` seeded farthest-point initialisations.
///
/// Restart `r` draws its first centre uniformly from ChaCha stream `r` of
/// `seed`; later centres are the points farthest from the chosen ones (ties
/// to the lowest index). Points go to the nearest centre, ties to the lowest
/// centre index. The lowest-inertia run wins, ties to the earliest restart.
pub fn kmeans(points: &[Vec<f64>], k: usize, restarts: usize, seed: u64) -> KMeansResult {
    let n = points.len();
    assert!(k >= 1 && k <= n, "k-means needs 1 <= k <= n");
    let mut best: Option<KMeansResult> = None;
    for r in 0..restarts.max(1) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(r as u64);
        let first = rng.gen_range(0..n);
        let run = lloyd(points, farthest_point_init(points, k, first));
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    best.expect("at least one restart")
}

fn farthest_point_init(points: &[Vec<f64>], k: usize, first: usize) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut chosen = vec![false; n];
    chosen[first] = true;
    let mut centres = vec![points[first].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &points[first])).collect();
    while centres.len() < k {
        let mut pick = None;
        let mut far = f64::NEG_INFINITY;
        for i in 0..n {
            if !chosen[i] && d2[i] > far {
                far = d2[i];
                pick = Some(i);
            }
        }
        let i = pick.expect("k <= n leaves an unchosen point");
        chosen[i] = true;
        centres.push(points[i].clone());
        for (j, p) in points.iter().enumerate() {
            d2[j] = d2[j].min(sq_dist(p, &points[i]));
        }
    }
    centres
}

fn nearest(p: &[f64], centres: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centre) in centres.iter().enumerate() {
        let d = sq_dist(p, centre);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn lloyd(points: &[Vec<f64>], mut centres: Vec<Vec<f64>>) -> KMeansResult {
    let n = points.len();
    let k = centres.len();
    let dim = points[0].len();
    let mut labels = vec![usize::MAX; n];
    for _ in 0..KMEANS_MAX_ITER {
        let mut changed = false;
        let mut dists = vec![0.0; n];
        for (i, p) in points.iter().enumerate() {
            let (c, d) = nearest(p, &centres);
            dists[i] = d;
            if labels[i] != c {
                labels[i] = c;
                changed = true;
            }
        }
        // an empty cluster takes the point farthest from its own centre
        let mut counts = vec![0usize; k];
        labels.iter().for_each(|&l| counts[l] += 1);
        for c in 0..k {
            if counts[c] == 0 {
                let mut far = None;
                for i in 0..n {
                    if counts[labels[i]] > 1 && far.is_none_or(|f: usize| dists[i] > dists[f]) {
                        far = Some(i);
                    }
                }
                if let Some(i) = far {
                    counts[labels[i]] -= 1;
                    labels[i] = c;
                    counts[c] = 1;
                    dists[i] = 0.0;
                    changed = true;
                }
            }
        }
        for (c, centre) in centres.iter_mut().enumerate() {
            if counts[c] == 0 {
                continue;
            }
            let mut sum = vec![0.0; dim];
            for (p, _) in points.iter().zip(&labels).filter(|(_, &l)| l == c) {
                sum.iter_mut().zip(p).for_each(|(s, x)| *s += x);
            }
            *centre = sum.into_iter().map(|s| s / counts[c] as f64).collect();
        }
        if !changed {
            break;
        }
    }
    let inertia = points
        .iter()
        .zip(&labels)
        .map(|(p, &l)| sq_dist(p, &centres[l]))
        .sum();
    KMeansResult { labels, inertia }
}
