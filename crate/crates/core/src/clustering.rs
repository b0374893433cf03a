//! Initial unsupervised mode assignment by spectral clustering.
//!
//! Affinities use the same RBF form as the GP kernel. Embedding follows the
//! normalized scheme: top-k eigenvectors of `D^-1/2 A D^-1/2`, rows scaled to
//! unit length, then k-means.

use nalgebra::DMatrix;
use rand::Rng;

use crate::error::{Error, Result};
use crate::gp::median_heuristic;
use crate::linalg::sq_dist;
use crate::rng;
use crate::types::{LabeledDataset, ModeLabel, StateVec};

/// Pooled point counts above this are subsampled before the eigensolve.
pub const MAX_EIGEN_POINTS: usize = 3000;
/// k-means iteration cap.
pub const KMEANS_MAX_ITERS: usize = 300;

/// Symmetric RBF affinity matrix with unit diagonal.
#[derive(Debug, Clone)]
pub struct AffinityMatrix {
    values: DMatrix<f64>,
    bandwidth: f64,
}

impl AffinityMatrix {
    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Wrap a precomputed matrix (must be square, symmetric, positive).
    pub fn from_matrix(values: DMatrix<f64>, bandwidth: f64) -> Result<Self> {
        if !values.is_square() {
            return Err(Error::input("affinity matrix must be square"));
        }
        let n = values.nrows();
        for i in 0..n {
            for j in 0..n {
                let v = values[(i, j)];
                if !(v.is_finite() && v >= 0.0) || (v - values[(j, i)]).abs() > 1e-12 {
                    return Err(Error::input("affinity must be symmetric and non-negative"));
                }
            }
        }
        Ok(AffinityMatrix { values, bandwidth })
    }
}

fn flatten(points: &[&StateVec]) -> Result<(Vec<f64>, usize)> {
    let d = points.first().map_or(0, |p| p.dim());
    if points.iter().any(|p| p.dim() != d) {
        return Err(Error::input("points differ in dimension"));
    }
    Ok((points.iter().flat_map(|p| p.as_slice().iter().copied()).collect(), d))
}

/// `Aᵢⱼ = exp(-β₀‖xᵢ - xⱼ‖²)`; rows of `x` are points.
pub fn build_affinity(x: &DMatrix<f64>, beta0: f64) -> Result<AffinityMatrix> {
    if !(beta0.is_finite() && beta0 > 0.0) {
        return Err(Error::input(format!("affinity bandwidth must be > 0, got {beta0}")));
    }
    let (n, d) = x.shape();
    let flat: Vec<f64> = (0..n).flat_map(|i| (0..d).map(move |j| (i, j))).map(|(i, j)| x[(i, j)]).collect();
    Ok(affinity_flat(&flat, n, d, beta0))
}

fn affinity_flat(flat: &[f64], n: usize, d: usize, beta0: f64) -> AffinityMatrix {
    let mut a = DMatrix::from_element(n, n, 1.0);
    for i in 0..n {
        let xi = &flat[i * d..(i + 1) * d];
        for j in 0..i {
            let v = (-beta0 * sq_dist(xi, &flat[j * d..(j + 1) * d])).exp();
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
    AffinityMatrix {
        values: a,
        bandwidth: beta0,
    }
}

/// Row-normalized top-`k` eigenvectors of the symmetric-normalized affinity.
/// Rows that are numerically zero become the first unit basis vector.
pub fn spectral_embed(a: &AffinityMatrix, k: usize) -> Result<DMatrix<f64>> {
    let n = a.len();
    if k < 2 || k > n {
        return Err(Error::input(format!("spectral_embed needs 2 <= k <= N, got k={k}, N={n}")));
    }
    let deg: Vec<f64> = (0..n).map(|i| a.values.row(i).sum()).collect();
    if deg.iter().any(|&v| v.is_nan() || v <= 0.0) {
        return Err(Error::numerical("clustering", "affinity has a zero-degree row"));
    }
    let inv_sqrt: Vec<f64> = deg.iter().map(|v| 1.0 / v.sqrt()).collect();
    let m = DMatrix::from_fn(n, n, |i, j| a.values[(i, j)] * inv_sqrt[i] * inv_sqrt[j]);
    let eig = m.symmetric_eigen();
    if eig.eigenvalues.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical("clustering", "eigensolver produced non-finite values"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    // Descending eigenvalue, index as tie-break for determinism.
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]).then(i.cmp(&j)));
    let mut e = DMatrix::from_fn(n, k, |i, c| eig.eigenvectors[(i, order[c])]);
    for i in 0..n {
        let norm = e.row(i).norm();
        if norm > 1e-12 {
            let mut row = e.row_mut(i);
            row /= norm;
        } else {
            let mut row = e.row_mut(i);
            row.fill(0.0);
            row[0] = 1.0;
        }
    }
    Ok(e)
}

/// Lloyd's k-means with k-means++ seeding on the rows of `e`.
///
/// An empty cluster's centroid is re-seeded at the point farthest from its
/// current centroid (lowest index on ties).
pub fn kmeans(e: &DMatrix<f64>, k: usize, seed: u64) -> Result<Vec<ModeLabel>> {
    let (n, d) = e.shape();
    if k == 0 || n < k {
        return Err(Error::input(format!("kmeans needs 1 <= k <= N, got k={k}, N={n}")));
    }
    let pts: Vec<Vec<f64>> = (0..n).map(|i| e.row(i).iter().copied().collect()).collect();
    let mut r = rng::rng(seed);

    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(k);
    centroids.push(pts[r.random_range(0..n)].clone());
    let mut d2: Vec<f64> = pts.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let idx = if total > 0.0 {
            let mut u = r.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if u < w {
                    pick = i;
                    break;
                }
                u -= w;
            }
            pick
        } else {
            0
        };
        centroids.push(pts[idx].clone());
        for (i, p) in pts.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, &centroids[centroids.len() - 1]));
        }
    }

    let nearest = |p: &[f64], cs: &[Vec<f64>]| -> usize {
        let mut best = 0;
        let mut bd = f64::INFINITY;
        for (c, cen) in cs.iter().enumerate() {
            let v = sq_dist(p, cen);
            if v < bd {
                bd = v;
                best = c;
            }
        }
        best
    };

    let mut assign: Vec<usize> = pts.iter().map(|p| nearest(p, &centroids)).collect();
    for _ in 0..KMEANS_MAX_ITERS {
        let mut sums = vec![vec![0.0; d]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in pts.iter().zip(&assign) {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(p) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                let mut far = 0;
                let mut fd = -1.0;
                for (i, p) in pts.iter().enumerate() {
                    let v = sq_dist(p, &centroids[assign[i]]);
                    if v > fd {
                        fd = v;
                        far = i;
                    }
                }
                centroids[c] = pts[far].clone();
            }
        }
        let next: Vec<usize> = pts.iter().map(|p| nearest(p, &centroids)).collect();
        if next == assign {
            break;
        }
        assign = next;
    }
    Ok(assign.into_iter().map(ModeLabel).collect())
}

/// Spectral clustering settings.
#[derive(Debug, Clone, Copy)]
pub struct ClusterConfig {
    pub num_modes: usize,
    /// Affinity bandwidth; `None` selects the median heuristic.
    pub beta0: Option<f64>,
    pub seed: u64,
}

/// Cluster the pooled states of `ds` into `num_modes` groups and return the
/// dataset relabeled, trajectory order preserved.
pub fn initial_modes(ds: &LabeledDataset, cfg: &ClusterConfig) -> Result<LabeledDataset> {
    let points = ds.pooled_states();
    let labels = cluster_points(&points, cfg)?;
    let mut out = Vec::with_capacity(ds.trajectories().len());
    let mut off = 0;
    for t in ds.trajectories() {
        out.push(labels[off..off + t.len()].to_vec());
        off += t.len();
    }
    ds.with_labels(out)
}

/// Spectral clustering on a flat list of points.
pub fn cluster_points(points: &[&StateVec], cfg: &ClusterConfig) -> Result<Vec<ModeLabel>> {
    let n = points.len();
    let k = cfg.num_modes;
    if k == 0 {
        return Err(Error::config("mode count must be >= 1"));
    }
    if n < k {
        return Err(Error::input(format!("{n} points cannot form {k} clusters")));
    }
    if k == 1 {
        return Ok(vec![ModeLabel(0); n]);
    }
    let (flat, d) = flatten(points)?;

    let sub: Vec<usize> = if n > MAX_EIGEN_POINTS {
        let mut r = rng::rng(rng::derive(cfg.seed, &[rng::tag("subsample")]));
        let mut idx = rand::seq::index::sample(&mut r, n, MAX_EIGEN_POINTS).into_vec();
        idx.sort_unstable();
        idx
    } else {
        (0..n).collect()
    };
    let sub_flat: Vec<f64> = sub
        .iter()
        .flat_map(|&i| flat[i * d..(i + 1) * d].iter().copied())
        .collect();

    let beta0 = match cfg.beta0 {
        Some(b) => b,
        None => {
            let probe = sub.len().min(1000);
            median_heuristic(&sub_flat[..probe * d], probe, d).unwrap_or(1.0)
        }
    };
    let a = affinity_flat(&sub_flat, sub.len(), d, beta0);
    let e = spectral_embed(&a, k)?;
    let sub_labels = kmeans(&e, k, rng::derive(cfg.seed, &[rng::tag("kmeans")]))?;
    if sub.len() == n {
        return Ok(sub_labels);
    }

    // Out-of-sample points take the label of their nearest subsampled point.
    let mut labels = vec![ModeLabel(0); n];
    let mut pos = 0;
    for i in 0..n {
        if pos < sub.len() && sub[pos] == i {
            labels[i] = sub_labels[pos];
            pos += 1;
            continue;
        }
        let xi = &flat[i * d..(i + 1) * d];
        let mut best = 0;
        let mut bd = f64::INFINITY;
        for (s, &j) in sub.iter().enumerate() {
            let v = sq_dist(xi, &flat[j * d..(j + 1) * d]);
            if v < bd {
                bd = v;
                best = s;
            }
        }
        labels[i] = sub_labels[best];
    }
    Ok(labels)
}

/// Fraction of positions where `a` and `b` agree under the best relabeling
/// of `b` (exhaustive over permutations, so only for small K).
pub fn best_permutation_agreement(a: &[ModeLabel], b: &[ModeLabel], k: usize) -> f64 {
    fn perms(k: usize) -> Vec<Vec<usize>> {
        if k == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in perms(k - 1) {
            for pos in 0..=p.len() {
                let mut q = p.clone();
                q.insert(pos, k - 1);
                out.push(q);
            }
        }
        out
    }
    if a.is_empty() {
        return 1.0;
    }
    perms(k)
        .iter()
        .map(|perm| {
            a.iter()
                .zip(b)
                .filter(|(x, y)| y.0 < k && x.0 == perm[y.0])
                .count()
        })
        .max()
        .unwrap_or(0) as f64
        / a.len() as f64
}
