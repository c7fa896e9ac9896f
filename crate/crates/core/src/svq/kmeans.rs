//! Lloyd's KMeans with k-means++ seeding.
//!
//! Assignment runs in parallel but every reduction happens sequentially in
//! point order, so results depend only on the seed.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

#[derive(Debug, Clone, Copy)]
pub struct KMeansConfig {
    pub max_iter: usize,
    /// Stop once the largest centroid shift is below `tol` times the data's
    /// RMS spread.
    pub tol: f64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self { max_iter: 50, tol: 1e-4 }
    }
}

#[derive(Debug, Clone)]
pub struct KMeansResult {
    pub dim: usize,
    /// `k x dim`.
    pub centroids: Vec<f64>,
    /// Nearest centroid of each point under the final centroids.
    pub assignment: Vec<u32>,
    pub iterations: usize,
}

impl KMeansResult {
    pub fn k(&self) -> usize {
        self.centroids.len() / self.dim
    }

    pub fn centroid(&self, i: usize) -> &[f64] {
        &self.centroids[i * self.dim..(i + 1) * self.dim]
    }
}

#[inline]
pub(crate) fn sq_dist_f64(a: &[f32], c: &[f64]) -> f64 {
    a.iter().zip(c).map(|(&x, &y)| (x as f64 - y).powi(2)).sum()
}

/// Index of the nearest centroid, lowest index on ties.
pub(crate) fn nearest(x: &[f32], centroids: &[f64], dim: usize) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.chunks_exact(dim).enumerate() {
        let d = sq_dist_f64(x, c);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

/// Picks `k` initial centers by D^2 sampling.
pub fn kmeans_pp_init(data: &[f32], dim: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = data.len() / dim;
    assert!(k >= 1 && k <= n, "k = {k} must be in 1..={n}");
    let point = |i: usize| &data[i * dim..(i + 1) * dim];
    let mut centers: Vec<f64> = Vec::with_capacity(k * dim);
    let first = rng.gen_range(0..n);
    centers.extend(point(first).iter().map(|&v| v as f64));
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist_f64(point(i), &centers[..dim])).collect();
    for _ in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        } else {
            rng.gen_range(0..n)
        };
        let start = centers.len();
        centers.extend(point(pick).iter().map(|&v| v as f64));
        let c = &centers[start..];
        d2.par_iter_mut().enumerate().for_each(|(i, d)| {
            let nd = sq_dist_f64(point(i), c);
            if nd < *d {
                *d = nd;
            }
        });
    }
    centers
}

fn assign(data: &[f32], dim: usize, centroids: &[f64]) -> Vec<(u32, f64)> {
    data.par_chunks_exact(dim)
        .map(|x| {
            let (i, d) = nearest(x, centroids, dim);
            (i as u32, d)
        })
        .collect()
}

/// Runs Lloyd iterations from `init`. Empty clusters are re-seeded with the
/// point farthest from its centroid.
pub fn lloyd(data: &[f32], dim: usize, init: Vec<f64>, cfg: KMeansConfig) -> KMeansResult {
    let n = data.len() / dim;
    let k = init.len() / dim;
    let mut centroids = init;

    let mut mean = vec![0.0f64; dim];
    for x in data.chunks_exact(dim) {
        for (m, &v) in mean.iter_mut().zip(x) {
            *m += v as f64;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let spread = (data.chunks_exact(dim).map(|x| sq_dist_f64(x, &mean)).sum::<f64>() / n as f64).sqrt();
    let thresh = cfg.tol * spread.max(1e-12);

    let mut iterations = 0;
    let mut labels = assign(data, dim, &centroids);
    for _ in 0..cfg.max_iter {
        iterations += 1;
        let mut sums = vec![0.0f64; k * dim];
        let mut counts = vec![0usize; k];
        for (x, &(l, _)) in data.chunks_exact(dim).zip(&labels) {
            let l = l as usize;
            counts[l] += 1;
            for (s, &v) in sums[l * dim..(l + 1) * dim].iter_mut().zip(x) {
                *s += v as f64;
            }
        }
        let mut taken = vec![false; n];
        let mut max_shift = 0.0f64;
        for c in 0..k {
            let new: Vec<f64> = if counts[c] > 0 {
                sums[c * dim..(c + 1) * dim].iter().map(|s| s / counts[c] as f64).collect()
            } else {
                // farthest unclaimed point, lowest index on ties
                let mut far = None;
                for (i, &(_, d)) in labels.iter().enumerate() {
                    if !taken[i] && far.is_none_or(|(_, fd)| d > fd) {
                        far = Some((i, d));
                    }
                }
                match far {
                    Some((i, _)) => {
                        taken[i] = true;
                        data[i * dim..(i + 1) * dim].iter().map(|&v| v as f64).collect()
                    }
                    None => centroids[c * dim..(c + 1) * dim].to_vec(),
                }
            };
            let old = &mut centroids[c * dim..(c + 1) * dim];
            let shift: f64 = old.iter().zip(&new).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            max_shift = max_shift.max(shift);
            old.copy_from_slice(&new);
        }
        let next = assign(data, dim, &centroids);
        let stable = next.iter().zip(&labels).all(|(a, b)| a.0 == b.0);
        labels = next;
        if max_shift <= thresh || stable {
            break;
        }
    }
    KMeansResult { dim, centroids, assignment: labels.into_iter().map(|(l, _)| l).collect(), iterations }
}
