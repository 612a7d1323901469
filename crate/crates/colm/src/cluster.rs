//! Seeded k-means over activation rows (k-means++ initialization, Lloyd
//! iterations, deterministic tie-breaking).

use crate::error::{Error, Result};
use crate::parallel;
use rand::Rng;

const MAX_ITERATIONS: usize = 100;
const CONVERGENCE_TOL: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct KMeansResult {
    pub labels: Vec<u32>,
    pub centroids: Vec<Vec<f64>>,
    pub iterations: usize,
    pub inertia: f64,
}

fn sq_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest_centroid(row: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = 0;
    let mut best_d = sq_distance(row, &centroids[0]);
    for (c, centroid) in centroids.iter().enumerate().skip(1) {
        let d = sq_distance(row, centroid);
        if d < best_d {
            best = c;
            best_d = d;
        }
    }
    (best, best_d)
}

/// k-means++ seeding: first centroid uniform, the rest D^2-weighted.
fn plus_plus_init(rows: &[Vec<f64>], k: usize, rng: &mut rand_chacha::ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(k);
    centroids.push(rows[rng.random_range(0..rows.len())].clone());
    let mut d2: Vec<f64> = rows.iter().map(|r| sq_distance(r, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total <= 0.0 {
            // All points coincide with existing centroids; any pick works.
            rng.random_range(0..rows.len())
        } else {
            let mut target = rng.random_range(0.0..total);
            let mut pick = rows.len() - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            pick
        };
        centroids.push(rows[next].clone());
        for (i, r) in rows.iter().enumerate() {
            d2[i] = d2[i].min(sq_distance(r, centroids.last().unwrap()));
        }
    }
    centroids
}

/// Lloyd's algorithm with a fixed iteration cap and shift tolerance.
/// Deterministic for a fixed seed: assignment ties go to the smaller
/// centroid index and empty clusters are reseeded at the point farthest
/// from its assigned centroid.
pub fn kmeans(rows: &[Vec<f64>], k: usize, seed: u64) -> Result<KMeansResult> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be >= 1".into()));
    }
    if rows.len() < k {
        return Err(Error::InvalidArgument(format!(
            "{} rows cannot form {k} clusters",
            rows.len()
        )));
    }
    let dim = rows[0].len();
    if rows.iter().any(|r| r.len() != dim) {
        return Err(Error::InvalidArgument("ragged rows".into()));
    }

    let mut rng = crate::numeric::stream_rng(seed, &[0x6b6d]);
    let mut centroids = plus_plus_init(rows, k, &mut rng);
    let mut labels = vec![0u32; rows.len()];
    let mut iterations = 0;

    for iter in 0..MAX_ITERATIONS {
        iterations = iter + 1;
        let assigned = parallel::map_slice(rows, |r| nearest_centroid(r, &centroids));
        for (label, (c, _)) in labels.iter_mut().zip(&assigned) {
            *label = *c as u32;
        }

        // Recompute centroids in index order.
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (r, &(c, _)) in rows.iter().zip(&assigned) {
            counts[c] += 1;
            for (s, v) in sums[c].iter_mut().zip(r) {
                *s += v;
            }
        }
        // Reseed empty clusters at the worst-covered point.
        for c in 0..k {
            if counts[c] == 0 {
                let farthest = (0..rows.len())
                    .max_by(|&a, &b| {
                        assigned[a]
                            .1
                            .total_cmp(&assigned[b].1)
                            .then_with(|| b.cmp(&a))
                    })
                    .unwrap();
                sums[c] = rows[farthest].clone();
                counts[c] = 1;
            }
        }

        let mut shift = 0.0f64;
        for c in 0..k {
            let inv = 1.0 / counts[c] as f64;
            let new: Vec<f64> = sums[c].iter().map(|s| s * inv).collect();
            shift = shift.max(sq_distance(&new, &centroids[c]).sqrt());
            centroids[c] = new;
        }
        if shift < CONVERGENCE_TOL {
            break;
        }
    }

    let final_assign = parallel::map_slice(rows, |r| nearest_centroid(r, &centroids));
    let mut inertia = 0.0;
    for (label, (c, d)) in labels.iter_mut().zip(&final_assign) {
        *label = *c as u32;
        inertia += d;
    }
    Ok(KMeansResult {
        labels,
        centroids,
        iterations,
        inertia,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::stream_rng;
    use rand::Rng;

    fn two_blobs(n_per: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<u32>) {
        let mut rng = stream_rng(seed, &[1]);
        let mut rows = Vec::new();
        let mut truth = Vec::new();
        for (blob, center) in [[-5.0, -5.0], [5.0, 5.0]].iter().enumerate() {
            for _ in 0..n_per {
                rows.push(vec![
                    center[0] + rng.random_range(-0.5..0.5),
                    center[1] + rng.random_range(-0.5..0.5),
                ]);
                truth.push(blob as u32);
            }
        }
        (rows, truth)
    }

    #[test]
    fn separates_two_blobs_exactly() {
        let (rows, truth) = two_blobs(40, 61);
        let result = kmeans(&rows, 2, 17).unwrap();
        // Match up to label permutation.
        let flip = result.labels[0] != truth[0];
        for (got, want) in result.labels.iter().zip(&truth) {
            let mapped = if flip { 1 - got } else { *got };
            assert_eq!(mapped, *want);
        }
    }

    #[test]
    fn identical_rows_single_cluster() {
        let rows = vec![vec![1.0, 2.0]; 10];
        let result = kmeans(&rows, 1, 5).unwrap();
        assert!(result.labels.iter().all(|&l| l == 0));
        assert_eq!(result.inertia, 0.0);
    }

    #[test]
    fn fixed_seed_is_deterministic() {
        let (rows, _) = two_blobs(30, 62);
        let a = kmeans(&rows, 2, 33).unwrap();
        let b = kmeans(&rows, 2, 33).unwrap();
        assert_eq!(a.labels, b.labels);
        assert_eq!(a.centroids, b.centroids);
    }

    #[test]
    fn rejects_fewer_rows_than_clusters() {
        let rows = vec![vec![0.0]; 2];
        assert!(kmeans(&rows, 3, 0).is_err());
    }
}
