//! Lloyd's algorithm with k-means++ style seeding.
//!
//! Deterministic for a given seed: points are scanned in order, distance
//! ties go to the lowest centroid index, and empty clusters keep their
//! previous centroid.

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct KMeansResult {
    /// `k x d` centroid matrix.
    pub centroids: Array2<f64>,
    /// Argmin-distance centroid per point (ties resolved to lowest index).
    pub assignments: Vec<usize>,
    /// Sum of squared distances to assigned centroids.
    pub inertia: f64,
    /// Inertia after each assignment step, for monotonicity checks.
    pub inertia_history: Vec<f64>,
}

fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid for one point: `(index, squared distance)`.
fn nearest(point: ArrayView1<f64>, centroids: &Array2<f64>) -> (usize, f64) {
    let mut best = 0usize;
    let mut best_d = f64::INFINITY;
    for (c, row) in centroids.rows().into_iter().enumerate() {
        let d = sq_dist(point, row);
        if d < best_d {
            best_d = d;
            best = c;
        }
    }
    (best, best_d)
}

fn seed_centroids(points: ArrayView2<f64>, k: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let m = points.nrows();
    let d = points.ncols();
    let mut centroids = Array2::zeros((k, d));
    let first = rng.gen_range(0..m);
    centroids.row_mut(0).assign(&points.row(first));

    let mut dist = vec![0.0f64; m];
    for i in 0..m {
        dist[i] = sq_dist(points.row(i), centroids.row(0));
    }
    for c in 1..k {
        let total: f64 = dist.iter().sum();
        let chosen = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut pick = m - 1;
            for (i, &w) in dist.iter().enumerate() {
                if target < w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            pick
        } else {
            // All remaining points coincide with chosen centroids.
            rng.gen_range(0..m)
        };
        centroids.row_mut(c).assign(&points.row(chosen));
        for i in 0..m {
            let d_new = sq_dist(points.row(i), centroids.row(c));
            if d_new < dist[i] {
                dist[i] = d_new;
            }
        }
    }
    centroids
}

pub fn kmeans(
    points: ArrayView2<f64>,
    k: usize,
    max_iters: usize,
    seed: u64,
) -> Result<KMeansResult> {
    let m = points.nrows();
    let d = points.ncols();
    if k == 0 {
        return Err(Error::InvalidParameter("k must be >= 1".into()));
    }
    if m < k {
        return Err(Error::InvalidParameter(format!(
            "need at least k points (m = {m}, k = {k})"
        )));
    }
    if d == 0 {
        return Err(Error::InvalidParameter("points must have d >= 1".into()));
    }
    if points.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidData("non-finite point coordinate".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = seed_centroids(points, k, &mut rng);
    let mut assignments = vec![0usize; m];
    let mut inertia = f64::INFINITY;
    let mut inertia_history = Vec::new();

    for _ in 0..max_iters.max(1) {
        // Assignment step. Per-point results are independent, so the
        // parallel map is deterministic regardless of thread count.
        let assigned: Vec<(usize, f64)> = (0..m)
            .into_par_iter()
            .map(|i| nearest(points.row(i), &centroids))
            .collect();
        let changed = assigned
            .iter()
            .enumerate()
            .any(|(i, &(c, _))| c != assignments[i]);
        for (i, &(c, _)) in assigned.iter().enumerate() {
            assignments[i] = c;
        }
        inertia = assigned.iter().map(|&(_, dist)| dist).sum();
        inertia_history.push(inertia);
        if !changed && inertia_history.len() > 1 {
            break;
        }

        // Update step: centroid = mean of its points; empty clusters stay.
        let mut sums = Array2::<f64>::zeros((k, d));
        let mut counts = vec![0usize; k];
        for (i, &c) in assignments.iter().enumerate() {
            let mut row = sums.row_mut(c);
            row += &points.row(i);
            counts[c] += 1;
        }
        for c in 0..k {
            if counts[c] > 0 {
                let mut row = sums.row_mut(c);
                row /= counts[c] as f64;
                centroids.row_mut(c).assign(&sums.row(c));
            }
        }
    }

    // Final assignment against the last centroid update.
    let assigned: Vec<(usize, f64)> = (0..m)
        .into_par_iter()
        .map(|i| nearest(points.row(i), &centroids))
        .collect();
    let final_inertia: f64 = assigned.iter().map(|&(_, dist)| dist).sum();
    if final_inertia <= inertia {
        for (i, &(c, _)) in assigned.iter().enumerate() {
            assignments[i] = c;
        }
        inertia = final_inertia;
        inertia_history.push(inertia);
    }

    Ok(KMeansResult {
        centroids,
        assignments,
        inertia,
        inertia_history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::Array2;
    use rand::Rng;

    fn cloud(rng: &mut ChaCha8Rng, center: &[f64], spread: f64, count: usize) -> Vec<Vec<f64>> {
        (0..count)
            .map(|_| {
                center
                    .iter()
                    .map(|&c| c + (rng.gen::<f64>() - 0.5) * spread)
                    .collect()
            })
            .collect()
    }

    fn to_matrix(rows: &[Vec<f64>]) -> Array2<f64> {
        let d = rows[0].len();
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        Array2::from_shape_vec((rows.len(), d), flat).unwrap()
    }

    #[test]
    fn k1_centroid_is_the_mean() {
        let points = to_matrix(&[
            vec![1.0, 2.0],
            vec![3.0, 4.0],
            vec![5.0, 0.0],
            vec![-1.0, 2.0],
        ]);
        let result = kmeans(points.view(), 1, 50, 0).unwrap();
        let mean = points.mean_axis(ndarray::Axis(0)).unwrap();
        assert_abs_diff_eq!(result.centroids.row(0)[0], mean[0], epsilon = 1e-12);
        assert_abs_diff_eq!(result.centroids.row(0)[1], mean[1], epsilon = 1e-12);
        // Inertia for k=1 is the total squared deviation from the mean.
        let expect: f64 = points
            .rows()
            .into_iter()
            .map(|r| sq_dist(r.view(), mean.view()))
            .sum();
        assert_abs_diff_eq!(result.inertia, expect, epsilon = 1e-9);
    }

    /// Oracle: enumerate every 2-partition of the points and verify no
    /// assignment (with mean centroids) undercuts the returned inertia.
    #[test]
    fn two_separated_clouds_are_optimal() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut rows = cloud(&mut rng, &[0.0, 0.0], 1.0, 6);
        rows.extend(cloud(&mut rng, &[50.0, 50.0], 1.0, 6));
        let points = to_matrix(&rows);
        let m = points.nrows();

        let result = kmeans(points.view(), 2, 100, 7).unwrap();

        let mut best = f64::INFINITY;
        let mut best_mask = 0usize;
        for mask in 0..(1usize << m) {
            let mut sums = [vec![0.0; 2], vec![0.0; 2]];
            let mut counts = [0usize; 2];
            for i in 0..m {
                let c = (mask >> i) & 1;
                counts[c] += 1;
                for j in 0..2 {
                    sums[c][j] += points[(i, j)];
                }
            }
            if counts[0] == 0 || counts[1] == 0 {
                continue;
            }
            for c in 0..2 {
                for j in 0..2 {
                    sums[c][j] /= counts[c] as f64;
                }
            }
            let inertia: f64 = (0..m)
                .map(|i| {
                    let c = (mask >> i) & 1;
                    (0..2)
                        .map(|j| (points[(i, j)] - sums[c][j]).powi(2))
                        .sum::<f64>()
                })
                .sum();
            if inertia < best {
                best = inertia;
                best_mask = mask;
            }
        }
        assert_abs_diff_eq!(result.inertia, best, epsilon = 1e-9);
        // The optimal partition separates the clouds.
        let side0 = best_mask & 1;
        for i in 0..6 {
            assert_eq!((best_mask >> i) & 1, side0);
            assert_eq!(result.assignments[i], result.assignments[0]);
        }
        for i in 6..12 {
            assert_eq!((best_mask >> i) & 1, 1 - side0);
            assert_eq!(result.assignments[i], result.assignments[6]);
        }
        assert_ne!(result.assignments[0], result.assignments[6]);
    }

    #[test]
    fn k_equals_m_gives_zero_inertia() {
        let points = to_matrix(&[vec![0.0, 0.0], vec![1.0, 1.0], vec![2.0, -1.0]]);
        let result = kmeans(points.view(), 3, 50, 3).unwrap();
        assert_abs_diff_eq!(result.inertia, 0.0, epsilon = 1e-12);
        let mut seen = result.assignments.clone();
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen.len(), 3);
    }

    #[test]
    fn inertia_history_is_monotone_non_increasing() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let rows: Vec<Vec<f64>> = (0..200)
            .map(|_| (0..4).map(|_| rng.gen::<f64>() * 10.0).collect())
            .collect();
        let points = to_matrix(&rows);
        for seed in 0..5u64 {
            let result = kmeans(points.view(), 8, 100, seed).unwrap();
            for pair in result.inertia_history.windows(2) {
                assert!(
                    pair[1] <= pair[0] + 1e-9,
                    "inertia increased: {} -> {}",
                    pair[0],
                    pair[1]
                );
            }
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let rows: Vec<Vec<f64>> = (0..60)
            .map(|_| (0..3).map(|_| rng.gen::<f64>()).collect())
            .collect();
        let points = to_matrix(&rows);
        let a = kmeans(points.view(), 5, 40, 123).unwrap();
        let b = kmeans(points.view(), 5, 40, 123).unwrap();
        assert_eq!(a.assignments, b.assignments);
        assert_eq!(a.centroids, b.centroids);
        assert_eq!(a.inertia.to_bits(), b.inertia.to_bits());
    }

    #[test]
    fn rejects_bad_inputs() {
        let points = to_matrix(&[vec![0.0], vec![1.0]]);
        assert!(kmeans(points.view(), 3, 10, 0).is_err());
        assert!(kmeans(points.view(), 0, 10, 0).is_err());
        let bad = to_matrix(&[vec![f64::NAN], vec![1.0]]);
        assert!(kmeans(bad.view(), 1, 10, 0).is_err());
    }
}
