//! Lloyd's k-means with k-means++ seeding.
//!
//! Deterministic for a given seed: sampling uses a counter-based RNG, ties
//! in assignment break towards the lower cluster index, and empty clusters
//! are repaired by splitting the largest cluster.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct KMeansFit {
    pub centroids: Vec<Vec<f64>>,
    /// Cluster index per input row.
    pub assignment: Vec<u32>,
    pub iterations: usize,
}

fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn nearest_centroid(centroids: &[Vec<f64>], row: &[f64]) -> u32 {
    let mut best = 0u32;
    let mut best_d = f64::INFINITY;
    for (i, c) in centroids.iter().enumerate() {
        let d = dist_sq(c, row);
        if d < best_d {
            best_d = d;
            best = i as u32;
        }
    }
    best
}

/// k-means++ seeding: first centroid uniform, the rest sampled with
/// probability proportional to squared distance from the chosen set.
fn plus_plus_init(rows: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut chosen = vec![false; rows.len()];
    let first = rng.gen_range(0..rows.len());
    centroids.push(rows[first].clone());
    chosen[first] = true;

    let mut d2: Vec<f64> = rows.iter().map(|r| dist_sq(r, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let idx = if total > 0.0 {
            let mut target = rng.gen_range(0.0..total);
            let mut pick = rows.len() - 1;
            for (i, w) in d2.iter().enumerate() {
                if target < *w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            pick
        } else {
            // all remaining rows coincide with a centroid; take the first
            // unchosen one so duplicates do not stall the init
            match chosen.iter().position(|c| !c) {
                Some(i) => i,
                None => 0,
            }
        };
        chosen[idx] = true;
        centroids.push(rows[idx].clone());
        for (i, row) in rows.iter().enumerate() {
            let d = dist_sq(row, centroids.last().unwrap());
            if d < d2[i] {
                d2[i] = d;
            }
        }
    }
    centroids
}

/// Cluster `rows` into `k` groups.
///
/// Errors if `k` exceeds the number of rows or is zero.
pub fn kmeans(rows: &[Vec<f64>], k: usize, seed: u64, max_iterations: usize) -> Result<KMeansFit> {
    if k == 0 {
        return Err(Error::InvalidParameter("k-means requires k >= 1".into()));
    }
    if rows.len() < k {
        return Err(Error::InvalidParameter(format!(
            "k-means requires at least k rows: k={k}, rows={}",
            rows.len()
        )));
    }
    let dim = rows[0].len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = plus_plus_init(rows, k, &mut rng);
    let mut assignment: Vec<u32> = vec![0; rows.len()];
    let mut iterations = 0;

    for iter in 0..max_iterations.max(1) {
        iterations = iter + 1;
        let new_assignment: Vec<u32> = rows
            .iter()
            .map(|r| nearest_centroid(&centroids, r))
            .collect();
        let converged = iter > 0 && new_assignment == assignment;
        assignment = new_assignment;
        if converged {
            break;
        }

        let mut sums = vec![vec![0.0; dim]; k];
        let mut sizes = vec![0usize; k];
        for (row, &a) in rows.iter().zip(&assignment) {
            sizes[a as usize] += 1;
            for (s, x) in sums[a as usize].iter_mut().zip(row) {
                *s += x;
            }
        }
        for c in 0..k {
            if sizes[c] > 0 {
                for s in &mut sums[c] {
                    *s /= sizes[c] as f64;
                }
                centroids[c] = std::mem::take(&mut sums[c]);
            } else {
                // split the largest cluster: its farthest member becomes
                // the empty cluster's new centroid
                let largest = (0..k).max_by_key(|i| sizes[*i]).unwrap_or(0);
                let far = rows
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| assignment[*i] == largest as u32)
                    .max_by(|(_, a), (_, b)| {
                        dist_sq(a, &centroids[largest])
                            .total_cmp(&dist_sq(b, &centroids[largest]))
                    })
                    .map(|(i, _)| i);
                if let Some(i) = far {
                    centroids[c] = rows[i].clone();
                }
            }
        }
    }
    Ok(KMeansFit {
        centroids,
        assignment,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separates_two_obvious_blobs() {
        let mut rows = Vec::new();
        for i in 0..10 {
            rows.push(vec![0.0 + i as f64 * 0.01, 0.0]);
            rows.push(vec![10.0 + i as f64 * 0.01, 10.0]);
        }
        let fit = kmeans(&rows, 2, 7, 100).unwrap();
        let a = fit.assignment[0];
        for i in 0..rows.len() {
            if i % 2 == 0 {
                assert_eq!(fit.assignment[i], a);
            } else {
                assert_ne!(fit.assignment[i], a);
            }
        }
    }

    #[test]
    fn identical_rows_share_a_cluster() {
        let rows = vec![vec![1.0, 2.0]; 6];
        let fit = kmeans(&rows, 2, 3, 100).unwrap();
        let first = fit.assignment[0];
        assert!(fit.assignment.iter().all(|a| *a == first));
    }

    #[test]
    fn k_equal_to_rows_gives_one_point_per_cluster() {
        let rows: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64 * 10.0]).collect();
        let fit = kmeans(&rows, 5, 11, 100).unwrap();
        let mut seen: Vec<u32> = fit.assignment.clone();
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen.len(), 5);
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let rows: Vec<Vec<f64>> = (0..40)
            .map(|i| vec![(i as f64 * 0.7).sin(), (i as f64 * 1.3).cos()])
            .collect();
        let a = kmeans(&rows, 4, 99, 100).unwrap();
        let b = kmeans(&rows, 4, 99, 100).unwrap();
        assert_eq!(a.assignment, b.assignment);
        assert_eq!(a.centroids, b.centroids);
    }

    #[test]
    fn rejects_k_larger_than_rows() {
        let rows = vec![vec![0.0]];
        assert!(kmeans(&rows, 2, 0, 10).is_err());
    }
}
