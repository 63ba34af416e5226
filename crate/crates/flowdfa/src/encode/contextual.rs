//! Contextual frequency encoding: raw feature values are clustered by the
//! histogram of the values that appear immediately before and after them,
//! so values occurring in similar contexts share a symbol.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::kmeans::{kmeans, nearest_centroid};
use super::percentile::PercentileCodebook;
use super::FeatureId;

/// Per-feature contextual codebook.
///
/// Every distinct fitted value owns one row of the context matrix: the
/// quantized histogram of its predecessors concatenated with the quantized
/// histogram of its successors. Rows are clustered with k-means and the
/// cluster label becomes the value's code. Values unseen at fit time are
/// assigned to the nearest centroid of their own context vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextualCodebook {
    pub feature: FeatureId,
    /// Distinct fitted raw values, ascending.
    pub values: Vec<f64>,
    /// Cluster label per fitted value, aligned with `values`.
    pub cluster_assignment: Vec<u32>,
    /// K centroids of dimension 2 * bucket count.
    pub centroids: Vec<Vec<f64>>,
    /// Quantization buckets for neighbour values.
    pub buckets: PercentileCodebook,
    /// Whether each histogram half was normalized to sum 1 before clustering.
    pub normalize: bool,
}

impl ContextualCodebook {
    /// Fit from per-group value streams (context never crosses a group
    /// boundary).
    pub fn fit(
        feature: FeatureId,
        streams: &[Vec<f64>],
        context_buckets: usize,
        clusters: usize,
        seed: u64,
        normalize: bool,
        max_iterations: usize,
    ) -> Result<Self> {
        if context_buckets < 2 {
            return Err(Error::InvalidParameter(
                "context buckets must be >= 2".into(),
            ));
        }
        if clusters < 2 {
            return Err(Error::InvalidParameter(
                "contextual clusters must be >= 2".into(),
            ));
        }
        let all: Vec<f64> = streams.iter().flatten().copied().collect();
        if all.is_empty() {
            return Err(Error::InvalidParameter(
                "cannot fit contextual codebook on empty data".into(),
            ));
        }
        let distinct: BTreeSet<u64> = all.iter().map(|v| v.to_bits()).collect();
        let values: Vec<f64> = distinct.iter().map(|b| f64::from_bits(*b)).collect();
        if clusters > values.len() {
            return Err(Error::InvalidParameter(format!(
                "contextual clusters ({clusters}) exceed distinct values ({})",
                values.len()
            )));
        }

        let buckets = PercentileCodebook::fit(feature, &all, context_buckets)?;
        let width = buckets.bin_count();
        let mut rows = vec![vec![0.0; 2 * width]; values.len()];
        let index_of = |v: f64| values.binary_search_by(|x| x.total_cmp(&v)).expect("fitted value");
        for stream in streams {
            for (i, v) in stream.iter().enumerate() {
                let row = &mut rows[index_of(*v)];
                if i > 0 {
                    row[buckets.bin_of(stream[i - 1]) as usize] += 1.0;
                }
                if i + 1 < stream.len() {
                    row[width + buckets.bin_of(stream[i + 1]) as usize] += 1.0;
                }
            }
        }
        if normalize {
            for row in &mut rows {
                normalize_halves(row, width);
            }
        }

        let fit = kmeans(&rows, clusters, seed, max_iterations)?;
        Ok(ContextualCodebook {
            feature,
            values,
            cluster_assignment: fit.assignment,
            centroids: fit.centroids,
            buckets,
            normalize,
        })
    }

    /// Code for a raw value. Fitted values use their training-time cluster;
    /// unseen values are routed to the nearest centroid of the context
    /// vector built from their actual neighbours (zero vector when the
    /// value sits at a stream boundary with no context).
    pub fn code_of(&self, value: f64, prev: Option<f64>, next: Option<f64>) -> u32 {
        match self.values.binary_search_by(|x| x.total_cmp(&value)) {
            Ok(i) => self.cluster_assignment[i],
            Err(_) => {
                let vector = self.context_vector(prev, next);
                nearest_centroid(&self.centroids, &vector)
            }
        }
    }

    /// Quantized context vector for a single observation.
    pub fn context_vector(&self, prev: Option<f64>, next: Option<f64>) -> Vec<f64> {
        let width = self.buckets.bin_count();
        let mut row = vec![0.0; 2 * width];
        if let Some(p) = prev {
            row[self.buckets.bin_of(p) as usize] += 1.0;
        }
        if let Some(n) = next {
            row[width + self.buckets.bin_of(n) as usize] += 1.0;
        }
        if self.normalize {
            normalize_halves(&mut row, width);
        }
        row
    }

    pub fn cluster_count(&self) -> usize {
        self.centroids.len()
    }
}

fn normalize_halves(row: &mut [f64], width: usize) {
    for half in [0..width, width..2 * width] {
        let sum: f64 = row[half.clone()].iter().sum();
        if sum > 0.0 {
            for x in &mut row[half] {
                *x /= sum;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fit(streams: &[Vec<f64>], k: usize) -> ContextualCodebook {
        ContextualCodebook::fit(FeatureId::Bytes, streams, 2, k, 42, true, 100).unwrap()
    }

    #[test]
    fn alternating_stream_separates_the_two_values() {
        // stream 1 2 1 2 1: value 1's next-mass sits entirely in 2's
        // bucket and vice versa, so the hand-computed context matrix is
        //   row(1) = [0, 1 | 0, 1]
        //   row(2) = [1, 0 | 1, 0]
        let cb = fit(&[vec![1.0, 2.0, 1.0, 2.0, 1.0]], 2);
        let idx1 = cb.values.binary_search_by(|x| x.total_cmp(&1.0)).unwrap();
        let idx2 = cb.values.binary_search_by(|x| x.total_cmp(&2.0)).unwrap();
        assert_ne!(cb.cluster_assignment[idx1], cb.cluster_assignment[idx2]);
    }

    #[test]
    fn values_with_identical_contexts_share_a_cluster() {
        // 5 and 6 are always surrounded by 100: identical rows
        let cb = fit(
            &[vec![100.0, 5.0, 100.0, 6.0, 100.0, 5.0, 100.0, 6.0, 100.0]],
            2,
        );
        let i5 = cb.values.binary_search_by(|x| x.total_cmp(&5.0)).unwrap();
        let i6 = cb.values.binary_search_by(|x| x.total_cmp(&6.0)).unwrap();
        assert_eq!(cb.cluster_assignment[i5], cb.cluster_assignment[i6]);
    }

    #[test]
    fn k_equal_to_distinct_values_labels_each_value() {
        let cb = fit(&[vec![1.0, 2.0, 3.0, 1.0, 2.0, 3.0, 1.0, 2.0, 3.0]], 3);
        let mut labels = cb.cluster_assignment.clone();
        labels.sort_unstable();
        labels.dedup();
        assert_eq!(labels.len(), 3);
    }

    #[test]
    fn k_above_distinct_values_is_an_error() {
        let err = ContextualCodebook::fit(
            FeatureId::Bytes,
            &[vec![1.0, 2.0]],
            2,
            3,
            0,
            true,
            100,
        )
        .unwrap_err();
        assert!(err.to_string().contains("exceed distinct values"));
    }

    #[test]
    fn unseen_value_goes_to_nearest_centroid() {
        let cb = fit(&[vec![1.0, 2.0, 1.0, 2.0, 1.0, 2.0, 1.0]], 2);
        // oracle: brute-force nearest centroid of the context vector
        let vector = cb.context_vector(Some(2.0), Some(2.0));
        let mut best = 0u32;
        let mut best_d = f64::INFINITY;
        for (i, c) in cb.centroids.iter().enumerate() {
            let d: f64 = c.iter().zip(&vector).map(|(a, b)| (a - b) * (a - b)).sum();
            if d < best_d {
                best_d = d;
                best = i as u32;
            }
        }
        assert_eq!(cb.code_of(77.0, Some(2.0), Some(2.0)), best);
    }

    #[test]
    fn boundary_only_value_gets_zero_vector() {
        let cb = fit(&[vec![1.0, 2.0, 1.0, 2.0, 1.0]], 2);
        let v = cb.context_vector(None, None);
        assert!(v.iter().all(|x| *x == 0.0));
        // still assigned deterministically
        let a = cb.code_of(9.0, None, None);
        let b = cb.code_of(9.0, None, None);
        assert_eq!(a, b);
    }
}
