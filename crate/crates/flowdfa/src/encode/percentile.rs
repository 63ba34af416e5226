//! Percentile binning of a numeric feature.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::FeatureId;

/// Equal-frequency bin boundaries for one feature.
///
/// `bin_edges` holds B-1 ascending boundary values for B bins; the outer
/// bins are unbounded so every real value maps to exactly one bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PercentileCodebook {
    pub feature: FeatureId,
    pub bin_edges: Vec<f64>,
}

impl PercentileCodebook {
    /// Fit B equal-frequency bins over the training values.
    ///
    /// Edges are the k·(100/B) percentiles (linear interpolation between
    /// order statistics). Duplicate edges collapse, so low-cardinality or
    /// degenerate features produce fewer bins; all values identical
    /// produces a single bin.
    pub fn fit(feature: FeatureId, values: &[f64], bins: usize) -> Result<Self> {
        if bins < 2 {
            return Err(Error::InvalidParameter(format!(
                "percentile bins must be >= 2, got {bins}"
            )));
        }
        if values.is_empty() {
            return Err(Error::InvalidParameter(
                "cannot fit percentile bins on empty data".into(),
            ));
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let mut edges = Vec::with_capacity(bins - 1);
        if sorted[0] < sorted[sorted.len() - 1] {
            for k in 1..bins {
                let e = interpolated_percentile(&sorted, k as f64 * 100.0 / bins as f64);
                if edges.last().map_or(true, |last| e > *last) {
                    edges.push(e);
                }
            }
        } else {
            log::warn!(
                "feature {feature:?}: all {} training values identical; using a single bin",
                values.len()
            );
        }
        Ok(PercentileCodebook {
            feature,
            bin_edges: edges,
        })
    }

    /// Bin index in [0, bin_count) for any real value.
    ///
    /// Bin b covers (edge[b-1], edge[b]]; boundary values fall left.
    pub fn bin_of(&self, value: f64) -> u32 {
        self.bin_edges.partition_point(|e| *e < value) as u32
    }

    pub fn bin_count(&self) -> usize {
        self.bin_edges.len() + 1
    }
}

/// Linear-interpolation percentile of pre-sorted data (the convention used
/// by most numeric libraries): rank = p/100 · (n-1).
pub fn interpolated_percentile(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let rank = p / 100.0 * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        let frac = rank - lo as f64;
        sorted[lo] + (sorted[hi] - sorted[lo]) * frac
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Brute-force oracle: percentile by scanning the sorted list directly.
    fn percentile_oracle(values: &[f64], p: f64) -> f64 {
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let rank = p / 100.0 * (sorted.len() - 1) as f64;
        let lo = rank.floor() as usize;
        let frac = rank - lo as f64;
        if lo + 1 < sorted.len() {
            sorted[lo] * (1.0 - frac) + sorted[lo + 1] * frac
        } else {
            sorted[lo]
        }
    }

    #[test]
    fn quartile_edges_match_oracle() {
        let values: Vec<f64> = (1..=100).map(|v| v as f64).collect();
        let cb = PercentileCodebook::fit(FeatureId::Bytes, &values, 4).unwrap();
        let expected: Vec<f64> = [25.0, 50.0, 75.0]
            .iter()
            .map(|p| percentile_oracle(&values, *p))
            .collect();
        assert_eq!(cb.bin_edges.len(), 3);
        for (e, x) in cb.bin_edges.iter().zip(&expected) {
            assert!((e - x).abs() < 1e-12, "edge {e} vs oracle {x}");
        }
        // frozen from the oracle: [25.75, 50.5, 75.25]
        assert!((cb.bin_edges[0] - 25.75).abs() < 1e-12);
        assert!((cb.bin_edges[1] - 50.5).abs() < 1e-12);
        assert!((cb.bin_edges[2] - 75.25).abs() < 1e-12);
        assert_eq!(cb.bin_of(60.0), 2);
    }

    #[test]
    fn degenerate_feature_collapses_to_one_bin() {
        let values = vec![7.0; 50];
        let cb = PercentileCodebook::fit(FeatureId::Duration, &values, 10).unwrap();
        assert_eq!(cb.bin_count(), 1);
        assert_eq!(cb.bin_of(7.0), 0);
        assert_eq!(cb.bin_of(-100.0), 0);
        assert_eq!(cb.bin_of(1e9), 0);
    }

    #[test]
    fn outer_bins_cover_the_real_line() {
        let values: Vec<f64> = (0..50).map(|v| v as f64).collect();
        let cb = PercentileCodebook::fit(FeatureId::Bytes, &values, 5).unwrap();
        assert_eq!(cb.bin_of(-1e18), 0);
        assert_eq!(cb.bin_of(1e18) as usize, cb.bin_count() - 1);
    }

    #[test]
    fn binning_is_monotone() {
        let values: Vec<f64> = (0..1000).map(|v| (v as f64).sin() * 100.0).collect();
        let cb = PercentileCodebook::fit(FeatureId::Bytes, &values, 10).unwrap();
        let mut pairs = values.clone();
        pairs.sort_by(f64::total_cmp);
        for w in pairs.windows(2) {
            assert!(cb.bin_of(w[0]) <= cb.bin_of(w[1]));
        }
    }
}
