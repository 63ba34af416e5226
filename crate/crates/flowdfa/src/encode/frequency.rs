//! Frequency encoding: frequent values keep their identity, infrequent
//! values share percentile bins.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::percentile::PercentileCodebook;
use super::FeatureId;

/// Codebook that gives every frequent raw value a unique code and pools
/// the infrequent remainder into percentile bins.
///
/// Frequent codes occupy `0..frequent.len()`; rare-bin codes start at
/// `frequent.len()`, so the two ranges never overlap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyCodebook {
    pub feature: FeatureId,
    /// (raw value, code), ascending by value.
    pub frequent_values: Vec<(f64, u32)>,
    /// Minimum training count for a value to be considered frequent.
    pub threshold: u64,
    /// Percentile bins over the pooled infrequent occurrences.
    pub rare_bins: PercentileCodebook,
}

impl FrequencyCodebook {
    pub fn fit(feature: FeatureId, values: &[f64], threshold: u64, rare_bins: usize) -> Result<Self> {
        if threshold < 1 {
            return Err(Error::InvalidParameter(
                "frequency threshold must be >= 1".into(),
            ));
        }
        if values.is_empty() {
            return Err(Error::InvalidParameter(
                "cannot fit frequency codebook on empty data".into(),
            ));
        }
        // count occurrences per distinct value; bit patterns of
        // non-negative floats sort like the values themselves
        let mut counts: BTreeMap<u64, u64> = BTreeMap::new();
        for v in values {
            *counts.entry(v.to_bits()).or_insert(0) += 1;
        }
        let mut frequent_values = Vec::new();
        let mut rare_pool = Vec::new();
        for (bits, count) in &counts {
            let v = f64::from_bits(*bits);
            if *count >= threshold {
                frequent_values.push((v, frequent_values.len() as u32));
            } else {
                // pooled as a multiset so rare bins balance by mass
                rare_pool.extend(std::iter::repeat(v).take(*count as usize));
            }
        }
        let rare = if rare_pool.is_empty() {
            PercentileCodebook {
                feature,
                bin_edges: Vec::new(),
            }
        } else {
            PercentileCodebook::fit(feature, &rare_pool, rare_bins)?
        };
        Ok(FrequencyCodebook {
            feature,
            frequent_values,
            threshold,
            rare_bins: rare,
        })
    }

    /// Code for any raw value; unseen values take the rare-bin route.
    pub fn code_of(&self, value: f64) -> u32 {
        match self
            .frequent_values
            .binary_search_by(|(v, _)| v.total_cmp(&value))
        {
            Ok(i) => self.frequent_values[i].1,
            Err(_) => self.frequent_values.len() as u32 + self.rare_bins.bin_of(value),
        }
    }

    /// Upper bound on the number of distinct codes this codebook can emit.
    pub fn code_count(&self) -> usize {
        self.frequent_values.len() + self.rare_bins.bin_count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_decide_frequent_vs_rare() {
        // oracle: a appears 50x, b 3x, c 2x; threshold 10 keeps only a
        let mut values = vec![5.0; 50];
        values.extend(vec![9.0; 3]);
        values.extend(vec![1.0; 2]);
        let cb = FrequencyCodebook::fit(FeatureId::Bytes, &values, 10, 4).unwrap();
        assert_eq!(cb.frequent_values, vec![(5.0, 0)]);
        let rare_a = cb.code_of(9.0);
        let rare_b = cb.code_of(1.0);
        assert!(rare_a >= 1 && rare_b >= 1, "rare codes sit above frequent range");
        assert_ne!(rare_a, rare_b, "distinct rare values land in different bins here");
        assert_eq!(cb.code_of(5.0), 0);
    }

    #[test]
    fn threshold_one_makes_every_value_frequent() {
        let values = vec![3.0, 1.0, 2.0, 1.0];
        let cb = FrequencyCodebook::fit(FeatureId::Bytes, &values, 1, 4).unwrap();
        // identity labeling in ascending value order
        assert_eq!(cb.frequent_values, vec![(1.0, 0), (2.0, 1), (3.0, 2)]);
        assert_eq!(cb.code_of(1.0), 0);
        assert_eq!(cb.code_of(2.0), 1);
        assert_eq!(cb.code_of(3.0), 2);
    }

    #[test]
    fn threshold_above_max_count_degenerates_to_percentile() {
        let values: Vec<f64> = (0..100).map(|v| v as f64).collect();
        let cb = FrequencyCodebook::fit(FeatureId::Bytes, &values, 1000, 4).unwrap();
        assert!(cb.frequent_values.is_empty());
        let pure = PercentileCodebook::fit(FeatureId::Bytes, &values, 4).unwrap();
        for v in &values {
            assert_eq!(cb.code_of(*v), pure.bin_of(*v));
        }
    }

    #[test]
    fn frequent_and_rare_code_ranges_are_disjoint() {
        let mut values = vec![5.0; 20];
        values.extend((0..40).map(|v| v as f64));
        let cb = FrequencyCodebook::fit(FeatureId::Bytes, &values, 10, 5).unwrap();
        let frequent: Vec<u32> = cb.frequent_values.iter().map(|(_, c)| *c).collect();
        for v in &values {
            let code = cb.code_of(*v);
            let is_frequent_value = cb
                .frequent_values
                .binary_search_by(|(x, _)| x.total_cmp(v))
                .is_ok();
            assert_eq!(frequent.contains(&code), is_frequent_value);
        }
    }
}
