//! Detection metrics and the isolation-forest baseline.

mod isoforest;

pub use isoforest::{encoded_feature_forest, ForestConfig, IsolationForest};

use serde::{Deserialize, Serialize};

use crate::detect::{ScoredTrace, Verdict};
use crate::error::{Error, Result};

/// Confusion counts and the two summary metrics, with malicious as the
/// positive class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub true_positives: u64,
    pub false_positives: u64,
    pub true_negatives: u64,
    pub false_negatives: u64,
    /// (TPR + TNR) / 2.
    pub balanced_accuracy: f64,
    /// 2·precision·recall / (precision + recall); 0 with the flag set
    /// when the division is undefined.
    pub f1: f64,
    pub f1_zero_division: bool,
    pub fingerprint: String,
}

/// Exact confusion-matrix arithmetic over (is_malicious, is_flagged)
/// pairs.
pub fn metrics_from_verdicts(pairs: impl IntoIterator<Item = (bool, bool)>) -> MetricsReport {
    let (mut tp, mut fp, mut tn, mut fn_) = (0u64, 0u64, 0u64, 0u64);
    for (malicious, flagged) in pairs {
        match (malicious, flagged) {
            (true, true) => tp += 1,
            (true, false) => fn_ += 1,
            (false, true) => fp += 1,
            (false, false) => tn += 1,
        }
    }
    let rate = |num: u64, den: u64| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let tpr = rate(tp, tp + fn_);
    let tnr = rate(tn, tn + fp);
    let precision = rate(tp, tp + fp);
    let recall = tpr;
    let (f1, zero_division) = if precision + recall == 0.0 {
        (0.0, true)
    } else {
        (2.0 * precision * recall / (precision + recall), false)
    };
    MetricsReport {
        true_positives: tp,
        false_positives: fp,
        true_negatives: tn,
        false_negatives: fn_,
        balanced_accuracy: (tpr + tnr) / 2.0,
        f1,
        f1_zero_division: zero_division,
        fingerprint: String::new(),
    }
}

/// Metrics over scored traces (label = ground truth, verdict =
/// prediction).
pub fn compute_metrics(scored: &[ScoredTrace]) -> Result<MetricsReport> {
    if scored.is_empty() {
        return Err(Error::InvalidParameter(
            "cannot compute metrics over zero traces".into(),
        ));
    }
    Ok(metrics_from_verdicts(scored.iter().map(|s| {
        (
            s.trace.label.is_malicious(),
            s.verdict == Verdict::Anomalous,
        )
    })))
}

/// One line of the results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: String,
    pub encoding: String,
    pub sorting_level: String,
    pub balanced_accuracy: f64,
    pub f1: f64,
}

/// Human-readable results table: method × encoding × sorting level with
/// both metrics.
pub fn format_report_table(rows: &[ReportRow]) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<18} {:<22} {:<18} {:>17} {:>9}\n",
        "Method", "Encoding", "Sorting Level", "Balanced Accuracy", "F1 Score"
    ));
    out.push_str(&"-".repeat(88));
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{:<18} {:<22} {:<18} {:>17.3} {:>9.4}\n",
            r.method, r.encoding, r.sorting_level, r.balanced_accuracy, r.f1
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions_score_one() {
        let pairs = vec![(true, true), (true, true), (false, false), (false, false)];
        let m = metrics_from_verdicts(pairs);
        assert_eq!(m.balanced_accuracy, 1.0);
        assert_eq!(m.f1, 1.0);
        assert!(!m.f1_zero_division);
    }

    #[test]
    fn all_negative_predictions_with_positives_present() {
        let pairs = vec![(true, false), (false, false), (false, false)];
        let m = metrics_from_verdicts(pairs);
        assert_eq!(m.f1, 0.0);
        assert!(m.f1_zero_division);
        assert_eq!(m.balanced_accuracy, 0.5); // TPR 0, TNR 1
    }

    #[test]
    fn arithmetic_matches_hand_computation() {
        // TP=49, FN=1, TN=99, FP=1:
        // BA = (0.98 + 0.99) / 2 = 0.985, F1 = 0.98
        let mut pairs = Vec::new();
        pairs.extend(std::iter::repeat((true, true)).take(49));
        pairs.push((true, false));
        pairs.extend(std::iter::repeat((false, false)).take(99));
        pairs.push((false, true));
        let m = metrics_from_verdicts(pairs);
        assert!((m.balanced_accuracy - 0.985).abs() < 1e-12);
        assert!((m.f1 - 0.98).abs() < 1e-12);
    }

    #[test]
    fn metrics_stay_in_unit_interval() {
        // a spread of arbitrary confusion matrices
        for seed in 0u64..50 {
            let mut x = seed.wrapping_mul(6364136223846793005).wrapping_add(1);
            let mut pairs = Vec::new();
            for _ in 0..20 {
                x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                pairs.push((x & 1 == 0, x & 2 == 0));
            }
            let m = metrics_from_verdicts(pairs);
            assert!((0.0..=1.0).contains(&m.balanced_accuracy));
            assert!((0.0..=1.0).contains(&m.f1));
        }
    }

    #[test]
    fn report_table_lists_every_row() {
        let rows = vec![
            ReportRow {
                method: "pdfa".into(),
                encoding: "percentile".into(),
                sorting_level: "timestamp".into(),
                balanced_accuracy: 0.9,
                f1: 0.8,
            },
            ReportRow {
                method: "isolation_forest".into(),
                encoding: "n/a".into(),
                sorting_level: "timestamp".into(),
                balanced_accuracy: 0.4,
                f1: 0.001,
            },
        ];
        let table = format_report_table(&rows);
        assert_eq!(table.lines().count(), 4);
        assert!(table.contains("percentile"));
        assert!(table.contains("isolation_forest"));
    }
}
