//! Isolation forest over per-flow feature vectors (protocol code, bytes,
//! duration), used as the comparison baseline.

use std::collections::{BTreeMap, HashMap};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use serde::{Deserialize, Serialize};

use crate::encode::{EncoderModel, FlowContext};
use crate::error::{Error, Result};
use crate::flow::{Dataset, FlowRecord};
use crate::trace::SymbolicTrace;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_estimators: usize,
    pub subsample_size: usize,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_estimators: 100,
            subsample_size: 256,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
enum Node {
    Internal {
        feature: usize,
        split: f64,
        left: usize,
        right: usize,
    },
    External {
        size: usize,
    },
}

#[derive(Debug, Clone)]
struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn path_length(&self, x: &[f64]) -> f64 {
        let mut node = 0usize;
        let mut depth = 0.0;
        loop {
            match &self.nodes[node] {
                Node::External { size } => return depth + average_path_length(*size),
                Node::Internal {
                    feature,
                    split,
                    left,
                    right,
                } => {
                    node = if x[*feature] < *split { *left } else { *right };
                    depth += 1.0;
                }
            }
        }
    }
}

/// Average unsuccessful-search path length in a binary search tree of
/// `n` points: c(n) = 2·H(n−1) − 2·(n−1)/n.
fn average_path_length(n: usize) -> f64 {
    const EULER_MASCHERONI: f64 = 0.577_215_664_901_532_9;
    match n {
        0 | 1 => 0.0,
        2 => 1.0,
        _ => {
            let nf = n as f64;
            2.0 * ((nf - 1.0).ln() + EULER_MASCHERONI) - 2.0 * (nf - 1.0) / nf
        }
    }
}

/// Ensemble of random partition trees; anomalies isolate in short paths.
///
/// Scores follow the usual normalization `s(x) = 2^(−E[h(x)]/c(ψ))`, so
/// higher means more anomalous and uniform data sits near 0.5. Verdicts
/// threshold the score against the training-score distribution at the
/// requested contamination, mirroring the common library behaviour.
#[derive(Debug, Clone)]
pub struct IsolationForest {
    trees: Vec<Tree>,
    subsample_size: usize,
    protocol_codes: BTreeMap<String, f64>,
    /// Sorted anomaly scores of the training flows.
    train_scores: Vec<f64>,
    pub config: ForestConfig,
}

fn build_tree(
    data: &[Vec<f64>],
    indices: &mut [usize],
    depth_cap: usize,
    rng: &mut ChaCha8Rng,
    nodes: &mut Vec<Node>,
) -> usize {
    if indices.len() <= 1 || depth_cap == 0 {
        nodes.push(Node::External {
            size: indices.len(),
        });
        return nodes.len() - 1;
    }
    let dims = data[0].len();
    // features with actual spread in this partition
    let mut candidates = Vec::with_capacity(dims);
    for f in 0..dims {
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        for &i in indices.iter() {
            min = min.min(data[i][f]);
            max = max.max(data[i][f]);
        }
        if max > min {
            candidates.push((f, min, max));
        }
    }
    if candidates.is_empty() {
        nodes.push(Node::External {
            size: indices.len(),
        });
        return nodes.len() - 1;
    }
    let (feature, min, max) = candidates[rng.gen_range(0..candidates.len())];
    let split = rng.gen_range(min..max);
    let mid = partition_in_place(indices, |&i| data[i][feature] < split);
    let (left_slice, right_slice) = indices.split_at_mut(mid);
    let placeholder = nodes.len();
    nodes.push(Node::External { size: 0 });
    let left = build_tree(data, &mut left_slice.to_vec(), depth_cap - 1, rng, nodes);
    let right = build_tree(data, &mut right_slice.to_vec(), depth_cap - 1, rng, nodes);
    nodes[placeholder] = Node::Internal {
        feature,
        split,
        left,
        right,
    };
    placeholder
}

/// Stable partition: moves elements satisfying the predicate to the
/// front, returns the split point.
fn partition_in_place<T: Copy>(slice: &mut [T], pred: impl Fn(&T) -> bool) -> usize {
    let mut swap_to = 0;
    for i in 0..slice.len() {
        if pred(&slice[i]) {
            slice.swap(swap_to, i);
            swap_to += 1;
        }
    }
    swap_to
}

impl IsolationForest {
    /// Feature vector of one flow: (protocol code, bytes, duration).
    fn features(&self, flow: &FlowRecord) -> Vec<f64> {
        let proto = self
            .protocol_codes
            .get(&flow.protocol)
            .copied()
            .unwrap_or(-1.0);
        vec![proto, flow.bytes_total as f64, flow.duration_ms]
    }

    /// Train on benign flows: each tree grows on an independent subsample
    /// with random feature/split choices, capped at ⌈log2(subsample)⌉.
    pub fn train(flows: &Dataset, cfg: &ForestConfig) -> Result<Self> {
        if cfg.n_estimators == 0 {
            return Err(Error::InvalidParameter(
                "isolation forest needs at least one estimator".into(),
            ));
        }
        if flows.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let protocol_codes: BTreeMap<String, f64> = flows
            .records
            .iter()
            .map(|f| f.protocol.clone())
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .enumerate()
            .map(|(i, p)| (p, i as f64))
            .collect();
        let mut forest = IsolationForest {
            trees: Vec::with_capacity(cfg.n_estimators),
            subsample_size: cfg.subsample_size.min(flows.len()).max(1),
            protocol_codes,
            train_scores: Vec::new(),
            config: cfg.clone(),
        };
        let data: Vec<Vec<f64>> = flows.records.iter().map(|f| forest.features(f)).collect();
        let depth_cap = (forest.subsample_size as f64).log2().ceil() as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        for _ in 0..cfg.n_estimators {
            let mut indices: Vec<usize> =
                sample(&mut rng, data.len(), forest.subsample_size).into_vec();
            let mut nodes = Vec::new();
            build_tree(&data, &mut indices, depth_cap.max(1), &mut rng, &mut nodes);
            forest.trees.push(Tree { nodes });
        }
        let mut train_scores: Vec<f64> = data.iter().map(|x| forest.score_vector(x)).collect();
        train_scores.sort_by(f64::total_cmp);
        forest.train_scores = train_scores;
        Ok(forest)
    }

    fn score_vector(&self, x: &[f64]) -> f64 {
        let mean_path: f64 = self
            .trees
            .iter()
            .map(|t| t.path_length(x))
            .sum::<f64>()
            / self.trees.len() as f64;
        let c = average_path_length(self.subsample_size).max(1e-12);
        2f64.powf(-mean_path / c)
    }

    /// Anomaly score per flow; higher = more anomalous.
    pub fn score_flows(&self, flows: &Dataset) -> Vec<f64> {
        flows
            .records
            .iter()
            .map(|f| self.score_vector(&self.features(f)))
            .collect()
    }

    /// Per-flow verdicts: flag everything scoring above the
    /// (1 − contamination) quantile of the training scores.
    pub fn flow_verdicts(&self, flows: &Dataset, contamination: f64) -> Vec<bool> {
        let scores = self.score_flows(flows);
        if contamination <= 0.0 {
            return vec![false; scores.len()];
        }
        if contamination >= 1.0 {
            return vec![true; scores.len()];
        }
        let threshold = crate::encode::interpolated_percentile(
            &self.train_scores,
            (1.0 - contamination) * 100.0,
        );
        scores.into_iter().map(|s| s > threshold).collect()
    }

    /// Lift per-flow verdicts to traces by the same any-malicious rule
    /// used for labels: a trace is flagged iff any member flow is.
    pub fn trace_verdicts(
        &self,
        flows: &Dataset,
        traces: &[SymbolicTrace],
        contamination: f64,
    ) -> Vec<bool> {
        let verdicts = self.flow_verdicts(flows, contamination);
        let by_id: HashMap<u64, bool> = flows
            .records
            .iter()
            .zip(&verdicts)
            .map(|(f, v)| (f.flow_id, *v))
            .collect();
        traces
            .iter()
            .map(|t| {
                t.flow_ids
                    .iter()
                    .any(|id| by_id.get(id).copied().unwrap_or(false))
            })
            .collect()
    }
}

/// Feature vectors routed through a fitted encoder instead of raw values
/// (exposed for comparison runs).
pub fn encoded_feature_forest(
    flows: &Dataset,
    encoder: &EncoderModel,
    cfg: &ForestConfig,
) -> Result<IsolationForest> {
    // encode to symbols, then re-parse the integer codes as features
    let mut remapped = flows.clone();
    for f in &mut remapped.records {
        let sym = encoder.encode_flow(f, &FlowContext::default());
        let parts: Vec<&str> = sym.split('_').collect();
        f.bytes_total = parts[1].parse().unwrap_or(0);
        f.duration_ms = parts[2].parse().unwrap_or(0.0);
    }
    IsolationForest::train(&remapped, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::Label;

    fn flow(id: u64, bytes: u64, duration: f64) -> FlowRecord {
        FlowRecord {
            flow_id: id,
            timestamp_start: id as i64,
            src_host: "a".into(),
            dst_host: "b".into(),
            src_port: 1,
            dst_port: 2,
            protocol: "TCP".into(),
            bytes_total: bytes,
            duration_ms: duration,
            label: Label::Benign,
        }
    }

    #[test]
    fn repeated_point_scores_near_half() {
        let ds = Dataset::from_records((0..64).map(|i| flow(i, 500, 2.0)).collect(), "mem");
        let forest = IsolationForest::train(&ds, &ForestConfig::default()).unwrap();
        for s in forest.score_flows(&ds) {
            assert!((s - 0.5).abs() < 1e-9, "degenerate data scores {s}");
        }
    }

    #[test]
    fn extreme_outlier_gets_the_highest_score() {
        let mut records: Vec<FlowRecord> = (0..256)
            .map(|i| flow(i, 1000 + (i % 10), 5.0 + (i % 7) as f64 * 0.1))
            .collect();
        records.push(flow(999, 5_000_000, 0.01));
        let ds = Dataset::from_records(records, "mem");
        let forest = IsolationForest::train(
            &ds,
            &ForestConfig {
                seed: 3,
                ..ForestConfig::default()
            },
        )
        .unwrap();
        let scores = forest.score_flows(&ds);
        let max_idx = scores
            .iter()
            .enumerate()
            .max_by(|(_, a), (_, b)| a.total_cmp(b))
            .unwrap()
            .0;
        assert_eq!(max_idx, 256, "the outlier flow isolates first");
    }

    #[test]
    fn contamination_boundaries() {
        let ds = Dataset::from_records((0..100).map(|i| flow(i, i * 10, 1.0)).collect(), "mem");
        let forest = IsolationForest::train(&ds, &ForestConfig::default()).unwrap();
        assert!(forest.flow_verdicts(&ds, 0.0).iter().all(|v| !v));
        assert!(forest.flow_verdicts(&ds, 1.0).iter().all(|v| *v));
    }

    #[test]
    fn fixed_seed_reproduces_scores() {
        let ds = Dataset::from_records(
            (0..200).map(|i| flow(i, (i * 37) % 5000, (i % 13) as f64)).collect(),
            "mem",
        );
        let cfg = ForestConfig {
            seed: 17,
            ..ForestConfig::default()
        };
        let a = IsolationForest::train(&ds, &cfg).unwrap().score_flows(&ds);
        let b = IsolationForest::train(&ds, &cfg).unwrap().score_flows(&ds);
        assert_eq!(a, b);
    }

    #[test]
    fn small_dataset_subsamples_everything() {
        let ds = Dataset::from_records((0..10).map(|i| flow(i, i * 100, 1.0)).collect(), "mem");
        let forest = IsolationForest::train(&ds, &ForestConfig::default()).unwrap();
        assert_eq!(forest.subsample_size, 10);
    }

    #[test]
    fn trace_lifting_uses_any_flagged_rule() {
        let ds = Dataset::from_records((0..50).map(|i| flow(i, 100, 1.0)).collect(), "mem");
        let forest = IsolationForest::train(&ds, &ForestConfig::default()).unwrap();
        let trace = |ids: Vec<u64>| SymbolicTrace {
            symbols: vec!["x".into(); ids.len()],
            group_key: "g".into(),
            flow_ids: ids,
            label: Label::Benign,
            first_timestamp: 0,
        };
        // contamination 1.0 flags every flow, so every trace flags
        let v = forest.trace_verdicts(&ds, &[trace(vec![0, 1]), trace(vec![2])], 1.0);
        assert_eq!(v, vec![true, true]);
        let v = forest.trace_verdicts(&ds, &[trace(vec![0, 1])], 0.0);
        assert_eq!(v, vec![false]);
    }
}
