//! Symbol encoders: each flow's (protocol, bytes, duration) becomes one
//! discrete symbol of the form `PROTOCOL_BYTES_DURATION`.
//!
//! Three schemes are provided. Percentile bins each numeric feature into
//! equal-frequency bins. Frequency gives often-seen values their own code
//! and percentile-bins the rest. Contextual frequency clusters values by
//! the histogram of their neighbouring values, which caps the alphabet at
//! the cluster count per feature.

mod contextual;
mod frequency;
mod kmeans;
mod percentile;

pub use contextual::ContextualCodebook;
pub use frequency::FrequencyCodebook;
pub use kmeans::{kmeans, KMeansFit};
pub use percentile::{interpolated_percentile, PercentileCodebook};

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{Dataset, FlowRecord};
use crate::trace::{group_flows, SortingLevel};

/// The two numeric model features; protocol stays categorical.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeatureId {
    Bytes,
    Duration,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderScheme {
    Percentile,
    Frequency,
    ContextualFrequency,
}

impl std::fmt::Display for EncoderScheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EncoderScheme::Percentile => write!(f, "percentile"),
            EncoderScheme::Frequency => write!(f, "frequency"),
            EncoderScheme::ContextualFrequency => write!(f, "contextual_frequency"),
        }
    }
}

/// Neighbour feature values of a flow within its sorted group; only
/// consulted for values the contextual scheme never saw at fit time.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FlowContext {
    pub prev_bytes: Option<f64>,
    pub next_bytes: Option<f64>,
    pub prev_duration: Option<f64>,
    pub next_duration: Option<f64>,
}

impl FlowContext {
    pub fn from_neighbors(prev: Option<&FlowRecord>, next: Option<&FlowRecord>) -> Self {
        FlowContext {
            prev_bytes: prev.map(|f| f.bytes_total as f64),
            next_bytes: next.map(|f| f.bytes_total as f64),
            prev_duration: prev.map(|f| f.duration_ms),
            next_duration: next.map(|f| f.duration_ms),
        }
    }
}

/// Fitted per-feature mapping from raw values to integer codes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureCodebook {
    Percentile(PercentileCodebook),
    Frequency(FrequencyCodebook),
    Contextual(ContextualCodebook),
}

impl FeatureCodebook {
    fn code_of(&self, value: f64, prev: Option<f64>, next: Option<f64>) -> u32 {
        match self {
            FeatureCodebook::Percentile(cb) => cb.bin_of(value),
            FeatureCodebook::Frequency(cb) => cb.code_of(value),
            FeatureCodebook::Contextual(cb) => cb.code_of(value, prev, next),
        }
    }

    /// Upper bound on distinct codes this codebook can emit.
    pub fn code_bound(&self) -> usize {
        match self {
            FeatureCodebook::Percentile(cb) => cb.bin_count(),
            FeatureCodebook::Frequency(cb) => cb.code_count(),
            FeatureCodebook::Contextual(cb) => cb.cluster_count(),
        }
    }
}

/// A fitted symbol encoder.
///
/// Immutable once fitted; encoding is a pure function of the model, the
/// flow and (for unseen contextual values) the flow's neighbours, so a
/// model can be shared across threads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderModel {
    pub scheme: EncoderScheme,
    /// Protocol tokens observed at fit time (kept verbatim as codes).
    pub protocols: BTreeSet<String>,
    pub bytes: FeatureCodebook,
    pub duration: FeatureCodebook,
    /// Exact image of the fitting data under this encoder.
    pub alphabet: BTreeSet<String>,
    /// Seed used for any randomized fitting step.
    pub seed: u64,
    /// Sorting level the contextual scheme was fitted under; `None` for
    /// the context-free schemes.
    pub sorting_level: Option<SortingLevel>,
}

impl EncoderModel {
    /// Fit the percentile scheme: `bins` equal-frequency bins per numeric
    /// feature.
    pub fn fit_percentile(flows: &Dataset, bins: usize) -> Result<Self> {
        let (bytes_vals, dur_vals) = feature_columns(flows)?;
        let bytes = PercentileCodebook::fit(FeatureId::Bytes, &bytes_vals, bins)?;
        let duration = PercentileCodebook::fit(FeatureId::Duration, &dur_vals, bins)?;
        Ok(Self::assemble(
            EncoderScheme::Percentile,
            FeatureCodebook::Percentile(bytes),
            FeatureCodebook::Percentile(duration),
            flows,
            0,
            None,
        ))
    }

    /// Fit the frequency scheme: values occurring at least `threshold`
    /// times keep a unique code, the rest share `rare_bins` percentile
    /// bins.
    pub fn fit_frequency(flows: &Dataset, threshold: u64, rare_bins: usize) -> Result<Self> {
        let (bytes_vals, dur_vals) = feature_columns(flows)?;
        let bytes = FrequencyCodebook::fit(FeatureId::Bytes, &bytes_vals, threshold, rare_bins)?;
        let duration =
            FrequencyCodebook::fit(FeatureId::Duration, &dur_vals, threshold, rare_bins)?;
        Ok(Self::assemble(
            EncoderScheme::Frequency,
            FeatureCodebook::Frequency(bytes),
            FeatureCodebook::Frequency(duration),
            flows,
            0,
            None,
        ))
    }

    /// Fit the contextual frequency scheme over flows grouped and sorted
    /// by `level` (the same sorting level later used to build traces).
    pub fn fit_contextual(
        flows: &Dataset,
        level: SortingLevel,
        context_buckets: usize,
        clusters: usize,
        seed: u64,
        normalize: bool,
    ) -> Result<Self> {
        const KMEANS_ITERATION_CAP: usize = 100;
        let groups = group_flows(flows, level);
        let byte_streams: Vec<Vec<f64>> = groups
            .iter()
            .map(|(_, g)| g.iter().map(|f| f.bytes_total as f64).collect())
            .collect();
        let dur_streams: Vec<Vec<f64>> = groups
            .iter()
            .map(|(_, g)| g.iter().map(|f| f.duration_ms).collect())
            .collect();
        let bytes = ContextualCodebook::fit(
            FeatureId::Bytes,
            &byte_streams,
            context_buckets,
            clusters,
            seed,
            normalize,
            KMEANS_ITERATION_CAP,
        )?;
        let duration = ContextualCodebook::fit(
            FeatureId::Duration,
            &dur_streams,
            context_buckets,
            clusters,
            seed.wrapping_add(0x9e3779b97f4a7c15),
            normalize,
            KMEANS_ITERATION_CAP,
        )?;
        Ok(Self::assemble(
            EncoderScheme::ContextualFrequency,
            FeatureCodebook::Contextual(bytes),
            FeatureCodebook::Contextual(duration),
            flows,
            seed,
            Some(level),
        ))
    }

    fn assemble(
        scheme: EncoderScheme,
        bytes: FeatureCodebook,
        duration: FeatureCodebook,
        flows: &Dataset,
        seed: u64,
        sorting_level: Option<SortingLevel>,
    ) -> Self {
        let mut model = EncoderModel {
            scheme,
            protocols: flows.records.iter().map(|f| f.protocol.clone()).collect(),
            bytes,
            duration,
            alphabet: BTreeSet::new(),
            seed,
            sorting_level,
        };
        // the alphabet is exactly the image of the fitting data; fitted
        // values never consult context, so no neighbours are needed here
        model.alphabet = flows
            .records
            .iter()
            .map(|f| model.encode_flow(f, &FlowContext::default()))
            .collect();
        model
    }

    /// Encode one flow into its symbol. Total: unseen values fall into
    /// the open outer bins (percentile), the rare-bin route (frequency)
    /// or the nearest centroid (contextual).
    pub fn encode_flow(&self, flow: &FlowRecord, context: &FlowContext) -> String {
        let b = self.bytes.code_of(
            flow.bytes_total as f64,
            context.prev_bytes,
            context.next_bytes,
        );
        let d = self.duration.code_of(
            flow.duration_ms,
            context.prev_duration,
            context.next_duration,
        );
        format!("{}_{}_{}", flow.protocol, b, d)
    }

    /// Whether a composed symbol was observed in the fitting data.
    pub fn is_in_alphabet(&self, symbol: &str) -> bool {
        self.alphabet.contains(symbol)
    }

    pub fn save_json(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::ArtifactFormat {
                kind: "encoder",
                reason: e.to_string(),
            })?;
        std::fs::write(path.as_ref(), text + "\n").map_err(|e| Error::io(path.as_ref(), e))
    }

    pub fn load_json(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let text =
            std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
        serde_json::from_str(&text).map_err(|e| Error::ArtifactFormat {
            kind: "encoder",
            reason: e.to_string(),
        })
    }
}

fn feature_columns(flows: &Dataset) -> Result<(Vec<f64>, Vec<f64>)> {
    if flows.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok((
        flows.records.iter().map(|f| f.bytes_total as f64).collect(),
        flows.records.iter().map(|f| f.duration_ms).collect(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::Label;

    fn flow(protocol: &str, bytes: u64, duration: f64) -> FlowRecord {
        static NEXT: std::sync::atomic::AtomicU64 = std::sync::atomic::AtomicU64::new(0);
        let id = NEXT.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
        FlowRecord {
            flow_id: id,
            timestamp_start: id as i64 * 1000,
            src_host: "10.0.0.1".into(),
            dst_host: "10.0.0.2".into(),
            src_port: 1,
            dst_port: 2,
            protocol: protocol.into(),
            bytes_total: bytes,
            duration_ms: duration,
            label: Label::Benign,
        }
    }

    fn dataset(flows: Vec<FlowRecord>) -> Dataset {
        Dataset::from_records(flows, "mem")
    }

    #[test]
    fn percentile_symbol_composition() {
        // byte values 1..=100 (quartiles 25.75/50.5/75.25), durations all 5.0
        let mut flows: Vec<FlowRecord> = (1..=100).map(|i| flow("TCP", i, 5.0)).collect();
        flows.push(flow("UDP", 60, 5.0));
        let ds = dataset(flows);
        let model = EncoderModel::fit_percentile(&ds, 4).unwrap();
        // bytes 60 -> quartile bin 2, duration degenerate -> bin 0
        let sym = model.encode_flow(&flow("TCP", 60, 5.0), &FlowContext::default());
        assert_eq!(sym, "TCP_2_0");
        assert!(model.is_in_alphabet("TCP_2_0"));
        assert!(!model.is_in_alphabet("ICMP_0_0"));
    }

    #[test]
    fn encoding_is_deterministic() {
        let ds = dataset((1..=50).map(|i| flow("TCP", i * 10, i as f64)).collect());
        let model = EncoderModel::fit_frequency(&ds, 5, 4).unwrap();
        let f = flow("TCP", 230, 9.0);
        let a = model.encode_flow(&f, &FlowContext::default());
        let b = model.encode_flow(&f, &FlowContext::default());
        assert_eq!(a, b);
    }

    #[test]
    fn unseen_values_are_always_encodable() {
        let ds = dataset((1..=50).map(|i| flow("TCP", i * 10, i as f64)).collect());
        for model in [
            EncoderModel::fit_percentile(&ds, 10).unwrap(),
            EncoderModel::fit_frequency(&ds, 5, 4).unwrap(),
            EncoderModel::fit_contextual(&ds, SortingLevel::Timestamp, 4, 3, 7, true).unwrap(),
        ] {
            let sym = model.encode_flow(&flow("TCP", 99_999, 777.7), &FlowContext::default());
            assert_eq!(sym.split('_').count(), 3);
        }
    }

    #[test]
    fn alphabet_is_image_of_fitting_data() {
        let ds = dataset((1..=30).map(|i| flow(if i % 2 == 0 { "TCP" } else { "UDP" }, i * 7, i as f64)).collect());
        let model = EncoderModel::fit_percentile(&ds, 5).unwrap();
        let image: BTreeSet<String> = ds
            .records
            .iter()
            .map(|f| model.encode_flow(f, &FlowContext::default()))
            .collect();
        assert_eq!(model.alphabet, image);
    }

    #[test]
    fn contextual_alphabet_bounded_by_cluster_count() {
        let ds = dataset(
            (0..200)
                .map(|i| flow("TCP", (i % 23) * 100 + 50, ((i % 17) as f64) * 3.0 + 1.0))
                .collect(),
        );
        let k = 4;
        let model =
            EncoderModel::fit_contextual(&ds, SortingLevel::Timestamp, 5, k, 11, true).unwrap();
        let mut byte_codes = BTreeSet::new();
        let mut dur_codes = BTreeSet::new();
        for sym in &model.alphabet {
            let parts: Vec<&str> = sym.split('_').collect();
            byte_codes.insert(parts[1].to_string());
            dur_codes.insert(parts[2].to_string());
        }
        assert!(byte_codes.len() <= k);
        assert!(dur_codes.len() <= k);
    }

    #[test]
    fn json_round_trip_preserves_model() {
        let ds = dataset((1..=40).map(|i| flow("TCP", i * 3, i as f64 * 0.5)).collect());
        let model = EncoderModel::fit_frequency(&ds, 3, 5).unwrap();
        let tmp = tempfile::NamedTempFile::new().unwrap();
        model.save_json(tmp.path()).unwrap();
        let loaded = EncoderModel::load_json(tmp.path()).unwrap();
        assert_eq!(model, loaded);
    }
}
