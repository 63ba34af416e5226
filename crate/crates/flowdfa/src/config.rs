//! Declarative pipeline configuration and its fingerprint.
//!
//! Every artifact a command writes embeds the fingerprint of the config
//! that produced it; commands refuse artifacts whose fingerprint does not
//! match their own config.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::detect::ThresholdMethod;
use crate::encode::EncoderScheme;
use crate::error::{Error, Result};
use crate::eval::ForestConfig;
use crate::flow::ColumnMapping;
use crate::learn::MergeConfig;
use crate::trace::SortingLevel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetSection {
    /// Labeled flow CSV.
    pub path: PathBuf,
    /// Train/test boundary, epoch milliseconds.
    pub split_boundary_ms: i64,
}

impl Default for DatasetSection {
    fn default() -> Self {
        DatasetSection {
            path: PathBuf::from("flows.csv"),
            split_boundary_ms: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderSection {
    pub scheme: EncoderScheme,
    /// Percentile scheme: bins per numeric feature.
    pub percentile_bins: usize,
    /// Frequency scheme: a value is frequent when it covers at least this
    /// fraction of the training flows.
    pub frequency_threshold_fraction: f64,
    /// Frequency scheme: percentile bins over the pooled rare values.
    pub frequency_rare_bins: usize,
    /// Contextual scheme: quantization buckets per histogram half.
    pub context_buckets: usize,
    /// Contextual scheme: k-means clusters per feature.
    pub context_clusters: usize,
    /// Contextual scheme: row-normalize each histogram half before
    /// clustering.
    pub normalize_context: bool,
}

impl Default for EncoderSection {
    fn default() -> Self {
        EncoderSection {
            scheme: EncoderScheme::Percentile,
            percentile_bins: 10,
            frequency_threshold_fraction: 0.005,
            frequency_rare_bins: 10,
            context_buckets: 10,
            context_clusters: 15,
            normalize_context: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TraceSection {
    pub sorting: SortingLevel,
    pub window: usize,
    pub stride: usize,
}

impl Default for TraceSection {
    fn default() -> Self {
        TraceSection {
            sorting: SortingLevel::Timestamp,
            window: 10,
            stride: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MergeSection {
    /// Hoeffding significance; 0 is the strict no-merge limit.
    pub significance: f64,
    pub min_count: u64,
    pub max_iterations: usize,
    /// Additive smoothing for probability estimation.
    pub smoothing: f64,
    /// Model final probabilities (off for fixed-length windows).
    pub use_final_probabilities: bool,
}

impl Default for MergeSection {
    fn default() -> Self {
        MergeSection {
            significance: 0.05,
            min_count: 10,
            max_iterations: 1_000_000,
            smoothing: 1.0,
            use_final_probabilities: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorSection {
    pub threshold_method: ThresholdMethod,
    /// Margin (train_min_margin), percentile in percent
    /// (train_percentile) or the threshold itself (fixed).
    pub threshold_parameter: f64,
}

impl Default for DetectorSection {
    fn default() -> Self {
        DetectorSection {
            threshold_method: ThresholdMethod::TrainPercentile,
            threshold_parameter: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineSection {
    pub n_estimators: usize,
    pub subsample_size: usize,
    pub contamination: f64,
    /// Feed encoded feature codes to the baseline instead of raw values.
    pub encoded_features: bool,
}

impl Default for BaselineSection {
    fn default() -> Self {
        BaselineSection {
            n_estimators: 100,
            subsample_size: 256,
            contamination: 0.01,
            encoded_features: false,
        }
    }
}

/// The whole pipeline configuration, loadable from a TOML file.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub dataset: DatasetSection,
    /// Canonical field -> source column name, for non-canonical CSVs.
    pub columns: ColumnMapping,
    pub encoder: EncoderSection,
    pub traces: TraceSection,
    pub merge: MergeSection,
    pub detector: DetectorSection,
    pub baseline: BaselineSection,
    /// Root seed; k-means and forest subsampling derive from it.
    pub seed: u64,
    pub output_dir: PathBuf,
}

/// What the fingerprint covers: everything that shapes the artifacts,
/// excluding file locations.
#[derive(Serialize)]
struct FingerprintView<'a> {
    encoder: &'a EncoderSection,
    traces: &'a TraceSection,
    merge: &'a MergeSection,
    detector: &'a DetectorSection,
    baseline: &'a BaselineSection,
    seed: u64,
}

impl PipelineConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text =
            std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
        let config: PipelineConfig =
            toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))?;
        std::fs::write(path.as_ref(), text).map_err(|e| Error::io(path.as_ref(), e))
    }

    pub fn validate(&self) -> Result<()> {
        if self.traces.window < 1 || self.traces.stride < 1 {
            return Err(Error::Config("window and stride must be >= 1".into()));
        }
        if self.encoder.percentile_bins < 2 {
            return Err(Error::Config("percentile_bins must be >= 2".into()));
        }
        if !(0.0..=1.0).contains(&self.encoder.frequency_threshold_fraction) {
            return Err(Error::Config(
                "frequency_threshold_fraction must be in [0, 1]".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.merge.significance) {
            return Err(Error::Config("merge significance must be in [0, 1)".into()));
        }
        if !(0.0..=1.0).contains(&self.baseline.contamination) {
            return Err(Error::Config("contamination must be in [0, 1]".into()));
        }
        Ok(())
    }

    /// Stable hash of the canonicalized semantic config; file paths do
    /// not participate.
    pub fn fingerprint(&self) -> String {
        let view = FingerprintView {
            encoder: &self.encoder,
            traces: &self.traces,
            merge: &self.merge,
            detector: &self.detector,
            baseline: &self.baseline,
            seed: self.seed,
        };
        let canonical = serde_json::to_string(&view).expect("config serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
        hex[..16].to_string()
    }

    /// Summary embedded in the model file for human readers.
    pub fn summary(&self) -> serde_json::Value {
        serde_json::json!({
            "scheme": self.encoder.scheme.to_string(),
            "sorting_level": self.traces.sorting.to_string(),
            "window": self.traces.window,
            "stride": self.traces.stride,
            "seed": self.seed,
        })
    }

    pub fn merge_config(&self) -> MergeConfig {
        MergeConfig {
            significance: self.merge.significance,
            min_count: self.merge.min_count,
            max_iterations: self.merge.max_iterations,
            smoothing: self.merge.smoothing,
            seed: self.seed,
        }
    }

    pub fn forest_config(&self) -> ForestConfig {
        ForestConfig {
            n_estimators: self.baseline.n_estimators,
            subsample_size: self.baseline.subsample_size,
            // derived so the forest does not share the k-means stream
            seed: self.seed.wrapping_add(0x5851f42d4c957f2d),
        }
    }

    /// Absolute count for the frequency threshold given the training size.
    pub fn frequency_threshold_count(&self, train_flows: usize) -> u64 {
        ((self.encoder.frequency_threshold_fraction * train_flows as f64).ceil() as u64).max(1)
    }
}
