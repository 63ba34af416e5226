//! Config-driven orchestration: the train / score / eval / sweep commands
//! behind the CLI, producing fingerprinted artifacts in the output
//! directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::detect::{
    calibrate_threshold, emit_likelihood_series, raw_scores, render_likelihood_svg, score_traces,
    read_scores, write_scores, SeriesOrder, Threshold,
};
use crate::encode::{EncoderModel, EncoderScheme};
use crate::error::{Error, Result};
use crate::eval::{
    format_report_table, metrics_from_verdicts, IsolationForest, MetricsReport, ReportRow,
};
use crate::flow::{load_flows, split_train_test, Dataset, ValidationReport};
use crate::learn::learn;
use crate::pdfa::{Pdfa, Pta};
use crate::trace::{build_traces, export_traces, SortingLevel, SymbolicTrace};

pub const ENCODER_FILE: &str = "encoder.json";
pub const MODEL_FILE: &str = "model.json";
pub const THRESHOLD_FILE: &str = "threshold.json";
pub const TRAIN_SCORES_FILE: &str = "train_scores.tsv";
pub const MERGE_TRACE_FILE: &str = "merge_trace.txt";
pub const VALIDATION_FILE: &str = "validation_report.txt";
pub const SCORES_FILE: &str = "scores.tsv";
pub const SERIES_FILE: &str = "likelihood_series.tsv";
pub const SVG_FILE: &str = "likelihood.svg";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TEXT: &str = "report.txt";
pub const SWEEP_JSON: &str = "sweep_report.json";
pub const SWEEP_TEXT: &str = "sweep_report.txt";
pub const TRACES_FILE: &str = "traces.abb";
pub const DOT_FILE: &str = "model.dot";

#[derive(Debug, Serialize, Deserialize)]
struct EncoderDocument {
    format: String,
    fingerprint: String,
    model: EncoderModel,
}

#[derive(Debug, Serialize, Deserialize)]
struct ThresholdDocument {
    format: String,
    fingerprint: String,
    threshold: Threshold,
}

fn check_fingerprint(artifact: &str, found: &str, expected: &str) -> Result<()> {
    if found != expected {
        return Err(Error::FingerprintMismatch {
            artifact: artifact.to_string(),
            found: found.to_string(),
            expected: expected.to_string(),
        });
    }
    Ok(())
}

fn save_encoder(model: &EncoderModel, fingerprint: &str, path: &Path) -> Result<()> {
    let doc = EncoderDocument {
        format: "encoder/v1".into(),
        fingerprint: fingerprint.to_string(),
        model: model.clone(),
    };
    let text = serde_json::to_string_pretty(&doc).map_err(|e| Error::ArtifactFormat {
        kind: "encoder",
        reason: e.to_string(),
    })?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn load_encoder(path: &Path, expected_fingerprint: &str) -> Result<EncoderModel> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let doc: EncoderDocument = serde_json::from_str(&text).map_err(|e| Error::ArtifactFormat {
        kind: "encoder",
        reason: e.to_string(),
    })?;
    check_fingerprint("encoder", &doc.fingerprint, expected_fingerprint)?;
    Ok(doc.model)
}

fn save_threshold(threshold: &Threshold, fingerprint: &str, path: &Path) -> Result<()> {
    let doc = ThresholdDocument {
        format: "threshold/v1".into(),
        fingerprint: fingerprint.to_string(),
        threshold: *threshold,
    };
    let text = serde_json::to_string_pretty(&doc).map_err(|e| Error::ArtifactFormat {
        kind: "threshold",
        reason: e.to_string(),
    })?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn load_threshold(path: &Path, expected_fingerprint: &str) -> Result<Threshold> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let doc: ThresholdDocument = serde_json::from_str(&text).map_err(|e| Error::ArtifactFormat {
        kind: "threshold",
        reason: e.to_string(),
    })?;
    check_fingerprint("threshold", &doc.fingerprint, expected_fingerprint)?;
    Ok(doc.threshold)
}

/// Ingest the configured CSV and split it at the boundary.
pub fn load_and_split(config: &PipelineConfig) -> Result<(Dataset, Dataset, ValidationReport)> {
    let (ds, report) = load_flows(&config.dataset.path, &config.columns)
        .map_err(|e| e.in_stage("ingest"))?;
    let (train, test) = split_train_test(&ds, config.dataset.split_boundary_ms)
        .map_err(|e| e.in_stage("split"))?;
    Ok((train, test, report))
}

/// Fit the configured encoder scheme on the training flows.
pub fn fit_encoder(config: &PipelineConfig, train: &Dataset) -> Result<EncoderModel> {
    let e = &config.encoder;
    match e.scheme {
        EncoderScheme::Percentile => EncoderModel::fit_percentile(train, e.percentile_bins),
        EncoderScheme::Frequency => EncoderModel::fit_frequency(
            train,
            config.frequency_threshold_count(train.len()),
            e.frequency_rare_bins,
        ),
        EncoderScheme::ContextualFrequency => EncoderModel::fit_contextual(
            train,
            config.traces.sorting,
            e.context_buckets,
            e.context_clusters,
            config.seed,
            e.normalize_context,
        ),
    }
    .map_err(|e| e.in_stage("encoder-fit"))
}

/// Everything `train` produces, for callers that keep going in memory.
#[derive(Debug)]
pub struct TrainOutcome {
    pub encoder: EncoderModel,
    pub model: Pdfa,
    pub threshold: Threshold,
    pub pta_states: usize,
    pub model_states: usize,
    pub train_traces: usize,
    pub merge_decisions: usize,
}

fn train_in_memory(
    config: &PipelineConfig,
    train: &Dataset,
) -> Result<(TrainOutcome, Vec<SymbolicTrace>, crate::learn::MergeTrace)> {
    let encoder = fit_encoder(config, train)?;
    let traces = build_traces(
        train,
        &encoder,
        config.traces.sorting,
        config.traces.window,
        config.traces.stride,
    )
    .map_err(|e| e.in_stage("trace-build"))?;
    let pta = Pta::build(&traces, config.merge.use_final_probabilities)
        .map_err(|e| e.in_stage("pta"))?;
    let pta_states = pta.state_count();
    let (model, merge_trace) = learn(pta, &config.merge_config()).map_err(|e| e.in_stage("learn"))?;
    let scores = raw_scores(&model, &traces).map_err(|e| e.in_stage("score"))?;
    let threshold = calibrate_threshold(
        &scores,
        config.detector.threshold_method,
        config.detector.threshold_parameter,
    )
    .map_err(|e| e.in_stage("calibrate"))?;
    let outcome = TrainOutcome {
        model_states: model.state_count(),
        pta_states,
        train_traces: traces.len(),
        merge_decisions: merge_trace.decisions.len(),
        encoder,
        model,
        threshold,
    };
    Ok((outcome, traces, merge_trace))
}

/// Run ingest → encoder fit → trace build → PTA → merge-learn →
/// estimate → calibrate, writing all artifacts into the output directory.
pub fn cmd_train(config: &PipelineConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let out = &config.output_dir;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let fingerprint = config.fingerprint();

    let (train, _test, validation) = load_and_split(config)?;
    let (outcome, train_traces, merge_trace) = train_in_memory(config, &train)?;

    std::fs::write(out.join(VALIDATION_FILE), validation.to_text())
        .map_err(|e| Error::io(out.join(VALIDATION_FILE), e))?;
    save_encoder(&outcome.encoder, &fingerprint, &out.join(ENCODER_FILE))?;
    outcome
        .model
        .save_model(out.join(MODEL_FILE), &fingerprint, config.summary())?;
    save_threshold(&outcome.threshold, &fingerprint, &out.join(THRESHOLD_FILE))?;
    let scored = score_traces(&outcome.model, &train_traces, &outcome.threshold)?;
    write_scores(&scored, &fingerprint, out.join(TRAIN_SCORES_FILE))?;
    std::fs::write(out.join(MERGE_TRACE_FILE), merge_trace.to_text())
        .map_err(|e| Error::io(out.join(MERGE_TRACE_FILE), e))?;
    Ok(outcome)
}

#[derive(Debug)]
pub struct ScoreOutcome {
    pub scored: usize,
    pub anomalous: usize,
    pub scores_path: PathBuf,
}

/// Score the test partition (or an alternative flow file) under the
/// trained artifacts; refuses artifacts from a different config.
pub fn cmd_score(config: &PipelineConfig, flows_override: Option<&Path>) -> Result<ScoreOutcome> {
    config.validate()?;
    let out = &config.output_dir;
    let fingerprint = config.fingerprint();
    let encoder = load_encoder(&out.join(ENCODER_FILE), &fingerprint)?;
    let (model, model_fp, _) = Pdfa::load_model(out.join(MODEL_FILE))?;
    check_fingerprint("model", &model_fp, &fingerprint)?;
    let threshold = load_threshold(&out.join(THRESHOLD_FILE), &fingerprint)?;

    let flows = match flows_override {
        Some(path) => {
            let (ds, _) = load_flows(path, &config.columns).map_err(|e| e.in_stage("ingest"))?;
            ds
        }
        None => load_and_split(config)?.1,
    };
    let traces = build_traces(
        &flows,
        &encoder,
        config.traces.sorting,
        config.traces.window,
        config.traces.stride,
    )
    .map_err(|e| e.in_stage("trace-build"))?;
    let scored = score_traces(&model, &traces, &threshold).map_err(|e| e.in_stage("score"))?;

    let scores_path = out.join(SCORES_FILE);
    write_scores(&scored, &fingerprint, &scores_path)?;
    emit_likelihood_series(&scored, SeriesOrder::ByTimestamp, out.join(SERIES_FILE))?;
    render_likelihood_svg(&scored, SeriesOrder::ByTimestamp, out.join(SVG_FILE))?;
    Ok(ScoreOutcome {
        scored: scored.len(),
        anomalous: scored
            .iter()
            .filter(|s| s.verdict == crate::detect::Verdict::Anomalous)
            .count(),
        scores_path,
    })
}

/// Metrics over a scores file, optionally with the isolation-forest
/// baseline rows; writes report.json / report.txt.
pub fn cmd_eval(config: &PipelineConfig, include_baseline: bool) -> Result<Vec<ReportRow>> {
    config.validate()?;
    let out = &config.output_dir;
    let fingerprint = config.fingerprint();
    let (scores_fp, rows) = read_scores(out.join(SCORES_FILE))?;
    check_fingerprint("scores", &scores_fp, &fingerprint)?;

    let metrics = metrics_from_verdicts(rows.iter().map(|r| {
        (
            r.label.is_malicious(),
            r.verdict == crate::detect::Verdict::Anomalous,
        )
    }));
    let mut report = vec![ReportRow {
        method: "pdfa".into(),
        encoding: config.encoder.scheme.to_string(),
        sorting_level: config.traces.sorting.to_string(),
        balanced_accuracy: metrics.balanced_accuracy,
        f1: metrics.f1,
    }];

    if include_baseline {
        let (train, test, _) = load_and_split(config)?;
        let row = baseline_row(config, &train, &test, config.traces.sorting)?;
        report.push(row);
    }

    let json = serde_json::to_string_pretty(&serde_json::json!({
        "fingerprint": fingerprint,
        "metrics": metrics,
        "rows": report,
    }))
    .map_err(|e| Error::ArtifactFormat {
        kind: "report",
        reason: e.to_string(),
    })?;
    std::fs::write(out.join(REPORT_JSON), json + "\n")
        .map_err(|e| Error::io(out.join(REPORT_JSON), e))?;
    std::fs::write(out.join(REPORT_TEXT), format_report_table(&report))
        .map_err(|e| Error::io(out.join(REPORT_TEXT), e))?;
    Ok(report)
}

/// Isolation-forest baseline under one sorting level: per-flow verdicts
/// on raw features, lifted to trace granularity by the any-flagged rule.
pub fn baseline_row(
    config: &PipelineConfig,
    train: &Dataset,
    test: &Dataset,
    level: SortingLevel,
) -> Result<ReportRow> {
    let forest = if config.baseline.encoded_features {
        let encoder = fit_encoder(config, train)?;
        crate::eval::encoded_feature_forest(train, &encoder, &config.forest_config())?
    } else {
        IsolationForest::train(train, &config.forest_config())?
    };
    // window structure only depends on grouping, so any fitted encoder
    // works for the lifting; percentile is the cheapest
    let mut window_config = config.clone();
    window_config.encoder.scheme = EncoderScheme::Percentile;
    let encoder = fit_encoder(&window_config, train)?;
    let traces = build_traces(
        test,
        &encoder,
        level,
        config.traces.window,
        config.traces.stride,
    )?;
    let verdicts = forest.trace_verdicts(test, &traces, config.baseline.contamination);
    let metrics = metrics_from_verdicts(
        traces
            .iter()
            .zip(&verdicts)
            .map(|(t, v)| (t.label.is_malicious(), *v)),
    );
    Ok(ReportRow {
        method: "isolation_forest".into(),
        encoding: "n/a".into(),
        sorting_level: level.to_string(),
        balanced_accuracy: metrics.balanced_accuracy,
        f1: metrics.f1,
    })
}

/// One sweep cell: train and evaluate a single (encoding, sorting level)
/// combination fully in memory.
pub fn run_cell(
    config: &PipelineConfig,
    train: &Dataset,
    test: &Dataset,
    scheme: EncoderScheme,
    level: SortingLevel,
) -> Result<(MetricsReport, ReportRow)> {
    let mut cell = config.clone();
    cell.encoder.scheme = scheme;
    cell.traces.sorting = level;
    let (outcome, _, _) = train_in_memory(&cell, train)?;
    let traces = build_traces(
        test,
        &outcome.encoder,
        level,
        cell.traces.window,
        cell.traces.stride,
    )?;
    let scored = score_traces(&outcome.model, &traces, &outcome.threshold)?;
    let metrics = crate::eval::compute_metrics(&scored)?;
    let row = ReportRow {
        method: "pdfa".into(),
        encoding: scheme.to_string(),
        sorting_level: level.to_string(),
        balanced_accuracy: metrics.balanced_accuracy,
        f1: metrics.f1,
    };
    Ok((metrics, row))
}

/// The full grid: three encodings × four sorting levels, plus one
/// baseline row per sorting level.
pub fn cmd_sweep(config: &PipelineConfig) -> Result<Vec<ReportRow>> {
    config.validate()?;
    let out = &config.output_dir;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let (train, test, _) = load_and_split(config)?;
    let mut rows = Vec::new();
    for scheme in [
        EncoderScheme::Percentile,
        EncoderScheme::Frequency,
        EncoderScheme::ContextualFrequency,
    ] {
        for level in SortingLevel::ALL {
            let (_, row) = run_cell(config, &train, &test, scheme, level)?;
            rows.push(row);
        }
    }
    for level in SortingLevel::ALL {
        rows.push(baseline_row(config, &train, &test, level)?);
    }
    let json = serde_json::to_string_pretty(&serde_json::json!({
        "fingerprint": config.fingerprint(),
        "rows": rows,
    }))
    .map_err(|e| Error::ArtifactFormat {
        kind: "report",
        reason: e.to_string(),
    })?;
    std::fs::write(out.join(SWEEP_JSON), json + "\n")
        .map_err(|e| Error::io(out.join(SWEEP_JSON), e))?;
    std::fs::write(out.join(SWEEP_TEXT), format_report_table(&rows))
        .map_err(|e| Error::io(out.join(SWEEP_TEXT), e))?;
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceSplit {
    Train,
    Test,
    All,
}

/// Export the selected partition as Abbadingo traces (plus symbol table).
pub fn cmd_export_traces(config: &PipelineConfig, split: TraceSplit) -> Result<PathBuf> {
    config.validate()?;
    let out = &config.output_dir;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let (train, test, _) = load_and_split(config)?;
    // the encoder always fits on the benign training partition
    let encoder = fit_encoder(config, &train)?;
    let flows = match split {
        TraceSplit::Train => train,
        TraceSplit::Test => test,
        TraceSplit::All => {
            let mut all = train;
            all.records.extend(test.records);
            all
        }
    };
    let traces = build_traces(
        &flows,
        &encoder,
        config.traces.sorting,
        config.traces.window,
        config.traces.stride,
    )?;
    let path = out.join(TRACES_FILE);
    export_traces(&traces, &path)?;
    Ok(path)
}

/// Re-emit the trained model as a DOT graph.
pub fn cmd_export_dot(config: &PipelineConfig) -> Result<PathBuf> {
    let out = &config.output_dir;
    let (model, model_fp, _) = Pdfa::load_model(out.join(MODEL_FILE))?;
    check_fingerprint("model", &model_fp, &config.fingerprint())?;
    let path = out.join(DOT_FILE);
    model.export_dot(&path)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate, SynthConfig};

    fn mini_config(dir: &Path) -> PipelineConfig {
        let synth = SynthConfig::mini();
        let ds = generate(&synth);
        let csv = dir.join("flows.csv");
        crate::flow::write_flows(&ds, &csv).unwrap();
        let mut config = PipelineConfig::default();
        config.dataset.path = csv;
        // mini corpus is benign-only; split near the middle
        let (min, max) = ds.time_range().unwrap();
        config.dataset.split_boundary_ms = min + (max - min) / 2;
        config.traces.window = 5;
        config.encoder.percentile_bins = 5;
        config.output_dir = dir.join("out");
        config.seed = 11;
        config
    }

    #[test]
    fn train_produces_all_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let config = mini_config(dir.path());
        let outcome = cmd_train(&config).unwrap();
        assert!(outcome.model_states > 1);
        assert!(outcome.model_states < outcome.pta_states);
        for f in [
            ENCODER_FILE,
            MODEL_FILE,
            THRESHOLD_FILE,
            TRAIN_SCORES_FILE,
            MERGE_TRACE_FILE,
            VALIDATION_FILE,
        ] {
            assert!(config.output_dir.join(f).exists(), "missing {f}");
        }
    }

    #[test]
    fn score_then_eval_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let config = mini_config(dir.path());
        cmd_train(&config).unwrap();
        let score = cmd_score(&config, None).unwrap();
        assert!(score.scored > 0);
        let rows = cmd_eval(&config, false).unwrap();
        assert_eq!(rows.len(), 1);
        // benign-only test partition: nothing to recall, BA is TNR/2 + 0.5·[no positives]
        assert!(config.output_dir.join(REPORT_TEXT).exists());
    }

    #[test]
    fn changed_config_is_refused_with_fingerprint_error() {
        let dir = tempfile::tempdir().unwrap();
        let config = mini_config(dir.path());
        cmd_train(&config).unwrap();
        let mut changed = config.clone();
        changed.seed = 999;
        let err = cmd_score(&changed, None).unwrap_err();
        assert!(matches!(err, Error::FingerprintMismatch { .. }));
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn rerun_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let config = mini_config(dir.path());
        cmd_train(&config).unwrap();
        cmd_score(&config, None).unwrap();
        let model1 = std::fs::read(config.output_dir.join(MODEL_FILE)).unwrap();
        let scores1 = std::fs::read(config.output_dir.join(SCORES_FILE)).unwrap();
        cmd_train(&config).unwrap();
        cmd_score(&config, None).unwrap();
        let model2 = std::fs::read(config.output_dir.join(MODEL_FILE)).unwrap();
        let scores2 = std::fs::read(config.output_dir.join(SCORES_FILE)).unwrap();
        assert_eq!(model1, model2);
        assert_eq!(scores1, scores2);
    }

    #[test]
    fn export_traces_writes_abbadingo_pair() {
        let dir = tempfile::tempdir().unwrap();
        let config = mini_config(dir.path());
        let path = cmd_export_traces(&config, TraceSplit::Train).unwrap();
        assert!(path.exists());
        assert!(crate::trace::symbol_table_path(&path).exists());
        let back = crate::trace::import_traces(&path).unwrap();
        assert!(!back.is_empty());
    }

    #[test]
    fn export_dot_needs_a_trained_model() {
        let dir = tempfile::tempdir().unwrap();
        let config = mini_config(dir.path());
        assert!(cmd_export_dot(&config).is_err());
        cmd_train(&config).unwrap();
        let path = cmd_export_dot(&config).unwrap();
        let text = std::fs::read_to_string(path).unwrap();
        assert!(text.starts_with("digraph"));
    }
}
