//! Likelihood scoring of traces and threshold-based anomaly verdicts.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::Label;
use crate::pdfa::Pdfa;
use crate::trace::SymbolicTrace;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Normal,
    Anomalous,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Verdict::Normal => write!(f, "normal"),
            Verdict::Anomalous => write!(f, "anomalous"),
        }
    }
}

/// A trace with its likelihood and anomaly verdict.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredTrace {
    pub trace: SymbolicTrace,
    pub log_likelihood: f64,
    /// Mean per-symbol log-likelihood (`log_likelihood / W`), comparable
    /// across window lengths.
    pub normalized_score: f64,
    pub verdict: Verdict,
    pub threshold_used: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdMethod {
    /// min(train scores) − margin.
    TrainMinMargin,
    /// The p-th percentile of the train scores (p in percent).
    TrainPercentile,
    /// Fixed value, passed through.
    Fixed,
}

impl fmt::Display for ThresholdMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ThresholdMethod::TrainMinMargin => write!(f, "train_min_margin"),
            ThresholdMethod::TrainPercentile => write!(f, "train_percentile"),
            ThresholdMethod::Fixed => write!(f, "fixed"),
        }
    }
}

/// Alarm threshold in normalized log-likelihood units; always derived
/// from training scores, never from test data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub value: f64,
    pub method: ThresholdMethod,
    pub parameter: f64,
}

/// Normalized log-likelihood of each trace under the model, without
/// verdicts (used to calibrate a threshold from training traces).
pub fn raw_scores(model: &Pdfa, traces: &[SymbolicTrace]) -> Result<Vec<f64>> {
    traces
        .iter()
        .map(|t| {
            let s = model.sequence_probability(&t.symbols)?;
            Ok(s.log_probability / t.symbols.len().max(1) as f64)
        })
        .collect()
}

/// Score traces and attach verdicts: anomalous iff the normalized score
/// falls below the threshold.
pub fn score_traces(
    model: &Pdfa,
    traces: &[SymbolicTrace],
    threshold: &Threshold,
) -> Result<Vec<ScoredTrace>> {
    traces
        .iter()
        .map(|t| {
            let s = model.sequence_probability(&t.symbols)?;
            let normalized = s.log_probability / t.symbols.len().max(1) as f64;
            Ok(ScoredTrace {
                trace: t.clone(),
                log_likelihood: s.log_probability,
                normalized_score: normalized,
                verdict: if normalized < threshold.value {
                    Verdict::Anomalous
                } else {
                    Verdict::Normal
                },
                threshold_used: threshold.value,
            })
        })
        .collect()
}

/// Derive an alarm threshold from benign training scores.
pub fn calibrate_threshold(
    train_scores: &[f64],
    method: ThresholdMethod,
    parameter: f64,
) -> Result<Threshold> {
    if train_scores.is_empty() && method != ThresholdMethod::Fixed {
        return Err(Error::InvalidParameter(
            "cannot calibrate a threshold from zero training scores".into(),
        ));
    }
    let value = match method {
        ThresholdMethod::TrainMinMargin => {
            train_scores.iter().copied().fold(f64::INFINITY, f64::min) - parameter
        }
        ThresholdMethod::TrainPercentile => {
            if !(0.0..=100.0).contains(&parameter) {
                return Err(Error::InvalidParameter(format!(
                    "percentile must be within [0, 100], got {parameter}"
                )));
            }
            let mut sorted = train_scores.to_vec();
            sorted.sort_by(f64::total_cmp);
            crate::encode::interpolated_percentile(&sorted, parameter)
        }
        ThresholdMethod::Fixed => parameter,
    };
    Ok(Threshold {
        value,
        method,
        parameter,
    })
}

/// Ordering of the emitted likelihood series.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeriesOrder {
    ByIndex,
    ByTimestamp,
}

/// Write the plot series: one row per trace with its position, the
/// negative normalized log-likelihood (higher = more suspicious) and the
/// ground-truth label.
pub fn emit_likelihood_series(
    scored: &[ScoredTrace],
    order: SeriesOrder,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let rows = ordered(scored, order);
    let key = match order {
        SeriesOrder::ByIndex => "index",
        SeriesOrder::ByTimestamp => "timestamp",
    };
    let mut emit = || -> std::io::Result<()> {
        writeln!(w, "{key}\tneg_normalized_log_likelihood\tlabel")?;
        for (i, s) in rows.iter().enumerate() {
            let x = match order {
                SeriesOrder::ByIndex => i as i64,
                SeriesOrder::ByTimestamp => s.trace.first_timestamp,
            };
            writeln!(w, "{x}\t{}\t{}", -s.normalized_score, s.trace.label)?;
        }
        w.flush()
    };
    emit().map_err(|e| Error::io(path, e))
}

fn ordered<'a>(scored: &'a [ScoredTrace], order: SeriesOrder) -> Vec<&'a ScoredTrace> {
    let mut rows: Vec<&ScoredTrace> = scored.iter().collect();
    if order == SeriesOrder::ByTimestamp {
        rows.sort_by_key(|s| s.trace.first_timestamp);
    }
    rows
}

/// Render a static, self-contained SVG line chart of the series with
/// malicious traces marked.
pub fn render_likelihood_svg(
    scored: &[ScoredTrace],
    order: SeriesOrder,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    if scored.is_empty() {
        return Err(Error::InvalidParameter("nothing to plot".into()));
    }
    const W: f64 = 900.0;
    const H: f64 = 300.0;
    const PAD: f64 = 40.0;
    let rows = ordered(scored, order);
    let ys: Vec<f64> = rows.iter().map(|s| -s.normalized_score).collect();
    let y_min = ys.iter().copied().fold(f64::INFINITY, f64::min);
    let y_max = ys.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = (y_max - y_min).max(1e-9);
    let xs = |i: usize| PAD + (W - 2.0 * PAD) * i as f64 / (rows.len().max(2) - 1) as f64;
    let ysc = |y: f64| H - PAD - (H - 2.0 * PAD) * (y - y_min) / span;

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n"
    ));
    svg.push_str(&format!(
        "  <rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n"
    ));
    svg.push_str(&format!(
        "  <line x1=\"{PAD}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n",
        H - PAD,
        W - PAD,
        H - PAD
    ));
    svg.push_str(&format!(
        "  <line x1=\"{PAD}\" y1=\"{PAD}\" x2=\"{PAD}\" y2=\"{}\" stroke=\"black\"/>\n",
        H - PAD
    ));
    svg.push_str(&format!(
        "  <text x=\"{PAD}\" y=\"{}\" font-size=\"11\">{:.3}</text>\n",
        H - PAD + 14.0,
        y_min
    ));
    svg.push_str(&format!(
        "  <text x=\"{PAD}\" y=\"{}\" font-size=\"11\">{:.3}</text>\n",
        PAD - 6.0,
        y_max
    ));
    let points: Vec<String> = ys
        .iter()
        .enumerate()
        .map(|(i, y)| format!("{:.2},{:.2}", xs(i), ysc(*y)))
        .collect();
    svg.push_str(&format!(
        "  <polyline points=\"{}\" fill=\"none\" stroke=\"steelblue\" stroke-width=\"1\"/>\n",
        points.join(" ")
    ));
    for (i, s) in rows.iter().enumerate() {
        if s.trace.label.is_malicious() {
            svg.push_str(&format!(
                "  <circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"2\" fill=\"crimson\"/>\n",
                xs(i),
                ysc(ys[i])
            ));
        }
    }
    svg.push_str("</svg>\n");
    std::fs::write(path, svg).map_err(|e| Error::io(path, e))
}

/// One row of the scores file.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRow {
    pub trace_index: usize,
    pub group_key: String,
    pub first_timestamp: i64,
    pub normalized_score: f64,
    pub label: Label,
    pub verdict: Verdict,
}

/// Write the scores file: a fingerprint header line, a column header,
/// then one tab-separated row per trace.
pub fn write_scores(
    scored: &[ScoredTrace],
    fingerprint: &str,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut emit = || -> std::io::Result<()> {
        writeln!(w, "# fingerprint {fingerprint}")?;
        writeln!(
            w,
            "trace_index\tgroup_key\tfirst_timestamp\tnormalized_score\tlabel\tverdict"
        )?;
        for (i, s) in scored.iter().enumerate() {
            writeln!(
                w,
                "{i}\t{}\t{}\t{}\t{}\t{}",
                s.trace.group_key,
                s.trace.first_timestamp,
                s.normalized_score,
                s.trace.label,
                s.verdict
            )?;
        }
        w.flush()
    };
    emit().map_err(|e| Error::io(path, e))
}

/// Read a scores file back; returns the fingerprint and the rows.
pub fn read_scores(path: impl AsRef<Path>) -> Result<(String, Vec<ScoreRow>)> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    let fingerprint = lines
        .next()
        .and_then(|l| l.strip_prefix("# fingerprint "))
        .ok_or(Error::ArtifactFormat {
            kind: "scores",
            reason: "missing fingerprint header".into(),
        })?
        .to_string();
    let header = lines.next().ok_or(Error::ArtifactFormat {
        kind: "scores",
        reason: "missing column header".into(),
    })?;
    if !header.starts_with("trace_index\t") {
        return Err(Error::ArtifactFormat {
            kind: "scores",
            reason: "unexpected column header".into(),
        });
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 6 {
            return Err(Error::ArtifactFormat {
                kind: "scores",
                reason: format!("row {} has {} fields, expected 6", i + 3, fields.len()),
            });
        }
        let parse_err = |what: &str| Error::ArtifactFormat {
            kind: "scores",
            reason: format!("row {}: bad {what}", i + 3),
        };
        rows.push(ScoreRow {
            trace_index: fields[0].parse().map_err(|_| parse_err("trace_index"))?,
            group_key: fields[1].to_string(),
            first_timestamp: fields[2].parse().map_err(|_| parse_err("first_timestamp"))?,
            normalized_score: fields[3].parse().map_err(|_| parse_err("normalized_score"))?,
            label: fields[4].parse().map_err(|_| parse_err("label"))?,
            verdict: match fields[5] {
                "normal" => Verdict::Normal,
                "anomalous" => Verdict::Anomalous,
                _ => return Err(parse_err("verdict")),
            },
        });
    }
    Ok((fingerprint, rows))
}
