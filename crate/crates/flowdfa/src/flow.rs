//! NetFlow ingestion: parsing labeled flow CSVs into validated records.
//!
//! A flow record keeps the three model features (protocol, total bytes,
//! duration) plus the host/port/timestamp fields needed for sorting and
//! labeling. Hosts and ports are never fed to the model.

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ground-truth label of a flow or trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    Benign,
    Malicious,
}

impl Label {
    pub fn is_malicious(self) -> bool {
        matches!(self, Label::Malicious)
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Label::Benign => write!(f, "benign"),
            Label::Malicious => write!(f, "malicious"),
        }
    }
}

impl std::str::FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "benign" | "normal" | "0" => Ok(Label::Benign),
            "malicious" | "attack" | "anomaly" | "1" => Ok(Label::Malicious),
            other => Err(format!("unknown label `{other}`")),
        }
    }
}

/// One NetFlow entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowRecord {
    /// Unique ordinal within the dataset.
    pub flow_id: u64,
    /// Flow start, epoch milliseconds.
    pub timestamp_start: i64,
    pub src_host: String,
    pub dst_host: String,
    pub src_port: u16,
    pub dst_port: u16,
    /// Categorical protocol token, e.g. TCP/UDP/ICMP.
    pub protocol: String,
    /// Bytes sent within the flow.
    pub bytes_total: u64,
    /// Flow duration in milliseconds.
    pub duration_ms: f64,
    pub label: Label,
}

/// Canonical field names used in configs, CSV headers and reports.
pub const CANONICAL_FIELDS: [&str; 10] = [
    "flow_id",
    "timestamp_start",
    "src_host",
    "dst_host",
    "src_port",
    "dst_port",
    "protocol",
    "bytes_total",
    "duration_ms",
    "label",
];

/// Maps canonical field names to the column names of a concrete CSV export.
///
/// Only entries that differ from the canonical name need to be listed.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ColumnMapping(pub HashMap<String, String>);

impl ColumnMapping {
    fn source_column<'a>(&'a self, canonical: &'a str) -> &'a str {
        self.0.get(canonical).map(String::as_str).unwrap_or(canonical)
    }
}

/// One rejected input row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RejectedRow {
    /// 1-based line number in the source file (header is line 1).
    pub line: usize,
    pub reason: String,
}

/// Outcome of loading a flow CSV: per-row rejections with line numbers.
#[derive(Debug, Clone, Default)]
pub struct ValidationReport {
    pub rejected: Vec<RejectedRow>,
    pub accepted: usize,
}

impl ValidationReport {
    /// Plain-text report, one `line <n>: <reason>` entry per rejected row.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "accepted {} rows, rejected {} rows\n",
            self.accepted,
            self.rejected.len()
        );
        for r in &self.rejected {
            out.push_str(&format!("line {}: {}\n", r.line, r.reason));
        }
        out
    }
}

/// An ordered, validated collection of flow records.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub records: Vec<FlowRecord>,
    pub source_path: String,
    pub schema_version: String,
}

pub const SCHEMA_VERSION: &str = "flow-csv/v1";

/// Fraction of rows that may fail validation before the load is aborted.
pub const MAX_REJECT_FRACTION: f64 = 0.01;

impl Dataset {
    pub fn from_records(records: Vec<FlowRecord>, source: impl Into<String>) -> Self {
        Dataset {
            records,
            source_path: source.into(),
            schema_version: SCHEMA_VERSION.to_string(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Minimum and maximum `timestamp_start` over the dataset.
    pub fn time_range(&self) -> Option<(i64, i64)> {
        let min = self.records.iter().map(|r| r.timestamp_start).min()?;
        let max = self.records.iter().map(|r| r.timestamp_start).max()?;
        Some((min, max))
    }
}

struct FieldIndices {
    flow_id: Option<usize>,
    timestamp: usize,
    src_host: usize,
    dst_host: usize,
    src_port: Option<usize>,
    dst_port: Option<usize>,
    protocol: usize,
    bytes: usize,
    duration: usize,
    label: usize,
}

fn required(header: &csv::StringRecord, name: &str) -> Result<usize> {
    header
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| Error::MissingColumn(name.to_string()))
}

fn optional(header: &csv::StringRecord, name: &str) -> Option<usize> {
    header.iter().position(|h| h == name)
}

fn parse_row(record: &csv::StringRecord, idx: &FieldIndices, ordinal: u64) -> std::result::Result<FlowRecord, String> {
    let field = |i: usize, name: &str| -> std::result::Result<&str, String> {
        record.get(i).ok_or_else(|| format!("missing field `{name}`"))
    };
    let timestamp_start: i64 = field(idx.timestamp, "timestamp_start")?
        .trim()
        .parse()
        .map_err(|e| format!("timestamp_start: {e}"))?;
    let protocol = field(idx.protocol, "protocol")?.trim().to_string();
    if protocol.is_empty() {
        return Err("protocol: empty".into());
    }
    let bytes_total: i64 = field(idx.bytes, "bytes_total")?
        .trim()
        .parse()
        .map_err(|e| format!("bytes_total: {e}"))?;
    if bytes_total < 0 {
        return Err(format!("bytes_total: negative value {bytes_total}"));
    }
    let duration_ms: f64 = field(idx.duration, "duration_ms")?
        .trim()
        .parse()
        .map_err(|e| format!("duration_ms: {e}"))?;
    if !duration_ms.is_finite() || duration_ms < 0.0 {
        return Err(format!("duration_ms: invalid value {duration_ms}"));
    }
    let label: Label = field(idx.label, "label")?.parse()?;
    let parse_port = |i: Option<usize>, name: &str| -> std::result::Result<u16, String> {
        match i {
            None => Ok(0),
            Some(i) => {
                let raw = field(i, name)?.trim();
                if raw.is_empty() {
                    return Ok(0);
                }
                raw.parse::<u16>().map_err(|e| format!("{name}: {e}"))
            }
        }
    };
    let flow_id = match idx.flow_id {
        Some(i) => field(i, "flow_id")?
            .trim()
            .parse()
            .map_err(|e| format!("flow_id: {e}"))?,
        None => ordinal,
    };
    Ok(FlowRecord {
        flow_id,
        timestamp_start,
        src_host: field(idx.src_host, "src_host")?.trim().to_string(),
        dst_host: field(idx.dst_host, "dst_host")?.trim().to_string(),
        src_port: parse_port(idx.src_port, "src_port")?,
        dst_port: parse_port(idx.dst_port, "dst_port")?,
        protocol,
        bytes_total: bytes_total as u64,
        duration_ms,
        label,
    })
}

/// Parse a labeled flow CSV into a [`Dataset`].
///
/// Rows failing validation are skipped and reported with their line number;
/// the load aborts if more than [`MAX_REJECT_FRACTION`] of the data rows are
/// rejected. Duplicate `flow_id`s are rejected.
pub fn load_flows(path: impl AsRef<Path>, schema: &ColumnMapping) -> Result<(Dataset, ValidationReport)> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(detect_delimiter(path)?)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => Error::io(path, std::io::Error::other(e.to_string())),
            _ => Error::Csv(e),
        })?;

    let header = reader.headers()?.clone();
    let idx = FieldIndices {
        flow_id: optional(&header, schema.source_column("flow_id")),
        timestamp: required(&header, schema.source_column("timestamp_start"))?,
        src_host: required(&header, schema.source_column("src_host"))?,
        dst_host: required(&header, schema.source_column("dst_host"))?,
        src_port: optional(&header, schema.source_column("src_port")),
        dst_port: optional(&header, schema.source_column("dst_port")),
        protocol: required(&header, schema.source_column("protocol"))?,
        bytes: required(&header, schema.source_column("bytes_total"))?,
        duration: required(&header, schema.source_column("duration_ms"))?,
        label: required(&header, schema.source_column("label"))?,
    };

    let mut records = Vec::new();
    let mut report = ValidationReport::default();
    let mut seen_ids = std::collections::HashSet::new();
    let mut total = 0usize;
    for (row_no, row) in reader.records().enumerate() {
        total += 1;
        let line = row_no + 2; // 1-based, after the header line
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                report.rejected.push(RejectedRow {
                    line,
                    reason: e.to_string(),
                });
                continue;
            }
        };
        match parse_row(&row, &idx, row_no as u64) {
            Ok(rec) => {
                if !seen_ids.insert(rec.flow_id) {
                    report.rejected.push(RejectedRow {
                        line,
                        reason: format!("duplicate flow_id {}", rec.flow_id),
                    });
                    continue;
                }
                records.push(rec);
            }
            Err(reason) => report.rejected.push(RejectedRow { line, reason }),
        }
    }
    report.accepted = records.len();

    if total > 0 && report.rejected.len() as f64 > MAX_REJECT_FRACTION * total as f64 {
        let first = report
            .rejected
            .first()
            .map(|r| format!("line {}: {}", r.line, r.reason))
            .unwrap_or_default();
        return Err(Error::TooManyRejects {
            rejected: report.rejected.len(),
            total,
            limit: MAX_REJECT_FRACTION * 100.0,
            first,
        });
    }
    if records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok((
        Dataset::from_records(records, path.display().to_string()),
        report,
    ))
}

fn detect_delimiter(path: &Path) -> Result<u8> {
    // Header-line sniff: comma unless the first line is tab- or
    // semicolon-separated.
    let content = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let first = content.lines().next().unwrap_or("");
    for d in [b'\t', b';', b','] {
        if first.as_bytes().contains(&d) {
            return Ok(d);
        }
    }
    Ok(b',')
}

/// Write a dataset back to CSV with canonical column names.
///
/// `write_flows` followed by [`load_flows`] yields an identical record
/// sequence.
pub fn write_flows(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    writeln!(w, "{}", CANONICAL_FIELDS.join(",")).map_err(|e| Error::io(path, e))?;
    for r in &ds.records {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{}",
            r.flow_id,
            r.timestamp_start,
            r.src_host,
            r.dst_host,
            r.src_port,
            r.dst_port,
            r.protocol,
            r.bytes_total,
            r.duration_ms,
            r.label
        )
        .map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Split a dataset at a timestamp boundary into (train, test).
///
/// Train takes every record with `timestamp_start < boundary`, test the
/// remainder; relative order is preserved. The train partition must be
/// entirely benign since the model learns normal behaviour.
pub fn split_train_test(ds: &Dataset, boundary_ms: i64) -> Result<(Dataset, Dataset)> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for r in &ds.records {
        if r.timestamp_start < boundary_ms {
            train.push(r.clone());
        } else {
            test.push(r.clone());
        }
    }
    if train.is_empty() {
        return Err(Error::EmptyPartition("train"));
    }
    if test.is_empty() {
        return Err(Error::EmptyPartition("test"));
    }
    let bad = train.iter().filter(|r| r.label.is_malicious()).count();
    if bad > 0 {
        return Err(Error::MaliciousInTraining(bad));
    }
    Ok((
        Dataset::from_records(train, ds.source_path.clone()),
        Dataset::from_records(test, ds.source_path.clone()),
    ))
}
