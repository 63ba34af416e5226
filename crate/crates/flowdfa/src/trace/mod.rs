//! Sorting, grouping and windowing encoded flows into symbolic traces.

mod abbadingo;

pub use abbadingo::{export_traces, import_traces, symbol_table_path};

use serde::{Deserialize, Serialize};

use crate::encode::{EncoderModel, EncoderScheme, FlowContext};
use crate::error::{Error, Result};
use crate::flow::{Dataset, FlowRecord, Label};

/// How flows are grouped before windowing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SortingLevel {
    /// Group by (src_host, dst_host, protocol). Ports are deliberately
    /// excluded so the grouping stays service-agnostic.
    Connection,
    SourceHost,
    DestinationHost,
    /// One global stream ordered by timestamp.
    Timestamp,
}

impl SortingLevel {
    pub const ALL: [SortingLevel; 4] = [
        SortingLevel::Connection,
        SortingLevel::SourceHost,
        SortingLevel::DestinationHost,
        SortingLevel::Timestamp,
    ];

    fn key_of(self, flow: &FlowRecord) -> String {
        match self {
            SortingLevel::Connection => {
                format!("{}|{}|{}", flow.src_host, flow.dst_host, flow.protocol)
            }
            SortingLevel::SourceHost => flow.src_host.clone(),
            SortingLevel::DestinationHost => flow.dst_host.clone(),
            SortingLevel::Timestamp => "global".to_string(),
        }
    }
}

impl std::fmt::Display for SortingLevel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SortingLevel::Connection => write!(f, "connection"),
            SortingLevel::SourceHost => write!(f, "source_host"),
            SortingLevel::DestinationHost => write!(f, "destination_host"),
            SortingLevel::Timestamp => write!(f, "timestamp"),
        }
    }
}

impl std::str::FromStr for SortingLevel {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "connection" => Ok(SortingLevel::Connection),
            "source_host" => Ok(SortingLevel::SourceHost),
            "destination_host" => Ok(SortingLevel::DestinationHost),
            "timestamp" => Ok(SortingLevel::Timestamp),
            other => Err(format!("unknown sorting level `{other}`")),
        }
    }
}

/// A fixed-length window of symbols with provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymbolicTrace {
    pub symbols: Vec<String>,
    pub group_key: String,
    /// Flow ids of the member flows, in window order.
    pub flow_ids: Vec<u64>,
    /// Malicious iff any member flow is malicious.
    pub label: Label,
    pub first_timestamp: i64,
}

/// Group flows by the sorting level and sort each group by timestamp
/// (ties broken by flow_id). Groups come back in key order.
pub fn group_flows(ds: &Dataset, level: SortingLevel) -> Vec<(String, Vec<&FlowRecord>)> {
    let mut groups: std::collections::BTreeMap<String, Vec<&FlowRecord>> =
        std::collections::BTreeMap::new();
    for flow in &ds.records {
        groups.entry(level.key_of(flow)).or_default().push(flow);
    }
    let mut out: Vec<(String, Vec<&FlowRecord>)> = groups.into_iter().collect();
    for (_, flows) in &mut out {
        flows.sort_by_key(|f| (f.timestamp_start, f.flow_id));
    }
    out
}

/// Cut each sorted group into windows of length `window` every `stride`
/// flows. Groups shorter than the window yield no trace; if that leaves
/// nothing, the error carries a per-group length report.
pub fn build_traces(
    ds: &Dataset,
    model: &EncoderModel,
    level: SortingLevel,
    window: usize,
    stride: usize,
) -> Result<Vec<SymbolicTrace>> {
    if window < 1 || stride < 1 {
        return Err(Error::InvalidParameter(format!(
            "window and stride must be >= 1 (got window={window}, stride={stride})"
        )));
    }
    if model.scheme == EncoderScheme::ContextualFrequency {
        match model.sorting_level {
            Some(fitted) if fitted == level => {}
            Some(fitted) => {
                return Err(Error::SortingLevelMismatch {
                    fitted: fitted.to_string(),
                    requested: level.to_string(),
                })
            }
            None => {
                return Err(Error::SortingLevelMismatch {
                    fitted: "none".to_string(),
                    requested: level.to_string(),
                })
            }
        }
    }

    let groups = group_flows(ds, level);
    let mut traces = Vec::new();
    let mut lengths = Vec::new();
    for (key, flows) in &groups {
        lengths.push(format!("{key}:{}", flows.len()));
        if flows.len() < window {
            continue;
        }
        let symbols: Vec<String> = flows
            .iter()
            .enumerate()
            .map(|(i, f)| {
                let prev = if i > 0 { Some(flows[i - 1]) } else { None };
                let next = flows.get(i + 1).copied();
                model.encode_flow(f, &FlowContext::from_neighbors(prev, next))
            })
            .collect();
        let mut start = 0;
        while start + window <= flows.len() {
            let members = &flows[start..start + window];
            traces.push(SymbolicTrace {
                symbols: symbols[start..start + window].to_vec(),
                group_key: key.clone(),
                flow_ids: members.iter().map(|f| f.flow_id).collect(),
                label: if members.iter().any(|f| f.label.is_malicious()) {
                    Label::Malicious
                } else {
                    Label::Benign
                },
                first_timestamp: members[0].timestamp_start,
            });
            start += stride;
        }
    }
    if traces.is_empty() {
        let mut report = lengths.join(", ");
        if report.len() > 500 {
            report.truncate(500);
            report.push_str("...");
        }
        return Err(Error::NoTraces { window, report });
    }
    Ok(traces)
}
