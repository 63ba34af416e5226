//! Abbadingo-style trace exchange format.
//!
//! Header line `num_traces alphabet_size`, then one line per trace:
//! `label length sym_1 ... sym_n` with symbols as integer ids. A sidecar
//! file (same path plus `.symbols`) maps ids back to symbol strings, one
//! `id<TAB>symbol` line per symbol.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::flow::Label;

use super::SymbolicTrace;

/// Sidecar symbol-table path for a trace file.
pub fn symbol_table_path(trace_path: &Path) -> PathBuf {
    let mut os = trace_path.as_os_str().to_os_string();
    os.push(".symbols");
    PathBuf::from(os)
}

/// Write traces in Abbadingo format plus the symbol-table sidecar.
///
/// Ids are assigned by lexicographic symbol order, so the mapping is
/// stable for a given trace set.
pub fn export_traces(traces: &[SymbolicTrace], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if traces.is_empty() {
        return Err(Error::InvalidParameter(
            "refusing to export an empty trace list".into(),
        ));
    }
    let mut ids: BTreeMap<&str, usize> = BTreeMap::new();
    for t in traces {
        for s in &t.symbols {
            let next = ids.len();
            ids.entry(s).or_insert(next);
        }
    }
    // re-key by sorted order (BTreeMap iterates sorted; ids were handed
    // out in first-seen order, so renumber)
    let ids: BTreeMap<&str, usize> = ids
        .keys()
        .enumerate()
        .map(|(i, k)| (*k, i))
        .collect();

    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    writeln!(w, "{} {}", traces.len(), ids.len()).map_err(|e| Error::io(path, e))?;
    for t in traces {
        write!(
            w,
            "{} {}",
            if t.label.is_malicious() { 1 } else { 0 },
            t.symbols.len()
        )
        .map_err(|e| Error::io(path, e))?;
        for s in &t.symbols {
            write!(w, " {}", ids[s.as_str()]).map_err(|e| Error::io(path, e))?;
        }
        writeln!(w).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;

    let table = symbol_table_path(path);
    let file = File::create(&table).map_err(|e| Error::io(&table, e))?;
    let mut w = BufWriter::new(file);
    for (sym, id) in &ids {
        writeln!(w, "{id}\t{sym}").map_err(|e| Error::io(&table, e))?;
    }
    w.flush().map_err(|e| Error::io(&table, e))
}

/// Read an Abbadingo trace file and its symbol-table sidecar.
///
/// Only what the format carries is reconstructed: symbols, labels and
/// trace order. Provenance fields (group key, flow ids, timestamp) are
/// not part of the exchange format and come back empty.
pub fn import_traces(path: impl AsRef<Path>) -> Result<Vec<SymbolicTrace>> {
    let path = path.as_ref();
    let table_path = symbol_table_path(path);
    let table_text =
        std::fs::read_to_string(&table_path).map_err(|e| Error::io(&table_path, e))?;
    let mut symbols: BTreeMap<usize, String> = BTreeMap::new();
    for (i, line) in table_text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let (id, sym) = line.split_once('\t').ok_or_else(|| Error::TraceFormat {
            line: i + 1,
            reason: "symbol table line is not `id<TAB>symbol`".into(),
        })?;
        let id: usize = id.parse().map_err(|e| Error::TraceFormat {
            line: i + 1,
            reason: format!("bad symbol id: {e}"),
        })?;
        symbols.insert(id, sym.to_string());
    }

    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(Error::TraceFormat {
        line: 1,
        reason: "missing header".into(),
    })?;
    let mut parts = header.split_whitespace();
    let declared_traces: usize = parts
        .next()
        .and_then(|p| p.parse().ok())
        .ok_or(Error::TraceFormat {
            line: 1,
            reason: "header must be `num_traces alphabet_size`".into(),
        })?;
    let declared_alphabet: usize = parts
        .next()
        .and_then(|p| p.parse().ok())
        .ok_or(Error::TraceFormat {
            line: 1,
            reason: "header must be `num_traces alphabet_size`".into(),
        })?;
    if declared_alphabet != symbols.len() {
        return Err(Error::TraceFormat {
            line: 1,
            reason: format!(
                "header declares {declared_alphabet} symbols, table has {}",
                symbols.len()
            ),
        });
    }

    let mut traces = Vec::with_capacity(declared_traces);
    for (line_idx, line) in lines {
        let line_no = line_idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split_whitespace();
        let label = match fields.next() {
            Some("0") => Label::Benign,
            Some("1") => Label::Malicious,
            other => {
                return Err(Error::TraceFormat {
                    line: line_no,
                    reason: format!("bad label field {other:?}"),
                })
            }
        };
        let length: usize = fields
            .next()
            .and_then(|p| p.parse().ok())
            .ok_or(Error::TraceFormat {
                line: line_no,
                reason: "bad length field".into(),
            })?;
        let mut syms = Vec::with_capacity(length);
        for f in fields {
            let id: usize = f.parse().map_err(|e| Error::TraceFormat {
                line: line_no,
                reason: format!("bad symbol id: {e}"),
            })?;
            let sym = symbols.get(&id).ok_or(Error::TraceFormat {
                line: line_no,
                reason: format!("symbol id {id} not in table"),
            })?;
            syms.push(sym.clone());
        }
        if syms.len() != length {
            return Err(Error::TraceFormat {
                line: line_no,
                reason: format!("declared length {length}, found {} symbols", syms.len()),
            });
        }
        traces.push(SymbolicTrace {
            symbols: syms,
            group_key: String::new(),
            flow_ids: Vec::new(),
            label,
            first_timestamp: 0,
        });
    }
    if traces.len() != declared_traces {
        return Err(Error::TraceFormat {
            line: 1,
            reason: format!(
                "header declares {declared_traces} traces, found {}",
                traces.len()
            ),
        });
    }
    Ok(traces)
}
