//! Model persistence (JSON) and DOT graph export.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{Pdfa, StateData, StateId};

pub const MODEL_FORMAT: &str = "pdfa/v1";

#[derive(Debug, Serialize, Deserialize)]
struct TransitionDocument {
    symbol: String,
    target: StateId,
    count: u64,
    prob: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct StateDocument {
    id: StateId,
    state_count: u64,
    final_count: u64,
    final_prob: f64,
    transitions: Vec<TransitionDocument>,
}

/// On-disk model file: the automaton plus the fingerprint and a summary
/// of the config it was produced under.
#[derive(Debug, Serialize, Deserialize)]
struct ModelDocument {
    format: String,
    fingerprint: String,
    config: serde_json::Value,
    uses_final: bool,
    smoothing: Option<f64>,
    floor: Option<f64>,
    start: StateId,
    alphabet: Vec<String>,
    states: Vec<StateDocument>,
}

impl Pdfa {
    fn empirical_prob(&self, state: &StateData, count: u64) -> f64 {
        if self.is_estimated() {
            unreachable!("callers use symbol_prob when estimated")
        }
        let base = if self.uses_final() {
            state.state_count
        } else {
            state.outgoing_count()
        };
        if base == 0 {
            0.0
        } else {
            count as f64 / base as f64
        }
    }

    /// Serialize the canonicalized model to a JSON file.
    pub fn save_model(
        &self,
        path: impl AsRef<Path>,
        fingerprint: &str,
        config: serde_json::Value,
    ) -> Result<()> {
        let canon = self.canonicalize();
        let mut states = Vec::with_capacity(canon.states.len());
        for (id, s) in &canon.states {
            let transitions = s
                .transitions
                .iter()
                .map(|(sym, target)| {
                    let count = s.transition_counts.get(sym).copied().unwrap_or(0);
                    TransitionDocument {
                        symbol: canon.alphabet[*sym as usize].clone(),
                        target: *target,
                        count,
                        prob: if canon.is_estimated() {
                            canon.symbol_prob(*id, *sym)
                        } else {
                            canon.empirical_prob(s, count)
                        },
                    }
                })
                .collect();
            states.push(StateDocument {
                id: *id,
                state_count: s.state_count,
                final_count: s.final_count,
                final_prob: canon.final_prob(*id),
                transitions,
            });
        }
        let doc = ModelDocument {
            format: MODEL_FORMAT.to_string(),
            fingerprint: fingerprint.to_string(),
            config,
            uses_final: canon.uses_final,
            smoothing: canon.smoothing,
            floor: canon.floor,
            start: canon.start,
            alphabet: canon.alphabet.clone(),
            states,
        };
        let text = serde_json::to_string_pretty(&doc).map_err(|e| Error::ArtifactFormat {
            kind: "model",
            reason: e.to_string(),
        })?;
        std::fs::write(path.as_ref(), text + "\n").map_err(|e| Error::io(path.as_ref(), e))
    }

    /// Load a model file; returns the automaton, its fingerprint and the
    /// config summary it was saved with.
    pub fn load_model(path: impl AsRef<Path>) -> Result<(Pdfa, String, serde_json::Value)> {
        let text =
            std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
        let doc: ModelDocument = serde_json::from_str(&text).map_err(|e| Error::ArtifactFormat {
            kind: "model",
            reason: e.to_string(),
        })?;
        if doc.format != MODEL_FORMAT {
            return Err(Error::ArtifactFormat {
                kind: "model",
                reason: format!("unsupported format `{}`", doc.format),
            });
        }
        let symbol_ids: BTreeMap<String, u32> = doc
            .alphabet
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i as u32))
            .collect();
        let mut states: BTreeMap<StateId, StateData> = BTreeMap::new();
        for s in &doc.states {
            let mut data = StateData {
                state_count: s.state_count,
                final_count: s.final_count,
                ..StateData::default()
            };
            for t in &s.transitions {
                let sym = *symbol_ids
                    .get(&t.symbol)
                    .ok_or_else(|| Error::ArtifactFormat {
                        kind: "model",
                        reason: format!("transition symbol `{}` not in alphabet", t.symbol),
                    })?;
                data.transitions.insert(sym, t.target);
                data.transition_counts.insert(sym, t.count);
            }
            states.insert(s.id, data);
        }
        let next_state = states.keys().max().map(|m| m + 1).unwrap_or(1);
        let pdfa = Pdfa {
            alphabet: doc.alphabet,
            symbol_ids,
            states,
            start: doc.start,
            uses_final: doc.uses_final,
            smoothing: doc.smoothing,
            floor: doc.floor,
            next_state,
        };
        pdfa.validate()?;
        Ok((pdfa, doc.fingerprint, doc.config))
    }

    /// Emit the machine as a DOT graph: nodes carry the state id (and
    /// final probability when finals are in use), edges carry
    /// `symbol / probability (count)`.
    pub fn export_dot(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let mut emit = || -> std::io::Result<()> {
            writeln!(w, "digraph pdfa {{")?;
            writeln!(w, "  rankdir=LR;")?;
            writeln!(w, "  node [shape=circle];")?;
            for (id, s) in &self.states {
                if self.uses_final {
                    writeln!(
                        w,
                        "  q{id} [label=\"{id}\\nF={:.4}\"];",
                        self.final_prob(*id)
                    )?;
                } else {
                    writeln!(w, "  q{id} [label=\"{id}\\nn={}\"];", s.state_count)?;
                }
            }
            for (id, s) in &self.states {
                for (sym, target) in &s.transitions {
                    let count = s.transition_counts.get(sym).copied().unwrap_or(0);
                    let prob = if self.is_estimated() {
                        self.symbol_prob(*id, *sym)
                    } else {
                        self.empirical_prob(s, count)
                    };
                    writeln!(
                        w,
                        "  q{id} -> q{target} [label=\"{} / {prob:.4} ({count})\"];",
                        self.alphabet[*sym as usize]
                    )?;
                }
            }
            writeln!(w, "}}")?;
            w.flush()
        };
        emit().map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pdfa::PdfaBuilder;

    fn two_state_machine() -> Pdfa {
        let mut m = PdfaBuilder::new(&["a", "b"], false)
            .transition(0, "a", 1, 75)
            .transition(0, "b", 0, 25)
            .transition(1, "a", 1, 80)
            .transition(1, "b", 0, 20)
            .build();
        m.estimate_probs(0.0).unwrap();
        m
    }

    #[test]
    fn json_round_trip_preserves_scores() {
        let m = two_state_machine();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        m.save_model(&path, "fp123", serde_json::json!({"window": 4}))
            .unwrap();
        let (loaded, fp, config) = Pdfa::load_model(&path).unwrap();
        assert_eq!(fp, "fp123");
        assert_eq!(config["window"], 4);
        assert_eq!(loaded.state_count(), m.state_count());
        for seq in [vec!["a", "a", "a", "b"], vec!["b", "b"], vec!["a", "b"]] {
            let p1 = m.sequence_probability(&seq).unwrap().probability;
            let p2 = loaded.sequence_probability(&seq).unwrap().probability;
            assert!((p1 - p2).abs() < 1e-15);
        }
    }

    #[test]
    fn dot_export_lists_every_state_and_edge() {
        let m = two_state_machine();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.dot");
        m.export_dot(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.matches("label=\"a / ").count(), 2);
        assert_eq!(text.matches("label=\"b / ").count(), 2);
        // edge count equals |delta|
        let edges = text.lines().filter(|l| l.contains(" -> ")).count();
        assert_eq!(edges as u64, 4);
        assert!(text.contains("q0"));
        assert!(text.contains("q1"));
        assert!(text.contains("0.7500 (75)"));
    }

    #[test]
    fn model_file_is_byte_stable() {
        let m = two_state_machine();
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("m1.json");
        let p2 = dir.path().join("m2.json");
        m.save_model(&p1, "fp", serde_json::json!({})).unwrap();
        m.save_model(&p2, "fp", serde_json::json!({})).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }
}
