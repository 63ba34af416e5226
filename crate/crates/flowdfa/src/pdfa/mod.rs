//! Probabilistic deterministic finite automata: the model structure, PTA
//! construction from traces, probability estimation and sequence scoring.

mod io;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace::SymbolicTrace;

pub type StateId = u32;
pub type SymbolId = u32;

/// Per-state structure: deterministic successors plus empirical counts.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StateData {
    /// At most one successor per symbol (determinism is structural).
    pub transitions: BTreeMap<SymbolId, StateId>,
    pub transition_counts: BTreeMap<SymbolId, u64>,
    /// Number of training sequences whose prefix reaches this state.
    pub state_count: u64,
    /// Number of training sequences ending at this state.
    pub final_count: u64,
}

impl StateData {
    pub fn outgoing_count(&self) -> u64 {
        self.transition_counts.values().sum()
    }
}

/// A probabilistic deterministic finite automaton.
///
/// Holds the alphabet, the deterministic transition structure and the
/// empirical counts; probabilities are derived from the counts after
/// [`Pdfa::estimate_probs`]. With `uses_final` the per-state final mass
/// joins the distribution, otherwise the machine models fixed-length
/// sequences and normalizes over outgoing mass only.
///
/// Immutable after estimation as far as scoring is concerned; scoring is
/// a pure read so concurrent readers are safe.
#[derive(Debug, Clone, PartialEq)]
pub struct Pdfa {
    alphabet: Vec<String>,
    symbol_ids: BTreeMap<String, SymbolId>,
    states: BTreeMap<StateId, StateData>,
    start: StateId,
    uses_final: bool,
    smoothing: Option<f64>,
    floor: Option<f64>,
    next_state: StateId,
}

/// Score of one sequence under a PDFA.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SequenceScore {
    pub probability: f64,
    pub log_probability: f64,
}

impl Pdfa {
    /// Empty machine over a fixed alphabet (root state only).
    pub fn new(alphabet: Vec<String>, uses_final: bool) -> Self {
        let symbol_ids = alphabet
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i as SymbolId))
            .collect();
        let mut states = BTreeMap::new();
        states.insert(0, StateData::default());
        Pdfa {
            alphabet,
            symbol_ids,
            states,
            start: 0,
            uses_final,
            smoothing: None,
            floor: None,
            next_state: 1,
        }
    }

    pub fn start(&self) -> StateId {
        self.start
    }

    pub fn uses_final(&self) -> bool {
        self.uses_final
    }

    pub fn alphabet(&self) -> &[String] {
        &self.alphabet
    }

    pub fn symbol_id(&self, symbol: &str) -> Option<SymbolId> {
        self.symbol_ids.get(symbol).copied()
    }

    pub fn state_count(&self) -> usize {
        self.states.len()
    }

    pub fn state(&self, id: StateId) -> Option<&StateData> {
        self.states.get(&id)
    }

    pub fn states(&self) -> impl Iterator<Item = (StateId, &StateData)> {
        self.states.iter().map(|(id, s)| (*id, s))
    }

    pub(crate) fn state_mut(&mut self, id: StateId) -> Result<&mut StateData> {
        self.states.get_mut(&id).ok_or(Error::NoSuchState(id))
    }

    pub(crate) fn remove_state(&mut self, id: StateId) {
        self.states.remove(&id);
    }

    pub(crate) fn add_state(&mut self) -> StateId {
        let id = self.next_state;
        self.next_state += 1;
        self.states.insert(id, StateData::default());
        id
    }

    pub fn successor(&self, state: StateId, symbol: SymbolId) -> Option<StateId> {
        self.states.get(&state)?.transitions.get(&symbol).copied()
    }

    /// Total transition-count mass over the whole machine (conserved by
    /// merging).
    pub fn total_transition_count(&self) -> u64 {
        self.states.values().map(StateData::outgoing_count).sum()
    }

    pub fn is_estimated(&self) -> bool {
        self.smoothing.is_some()
    }

    pub fn smoothing(&self) -> Option<f64> {
        self.smoothing
    }

    /// Floor probability for out-of-alphabet or zero-mass steps.
    pub fn floor(&self) -> Option<f64> {
        self.floor
    }

    /// Derive probabilities from counts with additive smoothing.
    ///
    /// For every state and every alphabet symbol:
    /// `S(q,a) = (count(q,a) + α) / (base(q) + α·(|Σ| + [uses_final]))`
    /// where `base(q)` is the state count when final probabilities are in
    /// use and the outgoing count otherwise — the latter keeps fixed-length
    /// models normalized even for states that also absorb trace ends.
    /// `F(q)` is estimated analogously from the final count.
    ///
    /// Also fixes the floor `ε = 1 / (max state count + |Σ| + 1)` used for
    /// steps the model has no mass for.
    pub fn estimate_probs(&mut self, smoothing: f64) -> Result<()> {
        if smoothing < 0.0 || !smoothing.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "smoothing must be a finite non-negative value, got {smoothing}"
            )));
        }
        let max_count = self.states.values().map(|s| s.state_count).max().unwrap_or(0);
        self.floor = Some(1.0 / (max_count as f64 + self.alphabet.len() as f64 + 1.0));
        self.smoothing = Some(smoothing);
        Ok(())
    }

    fn denominator(&self, state: &StateData) -> f64 {
        let alpha = self.smoothing.unwrap_or(0.0);
        let base = if self.uses_final {
            state.state_count
        } else {
            state.outgoing_count()
        };
        let slots = self.alphabet.len() as f64 + if self.uses_final { 1.0 } else { 0.0 };
        base as f64 + alpha * slots
    }

    /// Smoothed symbol probability `S(q,a)`; 0 when the state carries no
    /// mass at all.
    pub fn symbol_prob(&self, state: StateId, symbol: SymbolId) -> f64 {
        let Some(s) = self.states.get(&state) else {
            return 0.0;
        };
        let alpha = self.smoothing.unwrap_or(0.0);
        let denom = self.denominator(s);
        if denom <= 0.0 {
            return 0.0;
        }
        let count = s.transition_counts.get(&symbol).copied().unwrap_or(0);
        (count as f64 + alpha) / denom
    }

    /// Smoothed final probability `F(q)`; 0 when finals are disabled.
    pub fn final_prob(&self, state: StateId) -> f64 {
        if !self.uses_final {
            return 0.0;
        }
        let Some(s) = self.states.get(&state) else {
            return 0.0;
        };
        let alpha = self.smoothing.unwrap_or(0.0);
        let denom = self.denominator(s);
        if denom <= 0.0 {
            return 0.0;
        }
        (s.final_count as f64 + alpha) / denom
    }

    /// Probability (and log-probability) of a symbol sequence.
    ///
    /// The walk is total: in-alphabet steps consume the smoothed `S(q,a)`
    /// and follow the transition when it exists (resetting to the root
    /// when it does not); out-of-alphabet symbols and zero-mass steps
    /// consume the floor `ε` and reset to the root. With `uses_final` the
    /// final probability of the last state is multiplied in.
    pub fn sequence_probability<S: AsRef<str>>(&self, symbols: &[S]) -> Result<SequenceScore> {
        if !self.is_estimated() {
            return Err(Error::NotEstimated);
        }
        let floor = self.floor.unwrap();
        let mut probability = 1.0f64;
        let mut log_probability = 0.0f64;
        let mut state = self.start;
        for sym in symbols {
            let step = match self.symbol_ids.get(sym.as_ref()) {
                Some(&a) => {
                    let p = self.symbol_prob(state, a);
                    if p > 0.0 {
                        state = self.successor(state, a).unwrap_or(self.start);
                        p
                    } else {
                        state = self.start;
                        floor
                    }
                }
                None => {
                    state = self.start;
                    floor
                }
            };
            probability *= step;
            log_probability += step.ln();
        }
        if self.uses_final {
            let f = self.final_prob(state);
            let step = if f > 0.0 { f } else { floor };
            probability *= step;
            log_probability += step.ln();
        }
        Ok(SequenceScore {
            probability,
            log_probability,
        })
    }

    /// Structural and count invariants: reachability, dangling targets,
    /// `state_count = final_count + Σ transition_counts` per state.
    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::BTreeSet::new();
        let mut stack = vec![self.start];
        while let Some(q) = stack.pop() {
            if !seen.insert(q) {
                continue;
            }
            let s = self.states.get(&q).ok_or(Error::NoSuchState(q))?;
            for (&sym, &t) in &s.transitions {
                if !self.states.contains_key(&t) {
                    return Err(Error::ArtifactFormat {
                        kind: "pdfa",
                        reason: format!("transition ({q}, {sym}) targets missing state {t}"),
                    });
                }
                stack.push(t);
            }
        }
        if seen.len() != self.states.len() {
            return Err(Error::ArtifactFormat {
                kind: "pdfa",
                reason: format!(
                    "{} of {} states unreachable from the root",
                    self.states.len() - seen.len(),
                    self.states.len()
                ),
            });
        }
        for (id, s) in &self.states {
            if s.state_count != s.final_count + s.outgoing_count() {
                return Err(Error::ArtifactFormat {
                    kind: "pdfa",
                    reason: format!(
                        "state {id}: state_count {} != final {} + outgoing {}",
                        s.state_count,
                        s.final_count,
                        s.outgoing_count()
                    ),
                });
            }
            for sym in s.transitions.keys() {
                if *sym as usize >= self.alphabet.len() {
                    return Err(Error::ArtifactFormat {
                        kind: "pdfa",
                        reason: format!("state {id}: symbol id {sym} outside alphabet"),
                    });
                }
            }
        }
        Ok(())
    }

    /// Renumber states breadth-first from the root (edges in symbol order)
    /// so structurally identical machines serialize identically.
    pub fn canonicalize(&self) -> Pdfa {
        let mut mapping: BTreeMap<StateId, StateId> = BTreeMap::new();
        let mut queue = std::collections::VecDeque::from([self.start]);
        while let Some(q) = queue.pop_front() {
            if mapping.contains_key(&q) {
                continue;
            }
            let new_id = mapping.len() as StateId;
            mapping.insert(q, new_id);
            if let Some(s) = self.states.get(&q) {
                for t in s.transitions.values() {
                    if !mapping.contains_key(t) {
                        queue.push_back(*t);
                    }
                }
            }
        }
        let mut states = BTreeMap::new();
        for (old, new) in &mapping {
            let s = &self.states[old];
            states.insert(
                *new,
                StateData {
                    transitions: s
                        .transitions
                        .iter()
                        .map(|(sym, t)| (*sym, mapping[t]))
                        .collect(),
                    transition_counts: s.transition_counts.clone(),
                    state_count: s.state_count,
                    final_count: s.final_count,
                },
            );
        }
        Pdfa {
            alphabet: self.alphabet.clone(),
            symbol_ids: self.symbol_ids.clone(),
            states,
            start: 0,
            uses_final: self.uses_final,
            smoothing: self.smoothing,
            floor: self.floor,
            next_state: mapping.len() as StateId,
        }
    }
}

/// A PDFA whose transition graph is a tree rooted at the start state,
/// with exact empirical counts from the training traces.
#[derive(Debug, Clone, PartialEq)]
pub struct Pta(Pdfa);

impl Pta {
    /// Build the prefix tree over benign training traces.
    ///
    /// Every trace contributes one root path; each edge count is the
    /// number of traces passing through that edge.
    pub fn build(traces: &[SymbolicTrace], uses_final: bool) -> Result<Pta> {
        if traces.is_empty() {
            return Err(Error::InvalidParameter(
                "cannot build a prefix tree from zero traces".into(),
            ));
        }
        if let Some(bad) = traces.iter().position(|t| t.label.is_malicious()) {
            return Err(Error::MaliciousTrace(bad));
        }
        let alphabet: std::collections::BTreeSet<String> = traces
            .iter()
            .flat_map(|t| t.symbols.iter().cloned())
            .collect();
        let mut pdfa = Pdfa::new(alphabet.into_iter().collect(), uses_final);
        for trace in traces {
            let mut q = pdfa.start;
            pdfa.state_mut(q)?.state_count += 1;
            for sym in &trace.symbols {
                let a = pdfa.symbol_id(sym).expect("symbol from alphabet");
                let next = match pdfa.successor(q, a) {
                    Some(n) => n,
                    None => {
                        let n = pdfa.add_state();
                        pdfa.state_mut(q)?.transitions.insert(a, n);
                        n
                    }
                };
                *pdfa.state_mut(q)?.transition_counts.entry(a).or_insert(0) += 1;
                pdfa.state_mut(next)?.state_count += 1;
                q = next;
            }
            pdfa.state_mut(q)?.final_count += 1;
        }
        Ok(Pta(pdfa))
    }

    pub fn as_pdfa(&self) -> &Pdfa {
        &self.0
    }

    pub fn into_pdfa(self) -> Pdfa {
        self.0
    }

    pub fn state_count(&self) -> usize {
        self.0.state_count()
    }
}

/// Test-support constructor for hand-built machines: states are created
/// on demand, counts set directly.
#[derive(Debug)]
pub struct PdfaBuilder {
    pdfa: Pdfa,
}

impl PdfaBuilder {
    pub fn new(alphabet: &[&str], uses_final: bool) -> Self {
        PdfaBuilder {
            pdfa: Pdfa::new(alphabet.iter().map(|s| s.to_string()).collect(), uses_final),
        }
    }

    /// Ensure states 0..=id exist.
    fn ensure(&mut self, id: StateId) {
        while self.pdfa.next_state <= id {
            self.pdfa.add_state();
        }
    }

    pub fn transition(mut self, from: StateId, symbol: &str, to: StateId, count: u64) -> Self {
        self.ensure(from.max(to));
        let a = self.pdfa.symbol_id(symbol).expect("symbol in alphabet");
        let s = self.pdfa.state_mut(from).unwrap();
        s.transitions.insert(a, to);
        *s.transition_counts.entry(a).or_insert(0) += count;
        self
    }

    pub fn final_count(mut self, state: StateId, count: u64) -> Self {
        self.ensure(state);
        self.pdfa.state_mut(state).unwrap().final_count += count;
        self
    }

    /// Derive state counts from the edge/final counts and finish.
    pub fn build(mut self) -> Pdfa {
        let ids: Vec<StateId> = self.pdfa.states.keys().copied().collect();
        for id in ids {
            let s = &self.pdfa.states[&id];
            self.pdfa.state_mut(id).unwrap().state_count = s.final_count + s.outgoing_count();
        }
        self.pdfa
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::Label;

    fn trace(symbols: &[&str]) -> SymbolicTrace {
        SymbolicTrace {
            symbols: symbols.iter().map(|s| s.to_string()).collect(),
            group_key: "g".into(),
            flow_ids: vec![],
            label: Label::Benign,
            first_timestamp: 0,
        }
    }

    /// The probabilistic machine from the worked multiplication
    /// 0.75 · 0.80 · 0.80 · 0.20 = 0.096 for the sequence `aaab`:
    /// root takes `a` with 0.75, the next state loops on `a` with 0.80
    /// and returns to the root on `b` with 0.20.
    pub(crate) fn worked_example_machine() -> Pdfa {
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
    fn worked_example_probability() {
        let m = worked_example_machine();
        let score = m.sequence_probability(&["a", "a", "a", "b"]).unwrap();
        assert!((score.probability - 0.096).abs() < 1e-12);
        assert!((score.log_probability - 0.096f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn pta_counts_match_prefix_oracle() {
        // traces {ab, ab, ac}: root count 3, edge a count 3, then b:2, c:1
        let traces = vec![trace(&["a", "b"]), trace(&["a", "b"]), trace(&["a", "c"])];
        let pta = Pta::build(&traces, false).unwrap();
        let m = pta.as_pdfa();
        assert_eq!(m.state(0).unwrap().state_count, 3);
        let a = m.symbol_id("a").unwrap();
        let b = m.symbol_id("b").unwrap();
        let c = m.symbol_id("c").unwrap();
        assert_eq!(m.state(0).unwrap().transition_counts[&a], 3);
        let qa = m.successor(0, a).unwrap();
        assert_eq!(m.state(qa).unwrap().transition_counts[&b], 2);
        assert_eq!(m.state(qa).unwrap().transition_counts[&c], 1);
        m.validate().unwrap();
    }

    #[test]
    fn single_trace_gives_a_path_pta() {
        let pta = Pta::build(&[trace(&["x", "y", "z"])], false).unwrap();
        assert_eq!(pta.state_count(), 4);
    }

    #[test]
    fn malicious_training_trace_is_rejected() {
        let mut t = trace(&["a"]);
        t.label = Label::Malicious;
        assert!(matches!(
            Pta::build(&[t], false),
            Err(Error::MaliciousTrace(0))
        ));
    }

    #[test]
    fn maximum_likelihood_estimation() {
        // counts {a:8, b:2}, no finals, alpha 0 -> S = {0.8, 0.2}
        let mut m = PdfaBuilder::new(&["a", "b"], false)
            .transition(0, "a", 1, 8)
            .transition(0, "b", 2, 2)
            .build();
        m.estimate_probs(0.0).unwrap();
        let a = m.symbol_id("a").unwrap();
        let b = m.symbol_id("b").unwrap();
        assert_eq!(m.symbol_prob(0, a), 0.8);
        assert_eq!(m.symbol_prob(0, b), 0.2);
    }

    #[test]
    fn add_one_smoothing_matches_arithmetic() {
        // alpha=1, |Σ|=2, counts {a:8, b:2}, no finals:
        // S(a) = 9/12 = 0.75, S(b) = 3/12 = 0.25
        let mut m = PdfaBuilder::new(&["a", "b"], false)
            .transition(0, "a", 1, 8)
            .transition(0, "b", 2, 2)
            .build();
        m.estimate_probs(1.0).unwrap();
        let a = m.symbol_id("a").unwrap();
        let b = m.symbol_id("b").unwrap();
        assert!((m.symbol_prob(0, a) - 0.75).abs() < 1e-15);
        assert!((m.symbol_prob(0, b) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn zero_count_state_smooths_to_uniform() {
        let mut m = PdfaBuilder::new(&["a", "b"], false).build();
        m.estimate_probs(1.0).unwrap();
        let a = m.symbol_id("a").unwrap();
        let b = m.symbol_id("b").unwrap();
        assert_eq!(m.symbol_prob(0, a), 0.5);
        assert_eq!(m.symbol_prob(0, b), 0.5);
    }

    #[test]
    fn empty_sequence_with_finals_returns_root_final_prob() {
        let mut m = PdfaBuilder::new(&["a"], true)
            .transition(0, "a", 1, 3)
            .final_count(0, 1)
            .final_count(1, 3)
            .build();
        m.estimate_probs(0.0).unwrap();
        let empty: [&str; 0] = [];
        let score = m.sequence_probability(&empty).unwrap();
        assert!((score.probability - 0.25).abs() < 1e-15);
    }

    #[test]
    fn unseen_symbol_contributes_exactly_one_floor_factor() {
        let m = worked_example_machine();
        let floor = m.floor().unwrap();
        // trace through the floor rule by hand: a (0.75), ? (ε, reset),
        // a (0.75)
        let score = m.sequence_probability(&["a", "?", "a"]).unwrap();
        let expected = 0.75 * floor * 0.75;
        assert!((score.probability - expected).abs() < 1e-15);
    }

    #[test]
    fn missing_transition_resets_to_root() {
        // alpha > 0 gives mass to unobserved symbols; the walk resets
        let mut m = PdfaBuilder::new(&["a", "b"], false)
            .transition(0, "a", 1, 10)
            .transition(1, "b", 0, 10)
            .build();
        m.estimate_probs(1.0).unwrap();
        // state 0 has no edge on b: step consumes smoothed S(0,b) and
        // resets, so the next `a` is scored from the root again
        let s = m.sequence_probability(&["b", "a"]).unwrap();
        let expected = (1.0 / 12.0) * (11.0 / 12.0);
        assert!((s.probability - expected).abs() < 1e-15);
    }

    #[test]
    fn scoring_requires_estimation() {
        let m = PdfaBuilder::new(&["a"], false).transition(0, "a", 0, 1).build();
        assert!(matches!(
            m.sequence_probability(&["a"]),
            Err(Error::NotEstimated)
        ));
    }

    #[test]
    fn canonicalize_is_structure_preserving() {
        let traces = vec![trace(&["b", "a"]), trace(&["a", "b"]), trace(&["a", "a"])];
        let mut m = Pta::build(&traces, false).unwrap().into_pdfa();
        m.estimate_probs(1.0).unwrap();
        let c = m.canonicalize();
        c.validate().unwrap();
        assert_eq!(c.state_count(), m.state_count());
        assert_eq!(c.total_transition_count(), m.total_transition_count());
        for syms in [["a", "b"], ["b", "a"], ["a", "a"], ["b", "b"]] {
            let p1 = m.sequence_probability(&syms).unwrap().probability;
            let p2 = c.sequence_probability(&syms).unwrap().probability;
            assert!((p1 - p2).abs() < 1e-15);
        }
    }
}
