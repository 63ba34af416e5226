//! Red-blue state merging: learn a compact PDFA from a prefix tree under
//! a Hoeffding-bound similarity test.
//!
//! The root starts red; blue states are the non-red successors of red
//! states. Each round takes the blue state with the most evidence, scores
//! a merge against every red state, performs the best passing merge (with
//! a recursive fold that restores determinism) or promotes the blue state
//! to red when none passes. The loop terminates when no blue state
//! remains.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pdfa::{Pdfa, Pta, StateId};

/// Learner parameters.
///
/// `significance` drives the Hoeffding bound
/// `sqrt(ln(2/α)/2) · (1/√n_red + 1/√n_blue)`: a pair is rejected when
/// any empirical frequency differs by more than the bound. Setting
/// `significance` to exactly 0 is the strict limit that rejects every
/// statistical merge (useful to recover the PTA itself).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeConfig {
    /// Hoeffding significance α ∈ [0, 1); 0 is the reject-everything limit.
    pub significance: f64,
    /// States with fewer sequences than this auto-accept (insufficient
    /// evidence for a statistical decision).
    pub min_count: u64,
    /// Cap on learner rounds; exceeded runs return best-so-far.
    pub max_iterations: usize,
    /// Additive smoothing applied by the final probability estimation.
    pub smoothing: f64,
    pub seed: u64,
}

impl Default for MergeConfig {
    fn default() -> Self {
        MergeConfig {
            significance: 0.05,
            min_count: 10,
            max_iterations: 1_000_000,
            smoothing: 1.0,
            seed: 0,
        }
    }
}

impl MergeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.significance) {
            return Err(Error::InvalidParameter(format!(
                "merge significance must be in [0, 1), got {}",
                self.significance
            )));
        }
        if self.min_count < 1 {
            return Err(Error::InvalidParameter(
                "merge min_count must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// One learner decision, in order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum MergeDecision {
    Merge {
        red: StateId,
        blue: StateId,
        score: usize,
    },
    Promote {
        blue: StateId,
    },
}

/// Ordered log of learner decisions; replaying the accepted merges on the
/// original PTA reproduces the final machine exactly.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MergeTrace {
    pub decisions: Vec<MergeDecision>,
    /// True when the iteration cap stopped the loop early.
    pub truncated: bool,
}

impl MergeTrace {
    pub fn merges(&self) -> impl Iterator<Item = (StateId, StateId)> + '_ {
        self.decisions.iter().filter_map(|d| match d {
            MergeDecision::Merge { red, blue, .. } => Some((*red, *blue)),
            MergeDecision::Promote { .. } => None,
        })
    }

    /// Line-oriented audit text: `merge <red> <blue> score=<n>` or
    /// `promote <blue>`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for d in &self.decisions {
            match d {
                MergeDecision::Merge { red, blue, score } => {
                    out.push_str(&format!("merge {red} {blue} score={score}\n"));
                }
                MergeDecision::Promote { blue } => {
                    out.push_str(&format!("promote {blue}\n"));
                }
            }
        }
        if self.truncated {
            out.push_str("truncated\n");
        }
        out
    }
}

/// Hoeffding similarity of two states, applied recursively to the
/// successor pairs the merge would fold together.
///
/// Returns the number of state pairs the merge would unify (larger is
/// better evidence) or `None` when any pair's empirical next-symbol (or
/// final) frequencies differ by more than the bound. Pairs where either
/// side has fewer than `min_count` sequences auto-accept.
pub fn similarity_test(
    m: &Pdfa,
    red: StateId,
    blue: StateId,
    cfg: &MergeConfig,
) -> Option<usize> {
    fn compatible(m: &Pdfa, red: StateId, blue: StateId, cfg: &MergeConfig, pairs: &mut usize) -> bool {
        *pairs += 1;
        let r = m.state(red).expect("red state exists");
        let b = m.state(blue).expect("blue state exists");
        let n_red = r.state_count;
        let n_blue = b.state_count;
        if n_red >= cfg.min_count && n_blue >= cfg.min_count {
            if cfg.significance == 0.0 {
                return false;
            }
            let bound = (2.0 / cfg.significance).ln().sqrt() / 2f64.sqrt()
                * (1.0 / (n_red as f64).sqrt() + 1.0 / (n_blue as f64).sqrt());
            let freq = |count: u64, n: u64| count as f64 / n as f64;
            // union of outgoing symbols on both sides
            let symbols: BTreeSet<u32> = r
                .transition_counts
                .keys()
                .chain(b.transition_counts.keys())
                .copied()
                .collect();
            for a in symbols {
                let fr = freq(r.transition_counts.get(&a).copied().unwrap_or(0), n_red);
                let fb = freq(b.transition_counts.get(&a).copied().unwrap_or(0), n_blue);
                if (fr - fb).abs() > bound {
                    return false;
                }
            }
            if m.uses_final() {
                let fr = freq(r.final_count, n_red);
                let fb = freq(b.final_count, n_blue);
                if (fr - fb).abs() > bound {
                    return false;
                }
            }
        }
        // successor pairs induced by the merge
        let common: Vec<u32> = r
            .transitions
            .keys()
            .filter(|a| b.transitions.contains_key(a))
            .copied()
            .collect();
        for a in common {
            let nr = m.successor(red, a).expect("common symbol");
            let nb = m.successor(blue, a).expect("common symbol");
            if nr != nb && !compatible(m, nr, nb, cfg, pairs) {
                return false;
            }
        }
        true
    }

    let mut pairs = 0;
    if m.state(red).is_none() || m.state(blue).is_none() {
        return None;
    }
    if compatible(m, red, blue, cfg, &mut pairs) {
        Some(pairs)
    } else {
        None
    }
}

/// Merge `blue` into `red` and restore determinism by recursively folding
/// conflicting successors. Counts are summed, so total transition mass is
/// conserved.
///
/// The states below `blue` must form a tree (true for every blue frontier
/// state during learning); `blue` must not be able to reach `red`, which
/// the cycle guard checks up front.
pub fn merge_and_fold(m: &mut Pdfa, red: StateId, blue: StateId) -> Result<()> {
    if m.state(red).is_none() {
        return Err(Error::NoSuchState(red));
    }
    if m.state(blue).is_none() {
        return Err(Error::NoSuchState(blue));
    }
    if red == blue {
        return Err(Error::MergeCycle { red, blue });
    }
    // guard: if red sits inside blue's subtree the fold would chase its
    // own tail
    let mut stack = vec![blue];
    let mut seen = BTreeSet::new();
    while let Some(q) = stack.pop() {
        if !seen.insert(q) {
            continue;
        }
        if q == red {
            return Err(Error::MergeCycle { red, blue });
        }
        if let Some(s) = m.state(q) {
            stack.extend(s.transitions.values().copied());
        }
    }

    // redirect every incoming edge of blue to red
    let sources: Vec<(StateId, u32)> = m
        .states()
        .flat_map(|(id, s)| {
            s.transitions
                .iter()
                .filter(|(_, t)| **t == blue)
                .map(move |(a, _)| (id, *a))
                .collect::<Vec<_>>()
        })
        .collect();
    for (from, a) in sources {
        m.state_mut(from)?.transitions.insert(a, red);
    }

    fold(m, red, blue)
}

fn fold(m: &mut Pdfa, target: StateId, source: StateId) -> Result<()> {
    let src = m.state(source).ok_or(Error::NoSuchState(source))?.clone();
    {
        let dst = m.state_mut(target)?;
        dst.state_count += src.state_count;
        dst.final_count += src.final_count;
    }
    for (a, source_child) in src.transitions {
        let count = src.transition_counts.get(&a).copied().unwrap_or(0);
        match m.successor(target, a) {
            Some(target_child) => {
                *m.state_mut(target)?.transition_counts.entry(a).or_insert(0) += count;
                if target_child != source_child {
                    fold(m, target_child, source_child)?;
                }
            }
            None => {
                let dst = m.state_mut(target)?;
                dst.transitions.insert(a, source_child);
                *dst.transition_counts.entry(a).or_insert(0) += count;
            }
        }
    }
    m.remove_state(source);
    Ok(())
}

/// Learn a compact PDFA from a prefix tree.
///
/// Returns the estimated machine and the decision log.
pub fn learn(pta: Pta, cfg: &MergeConfig) -> Result<(Pdfa, MergeTrace)> {
    cfg.validate()?;
    let mut m = pta.into_pdfa();
    let mut red: BTreeSet<StateId> = BTreeSet::from([m.start()]);
    let mut trace = MergeTrace::default();

    for _round in 0.. {
        if trace.decisions.len() >= cfg.max_iterations {
            log::warn!(
                "merge learner hit the iteration cap ({}); returning best-so-far",
                cfg.max_iterations
            );
            trace.truncated = true;
            break;
        }
        // blue frontier: non-red successors of red states
        let mut blues: BTreeSet<StateId> = BTreeSet::new();
        for r in &red {
            if let Some(s) = m.state(*r) {
                blues.extend(s.transitions.values().filter(|t| !red.contains(t)));
            }
        }
        let Some(blue) = blues
            .into_iter()
            .max_by_key(|b| (m.state(*b).map(|s| s.state_count).unwrap_or(0), std::cmp::Reverse(*b)))
        else {
            break;
        };

        // evidence-driven choice: highest score, then most red evidence,
        // then lowest red id
        let mut best: Option<(usize, u64, StateId)> = None;
        for r in &red {
            if let Some(score) = similarity_test(&m, *r, blue, cfg) {
                let evidence = m.state(*r).map(|s| s.state_count).unwrap_or(0);
                let candidate = (score, evidence, *r);
                best = Some(match best {
                    None => candidate,
                    Some(cur) => {
                        let (cs, ce, cr) = cur;
                        if (score, evidence, std::cmp::Reverse(*r))
                            > (cs, ce, std::cmp::Reverse(cr))
                        {
                            candidate
                        } else {
                            cur
                        }
                    }
                });
            }
        }
        match best {
            Some((score, _, r)) => {
                // edges into a blue frontier state only come from red
                // states, so the redirect scan can stay on the core
                let sources: Vec<(StateId, u32)> = red
                    .iter()
                    .filter_map(|id| m.state(*id).map(|s| (*id, s)))
                    .flat_map(|(id, s)| {
                        s.transitions
                            .iter()
                            .filter(|(_, t)| **t == blue)
                            .map(move |(a, _)| (id, *a))
                            .collect::<Vec<_>>()
                    })
                    .collect();
                for (from, a) in sources {
                    m.state_mut(from)?.transitions.insert(a, r);
                }
                fold(&mut m, r, blue)?;
                trace.decisions.push(MergeDecision::Merge {
                    red: r,
                    blue,
                    score,
                });
            }
            None => {
                red.insert(blue);
                trace.decisions.push(MergeDecision::Promote { blue });
            }
        }
    }

    m.estimate_probs(cfg.smoothing)?;
    Ok((m, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::Label;
    use crate::trace::SymbolicTrace;

    fn trace_of(symbols: &[&str]) -> SymbolicTrace {
        SymbolicTrace {
            symbols: symbols.iter().map(|s| s.to_string()).collect(),
            group_key: "g".into(),
            flow_ids: vec![],
            label: Label::Benign,
            first_timestamp: 0,
        }
    }

    fn repeat(n: usize, symbols: &[&str]) -> Vec<SymbolicTrace> {
        (0..n).map(|_| trace_of(symbols)).collect()
    }

    #[test]
    fn hoeffding_bound_matches_hand_computation() {
        // f_red = {a: 100/100}, f_blue = {b: 100/100}, alpha = 0.05:
        // bound = sqrt(ln(40)/2) * (2/10) ~= 0.2716, deviation 1.0 -> reject
        let mut traces = repeat(100, &["a", "x"]);
        traces.extend(repeat(100, &["b", "x"]));
        // PTA: root -a-> qa (100), root -b-> qb (100)
        let pta = Pta::build(&traces, false).unwrap();
        let m = pta.as_pdfa().clone();
        let a = m.symbol_id("a").unwrap();
        let qa = m.successor(0, a).unwrap();
        let b = m.symbol_id("b").unwrap();
        let qb = m.successor(0, b).unwrap();
        let cfg = MergeConfig {
            significance: 0.05,
            min_count: 10,
            ..MergeConfig::default()
        };
        // qa emits only x->... wait: qa and qb both continue with x; compare
        // the states AFTER a and b: both have {x: 100/100} -> identical
        assert!(similarity_test(&m, qa, qb, &cfg).is_some());
        // the root's children on a/b differ from a state emitting only b:
        // build explicit disagreeing states instead
        let mut t2 = repeat(100, &["a", "a"]);
        t2.extend(repeat(100, &["b", "b"]));
        let m2 = Pta::build(&t2, false).unwrap().into_pdfa();
        let qa2 = m2.successor(0, m2.symbol_id("a").unwrap()).unwrap();
        let qb2 = m2.successor(0, m2.symbol_id("b").unwrap()).unwrap();
        // f_qa2 = {a: 1.0}, f_qb2 = {b: 1.0}: deviation 1.0 > 0.2716
        assert_eq!(similarity_test(&m2, qa2, qb2, &cfg), None);
        let bound = (2.0f64 / 0.05).ln().sqrt() / 2f64.sqrt() * (2.0 / 10.0);
        assert!((bound - 0.2716).abs() < 1e-3);
    }

    #[test]
    fn identical_count_vectors_accept() {
        let mut traces = repeat(50, &["a", "b"]);
        traces.extend(repeat(50, &["c", "b"]));
        let m = Pta::build(&traces, false).unwrap().into_pdfa();
        let qa = m.successor(0, m.symbol_id("a").unwrap()).unwrap();
        let qc = m.successor(0, m.symbol_id("c").unwrap()).unwrap();
        let cfg = MergeConfig::default();
        assert!(similarity_test(&m, qa, qc, &cfg).is_some());
    }

    #[test]
    fn low_count_states_auto_accept() {
        let mut traces = repeat(100, &["a", "a"]);
        traces.extend(repeat(3, &["b", "b"]));
        let m = Pta::build(&traces, false).unwrap().into_pdfa();
        let qa = m.successor(0, m.symbol_id("a").unwrap()).unwrap();
        let qb = m.successor(0, m.symbol_id("b").unwrap()).unwrap();
        // distributions disagree completely, but n_blue = 3 < min_count
        let cfg = MergeConfig {
            min_count: 10,
            ..MergeConfig::default()
        };
        assert!(similarity_test(&m, qa, qb, &cfg).is_some());
    }

    #[test]
    fn merging_leaves_sums_counts() {
        let traces = vec![trace_of(&["a"]), trace_of(&["b"])];
        let mut m = Pta::build(&traces, false).unwrap().into_pdfa();
        let qa = m.successor(0, m.symbol_id("a").unwrap()).unwrap();
        let qb = m.successor(0, m.symbol_id("b").unwrap()).unwrap();
        let before = m.state_count();
        merge_and_fold(&mut m, qa, qb).unwrap();
        assert_eq!(m.state_count(), before - 1);
        assert_eq!(m.state(qa).unwrap().state_count, 2);
        assert_eq!(m.state(qa).unwrap().final_count, 2);
        m.validate().unwrap();
    }

    #[test]
    fn merging_disjoint_outgoing_unions_edges() {
        let mut traces = repeat(2, &["a", "x"]);
        traces.extend(repeat(3, &["b", "y"]));
        let mut m = Pta::build(&traces, false).unwrap().into_pdfa();
        let qa = m.successor(0, m.symbol_id("a").unwrap()).unwrap();
        let qb = m.successor(0, m.symbol_id("b").unwrap()).unwrap();
        merge_and_fold(&mut m, qa, qb).unwrap();
        let merged = m.state(qa).unwrap();
        assert_eq!(merged.transitions.len(), 2);
        assert_eq!(merged.state_count, 5);
        m.validate().unwrap();
    }

    #[test]
    fn shared_symbols_fold_recursively_and_conserve_mass() {
        let mut traces = repeat(4, &["a", "x", "p"]);
        traces.extend(repeat(6, &["b", "x", "q"]));
        let mut m = Pta::build(&traces, false).unwrap().into_pdfa();
        let total_before = m.total_transition_count();
        let qa = m.successor(0, m.symbol_id("a").unwrap()).unwrap();
        let qb = m.successor(0, m.symbol_id("b").unwrap()).unwrap();
        merge_and_fold(&mut m, qa, qb).unwrap();
        // count-conservation oracle: total edge mass unchanged
        assert_eq!(m.total_transition_count(), total_before);
        // the x-children folded: merged x-edge carries 10
        let x = m.symbol_id("x").unwrap();
        assert_eq!(m.state(qa).unwrap().transition_counts[&x], 10);
        m.validate().unwrap();
    }

    #[test]
    fn fold_into_own_subtree_is_rejected() {
        let traces = repeat(2, &["a", "a", "a"]);
        let mut m = Pta::build(&traces, false).unwrap().into_pdfa();
        let q1 = m.successor(0, m.symbol_id("a").unwrap()).unwrap();
        let q2 = m.successor(q1, m.symbol_id("a").unwrap()).unwrap();
        // q1 is an ancestor of q2: merging q2 into... the guard protects
        // the other direction: red inside blue's subtree
        assert!(matches!(
            merge_and_fold(&mut m, q2, q1),
            Err(Error::MergeCycle { .. })
        ));
    }

    #[test]
    fn strict_limit_yields_pta_isomorphic_output() {
        let mut traces = repeat(30, &["a", "b", "a"]);
        traces.extend(repeat(20, &["b", "a", "b"]));
        let pta = Pta::build(&traces, false).unwrap();
        let pta_states = pta.state_count();
        let cfg = MergeConfig {
            significance: 0.0,
            min_count: 1,
            ..MergeConfig::default()
        };
        let (m, log) = learn(pta, &cfg).unwrap();
        assert_eq!(m.state_count(), pta_states);
        assert!(log.merges().next().is_none());
    }

    #[test]
    fn two_state_generator_structure_is_learned() {
        // hand-built PTA pattern: traces where the state after `a` always
        // behaves like the state after `aa` (a 0.8 / b 0.2) merge into a
        // loop, leaving root + one state
        let mut traces = Vec::new();
        // deterministic mixture approximating the target distributions
        for i in 0..200 {
            let mut syms: Vec<&str> = Vec::new();
            let mut x = i;
            for _ in 0..4 {
                if x % 5 == 0 {
                    syms.push("b");
                } else {
                    syms.push("a");
                }
                x /= 5;
            }
            traces.push(trace_of(&syms));
        }
        let pta = Pta::build(&traces, false).unwrap();
        let (m, log) = learn(pta, &MergeConfig::default()).unwrap();
        assert!(m.state_count() >= 1);
        assert!(!log.decisions.is_empty());
        m.validate().unwrap();
        // every state normalizes
        for (id, s) in m.states() {
            if s.outgoing_count() > 0 {
                let sum: f64 = (0..m.alphabet().len() as u32)
                    .map(|a| m.symbol_prob(id, a))
                    .sum();
                assert!((sum - 1.0).abs() < 1e-9, "state {id} sums to {sum}");
            }
        }
    }

    #[test]
    fn replaying_the_merge_trace_reproduces_the_model() {
        let mut traces = Vec::new();
        for i in 0..150 {
            let syms: Vec<&str> = (0..5)
                .map(|j| if (i >> j) & 1 == 0 { "a" } else { "b" })
                .collect();
            traces.push(trace_of(&syms));
        }
        let pta = Pta::build(&traces, false).unwrap();
        let (m, log) = learn(pta.clone(), &MergeConfig::default()).unwrap();
        let mut replayed = pta.into_pdfa();
        for (red, blue) in log.merges() {
            merge_and_fold(&mut replayed, red, blue).unwrap();
        }
        replayed.estimate_probs(MergeConfig::default().smoothing).unwrap();
        assert_eq!(m, replayed);
    }

    #[test]
    fn monotone_shrinkage_and_determinism() {
        let mut traces = Vec::new();
        for i in 0u64..300 {
            let syms: Vec<&str> = (0..6)
                .map(|j| match (i / (j + 1)) % 3 {
                    0 => "x",
                    1 => "y",
                    _ => "z",
                })
                .collect();
            traces.push(trace_of(&syms));
        }
        let pta = Pta::build(&traces, false).unwrap();
        let before = pta.state_count();
        let (m1, log1) = learn(pta.clone(), &MergeConfig::default()).unwrap();
        // every accepted merge folds at least one state away
        let merges = log1.merges().count();
        assert!(merges > 0);
        assert!(m1.state_count() <= before - merges);
        // determinism: same input, same output
        let (m2, log2) = learn(pta, &MergeConfig::default()).unwrap();
        assert_eq!(m1, m2);
        assert_eq!(log1, log2);
    }
}
