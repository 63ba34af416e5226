//! Learn probabilistic deterministic finite automata (PDFAs) from NetFlow
//! records and flag anomalous network behaviour by trace likelihood.
//!
//! The pipeline: ingest labeled flow CSVs, encode each flow's (protocol,
//! bytes, duration) into one discrete symbol, cut sliding windows into
//! symbolic traces, build a prefix tree acceptor over benign training
//! traces, shrink it by red-blue state merging under a Hoeffding
//! similarity test, then score test traces by log-likelihood and raise
//! alarms below a calibrated threshold. An isolation-forest baseline and
//! confusion metrics support evaluation.
//!
//! See the crate examples for one runnable program per stage, and the
//! `flowdfa` binary for the config-driven end-to-end commands.

pub mod config;
pub mod detect;
pub mod encode;
pub mod error;
pub mod eval;
pub mod flow;
pub mod learn;
pub mod pdfa;
pub mod pipeline;
pub mod synth;
pub mod trace;

pub use error::{Error, Result};
