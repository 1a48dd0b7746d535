//! Lifecycle-driven static taint analysis.
//!
//! Component life-cycle machines yield feasible event sequences, which are
//! turned into callback sequences and permuted; each resulting execution
//! hypothesis is analysed by a taint engine over a small bytecode IR. The
//! engine is flow- and context-sensitive, and tracks objects by field.

pub mod app_ir;
pub mod cfg;
pub mod cli;
pub mod detectors_report;
pub mod lifecycle_model;
pub mod sequence_gen;
pub mod taint_engine;
