//! Streaming extraction of affine loop-nest models from memory-access traces.
//!
//! A trace interleaves loop checkpoints with memory accesses. [`model::Analyzer`]
//! consumes it one record at a time, tracks the dynamic loop nest in a context
//! tree, infers an affine index expression per instruction and context, and
//! produces a [`model::ForayModel`]. [`emit`] renders the model as C-like loop
//! nests or a JSON report. [`synth`] and [`check`] supply ground truth.

pub mod affine;
pub mod check;
pub mod emit;
pub mod model;
pub mod synth;
pub mod trace;
pub mod tree;

pub use model::{analyze, analyze_stream, Analyzer, FilterConfig, ForayModel};
pub use trace::{open_trace_stream, AccessKind, TraceError, TraceRecord};
