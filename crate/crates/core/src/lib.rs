//! Core library of the critiq guideline-compliance analysis engine.
//!
//! The crate is organized as a pipeline:
//!
//! - [`knowledge`] — the formal library: concepts with fuzzy constraint
//!   definitions and hierarchical guideline plans, parsed from JSON,
//!   validated, and flattened into leaf path plans.
//! - [`ingest`] — CSV patient records mapped onto library concepts, with
//!   unit conversion and per-row skip accounting.
//! - [`fuzzy`] — the temporal abstraction reasoner: extrapolation, overlap
//!   resolution, same-value merging, timeline partitioning, and graded
//!   constraint evaluation.
//! - [`engine`] — the four-pass compliance engine producing graded critique
//!   comments per patient.
//! - [`report`] — stable JSON and human-readable text rendering.
//! - [`synth`] — synthetic cohort generation with a ground-truth deviation
//!   manifest, for end-to-end recovery checks.
//!
//! [`testkit`] carries deliberately naive reference implementations
//! (pointwise temporal resolution, classical boolean evaluation) and seeded
//! scenario generators; the verification suites pit the pipeline against
//! them.

pub mod engine;
pub mod fuzzy;
pub mod ingest;
pub mod knowledge;
pub mod report;
pub mod synth;
pub mod testkit;
pub mod time;
pub mod value;

pub use knowledge::KnowledgeLibrary;
pub use time::{Span, Time};
pub use value::Value;
