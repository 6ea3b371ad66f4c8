//! Fuzzy temporal reasoner: scored temporal abstractions over patient data.
//!
//! Evaluating a constraint tree over a record runs a four-step pipeline:
//!
//! 1. **Extrapolate** — each point measurement becomes a half-open interval
//!    `[t − good_before, t + good_after)` per its concept's persistence;
//!    explicit interval items keep their recorded bounds
//!    ([`intervals::extrapolate_intervals`]).
//! 2. **Resolve & merge** — conflicting overlaps of one parameter are
//!    resolved newest-measurement-wins, then equal-valued neighbours merge
//!    ([`intervals::coverage_intervals`]).
//! 3. **Partition** — all parameters' interval endpoints slice the analysis
//!    window into the minimal set of partitions in which every parameter has
//!    zero or one value ([`partition::partition_timeline`]).
//! 4. **Evaluate** — each partition is scored by the constraint tree with
//!    linear-ramp comparison leaves, `min` for AND, `max` for OR, and
//!    operator inversion for NOT ([`eval::evaluate_node`]); undefined
//!    partitions emit nothing and adjacent equal scores coalesce.

pub mod eval;
pub mod intervals;
pub mod partition;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::PatientRecord;
use crate::knowledge::{ConceptId, ConceptKind, ConstraintNode, KnowledgeLibrary};
use crate::time::{add_secs, Span, Time};
use crate::value::{Value, VALUE_EPS};

pub use eval::{eliminate_negations, evaluate_node, fuzzify_comparison, negate_node};
pub use intervals::{coverage_intervals, extrapolate_intervals, merge_same_value};
pub use partition::partition_timeline;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FuzzyError {
    #[error("concept '{0}' is not defined in the library")]
    UnresolvedConcept(ConceptId),
    #[error("concept '{0}' is not abstract; only abstract concepts have evaluable definitions")]
    NotAbstract(ConceptId),
    #[error("parameter '{0}' has no persistence specification")]
    MissingPersistence(ConceptId),
    #[error("cannot negate an equality comparison on '{0}': '=' has no inverse operator")]
    NegationOverEquality(ConceptId),
}

// ── Types ───────────────────────────────────────────────────────────────────

/// One parameter's value over a half-open time span.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValuedInterval {
    pub span: Span,
    pub value: Value,
}

/// A slice of the analysis window in which every parameter has zero or one
/// value. Consecutive partitions tile the window exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    pub span: Span,
    pub values: BTreeMap<ConceptId, Value>,
}

/// A graded abstraction result: the constraint held over `span` with the
/// given membership in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredInterval {
    pub span: Span,
    pub membership: f64,
}

// ── Pipeline ────────────────────────────────────────────────────────────────

/// Default analysis window for a record: first item time minus the largest
/// `good_before` to last item time plus the largest `good_after`, maxima
/// taken over the concepts present in the record. `None` for empty records.
pub fn default_analysis_window(lib: &KnowledgeLibrary, record: &PatientRecord) -> Option<Span> {
    let first = record.items.iter().map(|i| i.valid_start).min()?;
    let last = record
        .items
        .iter()
        .map(|i| i.valid_stop.unwrap_or(i.valid_start))
        .max()?;
    let mut max_before = 0i64;
    let mut max_after = 0i64;
    for item in &record.items {
        if let Some(p) = lib.persistence(&item.concept_id) {
            max_before = max_before.max(p.good_before_s);
            max_after = max_after.max(p.good_after_s);
        }
    }
    Span::new(add_secs(first, -max_before), add_secs(last, max_after))
}

/// Per-parameter resolved coverage for every leaf parameter of `expr`.
fn coverage_by_param(
    lib: &KnowledgeLibrary,
    expr: &ConstraintNode,
    record: &PatientRecord,
) -> Result<BTreeMap<ConceptId, Vec<ValuedInterval>>, FuzzyError> {
    let mut params = std::collections::BTreeSet::new();
    expr.collect_params(lib, &mut params);

    let mut by_param = BTreeMap::new();
    for param in params {
        let concept = lib
            .concept(&param)
            .ok_or_else(|| FuzzyError::UnresolvedConcept(param.clone()))?;
        if concept.kind == ConceptKind::Abstract {
            // `collect_params` resolves refs down to raw parameters, so an
            // abstract id here means a comparison leaf names an abstraction.
            return Err(FuzzyError::NotAbstract(param.clone()));
        }
        let persistence = concept
            .persistence
            .ok_or_else(|| FuzzyError::MissingPersistence(param.clone()))?;
        let items: Vec<_> = record
            .items
            .iter()
            .filter(|i| i.concept_id == param)
            .cloned()
            .collect();
        by_param.insert(param, coverage_intervals(&items, persistence));
    }
    Ok(by_param)
}

/// Evaluate a constraint tree over a record within `window`, returning the
/// coalesced scored intervals where the tree is defined.
pub fn evaluate_expr(
    lib: &KnowledgeLibrary,
    expr: &ConstraintNode,
    record: &PatientRecord,
    window: Span,
) -> Result<Vec<ScoredInterval>, FuzzyError> {
    let by_param = coverage_by_param(lib, expr, record)?;
    let partitions = partition_timeline(&by_param, window);
    let mut scored = Vec::new();
    for partition in &partitions {
        if let Some(membership) = evaluate_node(lib, expr, partition)? {
            scored.push(ScoredInterval { span: partition.span, membership });
        }
    }
    Ok(coalesce_scored(scored))
}

/// Evaluate an abstract concept's definition over a record.
pub fn evaluate_concept(
    lib: &KnowledgeLibrary,
    concept_id: &str,
    record: &PatientRecord,
    window: Span,
) -> Result<Vec<ScoredInterval>, FuzzyError> {
    let concept = lib
        .concept(concept_id)
        .ok_or_else(|| FuzzyError::UnresolvedConcept(concept_id.to_string()))?;
    let definition = concept
        .definition
        .as_ref()
        .filter(|_| concept.kind == ConceptKind::Abstract)
        .ok_or_else(|| FuzzyError::NotAbstract(concept_id.to_string()))?;
    evaluate_expr(lib, definition, record, window)
}

/// Merge abutting intervals whose memberships agree within `1e-9`. Gaps
/// (absent partitions) always break runs, so the time-score function is
/// unchanged.
pub fn coalesce_scored(scored: Vec<ScoredInterval>) -> Vec<ScoredInterval> {
    let mut out: Vec<ScoredInterval> = Vec::with_capacity(scored.len());
    for interval in scored {
        match out.last_mut() {
            Some(prev)
                if prev.span.end == interval.span.start
                    && (prev.membership - interval.membership).abs() <= VALUE_EPS =>
            {
                prev.span = Span::new(prev.span.start, interval.span.end)
                    .expect("coalesced span grows, never empties");
            }
            _ => out.push(interval),
        }
    }
    out
}

/// Membership of the score function at one instant, `None` in gaps.
pub fn score_at(scored: &[ScoredInterval], t: Time) -> Option<f64> {
    scored
        .iter()
        .find(|s| s.span.contains(t))
        .map(|s| s.membership)
}
