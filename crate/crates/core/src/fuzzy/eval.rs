//! Graded evaluation of constraint trees over a single partition.
//!
//! Comparison leaves grade linearly over a `deviation`-wide ramp; a zero
//! deviation is a crisp classical comparison. AND takes the minimum and is
//! defined only when every operand is; OR takes the maximum over the defined
//! operands and needs at least one; NOT rewrites its subtree by inverting the
//! leaf operators and swapping AND/OR (De Morgan), then evaluates the
//! rewritten tree.

use super::{FuzzyError, Partition};
use crate::knowledge::{CmpOp, ConstraintNode, FuzzyComparison, KnowledgeLibrary};
use crate::value::Value;

/// Membership of one value in a fuzzy comparison; `None` when the value's
/// domain does not fit the comparison (categorical vs numeric).
pub fn fuzzify_comparison(value: &Value, cmp: &FuzzyComparison) -> Option<f64> {
    match (value, &cmp.threshold) {
        (Value::Num(v), Value::Num(t)) => Some(fuzzify_numeric(*v, cmp.op, *t, cmp.deviation)),
        (Value::Cat(v), Value::Cat(t)) if cmp.op == CmpOp::Eq => {
            Some(if v == t { 1.0 } else { 0.0 })
        }
        _ => None,
    }
}

fn fuzzify_numeric(v: f64, op: CmpOp, t: f64, d: f64) -> f64 {
    if d <= 0.0 {
        let holds = match op {
            CmpOp::Gt => v > t,
            CmpOp::Ge => v >= t,
            CmpOp::Lt => v < t,
            CmpOp::Le => v <= t,
            CmpOp::Eq => v == t,
        };
        return if holds { 1.0 } else { 0.0 };
    }
    let raw = match op {
        // Ramp rises over [t − d, t]; any value ≥ t is fully in.
        CmpOp::Gt | CmpOp::Ge => (v - (t - d)) / d,
        // Ramp falls over [t, t + d]; any value ≤ t is fully in.
        CmpOp::Lt | CmpOp::Le => ((t + d) - v) / d,
        // Triangular around t, zero at distance d.
        CmpOp::Eq => 1.0 - (v - t).abs() / d,
    };
    raw.clamp(0.0, 1.0)
}

/// Logical negation of a tree with the negation pushed all the way into the
/// leaves: operators invert, AND/OR swap, double negations cancel, and
/// references inline their definition negated. The result contains no NOT.
pub fn negate_node(
    lib: &KnowledgeLibrary,
    node: &ConstraintNode,
) -> Result<ConstraintNode, FuzzyError> {
    match node {
        ConstraintNode::Cmp(cmp) => {
            let op = cmp
                .op
                .invert()
                .ok_or_else(|| FuzzyError::NegationOverEquality(cmp.param.clone()))?;
            Ok(ConstraintNode::Cmp(FuzzyComparison { op, ..cmp.clone() }))
        }
        ConstraintNode::And(children) => Ok(ConstraintNode::Or(
            children
                .iter()
                .map(|c| negate_node(lib, c))
                .collect::<Result<_, _>>()?,
        )),
        ConstraintNode::Or(children) => Ok(ConstraintNode::And(
            children
                .iter()
                .map(|c| negate_node(lib, c))
                .collect::<Result<_, _>>()?,
        )),
        ConstraintNode::Not(child) => eliminate_negations(lib, child),
        ConstraintNode::Ref(id) => {
            let definition = lib
                .concept(id)
                .and_then(|c| c.definition.as_ref())
                .ok_or_else(|| FuzzyError::UnresolvedConcept(id.clone()))?;
            negate_node(lib, definition)
        }
    }
}

/// Rewrite a tree into an equivalent one without NOT nodes.
pub fn eliminate_negations(
    lib: &KnowledgeLibrary,
    node: &ConstraintNode,
) -> Result<ConstraintNode, FuzzyError> {
    match node {
        ConstraintNode::Cmp(_) | ConstraintNode::Ref(_) => Ok(node.clone()),
        ConstraintNode::And(children) => Ok(ConstraintNode::And(
            children
                .iter()
                .map(|c| eliminate_negations(lib, c))
                .collect::<Result<_, _>>()?,
        )),
        ConstraintNode::Or(children) => Ok(ConstraintNode::Or(
            children
                .iter()
                .map(|c| eliminate_negations(lib, c))
                .collect::<Result<_, _>>()?,
        )),
        ConstraintNode::Not(child) => negate_node(lib, child),
    }
}

/// Membership of a constraint tree in one partition; `None` when the tree is
/// undefined there (missing operands per the AND/OR rules above).
pub fn evaluate_node(
    lib: &KnowledgeLibrary,
    node: &ConstraintNode,
    partition: &Partition,
) -> Result<Option<f64>, FuzzyError> {
    match node {
        ConstraintNode::Cmp(cmp) => Ok(partition
            .values
            .get(&cmp.param)
            .and_then(|value| fuzzify_comparison(value, cmp))),
        ConstraintNode::And(children) => {
            let mut min = f64::INFINITY;
            for child in children {
                match evaluate_node(lib, child, partition)? {
                    Some(m) => min = min.min(m),
                    // Defined only when every operand is.
                    None => return Ok(None),
                }
            }
            Ok(if children.is_empty() { None } else { Some(min) })
        }
        ConstraintNode::Or(children) => {
            let mut max: Option<f64> = None;
            for child in children {
                if let Some(m) = evaluate_node(lib, child, partition)? {
                    max = Some(max.map_or(m, |cur: f64| cur.max(m)));
                }
            }
            Ok(max)
        }
        ConstraintNode::Not(child) => {
            let rewritten = negate_node(lib, child)?;
            evaluate_node(lib, &rewritten, partition)
        }
        ConstraintNode::Ref(id) => {
            let definition = lib
                .concept(id)
                .and_then(|c| c.definition.as_ref())
                .ok_or_else(|| FuzzyError::UnresolvedConcept(id.clone()))?;
            evaluate_node(lib, definition, partition)
        }
    }
}
