//! The formal knowledge library: concept definitions with fuzzy constraint
//! trees, and hierarchical guideline plans with conditions, intentions, and
//! body steps.
//!
//! A library is authored as a JSON document (see [`wire`]), checked by
//! [`validate`], and flattened by [`flatten`] into per-leaf-path plans whose
//! entry and stop conditions have been propagated down the hierarchy.

pub mod flatten;
pub mod validate;
pub mod wire;

pub use flatten::{flatten_guideline_paths, RoleIndex};

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::time::SECS_PER_DAY;
use crate::value::Value;

pub type ConceptId = String;
pub type PlanId = String;
pub type StepId = String;

/// Default maximum delay between plan eligibility and its latest acceptable
/// start: 90 days.
pub const DEFAULT_MAX_START_DELAY_S: i64 = 90 * SECS_PER_DAY;

/// Errors raised while reading a knowledge library document.
#[derive(Debug, Error)]
pub enum KnowledgeError {
    #[error("knowledge file syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{location}: {message}")]
    Shape { location: String, message: String },
}

// ── Concepts ────────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConceptKind {
    /// Raw measured parameter (lab value, vital sign).
    Primitive,
    /// Recorded action or occurrence (drug administration, procedure).
    Event,
    /// Derived state defined by a constraint tree over primitives/events.
    Abstract,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ValueDomain {
    Numeric,
    Categorical,
}

/// Temporal persistence of a point measurement: how far its value may be
/// extrapolated backward and forward in time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PersistenceSpec {
    /// Seconds the value is assumed to hold *before* the measurement.
    pub good_before_s: i64,
    /// Seconds the value is assumed to hold *after* the measurement.
    pub good_after_s: i64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Concept {
    pub id: ConceptId,
    pub kind: ConceptKind,
    /// Unit of measure for numeric concepts; `None` for unitless or
    /// categorical concepts.
    pub unit: Option<String>,
    pub value_domain: ValueDomain,
    /// Required for primitive/event concepts, absent for abstract ones.
    pub persistence: Option<PersistenceSpec>,
    /// Required for abstract concepts, absent otherwise.
    pub definition: Option<ConstraintNode>,
}

// ── Constraint trees ────────────────────────────────────────────────────────

/// Comparison operator of a fuzzy constraint leaf.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CmpOp {
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = "=")]
    Eq,
}

impl CmpOp {
    pub fn as_str(&self) -> &'static str {
        match self {
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Eq => "=",
        }
    }

    pub fn parse(s: &str) -> Option<CmpOp> {
        // Accept both ASCII digraphs and the common unicode forms.
        match s {
            ">" => Some(CmpOp::Gt),
            ">=" | "≥" => Some(CmpOp::Ge),
            "<" => Some(CmpOp::Lt),
            "<=" | "≤" => Some(CmpOp::Le),
            "=" | "==" => Some(CmpOp::Eq),
            _ => None,
        }
    }

    /// Relation-operator inversion used to rewrite negations:
    /// `NOT (x > t)` becomes `x <= t`, and so on. Equality has no inverse in
    /// the operator set, so negating it is rejected at validation time.
    pub fn invert(&self) -> Option<CmpOp> {
        match self {
            CmpOp::Gt => Some(CmpOp::Le),
            CmpOp::Ge => Some(CmpOp::Lt),
            CmpOp::Lt => Some(CmpOp::Ge),
            CmpOp::Le => Some(CmpOp::Gt),
            CmpOp::Eq => None,
        }
    }
}

/// A fuzzy constraint leaf: `param op threshold`, graded linearly over a
/// `deviation`-wide ramp instead of a crisp cutoff.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FuzzyComparison {
    pub param: ConceptId,
    pub op: CmpOp,
    pub threshold: Value,
    /// Ramp width; `0` makes the comparison crisp.
    pub deviation: f64,
    /// Optional unit annotation; must match the parameter's unit when given.
    pub unit: Option<String>,
}

/// A constraint tree combining fuzzy comparison leaves with n-ary AND/OR and
/// NOT. `Ref` cites an abstract concept's definition by id; it appears when
/// plan conditions or intentions reference a concept instead of inlining a
/// tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ConstraintNode {
    Cmp(FuzzyComparison),
    And(Vec<ConstraintNode>),
    Or(Vec<ConstraintNode>),
    Not(Box<ConstraintNode>),
    Ref(ConceptId),
}

impl ConstraintNode {
    /// N-ary conjunction that flattens nested `And` children and unwraps a
    /// singleton, so condition propagation is associative.
    pub fn and_all(nodes: Vec<ConstraintNode>) -> ConstraintNode {
        Self::combine(nodes, true)
    }

    /// N-ary disjunction, same normalization as [`Self::and_all`].
    pub fn or_all(nodes: Vec<ConstraintNode>) -> ConstraintNode {
        Self::combine(nodes, false)
    }

    fn combine(nodes: Vec<ConstraintNode>, conjunction: bool) -> ConstraintNode {
        let mut flat = Vec::with_capacity(nodes.len());
        for node in nodes {
            match (conjunction, node) {
                (true, ConstraintNode::And(children)) => flat.extend(children),
                (false, ConstraintNode::Or(children)) => flat.extend(children),
                (_, other) => flat.push(other),
            }
        }
        if flat.len() == 1 {
            flat.pop().unwrap()
        } else if conjunction {
            ConstraintNode::And(flat)
        } else {
            ConstraintNode::Or(flat)
        }
    }

    /// Leaf parameters of the tree, following `Ref` nodes through the
    /// library. These are the concepts whose data the tree is evaluated over.
    pub fn collect_params(&self, lib: &KnowledgeLibrary, out: &mut BTreeSet<ConceptId>) {
        match self {
            ConstraintNode::Cmp(cmp) => {
                out.insert(cmp.param.clone());
            }
            ConstraintNode::And(children) | ConstraintNode::Or(children) => {
                for child in children {
                    child.collect_params(lib, out);
                }
            }
            ConstraintNode::Not(child) => child.collect_params(lib, out),
            ConstraintNode::Ref(id) => {
                if let Some(def) = lib.concept(id).and_then(|c| c.definition.as_ref()) {
                    def.collect_params(lib, out);
                }
            }
        }
    }

    /// Every concept the tree mentions: leaf parameters plus referenced
    /// abstract concept ids (and the parameters inside their definitions).
    pub fn collect_mentions(&self, lib: &KnowledgeLibrary, out: &mut BTreeSet<ConceptId>) {
        if let ConstraintNode::Ref(id) = self {
            out.insert(id.clone());
        }
        match self {
            ConstraintNode::And(children) | ConstraintNode::Or(children) => {
                for child in children {
                    child.collect_mentions(lib, out);
                }
                return;
            }
            ConstraintNode::Not(child) => {
                child.collect_mentions(lib, out);
                return;
            }
            _ => {}
        }
        self.collect_params(lib, out);
    }
}

// ── Plans ───────────────────────────────────────────────────────────────────

/// Role a condition plays in a plan's lifecycle. Filter/setup/restart gate
/// entry (propagated as conjunctions down the hierarchy); complete, abort,
/// and suspend stop a running plan (propagated as disjunctions).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConditionRole {
    Filter,
    Setup,
    Restart,
    Complete,
    Abort,
    Suspend,
}

impl ConditionRole {
    pub const ALL: [ConditionRole; 6] = [
        ConditionRole::Filter,
        ConditionRole::Setup,
        ConditionRole::Restart,
        ConditionRole::Complete,
        ConditionRole::Abort,
        ConditionRole::Suspend,
    ];

    pub fn is_entry(&self) -> bool {
        matches!(
            self,
            ConditionRole::Filter | ConditionRole::Setup | ConditionRole::Restart
        )
    }

    pub fn is_stop(&self) -> bool {
        !self.is_entry()
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            ConditionRole::Filter => "filter",
            ConditionRole::Setup => "setup",
            ConditionRole::Restart => "restart",
            ConditionRole::Complete => "complete",
            ConditionRole::Abort => "abort",
            ConditionRole::Suspend => "suspend",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Condition {
    pub role: ConditionRole,
    pub expr: ConstraintNode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IntentionKind {
    Process,
    Outcome,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IntentionMode {
    Achieve,
    Maintain,
    Avoid,
}

/// A care intention: a target state (or process) the plan aims to achieve,
/// maintain, or avoid, monitored from `monitoring_delay_s` after plan start
/// with measurements no further apart than `max_gap_s`.
#[derive(Debug, Clone, PartialEq)]
pub struct Intention {
    pub kind: IntentionKind,
    pub mode: IntentionMode,
    pub target: ConstraintNode,
    pub monitoring_delay_s: i64,
    pub max_gap_s: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepKind {
    /// Expected once, inside a single window relative to plan start.
    Once,
    /// Expected repeatedly, every `period_s` after the previous occurrence.
    Periodic,
    /// Recurring medication administration.
    DrugAdministration,
    /// Dose escalation of a medication already being administered.
    DrugIncrease,
}

/// A clinical action the plan body expects from the care process.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanStepSpec {
    pub id: StepId,
    /// Concept whose data items count as occurrences of this step.
    pub action_concept: ConceptId,
    /// Opaque vocabulary code (for example a LOINC or ATC code).
    pub code: Option<String>,
    pub kind: StepKind,
    /// Expected window start, seconds from plan start.
    pub earliest_offset_s: i64,
    /// Expected window end, seconds from plan start.
    pub latest_offset_s: i64,
    /// Recurrence period for repeating steps.
    pub period_s: Option<i64>,
    /// Fuzzy timing ramp width: occurrences outside the window are graded
    /// down linearly over this many seconds.
    pub timing_deviation_s: i64,
    /// Repeats closer together than this are flagged as duplicates.
    pub min_repeat_gap_s: i64,
    /// Maximum dose for drug steps; suppresses escalation expectations.
    pub max_dose: Option<f64>,
}

impl PlanStepSpec {
    /// Whether occurrences are expected to recur after the first window.
    pub fn recurs(&self) -> bool {
        self.period_s.is_some()
    }
}

/// A node of the guideline hierarchy. Non-leaf plans refine into sub-plans;
/// conditions propagate from parents onto every leaf path underneath.
#[derive(Debug, Clone, PartialEq)]
pub struct GuidelinePlan {
    pub id: PlanId,
    pub name: String,
    pub max_start_delay_s: i64,
    pub conditions: Vec<Condition>,
    pub intentions: Vec<Intention>,
    pub body: Vec<PlanStepSpec>,
    pub sub_plans: Vec<GuidelinePlan>,
}

// ── Library ─────────────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Default)]
pub struct KnowledgeLibrary {
    pub concepts: Vec<Concept>,
    pub plans: Vec<GuidelinePlan>,
}

impl KnowledgeLibrary {
    pub fn concept(&self, id: &str) -> Option<&Concept> {
        self.concepts.iter().find(|c| c.id == id)
    }

    /// Persistence for a primitive/event concept, if declared.
    pub fn persistence(&self, id: &str) -> Option<PersistenceSpec> {
        self.concept(id).and_then(|c| c.persistence)
    }

    /// Stable content hash of the canonical serialized form, echoed into
    /// reports so a critique can be traced back to the exact knowledge used.
    pub fn content_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let doc = wire::serialize_library(self);
        let mut hasher = Sha256::new();
        hasher.update(doc.as_bytes());
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

// ── Flattened paths and roles ───────────────────────────────────────────────

/// Kind of relation a concept has to a path plan.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RoleKind {
    EntryCondition,
    StopCondition,
    OutcomeIntention,
    ProcessIntention,
    BodyStep,
}

impl RoleKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            RoleKind::EntryCondition => "entry-condition",
            RoleKind::StopCondition => "stop-condition",
            RoleKind::OutcomeIntention => "outcome-intention",
            RoleKind::ProcessIntention => "process-intention",
            RoleKind::BodyStep => "body-step",
        }
    }
}

/// One relation between a concept and a flattened path plan.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct KnowledgeRole {
    pub path_plan_id: PlanId,
    pub role: RoleKind,
    pub step_id: Option<StepId>,
}

/// A leaf path through the plan hierarchy with all ancestor conditions and
/// intentions propagated onto it. This is the unit the compliance engine
/// reasons about.
#[derive(Debug, Clone, PartialEq)]
pub struct PathPlan {
    /// Path id: source plan ids joined with `/`.
    pub id: PlanId,
    pub source_plan_ids: Vec<PlanId>,
    pub name: String,
    pub max_start_delay_s: i64,
    /// Merged condition per role: entry roles conjoined, stop roles disjoined
    /// down the path.
    pub conditions: Vec<Condition>,
    /// Intentions along the path, ancestors first.
    pub intentions: Vec<Intention>,
    /// Body of the leaf plan (propagation never alters bodies).
    pub body: Vec<PlanStepSpec>,
}

impl PathPlan {
    pub fn condition(&self, role: ConditionRole) -> Option<&ConstraintNode> {
        self.conditions
            .iter()
            .find(|c| c.role == role)
            .map(|c| &c.expr)
    }

    /// The entry expression actually evaluated: filter AND setup.
    pub fn entry_expr(&self) -> Option<ConstraintNode> {
        let mut parts = Vec::new();
        for role in [ConditionRole::Filter, ConditionRole::Setup] {
            if let Some(expr) = self.condition(role) {
                parts.push(expr.clone());
            }
        }
        if parts.is_empty() {
            None
        } else {
            Some(ConstraintNode::and_all(parts))
        }
    }

    /// Parent path id (`a/b` for `a/b/c`), `None` for top-level paths.
    pub fn parent_prefix(&self) -> Option<String> {
        if self.source_plan_ids.len() < 2 {
            return None;
        }
        Some(self.source_plan_ids[..self.source_plan_ids.len() - 1].join("/"))
    }

    pub fn step(&self, step_id: &str) -> Option<&PlanStepSpec> {
        self.body.iter().find(|s| s.id == step_id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn leaf(param: &str, op: CmpOp, threshold: f64) -> ConstraintNode {
        ConstraintNode::Cmp(FuzzyComparison {
            param: param.into(),
            op,
            threshold: Value::Num(threshold),
            deviation: 0.0,
            unit: None,
        })
    }

    #[test]
    fn invert_swaps_strictness_and_direction() {
        assert_eq!(CmpOp::Gt.invert(), Some(CmpOp::Le));
        assert_eq!(CmpOp::Ge.invert(), Some(CmpOp::Lt));
        assert_eq!(CmpOp::Lt.invert(), Some(CmpOp::Ge));
        assert_eq!(CmpOp::Le.invert(), Some(CmpOp::Gt));
        assert_eq!(CmpOp::Eq.invert(), None);
    }

    #[test]
    fn and_all_flattens_and_unwraps() {
        let a = leaf("a", CmpOp::Gt, 1.0);
        let b = leaf("b", CmpOp::Lt, 2.0);
        let c = leaf("c", CmpOp::Ge, 3.0);

        let nested = ConstraintNode::and_all(vec![
            a.clone(),
            ConstraintNode::and_all(vec![b.clone(), c.clone()]),
        ]);
        let flat = ConstraintNode::and_all(vec![a.clone(), b.clone(), c.clone()]);
        assert_eq!(nested, flat);

        assert_eq!(ConstraintNode::and_all(vec![a.clone()]), a);
    }

    #[test]
    fn or_does_not_flatten_into_and() {
        let a = leaf("a", CmpOp::Gt, 1.0);
        let b = leaf("b", CmpOp::Lt, 2.0);
        let or = ConstraintNode::or_all(vec![a.clone(), b.clone()]);
        let and = ConstraintNode::and_all(vec![a, or.clone()]);
        match and {
            ConstraintNode::And(children) => {
                assert_eq!(children.len(), 2);
                assert_eq!(children[1], or);
            }
            other => panic!("expected And, got {other:?}"),
        }
    }

    #[test]
    fn collect_params_follows_refs() {
        let lib = KnowledgeLibrary {
            concepts: vec![
                Concept {
                    id: "sbp".into(),
                    kind: ConceptKind::Primitive,
                    unit: Some("mmHg".into()),
                    value_domain: ValueDomain::Numeric,
                    persistence: Some(PersistenceSpec {
                        good_before_s: 0,
                        good_after_s: 3600,
                    }),
                    definition: None,
                },
                Concept {
                    id: "high-sbp".into(),
                    kind: ConceptKind::Abstract,
                    unit: None,
                    value_domain: ValueDomain::Numeric,
                    persistence: None,
                    definition: Some(leaf("sbp", CmpOp::Gt, 140.0)),
                },
            ],
            plans: vec![],
        };
        let expr = ConstraintNode::and_all(vec![
            ConstraintNode::Ref("high-sbp".into()),
            leaf("dbp", CmpOp::Gt, 90.0),
        ]);

        let mut params = BTreeSet::new();
        expr.collect_params(&lib, &mut params);
        assert_eq!(
            params.into_iter().collect::<Vec<_>>(),
            vec!["dbp".to_string(), "sbp".to_string()]
        );

        let mut mentions = BTreeSet::new();
        expr.collect_mentions(&lib, &mut mentions);
        assert_eq!(
            mentions.into_iter().collect::<Vec<_>>(),
            vec!["dbp".to_string(), "high-sbp".to_string(), "sbp".to_string()]
        );
    }
}
