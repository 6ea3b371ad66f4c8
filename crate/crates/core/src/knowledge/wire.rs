//! JSON document format for knowledge libraries.
//!
//! The on-disk schema mirrors the domain model:
//!
//! ```json
//! {
//!   "concepts": [
//!     {"id": "sbp", "kind": "primitive", "unit": "mmHg",
//!      "persistence": {"good_before_s": 0, "good_after_s": 3600}},
//!     {"id": "hypertension", "kind": "abstract",
//!      "definition": {"op": "or", "children": [
//!        {"op": "cmp", "cmp": {"param": "sbp", "operator": ">",
//!                               "threshold": 140, "deviation": 10}}]}}
//!   ],
//!   "plans": [
//!     {"id": "htn-care", "name": "Hypertension management",
//!      "conditions": [{"role": "filter", "expr": "hypertension"}],
//!      "body": [{"id": "bp-check", "action_concept": "sbp",
//!                "kind": "periodic", "latest_offset_s": 2592000,
//!                "period_s": 7776000}],
//!      "sub_plans": []}
//!   ]
//! }
//! ```
//!
//! Durations are integer seconds; a condition/intention expression is either
//! an inline constraint node or a bare string naming an abstract concept.
//! Syntax and type errors are reported with line/column positions; structural
//! problems are reported with the id path of the offending element.

use serde::{Deserialize, Serialize};

use super::*;

// ── Wire documents ──────────────────────────────────────────────────────────

#[derive(Debug, Serialize, Deserialize)]
struct LibraryDoc {
    #[serde(default)]
    concepts: Vec<ConceptDoc>,
    #[serde(default)]
    plans: Vec<PlanDoc>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ConceptDoc {
    id: String,
    kind: ConceptKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    unit: Option<String>,
    #[serde(default = "numeric_domain")]
    value_domain: ValueDomain,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    persistence: Option<PersistenceSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    definition: Option<NodeDoc>,
}

fn numeric_domain() -> ValueDomain {
    ValueDomain::Numeric
}

#[derive(Debug, Serialize, Deserialize)]
struct NodeDoc {
    op: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    children: Vec<NodeDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    cmp: Option<CmpDoc>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CmpDoc {
    param: String,
    operator: String,
    threshold: Value,
    #[serde(default)]
    deviation: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    unit: Option<String>,
}

/// A condition or intention expression: inline node, or the id of an
/// abstract concept as a bare string.
#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum ExprDoc {
    ConceptRef(String),
    Node(NodeDoc),
}

#[derive(Debug, Serialize, Deserialize)]
struct ConditionDoc {
    role: ConditionRole,
    expr: ExprDoc,
}

#[derive(Debug, Serialize, Deserialize)]
struct IntentionDoc {
    kind: IntentionKind,
    mode: IntentionMode,
    target: ExprDoc,
    #[serde(default)]
    monitoring_delay_s: i64,
    max_gap_s: i64,
}

#[derive(Debug, Serialize, Deserialize)]
struct StepDoc {
    id: String,
    action_concept: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    code: Option<String>,
    kind: StepKind,
    #[serde(default)]
    earliest_offset_s: i64,
    latest_offset_s: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    period_s: Option<i64>,
    #[serde(default)]
    timing_deviation_s: i64,
    #[serde(default)]
    min_repeat_gap_s: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    max_dose: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct PlanDoc {
    id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    max_start_delay_s: Option<i64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    conditions: Vec<ConditionDoc>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    intentions: Vec<IntentionDoc>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    body: Vec<StepDoc>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    sub_plans: Vec<PlanDoc>,
}

// ── Parsing ─────────────────────────────────────────────────────────────────

/// Parse a knowledge library document from JSON text.
pub fn parse_knowledge_library(text: &str) -> Result<KnowledgeLibrary, KnowledgeError> {
    let doc: LibraryDoc = serde_json::from_str(text).map_err(|e| KnowledgeError::Syntax {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let concepts = doc
        .concepts
        .into_iter()
        .map(concept_from_doc)
        .collect::<Result<Vec<_>, _>>()?;
    let plans = doc
        .plans
        .into_iter()
        .map(|p| plan_from_doc(p, ""))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(KnowledgeLibrary { concepts, plans })
}

fn shape(location: impl Into<String>, message: impl Into<String>) -> KnowledgeError {
    KnowledgeError::Shape {
        location: location.into(),
        message: message.into(),
    }
}

fn concept_from_doc(doc: ConceptDoc) -> Result<Concept, KnowledgeError> {
    let location = format!("concept '{}'", doc.id);
    let definition = doc
        .definition
        .map(|node| node_from_doc(node, &location))
        .transpose()?;
    Ok(Concept {
        id: doc.id,
        kind: doc.kind,
        unit: doc.unit,
        value_domain: doc.value_domain,
        persistence: doc.persistence,
        definition,
    })
}

fn node_from_doc(doc: NodeDoc, location: &str) -> Result<ConstraintNode, KnowledgeError> {
    match doc.op.as_str() {
        "cmp" => {
            if !doc.children.is_empty() {
                return Err(shape(location, "'cmp' node must not have children"));
            }
            let cmp = doc
                .cmp
                .ok_or_else(|| shape(location, "'cmp' node is missing its 'cmp' object"))?;
            let op = CmpOp::parse(&cmp.operator).ok_or_else(|| {
                shape(
                    location,
                    format!(
                        "unknown comparison operator '{}' (expected one of >, >=, <, <=, =)",
                        cmp.operator
                    ),
                )
            })?;
            Ok(ConstraintNode::Cmp(FuzzyComparison {
                param: cmp.param,
                op,
                threshold: cmp.threshold,
                deviation: cmp.deviation,
                unit: cmp.unit,
            }))
        }
        "and" | "or" => {
            if doc.cmp.is_some() {
                return Err(shape(location, "'and'/'or' nodes must not carry a 'cmp' object"));
            }
            if doc.children.is_empty() {
                return Err(shape(location, format!("'{}' node has no children", doc.op)));
            }
            let children = doc
                .children
                .into_iter()
                .map(|c| node_from_doc(c, location))
                .collect::<Result<Vec<_>, _>>()?;
            Ok(if doc.op == "and" {
                ConstraintNode::And(children)
            } else {
                ConstraintNode::Or(children)
            })
        }
        "not" => {
            if doc.cmp.is_some() {
                return Err(shape(location, "'not' node must not carry a 'cmp' object"));
            }
            if doc.children.len() != 1 {
                return Err(shape(
                    location,
                    format!("'not' node needs exactly one child, found {}", doc.children.len()),
                ));
            }
            let child = node_from_doc(doc.children.into_iter().next().unwrap(), location)?;
            Ok(ConstraintNode::Not(Box::new(child)))
        }
        other => Err(shape(
            location,
            format!("unknown node op '{other}' (expected and, or, not, cmp)"),
        )),
    }
}

fn expr_from_doc(doc: ExprDoc, location: &str) -> Result<ConstraintNode, KnowledgeError> {
    match doc {
        ExprDoc::ConceptRef(id) => Ok(ConstraintNode::Ref(id)),
        ExprDoc::Node(node) => node_from_doc(node, location),
    }
}

fn plan_from_doc(doc: PlanDoc, parent: &str) -> Result<GuidelinePlan, KnowledgeError> {
    let location = if parent.is_empty() {
        format!("plan '{}'", doc.id)
    } else {
        format!("plan '{}/{}'", parent, doc.id)
    };
    let conditions = doc
        .conditions
        .into_iter()
        .map(|c| {
            Ok(Condition {
                role: c.role,
                expr: expr_from_doc(c.expr, &location)?,
            })
        })
        .collect::<Result<Vec<_>, KnowledgeError>>()?;
    let intentions = doc
        .intentions
        .into_iter()
        .map(|i| {
            Ok(Intention {
                kind: i.kind,
                mode: i.mode,
                target: expr_from_doc(i.target, &location)?,
                monitoring_delay_s: i.monitoring_delay_s,
                max_gap_s: i.max_gap_s,
            })
        })
        .collect::<Result<Vec<_>, KnowledgeError>>()?;
    let body = doc
        .body
        .into_iter()
        .map(|s| PlanStepSpec {
            id: s.id,
            action_concept: s.action_concept,
            code: s.code,
            kind: s.kind,
            earliest_offset_s: s.earliest_offset_s,
            latest_offset_s: s.latest_offset_s,
            period_s: s.period_s,
            timing_deviation_s: s.timing_deviation_s,
            min_repeat_gap_s: s.min_repeat_gap_s,
            max_dose: s.max_dose,
        })
        .collect();
    let own_path = if parent.is_empty() {
        doc.id.clone()
    } else {
        format!("{parent}/{}", doc.id)
    };
    let sub_plans = doc
        .sub_plans
        .into_iter()
        .map(|p| plan_from_doc(p, &own_path))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(GuidelinePlan {
        name: doc.name.unwrap_or_else(|| doc.id.clone()),
        id: doc.id,
        max_start_delay_s: doc.max_start_delay_s.unwrap_or(DEFAULT_MAX_START_DELAY_S),
        conditions,
        intentions,
        body,
        sub_plans,
    })
}

// ── Serialization ───────────────────────────────────────────────────────────

/// Serialize a library back to its canonical JSON document form. Parsing the
/// result yields a structurally equal library.
pub fn serialize_library(lib: &KnowledgeLibrary) -> String {
    let doc = LibraryDoc {
        concepts: lib.concepts.iter().map(concept_to_doc).collect(),
        plans: lib.plans.iter().map(plan_to_doc).collect(),
    };
    let mut text = serde_json::to_string_pretty(&doc).expect("library serialization cannot fail");
    text.push('\n');
    text
}

fn concept_to_doc(c: &Concept) -> ConceptDoc {
    ConceptDoc {
        id: c.id.clone(),
        kind: c.kind,
        unit: c.unit.clone(),
        value_domain: c.value_domain,
        persistence: c.persistence,
        definition: c.definition.as_ref().map(node_to_doc),
    }
}

fn node_to_doc(node: &ConstraintNode) -> NodeDoc {
    match node {
        ConstraintNode::Cmp(cmp) => NodeDoc {
            op: "cmp".into(),
            children: vec![],
            cmp: Some(CmpDoc {
                param: cmp.param.clone(),
                operator: cmp.op.as_str().into(),
                threshold: cmp.threshold.clone(),
                deviation: cmp.deviation,
                unit: cmp.unit.clone(),
            }),
        },
        ConstraintNode::And(children) => NodeDoc {
            op: "and".into(),
            children: children.iter().map(node_to_doc).collect(),
            cmp: None,
        },
        ConstraintNode::Or(children) => NodeDoc {
            op: "or".into(),
            children: children.iter().map(node_to_doc).collect(),
            cmp: None,
        },
        ConstraintNode::Not(child) => NodeDoc {
            op: "not".into(),
            children: vec![node_to_doc(child)],
            cmp: None,
        },
        ConstraintNode::Ref(id) => {
            // A bare reference inside a node tree cannot appear in parsed
            // documents; keep serialization total by emitting the reference
            // as a crisp equality on the referenced id. Conditions serialize
            // references through `expr_to_doc` instead.
            NodeDoc {
                op: "cmp".into(),
                children: vec![],
                cmp: Some(CmpDoc {
                    param: id.clone(),
                    operator: "=".into(),
                    threshold: Value::Num(1.0),
                    deviation: 0.0,
                    unit: None,
                }),
            }
        }
    }
}

fn expr_to_doc(expr: &ConstraintNode) -> ExprDoc {
    match expr {
        ConstraintNode::Ref(id) => ExprDoc::ConceptRef(id.clone()),
        other => ExprDoc::Node(node_to_doc(other)),
    }
}

fn plan_to_doc(p: &GuidelinePlan) -> PlanDoc {
    PlanDoc {
        id: p.id.clone(),
        name: Some(p.name.clone()),
        max_start_delay_s: Some(p.max_start_delay_s),
        conditions: p
            .conditions
            .iter()
            .map(|c| ConditionDoc {
                role: c.role,
                expr: expr_to_doc(&c.expr),
            })
            .collect(),
        intentions: p
            .intentions
            .iter()
            .map(|i| IntentionDoc {
                kind: i.kind,
                mode: i.mode,
                target: expr_to_doc(&i.target),
                monitoring_delay_s: i.monitoring_delay_s,
                max_gap_s: i.max_gap_s,
            })
            .collect(),
        body: p
            .body
            .iter()
            .map(|s| StepDoc {
                id: s.id.clone(),
                action_concept: s.action_concept.clone(),
                code: s.code.clone(),
                kind: s.kind,
                earliest_offset_s: s.earliest_offset_s,
                latest_offset_s: s.latest_offset_s,
                period_s: s.period_s,
                timing_deviation_s: s.timing_deviation_s,
                min_repeat_gap_s: s.min_repeat_gap_s,
                max_dose: s.max_dose,
            })
            .collect(),
        sub_plans: p.sub_plans.iter().map(plan_to_doc).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"{
      "concepts": [
        {"id": "sbp", "kind": "primitive", "unit": "mmHg",
         "persistence": {"good_before_s": 0, "good_after_s": 3600}},
        {"id": "dbp", "kind": "primitive", "unit": "mmHg",
         "persistence": {"good_before_s": 0, "good_after_s": 3600}},
        {"id": "hypertension", "kind": "abstract",
         "definition": {"op": "or", "children": [
           {"op": "cmp", "cmp": {"param": "sbp", "operator": ">", "threshold": 140, "deviation": 10}},
           {"op": "cmp", "cmp": {"param": "dbp", "operator": ">", "threshold": 90, "deviation": 10}}
         ]}}
      ],
      "plans": [
        {"id": "htn-care",
         "conditions": [{"role": "filter", "expr": "hypertension"}],
         "body": [{"id": "bp-check", "action_concept": "sbp", "kind": "periodic",
                   "latest_offset_s": 2592000, "period_s": 7776000}]}
      ]
    }"#;

    #[test]
    fn parses_sample_document() {
        let lib = parse_knowledge_library(SAMPLE).unwrap();
        assert_eq!(lib.concepts.len(), 3);
        assert_eq!(lib.plans.len(), 1);
        let plan = &lib.plans[0];
        assert_eq!(plan.name, "htn-care");
        assert_eq!(plan.max_start_delay_s, DEFAULT_MAX_START_DELAY_S);
        assert_eq!(
            plan.conditions[0].expr,
            ConstraintNode::Ref("hypertension".into())
        );
        match &lib.concepts[2].definition {
            Some(ConstraintNode::Or(children)) => assert_eq!(children.len(), 2),
            other => panic!("expected Or definition, got {other:?}"),
        }
    }

    #[test]
    fn roundtrip_is_structurally_stable() {
        let lib = parse_knowledge_library(SAMPLE).unwrap();
        let text = serialize_library(&lib);
        let reparsed = parse_knowledge_library(&text).unwrap();
        assert_eq!(lib, reparsed);
        // And the canonical form itself is a fixed point.
        assert_eq!(text, serialize_library(&reparsed));
    }

    #[test]
    fn syntax_errors_carry_positions() {
        let err = parse_knowledge_library("{\n  \"concepts\": [,]\n}").unwrap_err();
        match err {
            KnowledgeError::Syntax { line, column, .. } => {
                assert_eq!(line, 2);
                assert!(column > 0);
            }
            other => panic!("expected syntax error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_operator_is_reported_with_location() {
        let text = r#"{"concepts": [{"id": "x", "kind": "abstract",
            "definition": {"op": "cmp", "cmp": {"param": "p", "operator": "!=", "threshold": 1}}}]}"#;
        let err = parse_knowledge_library(text).unwrap_err();
        match err {
            KnowledgeError::Shape { location, message } => {
                assert!(location.contains("concept 'x'"), "location: {location}");
                assert!(message.contains("!="), "message: {message}");
            }
            other => panic!("expected shape error, got {other:?}"),
        }
    }

    #[test]
    fn not_requires_exactly_one_child() {
        let text = r#"{"concepts": [{"id": "x", "kind": "abstract",
            "definition": {"op": "not", "children": []}}]}"#;
        assert!(parse_knowledge_library(text).is_err());
    }
}
