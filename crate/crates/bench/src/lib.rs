//! Shared fixtures for the criterion benchmarks: a large generated library
//! and a representative patient cohort.

use critiq_core::knowledge::{
    CmpOp, Concept, ConceptKind, Condition, ConditionRole, ConstraintNode, FuzzyComparison,
    GuidelinePlan, KnowledgeLibrary, PersistenceSpec, PlanStepSpec, StepKind, ValueDomain,
};
use critiq_core::synth::{generate_synthetic_cohort, ScenarioKind, ScenarioSpec, SyntheticCohort};
use critiq_core::time::SECS_PER_DAY;
use critiq_core::Value;

/// A deterministic taxonomy cohort for end-to-end benchmarks.
pub fn bench_cohort(patients: usize) -> SyntheticCohort {
    generate_synthetic_cohort(&ScenarioSpec {
        scenario: ScenarioKind::Taxonomy,
        patients,
        seed: 99,
    })
    .expect("benchmark cohort generates")
}

/// A wide, flat library for validation benchmarks: `groups` families, each
/// with three primitive parameters, one abstract concept over them, and one
/// two-step plan filtered on the abstraction.
pub fn wide_library(groups: usize) -> KnowledgeLibrary {
    let mut concepts = Vec::new();
    let mut plans = Vec::new();
    for g in 0..groups {
        let params: Vec<String> = (0..3).map(|i| format!("param-{g}-{i}")).collect();
        for id in &params {
            concepts.push(Concept {
                id: id.clone(),
                kind: ConceptKind::Primitive,
                unit: Some("unit".into()),
                value_domain: ValueDomain::Numeric,
                persistence: Some(PersistenceSpec {
                    good_before_s: 0,
                    good_after_s: 30 * SECS_PER_DAY,
                }),
                definition: None,
            });
        }
        let action = format!("action-{g}");
        concepts.push(Concept {
            id: action.clone(),
            kind: ConceptKind::Event,
            unit: None,
            value_domain: ValueDomain::Numeric,
            persistence: Some(PersistenceSpec { good_before_s: 0, good_after_s: SECS_PER_DAY }),
            definition: None,
        });
        let abstraction = format!("state-{g}");
        concepts.push(Concept {
            id: abstraction.clone(),
            kind: ConceptKind::Abstract,
            unit: None,
            value_domain: ValueDomain::Numeric,
            persistence: None,
            definition: Some(ConstraintNode::Or(
                params
                    .iter()
                    .map(|p| {
                        ConstraintNode::Cmp(FuzzyComparison {
                            param: p.clone(),
                            op: CmpOp::Gt,
                            threshold: Value::Num(100.0),
                            deviation: 10.0,
                            unit: None,
                        })
                    })
                    .collect(),
            )),
        });
        plans.push(GuidelinePlan {
            id: format!("plan-{g}"),
            name: format!("Plan {g}"),
            max_start_delay_s: 90 * SECS_PER_DAY,
            conditions: vec![Condition {
                role: ConditionRole::Filter,
                expr: ConstraintNode::Ref(abstraction),
            }],
            intentions: vec![],
            body: vec![
                PlanStepSpec {
                    id: format!("start-{g}"),
                    action_concept: action.clone(),
                    code: None,
                    kind: StepKind::Once,
                    earliest_offset_s: 0,
                    latest_offset_s: 30 * SECS_PER_DAY,
                    period_s: None,
                    timing_deviation_s: 14 * SECS_PER_DAY,
                    min_repeat_gap_s: 30 * SECS_PER_DAY,
                    max_dose: None,
                },
                PlanStepSpec {
                    id: format!("recheck-{g}"),
                    action_concept: action,
                    code: None,
                    kind: StepKind::Periodic,
                    earliest_offset_s: 0,
                    latest_offset_s: 30 * SECS_PER_DAY,
                    period_s: Some(90 * SECS_PER_DAY),
                    timing_deviation_s: 14 * SECS_PER_DAY,
                    min_repeat_gap_s: 30 * SECS_PER_DAY,
                    max_dose: None,
                },
            ],
            sub_plans: vec![],
        });
    }
    KnowledgeLibrary { concepts, plans }
}
