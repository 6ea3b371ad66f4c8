//! Shared fixtures for the engine test suites: item/record builders anchored
//! at a fixed epoch, two small plan libraries, and runners that execute the
//! passes against leaked prepared knowledge (so tests get `'static`
//! analyses without threading lifetimes through every assertion).

use crate::engine::{
    bottom_up, missing, top_down, Analysis, EngineConfig, PreparedKnowledge,
};
use crate::fuzzy::default_analysis_window;
use crate::ingest::{DataItem, PatientRecord};
use crate::knowledge::{
    CmpOp, Concept, ConceptKind, Condition, ConditionRole, ConstraintNode, FuzzyComparison,
    GuidelinePlan, KnowledgeLibrary, PersistenceSpec, PlanStepSpec, StepKind, ValueDomain,
};
use crate::time::{add_secs, parse_timestamp, Time, SECS_PER_DAY};
use crate::value::Value;

// ── Time & data builders ────────────────────────────────────────────────────

/// Midnight UTC, `n` days after 2024-01-01 (negative offsets allowed).
pub fn day(n: i64) -> Time {
    add_secs(parse_timestamp("2024-01-01T00:00:00Z").unwrap(), n * SECS_PER_DAY)
}

/// A point measurement of `concept` at `day(day_offset)`.
pub fn item_at(concept: &str, value: f64, day_offset: i64) -> DataItem {
    DataItem {
        patient_id: "pt1".into(),
        concept_id: concept.into(),
        kind: ConceptKind::Primitive,
        value: Value::Num(value),
        unit: None,
        dose: None,
        valid_start: day(day_offset),
        valid_stop: None,
        source_row: 0,
    }
}

/// A drug administration carrying a dose.
pub fn dosed_item_at(concept: &str, dose: f64, day_offset: i64) -> DataItem {
    let mut item = item_at(concept, dose, day_offset);
    item.kind = ConceptKind::Event;
    item.dose = Some(dose);
    item
}

/// A record in canonical ingest order, with row numbers assigned by
/// position (as the CSV reader would).
pub fn record_of(items: &[DataItem]) -> PatientRecord {
    let mut items = items.to_vec();
    for (i, item) in items.iter_mut().enumerate() {
        item.source_row = i + 2;
    }
    items.sort_by(|a, b| {
        (a.valid_start, &a.concept_id, a.source_row)
            .cmp(&(b.valid_start, &b.concept_id, b.source_row))
    });
    PatientRecord { patient_id: "pt1".into(), demographics: Default::default(), items }
}

// ── Knowledge builders ──────────────────────────────────────────────────────

pub fn cmp(param: &str, op: CmpOp, threshold: f64, deviation: f64) -> ConstraintNode {
    ConstraintNode::Cmp(FuzzyComparison {
        param: param.into(),
        op,
        threshold: Value::Num(threshold),
        deviation,
        unit: None,
    })
}

fn concept(id: &str, kind: ConceptKind, gb_days: i64, ga_days: i64) -> Concept {
    Concept {
        id: id.into(),
        kind,
        unit: None,
        value_domain: ValueDomain::Numeric,
        persistence: Some(PersistenceSpec {
            good_before_s: gb_days * SECS_PER_DAY,
            good_after_s: ga_days * SECS_PER_DAY,
        }),
        definition: None,
    }
}

/// A body step with all offsets given in days.
#[allow(clippy::too_many_arguments)]
pub fn step_spec(
    id: &str,
    action_concept: &str,
    kind: StepKind,
    earliest_days: i64,
    latest_days: i64,
    period_days: Option<i64>,
    deviation_days: i64,
    min_gap_days: i64,
) -> PlanStepSpec {
    PlanStepSpec {
        id: id.into(),
        action_concept: action_concept.into(),
        code: None,
        kind,
        earliest_offset_s: earliest_days * SECS_PER_DAY,
        latest_offset_s: latest_days * SECS_PER_DAY,
        period_s: period_days.map(|d| d * SECS_PER_DAY),
        timing_deviation_s: deviation_days * SECS_PER_DAY,
        min_repeat_gap_s: min_gap_days * SECS_PER_DAY,
        max_dose: None,
    }
}

/// One leaf plan (`glycemia`) gated on elevated hba1c, with persistences
/// sized for day arithmetic: hba1c and glucose hold 60 days forward,
/// everything else 30, nothing extrapolates backward. Tests add bodies,
/// stop conditions, and intentions as needed; `lithium` is deliberately
/// absent so its items stay unexplained.
pub fn one_plan_library() -> KnowledgeLibrary {
    KnowledgeLibrary {
        concepts: vec![
            concept("hba1c", ConceptKind::Primitive, 0, 60),
            concept("glucose", ConceptKind::Primitive, 0, 60),
            concept("lipase", ConceptKind::Primitive, 0, 30),
            concept("tsh", ConceptKind::Primitive, 0, 30),
            concept("metformin", ConceptKind::Event, 0, 30),
            concept("ecg-done", ConceptKind::Event, 0, 30),
            concept("foot-exam-done", ConceptKind::Event, 0, 30),
            concept("eye-exam-done", ConceptKind::Event, 0, 30),
            concept("pancreatin", ConceptKind::Event, 0, 30),
            concept("levothyroxine", ConceptKind::Event, 0, 30),
        ],
        plans: vec![GuidelinePlan {
            id: "glycemia".into(),
            name: "Glycemic control".into(),
            max_start_delay_s: 90 * SECS_PER_DAY,
            conditions: vec![Condition {
                role: ConditionRole::Filter,
                expr: cmp("hba1c", CmpOp::Gt, 6.5, 0.5),
            }],
            intentions: vec![],
            body: vec![],
            sub_plans: vec![],
        }],
    }
}

/// A parent plan with two mutually exclusive children selected on renal
/// function; each child expects its own statin within 30 days.
pub fn two_sibling_library() -> KnowledgeLibrary {
    let child = |id: &str, gate: ConstraintNode, step_id: &str, drug: &str| GuidelinePlan {
        id: id.into(),
        name: id.into(),
        max_start_delay_s: 90 * SECS_PER_DAY,
        conditions: vec![Condition { role: ConditionRole::Filter, expr: gate }],
        intentions: vec![],
        body: vec![step_spec(step_id, drug, StepKind::Once, 0, 30, None, 14, 0)],
        sub_plans: vec![],
    };
    KnowledgeLibrary {
        concepts: vec![
            concept("ldl", ConceptKind::Primitive, 0, 180),
            concept("egfr", ConceptKind::Primitive, 0, 365),
            concept("simvastatin", ConceptKind::Event, 0, 30),
            concept("atorvastatin", ConceptKind::Event, 0, 30),
        ],
        plans: vec![GuidelinePlan {
            id: "lipid".into(),
            name: "Lipid management".into(),
            max_start_delay_s: 90 * SECS_PER_DAY,
            conditions: vec![Condition {
                role: ConditionRole::Filter,
                expr: cmp("ldl", CmpOp::Gt, 130.0, 10.0),
            }],
            intentions: vec![],
            body: vec![],
            sub_plans: vec![
                child(
                    "standard-statin",
                    cmp("egfr", CmpOp::Gt, 60.0, 15.0),
                    "simvastatin-start",
                    "simvastatin",
                ),
                child(
                    "renal-statin",
                    cmp("egfr", CmpOp::Le, 60.0, 15.0),
                    "atorvastatin-start",
                    "atorvastatin",
                ),
            ],
        }],
    }
}

// ── Runners ─────────────────────────────────────────────────────────────────

fn analysis_for(
    lib: &KnowledgeLibrary,
    record: &PatientRecord,
    config: EngineConfig,
) -> Analysis<'static> {
    let knowledge: &'static PreparedKnowledge =
        Box::leak(Box::new(PreparedKnowledge::prepare(lib.clone())));
    let config: &'static EngineConfig = Box::leak(Box::new(config));
    let window = default_analysis_window(&knowledge.lib, record).expect("record has items");
    Analysis::new(knowledge, config, window, record)
}

/// Run only the top-down pass.
pub fn run_top_down(lib: &KnowledgeLibrary, record: &PatientRecord) -> Analysis<'static> {
    let mut analysis = analysis_for(lib, record, EngineConfig::default());
    top_down::top_down_analysis(&mut analysis, record).expect("top-down pass succeeds");
    analysis
}

/// Run top-down, bottom-up, and missing-actions with the default config.
pub fn run_passes(
    lib: &KnowledgeLibrary,
    record: PatientRecord,
) -> (Analysis<'static>, PatientRecord) {
    run_passes_with(lib, record, EngineConfig::default())
}

/// Run top-down, bottom-up, and missing-actions with a custom config.
pub fn run_passes_with(
    lib: &KnowledgeLibrary,
    record: PatientRecord,
    config: EngineConfig,
) -> (Analysis<'static>, PatientRecord) {
    let mut analysis = analysis_for(lib, &record, config);
    top_down::top_down_analysis(&mut analysis, &record).expect("top-down pass succeeds");
    bottom_up::bottom_up_analysis(&mut analysis, &record);
    missing::missing_actions_analysis(&mut analysis, &record);
    (analysis, record)
}
