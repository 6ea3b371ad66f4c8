//! Seeded synthetic cohorts with a planted ground-truth deviation manifest.
//!
//! Two scenario families:
//!
//! - [`ScenarioKind::Taxonomy`] — a multi-plan fixture library (glycemia
//!   care, pancreatic watch, thyroid replacement, and a two-arm lipid plan)
//!   with one patient variant per deviation kind: each patient's record is a
//!   clean 4.7-year baseline plus at most one planted irregularity whose
//!   expected critique comments are recorded in the manifest.
//! - [`ScenarioKind::DrugEscalation`] — a drug-titration plan exercising the
//!   dose-escalation gate: a patient whose escalation is due, one already at
//!   maximum dose, and one whose poor medication coverage defers it.
//!
//! Generation is deterministic per `(scenario, patients, seed)`: every
//! patient derives an independent stream cipher RNG, values jitter only
//! inside membership-saturating ranges, and timestamps never jitter. The
//! cohort is rendered to mapping + data CSV and read back through the real
//! ingest path, so a generated cohort exercises exactly the pipeline a real
//! one would.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{CommentType, CritiqueReport};
use crate::ingest::{ingest_patient_records, load_mapping, IngestError, PatientRecord};
use crate::knowledge::validate::validate_library;
use crate::knowledge::{
    CmpOp, Concept, ConceptId, ConceptKind, Condition, ConditionRole, ConstraintNode,
    FuzzyComparison, GuidelinePlan, KnowledgeLibrary, PersistenceSpec, PlanId, PlanStepSpec,
    StepId, StepKind, ValueDomain,
};
use crate::time::{add_secs, format_timestamp, parse_timestamp, Time, SECS_PER_DAY, SECS_PER_HOUR};
use crate::value::Value;

// ── Specification ───────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioKind {
    Taxonomy,
    DrugEscalation,
}

impl ScenarioKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ScenarioKind::Taxonomy => "taxonomy",
            ScenarioKind::DrugEscalation => "drug-escalation",
        }
    }

    pub fn parse(s: &str) -> Option<ScenarioKind> {
        match s {
            "taxonomy" => Some(ScenarioKind::Taxonomy),
            "drug-escalation" => Some(ScenarioKind::DrugEscalation),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub scenario: ScenarioKind,
    pub patients: usize,
    pub seed: u64,
}

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("a cohort needs at least one patient")]
    EmptyCohort,
    #[error("fixture library failed validation: {0}")]
    Library(String),
    #[error("generated cohort failed ingestion: {0}")]
    Ingest(#[from] IngestError),
    #[error("generated rows did not ingest cleanly: {0}")]
    DirtyRows(String),
}

// ── Ground truth ────────────────────────────────────────────────────────────

/// One deviation the generator planted, in the shape report comments are
/// compared against: type, attribution, time, and (for graded timing
/// deviations) the exact expected timing score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpectedComment {
    #[serde(rename = "type")]
    pub comment_type: CommentType,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub plan_id: Option<PlanId>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub step_id: Option<StepId>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub concept_id: Option<ConceptId>,
    pub time: Time,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub timing: Option<f64>,
}

impl ExpectedComment {
    fn sort_key(&self) -> (Time, CommentType, Option<&str>, Option<&str>, Option<&str>) {
        (
            self.time,
            self.comment_type,
            self.plan_id.as_deref(),
            self.step_id.as_deref(),
            self.concept_id.as_deref(),
        )
    }

    fn render(&self) -> String {
        format!(
            "{} {} plan={} step={} concept={} timing={}",
            format_timestamp(self.time),
            self.comment_type.as_str(),
            self.plan_id.as_deref().unwrap_or("-"),
            self.step_id.as_deref().unwrap_or("-"),
            self.concept_id.as_deref().unwrap_or("-"),
            self.timing.map_or_else(|| "-".into(), |t| format!("{t:.3}")),
        )
    }
}

/// Planted truth for one patient: which variant the record carries and the
/// exact deviation comments an analysis of it must produce — no more, no
/// fewer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientTruth {
    pub patient_id: String,
    pub variant: String,
    /// The instant every planted offset is measured from (the trigger time).
    pub anchor: Time,
    pub expected_deviations: Vec<ExpectedComment>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortManifest {
    pub scenario: ScenarioKind,
    pub seed: u64,
    pub library_hash: String,
    pub patients: Vec<PatientTruth>,
}

/// A generated cohort: the fixture library, its CSV renditions, the records
/// as the ingest path produced them, and the ground-truth manifest.
#[derive(Debug)]
pub struct SyntheticCohort {
    pub library: KnowledgeLibrary,
    pub mapping_csv: String,
    pub data_csv: String,
    /// Sorted by patient id; aligned with `manifest.patients`.
    pub records: Vec<PatientRecord>,
    pub manifest: CohortManifest,
}

// ── Generation ──────────────────────────────────────────────────────────────

pub fn generate_synthetic_cohort(spec: &ScenarioSpec) -> Result<SyntheticCohort, SynthError> {
    if spec.patients == 0 {
        return Err(SynthError::EmptyCohort);
    }
    let library = match spec.scenario {
        ScenarioKind::Taxonomy => taxonomy_fixture_library(),
        ScenarioKind::DrugEscalation => drug_escalation_fixture_library(),
    };
    let validation = validate_library(&library);
    if validation.has_errors() {
        let text: Vec<String> = validation.errors().map(ToString::to_string).collect();
        return Err(SynthError::Library(text.join("; ")));
    }

    let mut rows: Vec<Row> = Vec::new();
    let mut patients = Vec::new();
    for i in 0..spec.patients {
        let mut rng = patient_rng(spec.seed, i);
        let patient_id = format!("pt-{:04}", i + 1);
        let anchor = draw_anchor(&mut rng);
        let (variant, expected) = match spec.scenario {
            ScenarioKind::Taxonomy => {
                emit_taxonomy_patient(&mut rng, &patient_id, anchor, i, &mut rows)
            }
            ScenarioKind::DrugEscalation => {
                emit_escalation_patient(&mut rng, &patient_id, anchor, i, &mut rows)
            }
        };
        let mut expected = expected;
        expected.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
        patients.push(PatientTruth { patient_id, variant, anchor, expected_deviations: expected });
    }
    rows.sort_by(|a, b| {
        (&a.patient_id, a.valid_start, &a.external_id)
            .cmp(&(&b.patient_id, b.valid_start, &b.external_id))
    });

    let data_csv = render_data_csv(&rows);
    let mapping_csv = render_mapping_csv(&library);
    let mapping = load_mapping(mapping_csv.as_bytes(), &library)?;
    let (records, report) = ingest_patient_records(data_csv.as_bytes(), &mapping, &library)?;
    if !report.skipped.is_empty() || !report.unmapped.is_empty() {
        let mut reasons: Vec<String> = report
            .skipped
            .iter()
            .chain(report.unmapped.iter())
            .map(|s| format!("row {}: {}", s.row, s.reason))
            .collect();
        reasons.truncate(5);
        return Err(SynthError::DirtyRows(reasons.join("; ")));
    }

    let manifest = CohortManifest {
        scenario: spec.scenario,
        seed: spec.seed,
        library_hash: library.content_hash(),
        patients,
    };
    Ok(SyntheticCohort { library, mapping_csv, data_csv, records, manifest })
}

fn patient_rng(seed: u64, index: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

fn draw_anchor(rng: &mut ChaCha8Rng) -> Time {
    let epoch = parse_timestamp("2021-01-01T00:00:00Z").expect("fixed epoch parses");
    add_secs(epoch, rng.gen_range(0..730) * SECS_PER_DAY + rng.gen_range(0..24) * SECS_PER_HOUR)
}

// ── Report comparison ───────────────────────────────────────────────────────

/// The report's deviation comments, in the manifest's comparison shape.
pub fn observed_deviations(report: &CritiqueReport) -> Vec<ExpectedComment> {
    report
        .comments
        .iter()
        .filter(|c| c.comment_type.is_deviation())
        .map(|c| ExpectedComment {
            comment_type: c.comment_type,
            plan_id: c.plan_id.clone(),
            step_id: c.step_id.clone(),
            concept_id: c.concept_id.clone(),
            time: c.time,
            timing: c.scores.timing,
        })
        .collect()
}

/// Check a report against a patient's planted truth: the deviation comments
/// must match the expected set exactly (as a multiset), including attribution
/// and timing scores. On mismatch the error lists both sides.
pub fn verify_patient_report(truth: &PatientTruth, report: &CritiqueReport) -> Result<(), String> {
    let mut expected = truth.expected_deviations.clone();
    let mut observed = observed_deviations(report);
    expected.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
    observed.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));

    let matches = expected.len() == observed.len()
        && expected.iter().zip(&observed).all(|(e, o)| {
            e.sort_key() == o.sort_key()
                && match (e.timing, o.timing) {
                    (None, None) => true,
                    (Some(a), Some(b)) => (a - b).abs() <= 1e-12,
                    _ => false,
                }
        });
    if matches {
        return Ok(());
    }

    let render = |list: &[ExpectedComment]| -> String {
        if list.is_empty() {
            "  (none)".into()
        } else {
            list.iter().map(|c| format!("  {}", c.render())).collect::<Vec<_>>().join("\n")
        }
    };
    Err(format!(
        "patient {} ({}): deviations do not match the planted truth\nexpected:\n{}\nobserved:\n{}",
        truth.patient_id,
        truth.variant,
        render(&expected),
        render(&observed),
    ))
}

// ── Fixture libraries ───────────────────────────────────────────────────────

/// Multi-plan library whose shapes exercise every step-classification kind:
/// a glycemia plan (once-steps plus a quarterly test), a pancreatic watch
/// with abort/complete exits, a thyroid plan that completes, and a lipid
/// plan whose two arms select on kidney function.
pub fn taxonomy_fixture_library() -> KnowledgeLibrary {
    let concepts = vec![
        primitive("hba1c", Some("%"), 1, 120),
        primitive("glucose", Some("mg/dL"), 0, 90),
        primitive("ldl", Some("mg/dL"), 0, 180),
        primitive("egfr", Some("mL/min"), 0, 365),
        primitive("tsh", Some("mIU/L"), 0, 180),
        primitive("lipase", Some("U/L"), 0, 30),
        event("metformin"),
        event("ecg-done"),
        event("eye-exam-done"),
        event("foot-exam-done"),
        event("pancreatin"),
        event("levothyroxine"),
        event("simvastatin"),
        event("atorvastatin"),
        event("lithium"),
        abstract_concept(
            "diabetes-active",
            ConstraintNode::or_all(vec![
                cmp("hba1c", CmpOp::Gt, 6.5, 0.5),
                cmp("glucose", CmpOp::Gt, 126.0, 10.0),
            ]),
        ),
    ];

    let glycemia = GuidelinePlan {
        id: "glycemia".into(),
        name: "Glycemia care".into(),
        max_start_delay_s: 90 * SECS_PER_DAY,
        conditions: vec![filter(ConstraintNode::Ref("diabetes-active".into()))],
        intentions: Vec::new(),
        body: vec![
            once_step("metformin-start", "metformin", 0, 30),
            once_step("baseline-ecg", "ecg-done", 0, 30),
            once_step("eye-exam", "eye-exam-done", 0, 30),
            once_step("foot-exam", "foot-exam-done", 30, 60),
            periodic_step("hba1c-test", "hba1c", 0, 30, 90),
        ],
        sub_plans: Vec::new(),
    };

    let pancreatic_watch = GuidelinePlan {
        id: "pancreatic-watch".into(),
        name: "Pancreatic enzyme watch".into(),
        max_start_delay_s: 90 * SECS_PER_DAY,
        conditions: vec![
            filter(ConstraintNode::and_all(vec![
                cmp("lipase", CmpOp::Gt, 200.0, 50.0),
                cmp("lipase", CmpOp::Lt, 300.0, 0.0),
            ])),
            condition(ConditionRole::Abort, cmp("lipase", CmpOp::Ge, 300.0, 0.0)),
            condition(ConditionRole::Complete, cmp("lipase", CmpOp::Le, 40.0, 0.0)),
        ],
        intentions: Vec::new(),
        body: vec![once_step("pancreatin-start", "pancreatin", 0, 30)],
        sub_plans: Vec::new(),
    };

    let thyroid = GuidelinePlan {
        id: "thyroid-replacement".into(),
        name: "Thyroid replacement".into(),
        max_start_delay_s: 90 * SECS_PER_DAY,
        conditions: vec![
            filter(cmp("tsh", CmpOp::Gt, 4.0, 1.0)),
            condition(ConditionRole::Complete, cmp("tsh", CmpOp::Le, 2.0, 0.0)),
        ],
        intentions: Vec::new(),
        body: vec![once_step("levothyroxine-start", "levothyroxine", 0, 30)],
        sub_plans: Vec::new(),
    };

    let lipid = GuidelinePlan {
        id: "lipid".into(),
        name: "Lipid management".into(),
        max_start_delay_s: 90 * SECS_PER_DAY,
        conditions: vec![filter(cmp("ldl", CmpOp::Gt, 130.0, 10.0))],
        intentions: Vec::new(),
        body: Vec::new(),
        sub_plans: vec![
            GuidelinePlan {
                id: "standard-statin".into(),
                name: "Standard statin arm".into(),
                max_start_delay_s: 90 * SECS_PER_DAY,
                conditions: vec![filter(cmp("egfr", CmpOp::Gt, 60.0, 15.0))],
                intentions: Vec::new(),
                body: vec![once_step("simvastatin-start", "simvastatin", 0, 30)],
                sub_plans: Vec::new(),
            },
            GuidelinePlan {
                id: "renal-statin".into(),
                name: "Renal-adjusted statin arm".into(),
                max_start_delay_s: 90 * SECS_PER_DAY,
                conditions: vec![filter(cmp("egfr", CmpOp::Le, 60.0, 15.0))],
                intentions: Vec::new(),
                body: vec![once_step("atorvastatin-start", "atorvastatin", 0, 30)],
                sub_plans: Vec::new(),
            },
        ],
    };

    KnowledgeLibrary { concepts, plans: vec![glycemia, pancreatic_watch, thyroid, lipid] }
}

/// Single drug-titration plan: recurring metformin administration plus a
/// dose-escalation step gated by maximum dose and medication coverage.
pub fn drug_escalation_fixture_library() -> KnowledgeLibrary {
    let concepts = vec![
        primitive("glucose", Some("mg/dL"), 0, 365),
        event("metformin-admin"),
    ];
    let plan = GuidelinePlan {
        id: "metformin-titration".into(),
        name: "Metformin titration".into(),
        max_start_delay_s: 90 * SECS_PER_DAY,
        conditions: vec![filter(cmp("glucose", CmpOp::Gt, 126.0, 10.0))],
        intentions: Vec::new(),
        body: vec![
            PlanStepSpec {
                id: "metformin-maintenance".into(),
                action_concept: "metformin-admin".into(),
                code: None,
                kind: StepKind::DrugAdministration,
                earliest_offset_s: 0,
                latest_offset_s: 30 * SECS_PER_DAY,
                period_s: Some(30 * SECS_PER_DAY),
                timing_deviation_s: 14 * SECS_PER_DAY,
                min_repeat_gap_s: 7 * SECS_PER_DAY,
                max_dose: None,
            },
            PlanStepSpec {
                id: "metformin-increase".into(),
                action_concept: "metformin-admin".into(),
                code: None,
                kind: StepKind::DrugIncrease,
                earliest_offset_s: 60 * SECS_PER_DAY,
                latest_offset_s: 120 * SECS_PER_DAY,
                period_s: None,
                timing_deviation_s: 30 * SECS_PER_DAY,
                min_repeat_gap_s: 0,
                max_dose: Some(2000.0),
            },
        ],
        sub_plans: Vec::new(),
    };
    KnowledgeLibrary { concepts, plans: vec![plan] }
}

// ── Patient emission: taxonomy ──────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum TaxonomyVariant {
    Clean,
    MissingAction,
    StepTooLate,
    StepTooEarly,
    DuplicateStep,
    RedundantRepeat,
    StoppedPlanStep,
    UnsupportedAction,
    WrongPath,
}

const TAXONOMY_CYCLE: [TaxonomyVariant; 9] = [
    TaxonomyVariant::Clean,
    TaxonomyVariant::MissingAction,
    TaxonomyVariant::StepTooLate,
    TaxonomyVariant::StepTooEarly,
    TaxonomyVariant::DuplicateStep,
    TaxonomyVariant::RedundantRepeat,
    TaxonomyVariant::StoppedPlanStep,
    TaxonomyVariant::UnsupportedAction,
    TaxonomyVariant::WrongPath,
];

impl TaxonomyVariant {
    fn label(self) -> &'static str {
        match self {
            TaxonomyVariant::Clean => "clean",
            TaxonomyVariant::MissingAction => "missing-action",
            TaxonomyVariant::StepTooLate => "step-too-late",
            TaxonomyVariant::StepTooEarly => "step-too-early",
            TaxonomyVariant::DuplicateStep => "duplicate-step",
            TaxonomyVariant::RedundantRepeat => "redundant-step-repeated",
            TaxonomyVariant::StoppedPlanStep => "stopped-plan-step",
            TaxonomyVariant::UnsupportedAction => "step-not-supported",
            TaxonomyVariant::WrongPath => "wrong-path-selection",
        }
    }
}

/// Emit one taxonomy patient: a clean multi-plan baseline (quarterly labs
/// over ~4.7 years, every once-step inside its window) plus the variant's
/// single planted irregularity. Returns the variant label and the exact
/// deviations the plant must surface as.
fn emit_taxonomy_patient(
    rng: &mut ChaCha8Rng,
    patient_id: &str,
    anchor: Time,
    index: usize,
    rows: &mut Vec<Row>,
) -> (String, Vec<ExpectedComment>) {
    let variant = TAXONOMY_CYCLE[index % TAXONOMY_CYCLE.len()];
    let day = |n: i64| add_secs(anchor, n * SECS_PER_DAY);
    let mut push = |external: &str, value: String, t: Time, dose: Option<f64>| {
        rows.push(Row {
            patient_id: patient_id.to_owned(),
            external_id: format!("ext-{external}"),
            value,
            valid_start: t,
            dose,
        });
    };

    // Quarterly labs keeping the glycemia plan's entry saturated for the
    // whole record and its recurring test on schedule.
    for k in 0..20 {
        push("glucose", num(rng.gen_range(145.0..155.0)), day(90 * k), None);
        if !(variant == TaxonomyVariant::MissingAction && k == 2) {
            push("hba1c", num(rng.gen_range(6.7..6.9)), day(10 + 90 * k), None);
        }
    }

    // Glycemia once-steps, all inside their expected windows by default.
    push("metformin", "1".into(), day(5), Some(500.0));
    let ecg_day = if variant == TaxonomyVariant::StepTooEarly { -7 } else { 7 };
    push("ecg-done", "1".into(), day(ecg_day), None);
    push("eye-exam-done", "1".into(), day(12), None);
    if variant == TaxonomyVariant::DuplicateStep {
        push("eye-exam-done", "1".into(), day(15), None);
    }
    let foot_day = if variant == TaxonomyVariant::StepTooLate { 67 } else { 40 };
    push("foot-exam-done", "1".into(), day(foot_day), None);

    // Pancreatic watch: moderate lipase opens it, pancreatin lands on time.
    push("lipase", num(rng.gen_range(240.0..260.0)), day(0), None);
    push("pancreatin", "1".into(), day(10), None);
    if variant == TaxonomyVariant::StoppedPlanStep {
        push("lipase", num(400.0), day(100), None);
        push("pancreatin", "1".into(), day(105), None);
    }

    // Thyroid replacement: raised TSH opens it, levothyroxine on time.
    push("tsh", num(rng.gen_range(7.5..8.5)), day(0), None);
    push("levothyroxine", "1".into(), day(10), None);
    if variant == TaxonomyVariant::RedundantRepeat {
        push("tsh", num(1.5), day(150), None);
        push("levothyroxine", "1".into(), day(160), None);
    }

    // Lipid plan: raised LDL plus kidney function selecting the arm.
    push("ldl", num(rng.gen_range(175.0..185.0)), day(0), None);
    let egfr = if variant == TaxonomyVariant::WrongPath {
        rng.gen_range(35.0..45.0)
    } else {
        rng.gen_range(85.0..95.0)
    };
    push("egfr", num(egfr), day(0), None);
    push("simvastatin", "1".into(), day(10), None);

    if variant == TaxonomyVariant::UnsupportedAction {
        push("lithium", num(rng.gen_range(0.4..0.8)), day(40), None);
    }

    let expect = |comment_type: CommentType,
                  plan: Option<&str>,
                  step: Option<&str>,
                  concept: &str,
                  day_offset: i64,
                  timing: Option<f64>| ExpectedComment {
        comment_type,
        plan_id: plan.map(str::to_owned),
        step_id: step.map(str::to_owned),
        concept_id: Some(concept.to_owned()),
        time: day(day_offset),
        timing,
    };

    let expected = match variant {
        TaxonomyVariant::Clean => Vec::new(),
        // The skipped quarter leaves its bucket empty; the next test re-
        // anchors the recurrence, and its lateness is explained away as
        // condition evidence (the concept also feeds the plan's entry).
        TaxonomyVariant::MissingAction => vec![expect(
            CommentType::MissingAction,
            Some("glycemia"),
            Some("hba1c-test"),
            "hba1c",
            270,
            None,
        )],
        // Seven days past the window end, half the fuzzy timing ramp.
        TaxonomyVariant::StepTooLate => vec![expect(
            CommentType::StepTooLate,
            Some("glycemia"),
            Some("foot-exam"),
            "foot-exam-done",
            67,
            Some(0.5),
        )],
        // Before any activation: too early at score zero, and the window
        // still falls due unserved at the latest allowed plan start.
        TaxonomyVariant::StepTooEarly => vec![
            expect(
                CommentType::StepTooEarly,
                Some("glycemia"),
                Some("baseline-ecg"),
                "ecg-done",
                -7,
                Some(0.0),
            ),
            expect(
                CommentType::MissingAction,
                Some("glycemia"),
                Some("baseline-ecg"),
                "ecg-done",
                90,
                None,
            ),
        ],
        // Three days after the first exam, inside the minimum repeat gap.
        TaxonomyVariant::DuplicateStep => vec![expect(
            CommentType::DuplicateStep,
            Some("glycemia"),
            Some("eye-exam"),
            "eye-exam-done",
            15,
            None,
        )],
        // Normal TSH completes the plan before the repeat administration.
        TaxonomyVariant::RedundantRepeat => vec![expect(
            CommentType::RedundantStepRepeated,
            Some("thyroid-replacement"),
            Some("levothyroxine-start"),
            "levothyroxine",
            160,
            None,
        )],
        // The lipase spike aborts the watch before the repeat.
        TaxonomyVariant::StoppedPlanStep => vec![expect(
            CommentType::StoppedPlanStep,
            Some("pancreatic-watch"),
            Some("pancreatin-start"),
            "pancreatin",
            105,
            None,
        )],
        // No plan references lithium at all.
        TaxonomyVariant::UnsupportedAction => vec![expect(
            CommentType::StepNotSupported,
            None,
            None,
            "lithium",
            40,
            None,
        )],
        // Low kidney function: the renal arm fits better than the standard
        // arm that was acted on, and the renal arm's own step goes unserved.
        TaxonomyVariant::WrongPath => vec![
            expect(
                CommentType::WrongPathSelection,
                Some("lipid/standard-statin"),
                Some("simvastatin-start"),
                "simvastatin",
                10,
                None,
            ),
            expect(
                CommentType::MissingAction,
                Some("lipid/renal-statin"),
                Some("atorvastatin-start"),
                "atorvastatin",
                90,
                None,
            ),
        ],
    };

    (variant.label().to_owned(), expected)
}

// ── Patient emission: drug escalation ───────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum EscalationVariant {
    EscalationDue,
    AtMaximumDose,
    LowCompliance,
}

const ESCALATION_CYCLE: [EscalationVariant; 3] = [
    EscalationVariant::EscalationDue,
    EscalationVariant::AtMaximumDose,
    EscalationVariant::LowCompliance,
];

impl EscalationVariant {
    fn label(self) -> &'static str {
        match self {
            EscalationVariant::EscalationDue => "escalation-due",
            EscalationVariant::AtMaximumDose => "at-maximum-dose",
            EscalationVariant::LowCompliance => "low-compliance",
        }
    }
}

/// Emit one drug-escalation patient: raised glucose opens the titration
/// plan, then the variant decides how the administrations unfold.
fn emit_escalation_patient(
    rng: &mut ChaCha8Rng,
    patient_id: &str,
    anchor: Time,
    index: usize,
    rows: &mut Vec<Row>,
) -> (String, Vec<ExpectedComment>) {
    let variant = ESCALATION_CYCLE[index % ESCALATION_CYCLE.len()];
    let day = |n: i64| add_secs(anchor, n * SECS_PER_DAY);
    let mut push = |external: &str, value: String, t: Time, dose: Option<f64>| {
        rows.push(Row {
            patient_id: patient_id.to_owned(),
            external_id: format!("ext-{external}"),
            value,
            valid_start: t,
            dose,
        });
    };

    push("glucose", num(rng.gen_range(145.0..155.0)), day(0), None);

    let expect = |comment_type: CommentType, step: &str, day_offset: i64, timing: Option<f64>| {
        ExpectedComment {
            comment_type,
            plan_id: Some("metformin-titration".into()),
            step_id: Some(step.to_owned()),
            concept_id: Some("metformin-admin".into()),
            time: day(day_offset),
            timing,
        }
    };

    let expected = match variant {
        // Steady monthly administrations at a constant dose: coverage is
        // high, the dose never rises, so the escalation falls due unserved.
        EscalationVariant::EscalationDue => {
            for k in 0..12 {
                push("metformin-admin", "1".into(), day(1 + 30 * k), Some(1000.0));
            }
            vec![expect(CommentType::MissingAction, "metformin-increase", 120, None)]
        }
        // The dose reaches the step's maximum inside the escalation window:
        // nothing is missing and nothing is late.
        EscalationVariant::AtMaximumDose => {
            for k in 0..12 {
                let dose = if k >= 2 { 2000.0 } else { 1000.0 };
                push("metformin-admin", "1".into(), day(1 + 30 * k), Some(dose));
            }
            Vec::new()
        }
        // Two administrations three months apart: four empty maintenance
        // buckets, a late second administration, and an escalation demand
        // deferred for poor coverage. A trailing glucose extends the record
        // so the escalation's due time can be judged at all.
        EscalationVariant::LowCompliance => {
            push("metformin-admin", "1".into(), day(1), Some(1000.0));
            push("metformin-admin", "1".into(), day(91), Some(1000.0));
            push("glucose", num(rng.gen_range(145.0..155.0)), day(200), None);
            vec![
                expect(CommentType::MissingAction, "metformin-maintenance", 60, None),
                expect(CommentType::MissingAction, "metformin-maintenance", 90, None),
                expect(CommentType::StepTooLate, "metformin-maintenance", 91, Some(0.0)),
                expect(CommentType::LowMedicationCompliance, "metformin-increase", 120, None),
                expect(CommentType::MissingAction, "metformin-maintenance", 150, None),
                expect(CommentType::MissingAction, "metformin-maintenance", 180, None),
            ]
        }
    };

    (variant.label().to_owned(), expected)
}

// ── Row rendering ───────────────────────────────────────────────────────────

struct Row {
    patient_id: String,
    external_id: String,
    value: String,
    valid_start: Time,
    dose: Option<f64>,
}

fn render_data_csv(rows: &[Row]) -> String {
    let mut out = String::from("patient_id,external_concept_id,value,valid_start,dose\n");
    for row in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            row.patient_id,
            row.external_id,
            row.value,
            format_timestamp(row.valid_start),
            row.dose.map_or_else(String::new, num),
        ));
    }
    out
}

fn render_mapping_csv(lib: &KnowledgeLibrary) -> String {
    let mut out = String::from("external_id,internal_concept_id,unit_factor,unit_offset\n");
    for concept in &lib.concepts {
        if concept.kind != ConceptKind::Abstract {
            out.push_str(&format!("ext-{},{},1.0,0.0\n", concept.id, concept.id));
        }
    }
    out
}

fn num(v: f64) -> String {
    format!("{v}")
}

// ── Library builders ────────────────────────────────────────────────────────

fn primitive(id: &str, unit: Option<&str>, good_before_d: i64, good_after_d: i64) -> Concept {
    Concept {
        id: id.into(),
        kind: ConceptKind::Primitive,
        unit: unit.map(str::to_owned),
        value_domain: ValueDomain::Numeric,
        persistence: Some(PersistenceSpec {
            good_before_s: good_before_d * SECS_PER_DAY,
            good_after_s: good_after_d * SECS_PER_DAY,
        }),
        definition: None,
    }
}

fn event(id: &str) -> Concept {
    Concept {
        id: id.into(),
        kind: ConceptKind::Event,
        unit: None,
        value_domain: ValueDomain::Numeric,
        persistence: Some(PersistenceSpec { good_before_s: 0, good_after_s: 30 * SECS_PER_DAY }),
        definition: None,
    }
}

fn abstract_concept(id: &str, definition: ConstraintNode) -> Concept {
    Concept {
        id: id.into(),
        kind: ConceptKind::Abstract,
        unit: None,
        value_domain: ValueDomain::Numeric,
        persistence: None,
        definition: Some(definition),
    }
}

fn cmp(param: &str, op: CmpOp, threshold: f64, deviation: f64) -> ConstraintNode {
    ConstraintNode::Cmp(FuzzyComparison {
        param: param.into(),
        op,
        threshold: Value::Num(threshold),
        deviation,
        unit: None,
    })
}

fn filter(expr: ConstraintNode) -> Condition {
    Condition { role: ConditionRole::Filter, expr }
}

fn condition(role: ConditionRole, expr: ConstraintNode) -> Condition {
    Condition { role, expr }
}

fn once_step(id: &str, concept: &str, earliest_d: i64, latest_d: i64) -> PlanStepSpec {
    PlanStepSpec {
        id: id.into(),
        action_concept: concept.into(),
        code: None,
        kind: StepKind::Once,
        earliest_offset_s: earliest_d * SECS_PER_DAY,
        latest_offset_s: latest_d * SECS_PER_DAY,
        period_s: None,
        timing_deviation_s: 14 * SECS_PER_DAY,
        min_repeat_gap_s: 30 * SECS_PER_DAY,
        max_dose: None,
    }
}

fn periodic_step(id: &str, concept: &str, earliest_d: i64, latest_d: i64, period_d: i64) -> PlanStepSpec {
    PlanStepSpec {
        id: id.into(),
        action_concept: concept.into(),
        code: None,
        kind: StepKind::Periodic,
        earliest_offset_s: earliest_d * SECS_PER_DAY,
        latest_offset_s: latest_d * SECS_PER_DAY,
        period_s: Some(period_d * SECS_PER_DAY),
        timing_deviation_s: 14 * SECS_PER_DAY,
        min_repeat_gap_s: 30 * SECS_PER_DAY,
        max_dose: None,
    }
}

// ── Tests ───────────────────────────────────────────────────────────────────
