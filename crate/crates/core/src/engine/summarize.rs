//! Summarize pass: collapse the augmented timeline into the critique
//! report.
//!
//! Each data item keeps exactly one comment — the most reasonable of its
//! candidate explanations (ties prefer higher applicability, then earlier
//! plan ids, then step explanations over evidence). Missing-action and
//! low-compliance findings, which have no item, become standalone comments,
//! and every intention assessment becomes one comment. Comments sort by
//! `(time, type, plan, step, concept, span end)` and the statistics section
//! counts comments per type, so the report is deterministic and the comment
//! count is exactly `items + standalone findings + intention assessments`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::engine::explanation::{select_best, ComputedExplanation, ExplanationType};
use crate::engine::timeline::{IntentionAssessment, IntentionOutcome, TimePointPayload};
use crate::engine::{Analysis, EngineConfig, PreparedKnowledge};
use crate::ingest::PatientRecord;
use crate::knowledge::{ConceptId, PlanId, StepId};
use crate::time::{Span, Time, SECS_PER_DAY};

// ── Comment taxonomy ────────────────────────────────────────────────────────

/// All comment kinds a report can carry: the twelve explanation kinds plus
/// the three intention-assessment kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CommentType {
    StepNotSupported,
    StoppedPlanStep,
    RedundantStepRepeated,
    DuplicateStep,
    WrongPathSelection,
    StepTooEarly,
    StepOnTime,
    StepTooLate,
    MissingAction,
    LowMedicationCompliance,
    ConditionEvidence,
    IntentionEvidence,
    IntentionAchievement,
    IntentionShouldHaveMonitored,
    IntentionNotMonitored,
}

impl CommentType {
    pub fn as_str(&self) -> &'static str {
        match self {
            CommentType::StepNotSupported => "step-not-supported",
            CommentType::StoppedPlanStep => "stopped-plan-step",
            CommentType::RedundantStepRepeated => "redundant-step-repeated",
            CommentType::DuplicateStep => "duplicate-step",
            CommentType::WrongPathSelection => "wrong-path-selection",
            CommentType::StepTooEarly => "step-too-early",
            CommentType::StepOnTime => "step-on-time",
            CommentType::StepTooLate => "step-too-late",
            CommentType::MissingAction => "missing-action",
            CommentType::LowMedicationCompliance => "low-medication-compliance",
            CommentType::ConditionEvidence => "condition-evidence",
            CommentType::IntentionEvidence => "intention-evidence",
            CommentType::IntentionAchievement => "intention-achievement",
            CommentType::IntentionShouldHaveMonitored => "intention-should-have-monitored",
            CommentType::IntentionNotMonitored => "intention-not-monitored",
        }
    }

    /// Whether the comment criticizes care (as opposed to confirming it or
    /// recording supporting evidence).
    pub fn is_deviation(&self) -> bool {
        !matches!(
            self,
            CommentType::StepOnTime
                | CommentType::ConditionEvidence
                | CommentType::IntentionEvidence
        )
    }

    fn from_explanation(ty: ExplanationType) -> CommentType {
        match ty {
            ExplanationType::StepNotSupported => CommentType::StepNotSupported,
            ExplanationType::StoppedPlanStep => CommentType::StoppedPlanStep,
            ExplanationType::RedundantStepRepeated => CommentType::RedundantStepRepeated,
            ExplanationType::DuplicateStep => CommentType::DuplicateStep,
            ExplanationType::WrongPathSelection => CommentType::WrongPathSelection,
            ExplanationType::StepTooEarly => CommentType::StepTooEarly,
            ExplanationType::StepOnTime => CommentType::StepOnTime,
            ExplanationType::StepTooLate => CommentType::StepTooLate,
            ExplanationType::MissingAction => CommentType::MissingAction,
            ExplanationType::LowMedicationCompliance => CommentType::LowMedicationCompliance,
            ExplanationType::ConditionEvidence => CommentType::ConditionEvidence,
            ExplanationType::IntentionEvidence => CommentType::IntentionEvidence,
        }
    }
}

// ── Report model ────────────────────────────────────────────────────────────

/// Sub-scores attached to a comment; only the defined ones serialize.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CommentScores {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub reasonableness: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub applicability: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub specificity: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub timing: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub membership: Option<f64>,
}

/// One graded critique finding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comment {
    #[serde(rename = "type")]
    pub comment_type: CommentType,
    pub time: Time,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub span: Option<Span>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub plan_id: Option<PlanId>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub step_id: Option<StepId>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub concept_id: Option<ConceptId>,
    pub scores: CommentScores,
    pub text: String,
}

/// The analysis parameters echoed into every report, so a report is
/// auditable against the exact inputs that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub acceptance_threshold: f64,
    pub role_thresholds: BTreeMap<String, f64>,
    pub compliance_threshold: f64,
    pub wrong_path_margin: f64,
    pub library_hash: String,
}

// ── Debug section ───────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LifecycleRow {
    pub time: Time,
    pub plan_id: PlanId,
    pub kind: String,
    pub membership: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationRow {
    pub time: Time,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub item_idx: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub concept_id: Option<ConceptId>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub plan_id: Option<PlanId>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub step_id: Option<StepId>,
    #[serde(rename = "type")]
    pub explanation_type: String,
    pub reasonableness: f64,
    pub applicability: f64,
    pub specificity: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub timing: Option<f64>,
    /// Whether this candidate won its item's selection (standalone findings
    /// are always selected).
    pub selected: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntentionRow {
    pub plan_id: PlanId,
    pub intention_idx: usize,
    pub span: Span,
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub score: Option<f64>,
}

/// Every intermediate the engine computed, for tracing a comment back to
/// its inputs. Attached only when the config asks for it.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DebugSection {
    pub lifecycle_events: Vec<LifecycleRow>,
    pub explanations: Vec<ExplanationRow>,
    pub intention_assessments: Vec<IntentionRow>,
}

/// The full critique for one patient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CritiqueReport {
    pub patient_id: String,
    pub config_echo: ConfigEcho,
    pub comments: Vec<Comment>,
    /// Comment counts per type name.
    pub statistics: BTreeMap<String, usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub debug: Option<DebugSection>,
}

impl CritiqueReport {
    /// Number of comments that criticize care.
    pub fn deviation_count(&self) -> usize {
        self.comments.iter().filter(|c| c.comment_type.is_deviation()).count()
    }
}

// ── Assembly ────────────────────────────────────────────────────────────────

/// Report for a record the engine could not window (no items at all).
pub fn empty_report(
    knowledge: &PreparedKnowledge,
    config: &EngineConfig,
    record: &PatientRecord,
) -> CritiqueReport {
    CritiqueReport {
        patient_id: record.patient_id.clone(),
        config_echo: config_echo(knowledge, config),
        comments: Vec::new(),
        statistics: BTreeMap::new(),
        debug: config.debug.then(DebugSection::default),
    }
}

pub fn summarize(analysis: &Analysis<'_>, record: &PatientRecord) -> CritiqueReport {
    let mut comments: Vec<Comment> = Vec::new();
    let mut by_item: BTreeMap<usize, Vec<ComputedExplanation>> = BTreeMap::new();

    for point in analysis.timeline.points() {
        match &point.payload {
            TimePointPayload::Explanation(e) => match e.item_idx {
                Some(idx) => by_item.entry(idx).or_default().push(e.clone()),
                None => comments.push(explanation_comment(point.time, e)),
            },
            TimePointPayload::Intention(ia) => comments.push(intention_comment(ia)),
            TimePointPayload::Data(_) | TimePointPayload::Lifecycle(_) => {}
        }
    }

    let mut winners: BTreeMap<usize, ComputedExplanation> = BTreeMap::new();
    for (idx, candidates) in &by_item {
        let best = select_best(candidates).expect("every item has candidates").clone();
        comments.push(explanation_comment(record.items[*idx].valid_start, &best));
        winners.insert(*idx, best);
    }

    comments.sort_by(|a, b| comment_key(a).cmp(&comment_key(b)));

    let mut statistics: BTreeMap<String, usize> = BTreeMap::new();
    for comment in &comments {
        *statistics.entry(comment.comment_type.as_str().to_owned()).or_insert(0) += 1;
    }

    let debug = analysis.config.debug.then(|| debug_section(analysis, &winners));

    CritiqueReport {
        patient_id: record.patient_id.clone(),
        config_echo: config_echo(analysis.knowledge, analysis.config),
        comments,
        statistics,
        debug,
    }
}

#[allow(clippy::type_complexity)]
fn comment_key(
    c: &Comment,
) -> (Time, &'static str, &Option<PlanId>, &Option<StepId>, &Option<ConceptId>, Option<Time>) {
    (
        c.time,
        c.comment_type.as_str(),
        &c.plan_id,
        &c.step_id,
        &c.concept_id,
        c.span.map(|s| s.end),
    )
}

fn config_echo(knowledge: &PreparedKnowledge, config: &EngineConfig) -> ConfigEcho {
    ConfigEcho {
        acceptance_threshold: config.acceptance_threshold,
        role_thresholds: config.role_thresholds.clone(),
        compliance_threshold: config.compliance_threshold,
        wrong_path_margin: config.wrong_path_margin,
        library_hash: knowledge.library_hash.clone(),
    }
}

// ── Comment builders ────────────────────────────────────────────────────────

fn explanation_comment(time: Time, e: &ComputedExplanation) -> Comment {
    Comment {
        comment_type: CommentType::from_explanation(e.explanation_type),
        time,
        span: None,
        plan_id: e.plan_id.clone(),
        step_id: e.step_id.clone(),
        concept_id: e.concept_id.clone(),
        scores: CommentScores {
            reasonableness: Some(e.reasonableness()),
            applicability: Some(e.applicability),
            specificity: Some(e.specificity),
            timing: e.timing,
            membership: None,
        },
        text: explanation_text(e),
    }
}

fn explanation_text(e: &ComputedExplanation) -> String {
    let concept = e.concept_id.as_deref().unwrap_or("?");
    let plan = e.plan_id.as_deref().unwrap_or("?");
    let step = e.step_id.as_deref().unwrap_or(concept);
    let mut text = match e.explanation_type {
        ExplanationType::StepNotSupported => {
            format!("'{concept}' is not called for by any active guideline")
        }
        ExplanationType::StoppedPlanStep => {
            format!("'{concept}' was performed although plan '{plan}' was no longer active")
        }
        ExplanationType::RedundantStepRepeated => {
            format!("'{concept}' repeats step '{step}' after plan '{plan}' completed")
        }
        ExplanationType::DuplicateStep => {
            format!("'{concept}' repeats step '{step}' within its minimum repeat gap")
        }
        ExplanationType::WrongPathSelection => {
            format!("'{concept}' follows path '{plan}' although a sibling path fits better")
        }
        ExplanationType::StepTooEarly => {
            format!("step '{step}' of plan '{plan}' was performed too early")
        }
        ExplanationType::StepOnTime => {
            format!("step '{step}' of plan '{plan}' was performed on time")
        }
        ExplanationType::StepTooLate => {
            format!("step '{step}' of plan '{plan}' was performed too late")
        }
        ExplanationType::MissingAction => {
            format!("step '{step}' of plan '{plan}' was due but never performed")
        }
        ExplanationType::LowMedicationCompliance => {
            format!("dose escalation of '{concept}' in plan '{plan}' deferred")
        }
        ExplanationType::ConditionEvidence => {
            format!("'{concept}' contributes evidence to conditions of plan '{plan}'")
        }
        ExplanationType::IntentionEvidence => {
            format!("'{concept}' contributes evidence to intentions of plan '{plan}'")
        }
    };
    if let Some(note) = &e.note {
        text.push_str(" (");
        text.push_str(note);
        text.push(')');
    }
    text
}

fn intention_comment(ia: &IntentionAssessment) -> Comment {
    let idx = ia.intention_idx;
    let plan = &ia.plan_id;
    let (comment_type, membership, text) = match ia.outcome {
        IntentionOutcome::Achievement(score) => (
            CommentType::IntentionAchievement,
            Some(score),
            format!("intention {idx} of plan '{plan}' held with membership {score:.3} here"),
        ),
        IntentionOutcome::ShouldHaveMonitored(mean) => (
            CommentType::IntentionShouldHaveMonitored,
            Some(mean),
            format!(
                "intention {idx} of plan '{plan}': duration-weighted satisfaction {mean:.3} \
                 over the obligation window"
            ),
        ),
        IntentionOutcome::NotMonitored => {
            let days = ia.span.duration_secs() / SECS_PER_DAY;
            (
                CommentType::IntentionNotMonitored,
                None,
                format!("intention {idx} of plan '{plan}' was not monitored for {days} days"),
            )
        }
    };
    Comment {
        comment_type,
        time: ia.span.start,
        span: Some(ia.span),
        plan_id: Some(ia.plan_id.clone()),
        step_id: None,
        concept_id: None,
        scores: CommentScores { membership, ..CommentScores::default() },
        text,
    }
}

// ── Debug rendering ─────────────────────────────────────────────────────────

fn debug_section(
    analysis: &Analysis<'_>,
    winners: &BTreeMap<usize, ComputedExplanation>,
) -> DebugSection {
    let mut section = DebugSection::default();
    for point in analysis.timeline.points() {
        match &point.payload {
            TimePointPayload::Lifecycle(ev) => section.lifecycle_events.push(LifecycleRow {
                time: point.time,
                plan_id: ev.plan_id.clone(),
                kind: ev.kind.as_str().to_owned(),
                membership: ev.membership,
            }),
            TimePointPayload::Explanation(e) => {
                let selected = match e.item_idx {
                    Some(idx) => winners.get(&idx) == Some(e),
                    None => true,
                };
                section.explanations.push(ExplanationRow {
                    time: point.time,
                    item_idx: e.item_idx,
                    concept_id: e.concept_id.clone(),
                    plan_id: e.plan_id.clone(),
                    step_id: e.step_id.clone(),
                    explanation_type: e.explanation_type.as_str().to_owned(),
                    reasonableness: e.reasonableness(),
                    applicability: e.applicability,
                    specificity: e.specificity,
                    timing: e.timing,
                    selected,
                    note: e.note.clone(),
                });
            }
            TimePointPayload::Intention(ia) => {
                let (status, score) = match ia.outcome {
                    IntentionOutcome::Achievement(s) => ("achievement", Some(s)),
                    IntentionOutcome::ShouldHaveMonitored(s) => {
                        ("should-have-monitored", Some(s))
                    }
                    IntentionOutcome::NotMonitored => ("not-monitored", None),
                };
                section.intention_assessments.push(IntentionRow {
                    plan_id: ia.plan_id.clone(),
                    intention_idx: ia.intention_idx,
                    span: ia.span,
                    status: status.to_owned(),
                    score,
                });
            }
            TimePointPayload::Data(_) => {}
        }
    }
    section
}

// ── Tests ───────────────────────────────────────────────────────────────────
