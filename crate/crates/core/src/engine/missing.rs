//! Missing-action pass: for every activation episode, walk the path's body
//! and flag obligations that never happened.
//!
//! Once-steps fall due at `max(latest allowed plan start, episode start +
//! latest offset)`; if the due time is within the assessment horizon and no
//! occurrence landed in `[episode start, due]`, a missing-action explanation
//! is recorded at the due time. Recurring steps expect one occurrence per
//! fixed period-length bucket anchored at `episode start + earliest offset`;
//! each fully elapsed empty bucket yields a missing-action at the bucket
//! end. The horizon stops at the episode's end, at the analysis window's
//! end, and at the last recorded item (obligations cannot be judged missing
//! beyond the data).
//!
//! Dose-escalation steps get a gated assessment instead of a plain missing
//! flag: already at maximum dose suppresses the demand; poor medication
//! coverage replaces it with a low-compliance note (escalating a drug the
//! patient does not take is premature); otherwise the missing demand is
//! emitted, annotated when no dose data exists at all.

use crate::engine::explanation::{specificity_score, ComputedExplanation, ExplanationType};
use crate::engine::timeline::{Pass, TimePointPayload};
use crate::engine::{Activation, Analysis};
use crate::fuzzy::extrapolate_intervals;
use crate::ingest::PatientRecord;
use crate::knowledge::{PathPlan, PlanStepSpec, RoleKind, StepKind};
use crate::time::{add_secs, Span, Time};

// ── Dose-escalation gating ──────────────────────────────────────────────────

/// Outcome of assessing a missing dose-escalation obligation.
#[derive(Debug, Clone, PartialEq)]
pub enum MissingDrugAssessment {
    /// Demand the escalation (with an optional caveat for absent dose data).
    Emit { note: Option<String> },
    /// The latest recorded dose already reached the step's maximum.
    SuppressedMaxDose,
    /// Medication coverage is below the compliance threshold; escalation
    /// would be premature.
    SuppressedLowCompliance { coverage: f64 },
}

/// Gate a missed dose-escalation: max-dose suppression first, then the
/// compliance check, then emission (annotated when no dose was recorded).
pub fn assess_missing_drug_increase(
    step: &PlanStepSpec,
    doses: &[(Time, f64)],
    coverage: f64,
    compliance_threshold: f64,
) -> MissingDrugAssessment {
    let latest = doses.last().map(|&(_, d)| d);
    if let (Some(max), Some(dose)) = (step.max_dose, latest) {
        if dose >= max {
            return MissingDrugAssessment::SuppressedMaxDose;
        }
    }
    if coverage < compliance_threshold {
        return MissingDrugAssessment::SuppressedLowCompliance { coverage };
    }
    match latest {
        None => MissingDrugAssessment::Emit {
            note: Some("no dose data recorded for this medication".into()),
        },
        Some(_) => MissingDrugAssessment::Emit { note: None },
    }
}

// ── The pass ────────────────────────────────────────────────────────────────

pub fn missing_actions_analysis(analysis: &mut Analysis<'_>, record: &PatientRecord) {
    if analysis.timeline.is_done(Pass::MissingActions) {
        return;
    }
    let Some(record_end) = record.items.iter().map(|i| i.valid_start).max() else {
        analysis.timeline.mark_done(Pass::MissingActions);
        return;
    };

    let mut new_points: Vec<(Time, TimePointPayload)> = Vec::new();
    for path in &analysis.knowledge.paths {
        let Some(episodes) = analysis.activations.get(&path.id) else { continue };
        for episode in episodes {
            let episode_end = episode.end.map(|(t, _)| t).unwrap_or(analysis.window.end);
            let horizon = episode_end.min(record_end).min(analysis.window.end);
            for step in &path.body {
                assess_step(analysis, record, path, step, episode, horizon, &mut new_points);
            }
        }
    }

    for (t, payload) in new_points {
        analysis.timeline.insert(t, payload);
    }
    analysis.timeline.normalize();
    analysis.timeline.mark_done(Pass::MissingActions);
}

fn assess_step(
    analysis: &Analysis<'_>,
    record: &PatientRecord,
    path: &PathPlan,
    step: &PlanStepSpec,
    episode: &Activation,
    horizon: Time,
    new_points: &mut Vec<(Time, TimePointPayload)>,
) {
    let occurrences = step_occurrences(record, step);

    if step.recurs() {
        let Some(period) = step.period_s.filter(|p| *p > 0) else { return };
        let mut bucket_start = add_secs(episode.start, step.earliest_offset_s);
        while add_secs(bucket_start, period) <= horizon {
            let bucket_end = add_secs(bucket_start, period);
            let occupied =
                occurrences.iter().any(|&t| t >= bucket_start && t < bucket_end);
            if !occupied {
                push_missing(analysis, record, path, step, episode, bucket_end, new_points);
            }
            bucket_start = bucket_end;
        }
    } else {
        let due = episode.latest_start.max(add_secs(episode.start, step.latest_offset_s));
        if due > horizon {
            return;
        }
        let occupied = occurrences.iter().any(|&t| t >= episode.start && t <= due);
        if !occupied {
            push_missing(analysis, record, path, step, episode, due, new_points);
        }
    }
}

fn push_missing(
    analysis: &Analysis<'_>,
    record: &PatientRecord,
    path: &PathPlan,
    step: &PlanStepSpec,
    episode: &Activation,
    due: Time,
    new_points: &mut Vec<(Time, TimePointPayload)>,
) {
    let specificity =
        specificity_score(analysis.knowledge.roles.distinct_plan_count(&step.action_concept));
    let mut explanation = ComputedExplanation {
        item_idx: None,
        concept_id: Some(step.action_concept.clone()),
        plan_id: Some(path.id.clone()),
        role: Some(RoleKind::BodyStep),
        step_id: Some(step.id.clone()),
        explanation_type: ExplanationType::MissingAction,
        applicability: episode.membership,
        specificity,
        timing: None,
        note: None,
    };

    if step.kind == StepKind::DrugIncrease {
        let doses = dose_history_until(record, &step.action_concept, due);
        let coverage = medication_coverage(analysis, record, step, episode.start, due);
        match assess_missing_drug_increase(step, &doses, coverage, analysis.config.compliance_threshold)
        {
            MissingDrugAssessment::SuppressedMaxDose => return,
            MissingDrugAssessment::SuppressedLowCompliance { coverage } => {
                explanation.explanation_type = ExplanationType::LowMedicationCompliance;
                explanation.note = Some(format!(
                    "medication coverage {coverage:.3} is below the compliance threshold; \
                     escalation deferred"
                ));
            }
            MissingDrugAssessment::Emit { note } => explanation.note = note,
        }
    }

    new_points.push((due, TimePointPayload::Explanation(explanation)));
}

// ── Occurrence & dose helpers ───────────────────────────────────────────────

/// Times at which the step was observably performed. For dose-escalation
/// steps an occurrence is an administration whose dose strictly exceeds the
/// previous one; for every other kind, any item of the action concept.
fn step_occurrences(record: &PatientRecord, step: &PlanStepSpec) -> Vec<Time> {
    let items = record.items.iter().filter(|i| i.concept_id == step.action_concept);
    match step.kind {
        StepKind::DrugIncrease => {
            let mut out = Vec::new();
            let mut prev: Option<f64> = None;
            for item in items {
                if let Some(dose) = item.dose {
                    if prev.is_some_and(|p| dose > p) {
                        out.push(item.valid_start);
                    }
                    prev = Some(dose);
                }
            }
            out
        }
        _ => items.map(|i| i.valid_start).collect(),
    }
}

fn dose_history_until(record: &PatientRecord, concept: &str, until: Time) -> Vec<(Time, f64)> {
    record
        .items
        .iter()
        .filter(|i| i.concept_id == concept && i.valid_start <= until)
        .filter_map(|i| i.dose.map(|d| (i.valid_start, d)))
        .collect()
}

/// Fraction of `[episode_start, due]` covered by the drug's extrapolated
/// administration intervals (union of clipped intervals over the span).
fn medication_coverage(
    analysis: &Analysis<'_>,
    record: &PatientRecord,
    step: &PlanStepSpec,
    episode_start: Time,
    due: Time,
) -> f64 {
    let Some(window) = Span::new(episode_start, due) else { return 1.0 };
    let Some(persistence) = analysis.knowledge.lib.persistence(&step.action_concept) else {
        return 0.0;
    };
    let items: Vec<_> = record
        .items
        .iter()
        .filter(|i| i.concept_id == step.action_concept)
        .cloned()
        .collect();
    let mut intervals = extrapolate_intervals(&items, persistence);
    intervals.sort_by_key(|iv| (iv.span.start, iv.span.end));

    let mut covered: i64 = 0;
    let mut frontier = window.start;
    for interval in &intervals {
        let Some(clip) = interval.span.intersect(&window) else { continue };
        if clip.end <= frontier {
            continue;
        }
        let start = clip.start.max(frontier);
        covered += (clip.end - start).num_seconds();
        frontier = clip.end;
    }
    covered as f64 / window.duration_secs() as f64
}

// ── Tests ───────────────────────────────────────────────────────────────────
