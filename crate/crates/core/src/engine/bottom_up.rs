//! Bottom-up (data-driven) pass: scan the data items chronologically and
//! attach one computed explanation per knowledge role the item's concept
//! holds, so every item ends up with at least one candidate interpretation.
//!
//! Body-step roles classify against the plan's applicability at the item's
//! time: stopped/suspended plans yield stopped-plan-step, completed plans
//! yield redundant-step-repeated, repeats inside the step's minimum repeat
//! gap yield duplicate-step, a clearly better-fitting sibling path yields
//! wrong-path-selection, applicable plans grade the occurrence against its
//! expected window, and steps before any activation are step-too-early.
//! Condition and intention roles contribute evidence explanations; items no
//! guideline references fall back to step-not-supported ("unexplained
//! data"). Drug-increase roles engage only when the item's dose strictly
//! exceeds the previously administered dose.

use std::collections::BTreeMap;

use crate::engine::explanation::{specificity_score, ComputedExplanation, ExplanationType};
use crate::engine::timeline::{applicability_status, ApplicabilityValue, Pass, TimePointPayload};
use crate::engine::Analysis;
use crate::fuzzy::score_at;
use crate::ingest::{DataItem, PatientRecord};
use crate::knowledge::{PathPlan, PlanStepSpec, RoleKind, StepKind};
use crate::time::{add_secs, Time};

// ── Timing classification ───────────────────────────────────────────────────

/// Grade one step occurrence against its expected window.
///
/// Once-steps expect `[plan start + earliest offset, plan start + latest
/// offset]`; recurring steps expect the same first window, then one period
/// after each previous occurrence (keeping the window's width). Inside the
/// window (inclusive) the occurrence is on time with score 1; outside, the
/// score falls linearly with the distance over the step's timing deviation.
pub fn classify_step_timing(
    step: &PlanStepSpec,
    time: Time,
    plan_start: Time,
    prior_occurrences: &[Time],
) -> (ExplanationType, f64) {
    let (win_start, win_end) = expected_window(step, plan_start, prior_occurrences);
    if time >= win_start && time <= win_end {
        return (ExplanationType::StepOnTime, 1.0);
    }
    let distance_s = if time < win_start {
        (win_start - time).num_seconds()
    } else {
        (time - win_end).num_seconds()
    };
    let score = if step.timing_deviation_s <= 0 {
        0.0
    } else {
        (1.0 - distance_s as f64 / step.timing_deviation_s as f64).clamp(0.0, 1.0)
    };
    let label = if time < win_start {
        ExplanationType::StepTooEarly
    } else {
        ExplanationType::StepTooLate
    };
    (label, score)
}

fn expected_window(step: &PlanStepSpec, plan_start: Time, prior: &[Time]) -> (Time, Time) {
    if step.recurs() {
        if let (Some(&prev), Some(period)) = (prior.last(), step.period_s) {
            let start = add_secs(prev, period);
            return (start, add_secs(start, step.latest_offset_s - step.earliest_offset_s));
        }
    }
    (
        add_secs(plan_start, step.earliest_offset_s),
        add_secs(plan_start, step.latest_offset_s),
    )
}

// ── The pass ────────────────────────────────────────────────────────────────

type StepKey = (String, String);

pub fn bottom_up_analysis(analysis: &mut Analysis<'_>, record: &PatientRecord) {
    if analysis.timeline.is_done(Pass::BottomUp) {
        return;
    }
    let knowledge = analysis.knowledge;

    let mut occurrences: BTreeMap<StepKey, Vec<Time>> = BTreeMap::new();
    let mut dose_history: BTreeMap<String, Vec<(Time, f64)>> = BTreeMap::new();
    let mut new_points: Vec<(Time, TimePointPayload)> = Vec::new();

    let data_indices: Vec<usize> = analysis
        .timeline
        .points()
        .iter()
        .filter_map(|p| match p.payload {
            TimePointPayload::Data(idx) => Some(idx),
            _ => None,
        })
        .collect();

    for idx in data_indices {
        let item = &record.items[idx];
        let t = item.valid_start;
        let roles = knowledge.roles.roles_for_concept(&item.concept_id);
        let specificity = specificity_score(knowledge.roles.distinct_plan_count(&item.concept_id));

        let mut explanations: Vec<ComputedExplanation> = Vec::new();
        for role in roles {
            match role.role {
                RoleKind::EntryCondition | RoleKind::StopCondition => {
                    explanations.push(evidence(
                        ExplanationType::ConditionEvidence,
                        item,
                        idx,
                        &role.path_plan_id,
                        role.role,
                        specificity,
                    ));
                }
                RoleKind::OutcomeIntention | RoleKind::ProcessIntention => {
                    explanations.push(evidence(
                        ExplanationType::IntentionEvidence,
                        item,
                        idx,
                        &role.path_plan_id,
                        role.role,
                        specificity,
                    ));
                }
                RoleKind::BodyStep => {
                    let Some(path) = knowledge.path(&role.path_plan_id) else { continue };
                    let Some(step) = role.step_id.as_deref().and_then(|id| path.step(id)) else {
                        continue;
                    };
                    if step.kind == StepKind::DrugIncrease {
                        let prev_dose = dose_history
                            .get(&item.concept_id)
                            .and_then(|h| h.last())
                            .map(|&(_, d)| d);
                        let engaged =
                            matches!((item.dose, prev_dose), (Some(d), Some(p)) if d > p);
                        if !engaged {
                            continue;
                        }
                    }
                    explanations.push(classify_occurrence(
                        analysis,
                        path,
                        step,
                        item,
                        idx,
                        specificity,
                        &mut occurrences,
                    ));
                }
            }
        }

        if explanations.is_empty() {
            explanations.push(ComputedExplanation {
                item_idx: Some(idx),
                concept_id: Some(item.concept_id.clone()),
                plan_id: None,
                role: None,
                step_id: None,
                explanation_type: ExplanationType::StepNotSupported,
                applicability: 1.0,
                specificity,
                timing: None,
                note: Some("no applicable guideline explains this item".into()),
            });
        }
        for explanation in explanations {
            new_points.push((t, TimePointPayload::Explanation(explanation)));
        }

        if let Some(dose) = item.dose {
            dose_history.entry(item.concept_id.clone()).or_default().push((t, dose));
        }
    }

    for (t, payload) in new_points {
        analysis.timeline.insert(t, payload);
    }
    analysis.timeline.normalize();
    analysis.timeline.mark_done(Pass::BottomUp);
}

// ── Step classification ladder ──────────────────────────────────────────────

#[allow(clippy::too_many_arguments)]
fn classify_occurrence(
    analysis: &Analysis<'_>,
    path: &PathPlan,
    step: &PlanStepSpec,
    item: &DataItem,
    idx: usize,
    specificity: f64,
    occurrences: &mut BTreeMap<StepKey, Vec<Time>>,
) -> ComputedExplanation {
    let t = item.valid_start;
    let status = applicability_status(&analysis.timeline, &path.id, t);
    let key: StepKey = (path.id.clone(), step.id.clone());

    let mut explanation = ComputedExplanation {
        item_idx: Some(idx),
        concept_id: Some(item.concept_id.clone()),
        plan_id: Some(path.id.clone()),
        role: Some(RoleKind::BodyStep),
        step_id: Some(step.id.clone()),
        explanation_type: ExplanationType::StepNotSupported,
        applicability: status.membership,
        specificity,
        timing: None,
        note: None,
    };

    match status.value {
        ApplicabilityValue::Stopped => {
            explanation.explanation_type = ExplanationType::StoppedPlanStep;
        }
        ApplicabilityValue::Suspended => {
            explanation.explanation_type = ExplanationType::StoppedPlanStep;
            explanation.note = Some("performed while the plan was suspended".into());
        }
        ApplicabilityValue::Completed => {
            explanation.explanation_type = ExplanationType::RedundantStepRepeated;
        }
        ApplicabilityValue::Applicable
        | ApplicabilityValue::NotYetApplicable
        | ApplicabilityValue::Unknown => {
            let prior = occurrences.get(&key).cloned().unwrap_or_default();

            if step.min_repeat_gap_s > 0 {
                if let Some(&prev) = prior.last() {
                    if (t - prev).num_seconds() < step.min_repeat_gap_s {
                        explanation.explanation_type = ExplanationType::DuplicateStep;
                        // Duplicates do not advance the occurrence anchor.
                        return explanation;
                    }
                }
            }

            if let Some(note) = better_sibling_note(analysis, path, t) {
                explanation.explanation_type = ExplanationType::WrongPathSelection;
                explanation.note = Some(note);
                occurrences.entry(key).or_default().push(t);
                return explanation;
            }

            if status.value == ApplicabilityValue::Applicable {
                let plan_start = covering_activation_start(analysis, &path.id, t).unwrap_or(t);
                let (label, score) = classify_step_timing(step, t, plan_start, &prior);
                explanation.explanation_type = label;
                explanation.timing = Some(score);
            } else {
                explanation.explanation_type = ExplanationType::StepTooEarly;
                explanation.timing = Some(0.0);
            }
            occurrences.entry(key).or_default().push(t);
        }
    }
    explanation
}

fn evidence(
    ty: ExplanationType,
    item: &DataItem,
    idx: usize,
    plan_id: &str,
    role: RoleKind,
    specificity: f64,
) -> ComputedExplanation {
    ComputedExplanation {
        item_idx: Some(idx),
        concept_id: Some(item.concept_id.clone()),
        plan_id: Some(plan_id.to_owned()),
        role: Some(role),
        step_id: None,
        explanation_type: ty,
        applicability: 1.0,
        specificity,
        timing: None,
        note: None,
    }
}

/// A sibling path (same parent) whose entry membership beats this path's by
/// at least the configured margin at time `t`.
fn better_sibling_note(analysis: &Analysis<'_>, path: &PathPlan, t: Time) -> Option<String> {
    let parent = path.parent_prefix()?;
    let own = analysis
        .entry_scores
        .get(&path.id)
        .and_then(|scored| score_at(scored, t))
        .unwrap_or(0.0);

    let mut best: Option<(&str, f64)> = None;
    for sibling in &analysis.knowledge.paths {
        if sibling.id == path.id || sibling.parent_prefix().as_deref() != Some(parent.as_str()) {
            continue;
        }
        let membership = analysis
            .entry_scores
            .get(&sibling.id)
            .and_then(|scored| score_at(scored, t))
            .unwrap_or(0.0);
        if membership >= own + analysis.config.wrong_path_margin
            && best.map_or(true, |(_, b)| membership > b)
        {
            best = Some((&sibling.id, membership));
        }
    }
    best.map(|(id, membership)| {
        format!("path '{id}' fits better (entry membership {membership:.3} vs {own:.3})")
    })
}

/// Start of the activation episode covering `t`, matching the strictly-
/// before convention of applicability.
fn covering_activation_start(analysis: &Analysis<'_>, plan_id: &str, t: Time) -> Option<Time> {
    analysis
        .activations
        .get(plan_id)?
        .iter()
        .rev()
        .find(|a| a.start < t && a.end.map_or(true, |(e, _)| t <= e))
        .map(|a| a.start)
}

// ── Tests ───────────────────────────────────────────────────────────────────

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::testsupport::{
        day, dosed_item_at, item_at, one_plan_library, record_of, run_passes, step_spec,
        two_sibling_library,
    };
    use crate::knowledge::{CmpOp, Condition, ConditionRole, ConstraintNode, FuzzyComparison};
    use crate::value::Value;

    const DAY: i64 = 86_400;

    fn explanations_for_concept<'a>(
        analysis: &'a crate::engine::Analysis<'_>,
        record: &crate::ingest::PatientRecord,
        concept: &str,
    ) -> Vec<&'a ComputedExplanation> {
        analysis
            .timeline
            .points()
            .iter()
            .filter_map(move |p| match &p.payload {
                TimePointPayload::Explanation(e)
                    if e.item_idx
                        .is_some_and(|i| record.items[i].concept_id == concept) =>
                {
                    Some(e)
                }
                _ => None,
            })
            .collect()
    }

    // ── classify_step_timing: frozen window arithmetic ──────────────────

    #[test]
    fn occurrence_inside_the_window_is_on_time() {
        let step = step_spec("s", "c", StepKind::Once, 0, 30, None, 14, 0);
        let (label, score) = classify_step_timing(&step, day(15), day(0), &[]);
        assert_eq!(label, ExplanationType::StepOnTime);
        assert_eq!(score, 1.0);
        // Window edges are inside.
        assert_eq!(classify_step_timing(&step, day(0), day(0), &[]).0, ExplanationType::StepOnTime);
        assert_eq!(classify_step_timing(&step, day(30), day(0), &[]).0, ExplanationType::StepOnTime);
    }

    #[test]
    fn occurrence_half_a_deviation_late_scores_one_half() {
        let step = step_spec("s", "c", StepKind::Once, 0, 30, None, 14, 0);
        let (label, score) = classify_step_timing(&step, day(37), day(0), &[]);
        assert_eq!(label, ExplanationType::StepTooLate);
        assert!((score - 0.5).abs() < 1e-12);
    }

    #[test]
    fn occurrence_more_than_a_deviation_early_scores_zero() {
        let step = step_spec("s", "c", StepKind::Once, 10, 30, None, 14, 0);
        let (label, score) = classify_step_timing(&step, day(-5), day(0), &[]);
        assert_eq!(label, ExplanationType::StepTooEarly);
        assert_eq!(score, 0.0);
    }

    #[test]
    fn zero_timing_deviation_makes_any_outside_occurrence_score_zero() {
        let step = step_spec("s", "c", StepKind::Once, 0, 30, None, 0, 0);
        let (label, score) = classify_step_timing(&step, day(31), day(0), &[]);
        assert_eq!(label, ExplanationType::StepTooLate);
        assert_eq!(score, 0.0);
    }

    #[test]
    fn recurring_windows_anchor_at_the_previous_occurrence() {
        let step = step_spec("s", "c", StepKind::Periodic, 0, 30, Some(90), 14, 0);
        // First occurrence: plain window from plan start.
        assert_eq!(classify_step_timing(&step, day(15), day(0), &[]).0, ExplanationType::StepOnTime);
        // Next window: previous occurrence + period, same width.
        let prior = [day(10)];
        assert_eq!(
            classify_step_timing(&step, day(115), day(0), &prior).0,
            ExplanationType::StepOnTime
        );
        let (label, score) = classify_step_timing(&step, day(137), day(0), &prior);
        assert_eq!(label, ExplanationType::StepTooLate);
        assert!((score - 0.5).abs() < 1e-12);
    }

    // ── The ladder over full fixtures ────────────────────────────────────

    #[test]
    fn item_with_no_roles_is_unexplained_data() {
        let lib = one_plan_library();
        let record = record_of(&[item_at("hba1c", 7.4, 0), item_at("lithium", 1.0, 40)]);
        let (analysis, record) = run_passes(&lib, record);
        let expls = explanations_for_concept(&analysis, &record, "lithium");
        assert_eq!(expls.len(), 1);
        assert_eq!(expls[0].explanation_type, ExplanationType::StepNotSupported);
        assert_eq!(expls[0].plan_id, None);
        assert_eq!(expls[0].applicability, 1.0);
    }

    #[test]
    fn condition_feeding_items_get_condition_evidence() {
        let lib = one_plan_library();
        let record = record_of(&[item_at("hba1c", 7.4, 0)]);
        let (analysis, record) = run_passes(&lib, record);
        let expls = explanations_for_concept(&analysis, &record, "hba1c");
        assert!(expls
            .iter()
            .any(|e| e.explanation_type == ExplanationType::ConditionEvidence));
    }

    #[test]
    fn step_occurrences_are_graded_against_their_window() {
        let mut lib = one_plan_library();
        lib.plans[0].body.push(step_spec("foot-exam", "foot-exam-done", StepKind::Once, 30, 60, None, 14, 0));
        let record = record_of(&[
            item_at("hba1c", 7.4, 0),
            item_at("foot-exam-done", 1.0, 67),
        ]);
        let (analysis, record) = run_passes(&lib, record);
        let expls = explanations_for_concept(&analysis, &record, "foot-exam-done");
        assert_eq!(expls.len(), 1);
        assert_eq!(expls[0].explanation_type, ExplanationType::StepTooLate);
        assert!((expls[0].timing.unwrap() - 0.5).abs() < 1e-9);
        assert_eq!(expls[0].applicability, 1.0);
    }

    #[test]
    fn step_before_plan_entry_is_too_early_with_zero_applicability() {
        let mut lib = one_plan_library();
        lib.plans[0].body.push(step_spec("ecg", "ecg-done", StepKind::Once, 0, 30, None, 14, 0));
        let record = record_of(&[item_at("ecg-done", 1.0, -7), item_at("hba1c", 7.4, 0)]);
        let (analysis, record) = run_passes(&lib, record);
        let expls = explanations_for_concept(&analysis, &record, "ecg-done");
        assert_eq!(expls.len(), 1);
        assert_eq!(expls[0].explanation_type, ExplanationType::StepTooEarly);
        assert_eq!(expls[0].timing, Some(0.0));
        assert_eq!(expls[0].applicability, 0.0);
    }

    #[test]
    fn repeat_within_the_minimum_gap_is_a_duplicate() {
        let mut lib = one_plan_library();
        lib.plans[0].body.push(step_spec("eye-exam", "eye-exam-done", StepKind::Once, 0, 90, None, 14, 30));
        let record = record_of(&[
            item_at("hba1c", 7.4, 0),
            item_at("eye-exam-done", 1.0, 10),
            item_at("eye-exam-done", 1.0, 13),
            item_at("eye-exam-done", 1.0, 50),
        ]);
        let (analysis, record) = run_passes(&lib, record);
        let expls = explanations_for_concept(&analysis, &record, "eye-exam-done");
        let types: Vec<_> = expls.iter().map(|e| e.explanation_type).collect();
        assert_eq!(
            types,
            vec![
                ExplanationType::StepOnTime,
                ExplanationType::DuplicateStep,
                // 40 days after the first registered occurrence: clears the
                // 30-day gap (duplicates do not advance the anchor).
                ExplanationType::StepOnTime,
            ]
        );
    }

    #[test]
    fn step_after_a_stop_is_a_stopped_plan_step() {
        let mut lib = one_plan_library();
        lib.plans[0].body.push(step_spec("enzyme", "pancreatin", StepKind::Once, 0, 200, None, 14, 0));
        lib.plans[0].conditions.push(Condition {
            role: ConditionRole::Abort,
            expr: ConstraintNode::Cmp(FuzzyComparison {
                param: "lipase".into(),
                op: CmpOp::Gt,
                threshold: Value::Num(100.0),
                deviation: 0.0,
                unit: None,
            }),
        });
        let record = record_of(&[
            item_at("hba1c", 7.4, 0),
            item_at("lipase", 400.0, 100),
            item_at("pancreatin", 1.0, 105),
        ]);
        let (analysis, record) = run_passes(&lib, record);
        let expls = explanations_for_concept(&analysis, &record, "pancreatin");
        assert_eq!(expls.len(), 1);
        assert_eq!(expls[0].explanation_type, ExplanationType::StoppedPlanStep);
        assert_eq!(expls[0].applicability, 1.0, "the abort held crisply");
    }

    #[test]
    fn step_after_completion_is_redundant() {
        let mut lib = one_plan_library();
        lib.plans[0].body.push(step_spec("levothyroxine-start", "levothyroxine", StepKind::Once, 0, 300, None, 14, 0));
        lib.plans[0].conditions.push(Condition {
            role: ConditionRole::Complete,
            expr: ConstraintNode::Cmp(FuzzyComparison {
                param: "tsh".into(),
                op: CmpOp::Le,
                threshold: Value::Num(2.0),
                deviation: 0.0,
                unit: None,
            }),
        });
        let record = record_of(&[
            item_at("hba1c", 7.4, 0),
            item_at("tsh", 1.5, 150),
            item_at("levothyroxine", 1.0, 160),
        ]);
        let (analysis, record) = run_passes(&lib, record);
        let expls = explanations_for_concept(&analysis, &record, "levothyroxine");
        assert_eq!(expls.len(), 1);
        assert_eq!(expls[0].explanation_type, ExplanationType::RedundantStepRepeated);
    }

    #[test]
    fn better_fitting_sibling_path_flags_wrong_path_selection() {
        let lib = two_sibling_library();
        let record = record_of(&[
            item_at("ldl", 150.0, 0),
            item_at("egfr", 40.0, 0),
            item_at("simvastatin", 1.0, 10),
        ]);
        let (analysis, record) = run_passes(&lib, record);
        let expls = explanations_for_concept(&analysis, &record, "simvastatin");
        assert_eq!(expls.len(), 1);
        assert_eq!(expls[0].explanation_type, ExplanationType::WrongPathSelection);
        let note = expls[0].note.as_deref().unwrap();
        assert!(note.contains("lipid/renal-statin"), "note names the better path: {note}");
    }

    #[test]
    fn atorvastatin_on_the_matching_path_is_on_time() {
        let lib = two_sibling_library();
        let record = record_of(&[
            item_at("ldl", 150.0, 0),
            item_at("egfr", 40.0, 0),
            item_at("atorvastatin", 1.0, 10),
        ]);
        let (analysis, record) = run_passes(&lib, record);
        let expls = explanations_for_concept(&analysis, &record, "atorvastatin");
        assert_eq!(expls.len(), 1);
        assert_eq!(expls[0].explanation_type, ExplanationType::StepOnTime);
    }

    #[test]
    fn drug_increase_engages_only_on_strictly_rising_dose() {
        let mut lib = one_plan_library();
        lib.plans[0].body.push(step_spec("metformin-admin", "metformin", StepKind::DrugAdministration, 0, 30, Some(30), 14, 0));
        let mut increase = step_spec("metformin-up", "metformin", StepKind::DrugIncrease, 60, 120, None, 14, 0);
        increase.max_dose = Some(2000.0);
        lib.plans[0].body.push(increase);

        let record = record_of(&[
            item_at("hba1c", 7.4, 0),
            dosed_item_at("metformin", 1000.0, 10),
            dosed_item_at("metformin", 1000.0, 40),
            dosed_item_at("metformin", 1500.0, 70),
        ]);
        let (analysis, record) = run_passes(&lib, record);
        let expls = explanations_for_concept(&analysis, &record, "metformin");
        // Every administration matches the admin step; only the rising dose
        // also matches the increase step.
        let increase_expls: Vec<_> =
            expls.iter().filter(|e| e.step_id.as_deref() == Some("metformin-up")).collect();
        assert_eq!(increase_expls.len(), 1);
        assert_eq!(
            record.items[increase_expls[0].item_idx.unwrap()].dose,
            Some(1500.0)
        );
        assert_eq!(increase_expls[0].explanation_type, ExplanationType::StepOnTime);
        let admin_expls: Vec<_> =
            expls.iter().filter(|e| e.step_id.as_deref() == Some("metformin-admin")).collect();
        assert_eq!(admin_expls.len(), 3);
    }

    #[test]
    fn rerunning_the_pass_adds_no_points() {
        let lib = one_plan_library();
        let record = record_of(&[item_at("hba1c", 7.4, 0)]);
        let (mut analysis, record) = run_passes(&lib, record);
        let count = analysis.timeline.points().len();
        bottom_up_analysis(&mut analysis, &record);
        assert_eq!(analysis.timeline.points().len(), count);
    }

    #[test]
    fn every_item_receives_at_least_one_explanation() {
        let mut lib = one_plan_library();
        lib.plans[0].body.push(step_spec("eye-exam", "eye-exam-done", StepKind::Once, 0, 90, None, 14, 30));
        let record = record_of(&[
            item_at("hba1c", 7.4, 0),
            item_at("lithium", 0.7, 3),
            item_at("eye-exam-done", 1.0, 10),
            item_at("hba1c", 8.1, 95),
        ]);
        let (analysis, record) = run_passes(&lib, record);
        for idx in 0..record.items.len() {
            let explained = analysis.timeline.points().iter().any(|p| matches!(
                &p.payload,
                TimePointPayload::Explanation(e) if e.item_idx == Some(idx)
            ));
            assert!(explained, "item {idx} has no explanation");
        }
        let _ = DAY;
    }
}
