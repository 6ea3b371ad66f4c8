//! Top-down (knowledge-driven) pass: evaluate every path plan's entry and
//! stop conditions over the record, turn accepted intervals into plan
//! lifecycle events, derive activations, and assess outcome intentions.
//!
//! - Scored intervals below the acceptance threshold are discarded;
//!   surviving abutting intervals merge into one accepted interval that
//!   keeps its onset membership.
//! - Each accepted entry interval inserts a plan-earliest-start at its start
//!   and a plan-latest-start at start + the path's maximum start delay.
//! - Accepted stop-condition intervals insert plan-completed/stopped/
//!   suspended/restart events at their starts.
//! - An activation runs from an earliest-start to the next stop/complete
//!   event (or the window end); a restart after a stop opens a new one.
//! - Outcome intentions are assessed per activation from activation start +
//!   monitoring delay: one obligation window carrying the duration-weighted
//!   mean achievement, one achievement interval per scored stretch, and one
//!   not-monitored interval per coverage gap longer than the allowed maximum
//!   (avoid-mode intentions invert achievement).

use crate::engine::timeline::{
    IntentionAssessment, IntentionOutcome, LifecycleKind, Pass, PlanLifecycleEvent, TimePointPayload,
};
use crate::engine::{Activation, Analysis};
use crate::fuzzy::{evaluate_expr, FuzzyError, ScoredInterval};
use crate::ingest::PatientRecord;
use crate::knowledge::{ConditionRole, IntentionKind, IntentionMode, PathPlan};
use crate::time::{add_secs, Span, Time};

// ── Interval acceptance ─────────────────────────────────────────────────────

/// A condition interval that survived thresholding; `membership` is the
/// score at its onset, which the lifecycle event inherits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AcceptedInterval {
    pub span: Span,
    pub membership: f64,
}

/// Keep intervals scoring at least `threshold`, merging abutting survivors
/// (a condition that stays accepted while its score moves is one episode).
pub fn accept_intervals(scored: &[ScoredInterval], threshold: f64) -> Vec<AcceptedInterval> {
    let mut out: Vec<AcceptedInterval> = Vec::new();
    for s in scored {
        if s.membership < threshold {
            continue;
        }
        if let Some(prev) = out.last_mut() {
            if prev.span.end == s.span.start {
                prev.span = Span::new(prev.span.start, s.span.end)
                    .expect("merged span keeps a valid order");
                continue;
            }
        }
        out.push(AcceptedInterval { span: s.span, membership: s.membership });
    }
    out
}

// ── The pass ────────────────────────────────────────────────────────────────

pub fn top_down_analysis(
    analysis: &mut Analysis<'_>,
    record: &PatientRecord,
) -> Result<(), FuzzyError> {
    if analysis.timeline.is_done(Pass::TopDown) {
        return Ok(());
    }
    let knowledge = analysis.knowledge;

    const STOP_EVENTS: [(ConditionRole, LifecycleKind); 4] = [
        (ConditionRole::Complete, LifecycleKind::PlanCompleted),
        (ConditionRole::Abort, LifecycleKind::PlanStopped),
        (ConditionRole::Suspend, LifecycleKind::PlanSuspended),
        (ConditionRole::Restart, LifecycleKind::PlanRestart),
    ];

    for path in &knowledge.paths {
        let mut entry_scored = Vec::new();
        if let Some(entry) = path.entry_expr() {
            entry_scored = evaluate_expr(&knowledge.lib, &entry, record, analysis.window)?;
            let threshold = analysis.config.threshold_for(ConditionRole::Filter);
            for acc in accept_intervals(&entry_scored, threshold) {
                insert_event(analysis, path, LifecycleKind::PlanEarliestStart, acc.span.start, acc.membership);
                insert_event(
                    analysis,
                    path,
                    LifecycleKind::PlanLatestStart,
                    add_secs(acc.span.start, path.max_start_delay_s),
                    acc.membership,
                );
            }
        }
        analysis.entry_scores.insert(path.id.clone(), entry_scored);

        for (role, kind) in STOP_EVENTS {
            let Some(expr) = path.condition(role) else { continue };
            let scored = evaluate_expr(&knowledge.lib, expr, record, analysis.window)?;
            for acc in accept_intervals(&scored, analysis.config.threshold_for(role)) {
                insert_event(analysis, path, kind, acc.span.start, acc.membership);
            }
        }
    }
    analysis.timeline.normalize();

    derive_activations(analysis);
    assess_intentions(analysis, record)?;
    analysis.timeline.normalize();
    analysis.timeline.mark_done(Pass::TopDown);
    Ok(())
}

fn insert_event(
    analysis: &mut Analysis<'_>,
    path: &PathPlan,
    kind: LifecycleKind,
    time: Time,
    membership: f64,
) {
    analysis.timeline.insert(
        time,
        TimePointPayload::Lifecycle(PlanLifecycleEvent {
            plan_id: path.id.clone(),
            kind,
            membership,
        }),
    );
}

// ── Activations ─────────────────────────────────────────────────────────────

/// Walk each plan's sorted lifecycle events into activation episodes.
/// Extra earliest-starts while active are redundant; restarts only reopen a
/// previously ended episode.
fn derive_activations(analysis: &mut Analysis<'_>) {
    let mut all = std::collections::BTreeMap::new();
    for path in &analysis.knowledge.paths {
        let mut episodes: Vec<Activation> = Vec::new();
        let mut current: Option<Activation> = None;
        for (t, ev) in analysis.timeline.plan_events(&path.id) {
            match ev.kind {
                LifecycleKind::PlanEarliestStart => {
                    if current.is_none() {
                        current = Some(Activation {
                            start: t,
                            membership: ev.membership,
                            latest_start: add_secs(t, path.max_start_delay_s),
                            end: None,
                        });
                    }
                }
                LifecycleKind::PlanStopped | LifecycleKind::PlanCompleted => {
                    if let Some(mut act) = current.take() {
                        act.end = Some((t, ev.kind));
                        episodes.push(act);
                    }
                }
                LifecycleKind::PlanRestart => {
                    if current.is_none() && !episodes.is_empty() {
                        current = Some(Activation {
                            start: t,
                            membership: ev.membership,
                            latest_start: add_secs(t, path.max_start_delay_s),
                            end: None,
                        });
                    }
                }
                LifecycleKind::PlanLatestStart | LifecycleKind::PlanSuspended => {}
            }
        }
        if let Some(act) = current {
            episodes.push(act);
        }
        all.insert(path.id.clone(), episodes);
    }
    analysis.activations = all;
}

// ── Intentions ──────────────────────────────────────────────────────────────

fn assess_intentions(
    analysis: &mut Analysis<'_>,
    record: &PatientRecord,
) -> Result<(), FuzzyError> {
    let knowledge = analysis.knowledge;
    let window_end = analysis.window.end;
    let mut new_points: Vec<(Time, TimePointPayload)> = Vec::new();

    for path in &knowledge.paths {
        let Some(episodes) = analysis.activations.get(&path.id) else { continue };
        for (intention_idx, intention) in path.intentions.iter().enumerate() {
            if intention.kind != IntentionKind::Outcome {
                continue;
            }
            for act in episodes {
                let start = add_secs(act.start, intention.monitoring_delay_s);
                let end = act.end.map(|(t, _)| t).unwrap_or(window_end).min(window_end);
                let Some(window) = Span::new(start, end) else { continue };

                let mut scored =
                    evaluate_expr(&knowledge.lib, &intention.target, record, window)?;
                if intention.mode == IntentionMode::Avoid {
                    for s in &mut scored {
                        s.membership = 1.0 - s.membership;
                    }
                }

                let covered: f64 = scored.iter().map(|s| s.span.duration_secs() as f64).sum();
                let mean = if covered > 0.0 {
                    scored
                        .iter()
                        .map(|s| s.membership * s.span.duration_secs() as f64)
                        .sum::<f64>()
                        / covered
                } else {
                    0.0
                };
                new_points.push((
                    window.start,
                    assessment(path, intention_idx, window, IntentionOutcome::ShouldHaveMonitored(mean)),
                ));
                for s in &scored {
                    new_points.push((
                        s.span.start,
                        assessment(path, intention_idx, s.span, IntentionOutcome::Achievement(s.membership)),
                    ));
                }

                // Monitoring gaps, window edges included.
                let mut cursor = window.start;
                for s in &scored {
                    push_gap(&mut new_points, path, intention_idx, cursor, s.span.start, intention.max_gap_s);
                    cursor = cursor.max(s.span.end);
                }
                push_gap(&mut new_points, path, intention_idx, cursor, window.end, intention.max_gap_s);
            }
        }
    }

    for (t, payload) in new_points {
        analysis.timeline.insert(t, payload);
    }
    Ok(())
}

fn assessment(
    path: &PathPlan,
    intention_idx: usize,
    span: Span,
    outcome: IntentionOutcome,
) -> TimePointPayload {
    TimePointPayload::Intention(IntentionAssessment {
        plan_id: path.id.clone(),
        intention_idx,
        span,
        outcome,
    })
}

fn push_gap(
    new_points: &mut Vec<(Time, TimePointPayload)>,
    path: &PathPlan,
    intention_idx: usize,
    gap_start: Time,
    gap_end: Time,
    max_gap_s: i64,
) {
    let Some(gap) = Span::new(gap_start, gap_end) else { return };
    if gap.duration_secs() > max_gap_s {
        new_points.push((
            gap.start,
            assessment(path, intention_idx, gap, IntentionOutcome::NotMonitored),
        ));
    }
}

// ── Tests ───────────────────────────────────────────────────────────────────

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::testsupport::{day, item_at, one_plan_library, record_of, run_top_down};
    use crate::engine::timeline::{ApplicabilityValue, applicability_status};
    use crate::knowledge::{CmpOp, Condition, ConstraintNode, FuzzyComparison, Intention};
    use crate::value::Value;

    fn scored(parts: &[(i64, i64, f64)]) -> Vec<ScoredInterval> {
        parts
            .iter()
            .map(|&(s, e, m)| ScoredInterval {
                span: Span::new(day(s), day(e)).unwrap(),
                membership: m,
            })
            .collect()
    }

    #[test]
    fn acceptance_drops_weak_intervals_and_merges_abutting_survivors() {
        let scored = scored(&[(0, 10, 0.6), (10, 20, 0.9), (25, 30, 0.3), (40, 50, 0.7)]);
        let accepted = accept_intervals(&scored, 0.5);
        assert_eq!(accepted.len(), 2);
        assert_eq!(accepted[0].span, Span::new(day(0), day(20)).unwrap());
        assert_eq!(accepted[0].membership, 0.6);
        assert_eq!(accepted[1].span, Span::new(day(40), day(50)).unwrap());
    }

    #[test]
    fn accepted_entry_interval_inserts_start_events_and_an_activation() {
        // Measurements above the entry threshold across a stretch of days.
        let lib = one_plan_library();
        let record = record_of(&[item_at("hba1c", 7.4, 0), item_at("hba1c", 7.8, 30)]);
        let analysis = run_top_down(&lib, &record);

        let events: Vec<_> = analysis.timeline.plan_events("glycemia").collect();
        assert_eq!(events.len(), 2);
        assert_eq!(events[0].1.kind, LifecycleKind::PlanEarliestStart);
        assert_eq!(events[1].1.kind, LifecycleKind::PlanLatestStart);
        // Latest start = entry onset + the plan's max start delay (90 days).
        assert_eq!(events[1].0, add_secs(events[0].0, 90 * 86_400));

        let episodes = &analysis.activations["glycemia"];
        assert_eq!(episodes.len(), 1);
        assert_eq!(episodes[0].start, events[0].0);
        assert!(episodes[0].end.is_none());
    }

    #[test]
    fn record_matching_no_condition_leaves_the_timeline_unaugmented() {
        let lib = one_plan_library();
        // Values far below the entry threshold: membership 0 everywhere.
        let record = record_of(&[item_at("hba1c", 5.0, 0), item_at("hba1c", 5.1, 30)]);
        let analysis = run_top_down(&lib, &record);
        assert_eq!(analysis.timeline.plan_events("glycemia").count(), 0);
        assert!(analysis.activations["glycemia"].is_empty());
        // Entry scores are still cached (they scored 0, below threshold).
        assert!(!analysis.entry_scores["glycemia"].is_empty());
    }

    #[test]
    fn accepted_stop_condition_ends_the_activation() {
        let mut lib = one_plan_library();
        // Abort when the safety marker exceeds 100 (crisp).
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
            item_at("hba1c", 7.6, 30),
            item_at("lipase", 300.0, 60),
        ]);
        let analysis = run_top_down(&lib, &record);

        let episodes = &analysis.activations["glycemia"];
        assert_eq!(episodes.len(), 1);
        let (end_time, end_kind) = episodes[0].end.expect("activation ended by the abort");
        assert_eq!(end_time, day(60));
        assert_eq!(end_kind, LifecycleKind::PlanStopped);
        assert_eq!(
            applicability_status(&analysis.timeline, "glycemia", day(61)).value,
            ApplicabilityValue::Stopped
        );
    }

    #[test]
    fn entry_refiring_after_a_stop_opens_a_second_activation() {
        let mut lib = one_plan_library();
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
        // Entry holds around day 0-ish, lapses (no data), aborts at day 60
        // inside the second entry stretch, which then re-fires at day 200.
        let record = record_of(&[
            item_at("hba1c", 7.4, 0),
            item_at("lipase", 300.0, 60),
            item_at("hba1c", 7.5, 200),
        ]);
        let analysis = run_top_down(&lib, &record);
        let episodes = &analysis.activations["glycemia"];
        assert_eq!(episodes.len(), 2);
        assert!(episodes[0].end.is_some());
        assert_eq!(episodes[1].start, day(200));
        assert!(episodes[1].end.is_none());
    }

    #[test]
    fn outcome_intention_yields_obligation_achievement_and_gap_assessments() {
        let mut lib = one_plan_library();
        // Maintain hba1c ≤ 7.0 (d = 0.5), monitored from 10 days after
        // entry, with at most a 30-day measurement gap.
        lib.plans[0].intentions.push(Intention {
            kind: IntentionKind::Outcome,
            mode: IntentionMode::Maintain,
            target: ConstraintNode::Cmp(FuzzyComparison {
                param: "hba1c".into(),
                op: CmpOp::Le,
                threshold: Value::Num(7.0),
                deviation: 0.5,
                unit: None,
            }),
            monitoring_delay_s: 10 * 86_400,
            max_gap_s: 30 * 86_400,
        });
        // hba1c persists 60 days after each measurement (fixture library),
        // so day-0 and day-120 measurements leave a 60-day hole between
        // days 60 and 120.
        let record = record_of(&[item_at("hba1c", 7.4, 0), item_at("hba1c", 6.8, 120)]);
        let analysis = run_top_down(&lib, &record);

        let assessments: Vec<&IntentionAssessment> = analysis
            .timeline
            .points()
            .iter()
            .filter_map(|p| match &p.payload {
                TimePointPayload::Intention(ia) => Some(ia),
                _ => None,
            })
            .collect();

        let obligation: Vec<_> = assessments
            .iter()
            .filter(|a| matches!(a.outcome, IntentionOutcome::ShouldHaveMonitored(_)))
            .collect();
        assert_eq!(obligation.len(), 1);
        assert_eq!(obligation[0].span.start, day(10));

        let gaps: Vec<_> = assessments
            .iter()
            .filter(|a| matches!(a.outcome, IntentionOutcome::NotMonitored))
            .collect();
        assert_eq!(gaps.len(), 1);
        assert_eq!(gaps[0].span, Span::new(day(60), day(120)).unwrap());

        // Achievement intervals carry the fuzzified maintenance score:
        // 7.4 → (7.5 − 7.4)/0.5 = 0.2, and 6.8 → 1.0.
        let achieved: Vec<_> = assessments
            .iter()
            .filter_map(|a| match a.outcome {
                IntentionOutcome::Achievement(score) => Some((a.span.start, score)),
                _ => None,
            })
            .collect();
        assert_eq!(achieved.len(), 2);
        assert!((achieved[0].1 - 0.2).abs() < 1e-9);
        assert!((achieved[1].1 - 1.0).abs() < 1e-9);
    }

    #[test]
    fn avoid_mode_inverts_achievement_scores() {
        let mut lib = one_plan_library();
        lib.plans[0].intentions.push(Intention {
            kind: IntentionKind::Outcome,
            mode: IntentionMode::Avoid,
            target: ConstraintNode::Cmp(FuzzyComparison {
                param: "hba1c".into(),
                op: CmpOp::Gt,
                threshold: Value::Num(9.0),
                deviation: 1.0,
                unit: None,
            }),
            monitoring_delay_s: 0,
            max_gap_s: 365 * 86_400,
        });
        // 8.9 scores 0.9 on "> 9.0, d 1.0"; avoiding it scores 0.1.
        let record = record_of(&[item_at("hba1c", 7.2, 0), item_at("hba1c", 8.9, 20)]);
        let analysis = run_top_down(&lib, &record);
        let achieved: Vec<f64> = analysis
            .timeline
            .points()
            .iter()
            .filter_map(|p| match &p.payload {
                TimePointPayload::Intention(IntentionAssessment {
                    outcome: IntentionOutcome::Achievement(score),
                    ..
                }) => Some(*score),
                _ => None,
            })
            .collect();
        assert_eq!(achieved.len(), 2);
        assert!((achieved[0] - 1.0).abs() < 1e-9, "7.2 is fully avoided");
        assert!((achieved[1] - 0.1).abs() < 1e-9, "8.9 nearly violates the avoid target");
    }

    #[test]
    fn rerunning_the_pass_adds_no_points() {
        let lib = one_plan_library();
        let record = record_of(&[item_at("hba1c", 7.4, 0), item_at("hba1c", 7.8, 30)]);
        let mut analysis = run_top_down(&lib, &record);
        let count = analysis.timeline.points().len();
        top_down_analysis(&mut analysis, &record).unwrap();
        assert_eq!(analysis.timeline.points().len(), count);
    }
}
