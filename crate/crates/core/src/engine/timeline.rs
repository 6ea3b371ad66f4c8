//! The per-patient chronological store the analysis passes share.
//!
//! A timeline starts as the record's raw data points; each pass augments it
//! with computed points (plan lifecycle events, explanations, intention
//! assessments) and marks itself done so reruns are no-ops. Points sort by
//! `(time, payload kind, plan, concept, step, insertion sequence)`, which
//! makes every downstream scan — and therefore every report — deterministic.
//!
//! Plan applicability at an instant is a pure function of the lifecycle
//! events strictly before it: later insertions never rewrite earlier
//! statuses.

use std::collections::BTreeSet;

use serde::Serialize;

use crate::engine::explanation::ComputedExplanation;
use crate::ingest::PatientRecord;
use crate::knowledge::PlanId;
use crate::time::{Span, Time};

// ── Lifecycle events ────────────────────────────────────────────────────────

/// Plan lifecycle transitions discovered by the top-down pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum LifecycleKind {
    PlanEarliestStart,
    PlanLatestStart,
    PlanCompleted,
    PlanStopped,
    PlanSuspended,
    PlanRestart,
}

impl LifecycleKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            LifecycleKind::PlanEarliestStart => "plan-earliest-start",
            LifecycleKind::PlanLatestStart => "plan-latest-start",
            LifecycleKind::PlanCompleted => "plan-completed",
            LifecycleKind::PlanStopped => "plan-stopped",
            LifecycleKind::PlanSuspended => "plan-suspended",
            LifecycleKind::PlanRestart => "plan-restart",
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PlanLifecycleEvent {
    pub plan_id: PlanId,
    pub kind: LifecycleKind,
    /// Membership of the condition interval that produced the event.
    pub membership: f64,
}

// ── Intention assessments ───────────────────────────────────────────────────

/// How an outcome intention fared over one interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case", tag = "status", content = "score")]
pub enum IntentionOutcome {
    /// Graded achievement of the target over a scored interval.
    Achievement(f64),
    /// The obligation window itself, carrying the duration-weighted mean
    /// achievement over its monitored parts.
    ShouldHaveMonitored(f64),
    /// A monitoring gap longer than the intention's maximum allowed gap.
    NotMonitored,
}

#[derive(Debug, Clone, Serialize)]
pub struct IntentionAssessment {
    pub plan_id: PlanId,
    /// Index into the path plan's intention list.
    pub intention_idx: usize,
    pub span: Span,
    pub outcome: IntentionOutcome,
}

// ── Applicability ───────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ApplicabilityValue {
    /// The plan has lifecycle events, all at or after the queried time.
    NotYetApplicable,
    Applicable,
    Suspended,
    Stopped,
    Completed,
    /// The plan produced no lifecycle events at all.
    Unknown,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ApplicabilityStatus {
    pub value: ApplicabilityValue,
    /// Membership of the event that established the status; 0 when no event
    /// governs the instant.
    pub membership: f64,
}

// ── Time points ─────────────────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub enum TimePointPayload {
    /// Index into the patient record's item list.
    Data(usize),
    Lifecycle(PlanLifecycleEvent),
    Explanation(ComputedExplanation),
    Intention(IntentionAssessment),
}

impl TimePointPayload {
    fn kind_rank(&self) -> u8 {
        match self {
            TimePointPayload::Data(_) => 0,
            TimePointPayload::Lifecycle(_) => 1,
            TimePointPayload::Explanation(_) => 2,
            TimePointPayload::Intention(_) => 3,
        }
    }

    fn plan_key(&self) -> &str {
        match self {
            TimePointPayload::Data(_) => "",
            TimePointPayload::Lifecycle(ev) => &ev.plan_id,
            TimePointPayload::Explanation(ex) => ex.plan_id.as_deref().unwrap_or(""),
            TimePointPayload::Intention(ia) => &ia.plan_id,
        }
    }

    fn detail_key(&self) -> (&str, u64) {
        match self {
            TimePointPayload::Data(idx) => ("", *idx as u64),
            TimePointPayload::Lifecycle(ev) => (ev.kind.as_str(), 0),
            TimePointPayload::Explanation(ex) => (
                ex.step_id.as_deref().or(ex.concept_id.as_deref()).unwrap_or(""),
                ex.explanation_type.as_str().len() as u64,
            ),
            TimePointPayload::Intention(ia) => ("", ia.intention_idx as u64),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TimePoint {
    pub time: Time,
    /// Insertion sequence; the final sort key, so insertion order decides
    /// only when everything else ties.
    pub seq: u64,
    pub payload: TimePointPayload,
}

// ── The timeline ────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Pass {
    TopDown,
    BottomUp,
    MissingActions,
}

#[derive(Debug, Clone, Default)]
pub struct TimeLine {
    points: Vec<TimePoint>,
    next_seq: u64,
    completed: BTreeSet<Pass>,
}

impl TimeLine {
    /// A timeline holding one data point per record item, chronological.
    pub fn from_record(record: &PatientRecord) -> TimeLine {
        let mut timeline = TimeLine::default();
        for (idx, item) in record.items.iter().enumerate() {
            timeline.insert(item.valid_start, TimePointPayload::Data(idx));
        }
        timeline.normalize();
        timeline
    }

    /// Append a point; call [`TimeLine::normalize`] before the next scan.
    pub fn insert(&mut self, time: Time, payload: TimePointPayload) {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.points.push(TimePoint { time, seq, payload });
    }

    /// Restore the deterministic scan order.
    pub fn normalize(&mut self) {
        self.points.sort_by(|a, b| {
            a.time
                .cmp(&b.time)
                .then_with(|| a.payload.kind_rank().cmp(&b.payload.kind_rank()))
                .then_with(|| a.payload.plan_key().cmp(b.payload.plan_key()))
                .then_with(|| a.payload.detail_key().cmp(&b.payload.detail_key()))
                .then_with(|| a.seq.cmp(&b.seq))
        });
    }

    pub fn points(&self) -> &[TimePoint] {
        &self.points
    }

    pub fn is_done(&self, pass: Pass) -> bool {
        self.completed.contains(&pass)
    }

    pub fn mark_done(&mut self, pass: Pass) {
        self.completed.insert(pass);
    }

    /// Lifecycle events of one plan, in timeline order.
    pub fn plan_events<'a>(
        &'a self,
        plan_id: &'a str,
    ) -> impl Iterator<Item = (Time, &'a PlanLifecycleEvent)> + 'a {
        self.points.iter().filter_map(move |p| match &p.payload {
            TimePointPayload::Lifecycle(ev) if ev.plan_id == plan_id => Some((p.time, ev)),
            _ => None,
        })
    }
}

// ── Applicability derivation ────────────────────────────────────────────────

/// Plan status at `time`, from the lifecycle events strictly before it.
///
/// The state machine starts unknown; an earliest-start always (re)activates;
/// stop, complete, and suspend transitions require an active (or suspended)
/// plan, so stray stop events without a preceding start are ignored; restart
/// reactivates a suspended or stopped plan. Latest-start points are markers
/// and change nothing.
pub fn applicability_status(timeline: &TimeLine, plan_id: &str, time: Time) -> ApplicabilityStatus {
    let mut any_event = false;
    let mut any_before = false;
    let mut status = ApplicabilityStatus { value: ApplicabilityValue::Unknown, membership: 0.0 };

    for (t, ev) in timeline.plan_events(plan_id) {
        any_event = true;
        if t >= time {
            break;
        }
        any_before = true;
        if let Some(next) = transition(status.value, ev) {
            status = next;
        }
    }

    if any_event && !any_before {
        return ApplicabilityStatus { value: ApplicabilityValue::NotYetApplicable, membership: 0.0 };
    }
    status
}

fn transition(current: ApplicabilityValue, ev: &PlanLifecycleEvent) -> Option<ApplicabilityStatus> {
    use ApplicabilityValue::*;
    let value = match ev.kind {
        LifecycleKind::PlanEarliestStart => Applicable,
        LifecycleKind::PlanLatestStart => return None,
        LifecycleKind::PlanStopped if matches!(current, Applicable | Suspended) => Stopped,
        LifecycleKind::PlanCompleted if matches!(current, Applicable | Suspended) => Completed,
        LifecycleKind::PlanSuspended if matches!(current, Applicable) => Suspended,
        LifecycleKind::PlanRestart if matches!(current, Suspended | Stopped) => Applicable,
        _ => return None,
    };
    Some(ApplicabilityStatus { value, membership: ev.membership })
}

// ── Tests ───────────────────────────────────────────────────────────────────
