//! Computed explanations: candidate guideline-contextual interpretations of
//! data items (or of gaps, for missing actions), scored for reasonableness.
//!
//! - Reasonableness is the arithmetic mean of the defined subscores among
//!   applicability, specificity, and timing (timing exists only for
//!   classified step occurrences).
//! - Specificity is `1/k`, where `k` counts the distinct path plans holding
//!   any role for the item's concept; concepts unknown to every plan score 1.
//! - Comment selection per item is argmax by reasonableness with a
//!   deterministic tie-break: higher applicability, then lexicographic plan
//!   id, then explanation-type rank, then step id.

use std::cmp::Ordering;

use crate::knowledge::{ConceptId, PlanId, RoleKind, StepId};

// ── Explanation taxonomy ────────────────────────────────────────────────────

/// Every interpretation the engine can attach to a data item or gap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ExplanationType {
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
}

impl ExplanationType {
    pub fn as_str(&self) -> &'static str {
        match self {
            ExplanationType::StepNotSupported => "step-not-supported",
            ExplanationType::StoppedPlanStep => "stopped-plan-step",
            ExplanationType::RedundantStepRepeated => "redundant-step-repeated",
            ExplanationType::DuplicateStep => "duplicate-step",
            ExplanationType::WrongPathSelection => "wrong-path-selection",
            ExplanationType::StepTooEarly => "step-too-early",
            ExplanationType::StepOnTime => "step-on-time",
            ExplanationType::StepTooLate => "step-too-late",
            ExplanationType::MissingAction => "missing-action",
            ExplanationType::LowMedicationCompliance => "low-medication-compliance",
            ExplanationType::ConditionEvidence => "condition-evidence",
            ExplanationType::IntentionEvidence => "intention-evidence",
        }
    }

    /// Whether this explanation flags a care deviation (as opposed to benign
    /// evidence or an on-time step).
    pub fn is_deviation(&self) -> bool {
        !matches!(
            self,
            ExplanationType::StepOnTime
                | ExplanationType::ConditionEvidence
                | ExplanationType::IntentionEvidence
        )
    }

    /// Tie-break rank for comment selection: step interpretations win exact
    /// ties against evidence bookkeeping.
    fn selection_rank(&self) -> u8 {
        match self {
            ExplanationType::StepNotSupported => 0,
            ExplanationType::StoppedPlanStep => 1,
            ExplanationType::RedundantStepRepeated => 2,
            ExplanationType::DuplicateStep => 3,
            ExplanationType::WrongPathSelection => 4,
            ExplanationType::StepTooEarly => 5,
            ExplanationType::StepOnTime => 6,
            ExplanationType::StepTooLate => 7,
            ExplanationType::MissingAction => 8,
            ExplanationType::LowMedicationCompliance => 9,
            ExplanationType::IntentionEvidence => 10,
            ExplanationType::ConditionEvidence => 11,
        }
    }
}

// ── Scored explanation ──────────────────────────────────────────────────────

/// One candidate interpretation with its subscores. `item_idx` indexes the
/// patient record's items; it is `None` for gap-based explanations
/// (missing actions, compliance warnings).
#[derive(Debug, Clone, PartialEq)]
pub struct ComputedExplanation {
    pub item_idx: Option<usize>,
    pub concept_id: Option<ConceptId>,
    pub plan_id: Option<PlanId>,
    pub role: Option<RoleKind>,
    pub step_id: Option<StepId>,
    pub explanation_type: ExplanationType,
    /// How applicable the plan context was at the item's time, in [0, 1].
    pub applicability: f64,
    /// 1/k over the k path plans that know the concept, in (0, 1].
    pub specificity: f64,
    /// Timing score for classified step occurrences only.
    pub timing: Option<f64>,
    pub note: Option<String>,
}

impl ComputedExplanation {
    /// Mean of the defined subscores.
    pub fn reasonableness(&self) -> f64 {
        match self.timing {
            Some(t) => (self.applicability + self.specificity + t) / 3.0,
            None => (self.applicability + self.specificity) / 2.0,
        }
    }
}

/// Total order used to pick each item's comment; `Ordering::Greater` means
/// `a` is preferred. Ranks by reasonableness, then applicability, then the
/// deterministic structural tie-breaks.
pub fn selection_cmp(a: &ComputedExplanation, b: &ComputedExplanation) -> Ordering {
    a.reasonableness()
        .total_cmp(&b.reasonableness())
        .then_with(|| a.applicability.total_cmp(&b.applicability))
        .then_with(|| {
            // Lower (earlier) plan ids and ranks are preferred, so compare
            // reversed: b against a.
            b.plan_id.cmp(&a.plan_id)
        })
        .then_with(|| {
            b.explanation_type
                .selection_rank()
                .cmp(&a.explanation_type.selection_rank())
        })
        .then_with(|| b.step_id.cmp(&a.step_id))
}

/// The preferred explanation among candidates, by [`selection_cmp`].
pub fn select_best(candidates: &[ComputedExplanation]) -> Option<&ComputedExplanation> {
    candidates.iter().reduce(|best, next| {
        if selection_cmp(next, best) == Ordering::Greater {
            next
        } else {
            best
        }
    })
}

/// Specificity subscore for a concept known to `k` distinct path plans.
pub fn specificity_score(distinct_plans: usize) -> f64 {
    if distinct_plans == 0 {
        1.0
    } else {
        1.0 / distinct_plans as f64
    }
}

// ── Tests ───────────────────────────────────────────────────────────────────
