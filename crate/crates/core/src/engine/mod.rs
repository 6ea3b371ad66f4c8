//! Compliance engine: grade one patient record against the guideline
//! library and produce a critique report.
//!
//! The engine runs as passes over a shared per-patient [`timeline`]:
//!
//! 1. [`top_down`] — evaluate every path plan's entry and stop conditions,
//!    insert lifecycle events, derive activation episodes, and assess
//!    outcome intentions.
//! 2. [`bottom_up`] — explain every data item against the knowledge roles
//!    its concept holds (evidence, graded step occurrences, or unexplained
//!    data).
//! 3. [`missing`] — flag obligations of active plans that never happened,
//!    with the dose-escalation gate.
//! 4. [`summarize`] — pick the best explanation per item, convert
//!    everything into sorted comments, and assemble the report.
//!
//! Passes are idempotent (each marks the timeline when done), and every
//! scan order is deterministic, so a report is a pure function of
//! `(library, config, record, window)`.

pub mod bottom_up;
pub mod explanation;
pub mod missing;
pub mod summarize;
pub mod timeline;
pub mod top_down;

#[cfg(test)]
pub(crate) mod testsupport;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::fuzzy::{default_analysis_window, FuzzyError, ScoredInterval};
use crate::ingest::PatientRecord;
use crate::knowledge::{
    flatten_guideline_paths, ConditionRole, KnowledgeLibrary, PathPlan, PlanId, RoleIndex,
};
use crate::time::{Span, Time};

pub use explanation::{ComputedExplanation, ExplanationType};
pub use summarize::{
    Comment, CommentScores, CommentType, ConfigEcho, CritiqueReport, DebugSection,
};
pub use timeline::{LifecycleKind, TimeLine};

// ── Configuration ───────────────────────────────────────────────────────────

/// Tunable thresholds for one analysis run. Everything has a sensible
/// default, so a config file needs to mention only what it overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    /// Minimum membership for a condition interval to count as holding.
    pub acceptance_threshold: f64,
    /// Per-role overrides of the acceptance threshold, keyed by the role
    /// name (`filter`, `setup`, `complete`, `abort`, `suspend`, `restart`).
    pub role_thresholds: BTreeMap<String, f64>,
    /// Minimum medication coverage below which a missed dose escalation is
    /// reported as low compliance instead.
    pub compliance_threshold: f64,
    /// How much better a sibling path must fit before an occurrence on this
    /// path is flagged as a wrong path selection.
    pub wrong_path_margin: f64,
    /// Attach the debug section (lifecycle events, every candidate
    /// explanation, intention assessments) to the report.
    pub debug: bool,
}

impl Default for EngineConfig {
    fn default() -> EngineConfig {
        EngineConfig {
            acceptance_threshold: 0.5,
            role_thresholds: BTreeMap::new(),
            compliance_threshold: 0.8,
            wrong_path_margin: 0.1,
            debug: false,
        }
    }
}

impl EngineConfig {
    /// Acceptance threshold for one condition role, honoring overrides.
    pub fn threshold_for(&self, role: ConditionRole) -> f64 {
        self.role_thresholds
            .get(role.as_str())
            .copied()
            .unwrap_or(self.acceptance_threshold)
    }
}

// ── Prepared knowledge ──────────────────────────────────────────────────────

/// A knowledge library preprocessed for analysis: flattened paths, the
/// concept-to-role index, and the content hash echoed into reports. Prepare
/// once, share across patients.
#[derive(Debug, Clone)]
pub struct PreparedKnowledge {
    pub lib: KnowledgeLibrary,
    /// Every root-to-leaf path through the plan hierarchy.
    pub paths: Vec<PathPlan>,
    pub roles: RoleIndex,
    pub library_hash: String,
}

impl PreparedKnowledge {
    pub fn prepare(lib: KnowledgeLibrary) -> PreparedKnowledge {
        let paths = flatten_guideline_paths(&lib);
        let roles = RoleIndex::build(&lib, &paths);
        let library_hash = lib.content_hash();
        PreparedKnowledge { lib, paths, roles, library_hash }
    }

    pub fn path(&self, id: &str) -> Option<&PathPlan> {
        self.paths.iter().find(|p| p.id == id)
    }
}

// ── Per-patient working state ───────────────────────────────────────────────

/// One activation episode of a path plan: from an accepted entry onset to
/// the stop/complete event that ended it (open while `end` is `None`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Activation {
    pub start: Time,
    /// Membership of the entry interval at its onset.
    pub membership: f64,
    /// Latest allowed plan start: `start` + the path's maximum start delay.
    pub latest_start: Time,
    pub end: Option<(Time, LifecycleKind)>,
}

/// Mutable state threaded through the passes for one patient.
pub struct Analysis<'k> {
    pub knowledge: &'k PreparedKnowledge,
    pub config: &'k EngineConfig,
    pub window: Span,
    pub timeline: TimeLine,
    /// Entry-condition score functions per path, cached by the top-down
    /// pass for the wrong-path comparison.
    pub entry_scores: BTreeMap<PlanId, Vec<ScoredInterval>>,
    /// Activation episodes per path, derived by the top-down pass.
    pub activations: BTreeMap<PlanId, Vec<Activation>>,
}

impl<'k> Analysis<'k> {
    pub fn new(
        knowledge: &'k PreparedKnowledge,
        config: &'k EngineConfig,
        window: Span,
        record: &PatientRecord,
    ) -> Analysis<'k> {
        Analysis {
            knowledge,
            config,
            window,
            timeline: TimeLine::from_record(record),
            entry_scores: BTreeMap::new(),
            activations: BTreeMap::new(),
        }
    }
}

// ── Entry point ─────────────────────────────────────────────────────────────

/// Run the full critique for one patient. With no explicit window the
/// record's default analysis window is used; a record with no items yields
/// an empty report.
pub fn analyze_patient(
    knowledge: &PreparedKnowledge,
    config: &EngineConfig,
    record: &PatientRecord,
    window_override: Option<Span>,
) -> Result<CritiqueReport, FuzzyError> {
    let window = window_override.or_else(|| default_analysis_window(&knowledge.lib, record));
    let Some(window) = window else {
        return Ok(summarize::empty_report(knowledge, config, record));
    };
    let mut analysis = Analysis::new(knowledge, config, window, record);
    top_down::top_down_analysis(&mut analysis, record)?;
    bottom_up::bottom_up_analysis(&mut analysis, record);
    missing::missing_actions_analysis(&mut analysis, record);
    Ok(summarize::summarize(&analysis, record))
}
