//! Semantic validation of a parsed knowledge library.
//!
//! Parsing guarantees structural shape only; this pass checks references,
//! value domains, role multiplicity, and timing parameters, and returns every
//! finding (it never stops at the first problem). Errors make the library
//! unusable for analysis; warnings flag suspicious but workable knowledge.

use std::collections::BTreeSet;
use std::fmt;

use super::flatten::flatten_guideline_paths;
use super::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Finding {
    pub severity: Severity,
    pub location: String,
    pub message: String,
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        write!(f, "{tag}: {}: {}", self.location, self.message)
    }
}

#[derive(Debug, Default, Serialize, Deserialize)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn has_errors(&self) -> bool {
        self.findings
            .iter()
            .any(|f| f.severity == Severity::Error)
    }

    pub fn errors(&self) -> impl Iterator<Item = &Finding> {
        self.findings
            .iter()
            .filter(|f| f.severity == Severity::Error)
    }

    fn error(&mut self, location: impl Into<String>, message: impl Into<String>) {
        self.findings.push(Finding {
            severity: Severity::Error,
            location: location.into(),
            message: message.into(),
        });
    }

    fn warning(&mut self, location: impl Into<String>, message: impl Into<String>) {
        self.findings.push(Finding {
            severity: Severity::Warning,
            location: location.into(),
            message: message.into(),
        });
    }
}

/// Check a library and report every finding.
pub fn validate_library(lib: &KnowledgeLibrary) -> ValidationReport {
    let mut report = ValidationReport::default();

    let mut seen = BTreeSet::new();
    for concept in &lib.concepts {
        let location = format!("concept '{}'", concept.id);
        if !seen.insert(concept.id.clone()) {
            report.error(&location, "duplicate concept id");
        }
        check_concept(lib, concept, &location, &mut report);
    }

    let mut sibling_ids = BTreeSet::new();
    for plan in &lib.plans {
        if !sibling_ids.insert(plan.id.clone()) {
            report.error(format!("plan '{}'", plan.id), "duplicate plan id");
        }
        check_plan(lib, plan, "", &mut report);
    }

    // A leaf path whose merged entry condition is empty can never activate.
    for path in flatten_guideline_paths(lib) {
        if path.entry_expr().is_none() {
            report.warning(
                format!("plan '{}'", path.id),
                "no filter or setup condition anywhere on this path; the plan can never activate",
            );
        }
    }

    report
}

fn check_concept(
    lib: &KnowledgeLibrary,
    concept: &Concept,
    location: &str,
    report: &mut ValidationReport,
) {
    match concept.kind {
        ConceptKind::Abstract => {
            if concept.definition.is_none() {
                report.error(location, "abstract concept is missing its definition");
            }
            if concept.persistence.is_some() {
                report.error(
                    location,
                    "abstract concepts must not declare persistence (it derives from their parameters)",
                );
            }
        }
        ConceptKind::Primitive | ConceptKind::Event => {
            if concept.definition.is_some() {
                report.error(location, "only abstract concepts may carry a definition");
            }
            match concept.persistence {
                None => report.error(location, "primitive/event concept is missing persistence"),
                Some(p) => {
                    if p.good_before_s < 0 || p.good_after_s < 0 {
                        report.error(location, "persistence durations must be non-negative");
                    }
                    if p.good_before_s + p.good_after_s <= 0 {
                        report.error(
                            location,
                            "persistence must extend the value over a non-empty interval",
                        );
                    }
                }
            }
        }
    }
    if let Some(def) = &concept.definition {
        check_expr(lib, def, &format!("{location} definition"), false, report);
    }
}

/// Validate a constraint tree. `under_not` tracks negation scope so equality
/// comparisons inside a `not` can be rejected (no inverse operator exists).
fn check_expr(
    lib: &KnowledgeLibrary,
    node: &ConstraintNode,
    location: &str,
    under_not: bool,
    report: &mut ValidationReport,
) {
    match node {
        ConstraintNode::Cmp(cmp) => check_cmp(lib, cmp, location, under_not, report),
        ConstraintNode::And(children) | ConstraintNode::Or(children) => {
            if children.len() < 2 {
                report.error(
                    location,
                    format!(
                        "logical nodes need at least two operands, found {}",
                        children.len()
                    ),
                );
            }
            for child in children {
                check_expr(lib, child, location, under_not, report);
            }
        }
        ConstraintNode::Not(child) => check_expr(lib, child, location, true, report),
        ConstraintNode::Ref(id) => match lib.concept(id) {
            None => report.error(location, format!("reference to unknown concept '{id}'")),
            Some(target) => {
                if target.kind != ConceptKind::Abstract {
                    report.error(
                        location,
                        format!("reference '{id}' must name an abstract concept"),
                    );
                } else if under_not {
                    if let Some(def) = &target.definition {
                        // The referenced definition is inlined under the
                        // negation, so its leaves must be invertible too.
                        check_expr(lib, def, location, true, report);
                    }
                }
            }
        },
    }
}

fn check_cmp(
    lib: &KnowledgeLibrary,
    cmp: &FuzzyComparison,
    location: &str,
    under_not: bool,
    report: &mut ValidationReport,
) {
    if under_not && cmp.op == CmpOp::Eq {
        report.error(
            location,
            format!(
                "negation over equality on '{}' is not expressible: '=' has no inverse operator",
                cmp.param
            ),
        );
    }
    if !cmp.deviation.is_finite() || cmp.deviation < 0.0 {
        report.error(
            location,
            format!("deviation of comparison on '{}' must be a finite non-negative number", cmp.param),
        );
    }
    let Some(param) = lib.concept(&cmp.param) else {
        report.error(
            location,
            format!("comparison references unknown parameter '{}'", cmp.param),
        );
        return;
    };
    if param.kind == ConceptKind::Abstract {
        report.error(
            location,
            format!(
                "comparison parameter '{}' is abstract; reference it by id instead of comparing it",
                cmp.param
            ),
        );
        return;
    }
    match param.value_domain {
        ValueDomain::Numeric => {
            if !matches!(cmp.threshold, Value::Num(_)) {
                report.error(
                    location,
                    format!("numeric parameter '{}' compared against a categorical threshold", cmp.param),
                );
            }
            if let Some(unit) = &cmp.unit {
                match &param.unit {
                    Some(param_unit) if param_unit == unit => {}
                    Some(param_unit) => report.error(
                        location,
                        format!(
                            "comparison unit '{unit}' does not match unit '{param_unit}' of parameter '{}'",
                            cmp.param
                        ),
                    ),
                    None => report.error(
                        location,
                        format!("comparison declares unit '{unit}' but parameter '{}' has none", cmp.param),
                    ),
                }
            }
        }
        ValueDomain::Categorical => {
            if cmp.op != CmpOp::Eq {
                report.error(
                    location,
                    format!(
                        "categorical parameter '{}' only supports '=' comparisons",
                        cmp.param
                    ),
                );
            }
            if cmp.deviation != 0.0 {
                report.error(
                    location,
                    format!("categorical comparison on '{}' must use deviation 0", cmp.param),
                );
            }
            if !matches!(cmp.threshold, Value::Cat(_)) {
                report.error(
                    location,
                    format!("categorical parameter '{}' compared against a numeric threshold", cmp.param),
                );
            }
        }
    }
}

fn check_plan(
    lib: &KnowledgeLibrary,
    plan: &GuidelinePlan,
    parent: &str,
    report: &mut ValidationReport,
) {
    let path = if parent.is_empty() {
        plan.id.clone()
    } else {
        format!("{parent}/{}", plan.id)
    };
    let location = format!("plan '{path}'");

    if plan.max_start_delay_s <= 0 {
        report.error(&location, "max_start_delay_s must be positive");
    }

    let mut roles_seen = BTreeSet::new();
    for condition in &plan.conditions {
        if !roles_seen.insert(condition.role) {
            report.error(
                &location,
                format!(
                    "more than one '{}' condition at the same plan level",
                    condition.role.as_str()
                ),
            );
        }
        check_expr(
            lib,
            &condition.expr,
            &format!("{location} {} condition", condition.role.as_str()),
            false,
            report,
        );
    }

    for (idx, intention) in plan.intentions.iter().enumerate() {
        let iloc = format!("{location} intention[{idx}]");
        if intention.monitoring_delay_s < 0 {
            report.error(&iloc, "monitoring_delay_s must be non-negative");
        }
        if intention.max_gap_s <= 0 {
            report.error(&iloc, "max_gap_s must be positive");
        }
        check_expr(lib, &intention.target, &iloc, false, report);
    }

    let mut step_ids = BTreeSet::new();
    for step in &plan.body {
        let sloc = format!("{location} step '{}'", step.id);
        if !step_ids.insert(step.id.clone()) {
            report.error(&sloc, "duplicate step id within the plan");
        }
        if step.earliest_offset_s > step.latest_offset_s {
            report.error(&sloc, "earliest_offset_s is after latest_offset_s");
        }
        if step.kind == StepKind::Periodic && step.period_s.is_none() {
            report.error(&sloc, "periodic step is missing period_s");
        }
        if let Some(period) = step.period_s {
            if period <= 0 {
                report.error(&sloc, "period_s must be positive");
            }
        }
        if step.timing_deviation_s < 0 {
            report.error(&sloc, "timing_deviation_s must be non-negative");
        }
        if step.min_repeat_gap_s < 0 {
            report.error(&sloc, "min_repeat_gap_s must be non-negative");
        }
        if let Some(max_dose) = step.max_dose {
            if !(max_dose > 0.0) {
                report.error(&sloc, "max_dose must be positive");
            }
            if !matches!(step.kind, StepKind::DrugAdministration | StepKind::DrugIncrease) {
                report.warning(&sloc, "max_dose is only meaningful for drug steps");
            }
        }
        match lib.concept(&step.action_concept) {
            None => report.error(
                &sloc,
                format!("action concept '{}' is not in the library", step.action_concept),
            ),
            Some(c) if c.kind == ConceptKind::Abstract => report.error(
                &sloc,
                format!(
                    "action concept '{}' must be a primitive or event concept",
                    step.action_concept
                ),
            ),
            Some(_) => {}
        }
    }

    if !plan.sub_plans.is_empty() && !plan.body.is_empty() {
        report.warning(
            &location,
            "non-leaf plan has body steps; only leaf bodies are analyzed",
        );
    }

    let mut sibling_ids = BTreeSet::new();
    for sub in &plan.sub_plans {
        if !sibling_ids.insert(sub.id.clone()) {
            report.error(
                format!("plan '{path}/{}'", sub.id),
                "duplicate plan id among siblings",
            );
        }
        check_plan(lib, sub, &path, report);
    }
}
