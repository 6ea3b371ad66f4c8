//! Output rendering for critique reports and abstraction results.
//!
//! Two report formats share the same document:
//! - JSON: stable pretty-printed serialization of [`CritiqueReport`], ending
//!   in a newline. Field order is fixed by the struct definitions and all
//!   maps are ordered, so equal reports render to equal bytes.
//! - text: a chronological human-readable digest, one line per comment, all
//!   scores printed with three decimals.
//!
//! Abstraction results (scored intervals of an abstract concept) render as
//! CSV with one row per interval.

use std::fmt::Write as _;

use crate::engine::{Comment, CritiqueReport, DebugSection};
use crate::fuzzy::ScoredInterval;
use crate::time::format_timestamp;

/// Pretty JSON for a report, with a trailing newline.
pub fn render_json(report: &CritiqueReport) -> String {
    let mut out = serde_json::to_string_pretty(report)
        .expect("report documents always serialize");
    out.push('\n');
    out
}

/// Plain-text digest: header, chronological comment lines, statistics.
pub fn render_text(report: &CritiqueReport) -> String {
    let mut out = String::new();
    let echo = &report.config_echo;
    let _ = writeln!(out, "== critique: patient {} ==", report.patient_id);
    let _ = writeln!(out, "library hash: {}", echo.library_hash);
    let _ = writeln!(
        out,
        "thresholds: acceptance {:.3}, compliance {:.3}, wrong-path margin {:.3}",
        echo.acceptance_threshold, echo.compliance_threshold, echo.wrong_path_margin
    );
    for (role, threshold) in &echo.role_thresholds {
        let _ = writeln!(out, "  role threshold {role}: {threshold:.3}");
    }
    out.push('\n');

    if report.comments.is_empty() {
        out.push_str("(no comments)\n");
    }
    for comment in &report.comments {
        let _ = writeln!(out, "{}", comment_line(comment));
    }

    let _ = writeln!(
        out,
        "\n{} comments, {} deviations",
        report.comments.len(),
        report.deviation_count()
    );
    if !report.statistics.is_empty() {
        let counts: Vec<String> = report
            .statistics
            .iter()
            .map(|(name, count)| format!("{name} {count}"))
            .collect();
        let _ = writeln!(out, "statistics: {}", counts.join(", "));
    }
    if let Some(debug) = &report.debug {
        render_debug(&mut out, debug);
    }
    out
}

fn comment_line(comment: &Comment) -> String {
    let mut line = format!(
        "{} {:<28}",
        format_timestamp(comment.time),
        comment.comment_type.as_str()
    );
    if let Some(span) = &comment.span {
        let _ = write!(
            line,
            " [{} .. {}]",
            format_timestamp(span.start),
            format_timestamp(span.end)
        );
    }
    let _ = write!(line, " {}", comment.text);

    let mut scores = Vec::new();
    let mut push = |name: &str, value: Option<f64>| {
        if let Some(v) = value {
            scores.push(format!("{name} {v:.3}"));
        }
    };
    push("reasonableness", comment.scores.reasonableness);
    push("applicability", comment.scores.applicability);
    push("specificity", comment.scores.specificity);
    push("timing", comment.scores.timing);
    push("membership", comment.scores.membership);
    if !scores.is_empty() {
        let _ = write!(line, " ({})", scores.join(", "));
    }
    line
}

fn render_debug(out: &mut String, debug: &DebugSection) {
    let _ = writeln!(out, "\n-- debug: lifecycle events --");
    for row in &debug.lifecycle_events {
        let _ = writeln!(
            out,
            "{} {} {} (membership {:.3})",
            format_timestamp(row.time),
            row.plan_id,
            row.kind,
            row.membership
        );
    }
    let _ = writeln!(out, "-- debug: explanations --");
    for row in &debug.explanations {
        let mut line = format!(
            "{} {}",
            format_timestamp(row.time),
            row.explanation_type
        );
        if let Some(c) = &row.concept_id {
            let _ = write!(line, " concept {c}");
        }
        if let Some(p) = &row.plan_id {
            let _ = write!(line, " plan {p}");
        }
        if let Some(s) = &row.step_id {
            let _ = write!(line, " step {s}");
        }
        let _ = write!(
            line,
            " (reasonableness {:.3}, applicability {:.3}, specificity {:.3}",
            row.reasonableness, row.applicability, row.specificity
        );
        if let Some(t) = row.timing {
            let _ = write!(line, ", timing {t:.3}");
        }
        line.push(')');
        let _ = writeln!(out, "{line}");
    }
    let _ = writeln!(out, "-- debug: intention assessments --");
    for row in &debug.intention_assessments {
        let mut line = format!(
            "[{} .. {}] {} intention {} {}",
            format_timestamp(row.span.start),
            format_timestamp(row.span.end),
            row.plan_id,
            row.intention_idx,
            row.status
        );
        if let Some(score) = row.score {
            let _ = write!(line, " (score {score:.3})");
        }
        let _ = writeln!(out, "{line}");
    }
}

/// CSV rows for the abstraction of one concept: header plus one row per
/// scored interval, memberships with full float precision (the values are
/// data, not display).
pub fn render_abstraction_csv(concept_id: &str, intervals: &[ScoredInterval]) -> String {
    let mut out = String::from("concept_id,start,end,membership\n");
    for interval in intervals {
        let _ = writeln!(
            out,
            "{concept_id},{},{},{}",
            format_timestamp(interval.span.start),
            format_timestamp(interval.span.end),
            interval.membership
        );
    }
    out
}
