//! Interval construction for one parameter: persistence extrapolation,
//! conflicting-overlap resolution, and same-value merging.
//!
//! Conflicting overlaps (two different values of one parameter covering the
//! same time) are resolved newest-measurement-wins, in two clips applied over
//! the items sorted by `(valid_start, source_row)`:
//!
//! 1. an interval's **end** is cut at the earliest `valid_start` of any later
//!    item with a different value — a newer conflicting measurement ends the
//!    older value's persistence the moment it is taken;
//! 2. an interval's **start** is clipped forward to the end of time already
//!    covered by earlier-sorted intervals — backward extrapolation only fills
//!    unobserved past and never overrides an older measurement's still-valid
//!    persistence.
//!
//! Same-value overlaps are never cut; they are merged afterwards.

use super::ValuedInterval;
use crate::ingest::DataItem;
use crate::knowledge::PersistenceSpec;
use crate::time::{add_secs, Span, Time};
use crate::value::Value;

/// Extrapolate point items over `[t − good_before, t + good_after)`;
/// explicit interval items keep their recorded `[valid_start, valid_stop)`.
/// Zero-length results are dropped.
pub fn extrapolate_intervals(
    items: &[DataItem],
    persistence: PersistenceSpec,
) -> Vec<ValuedInterval> {
    items
        .iter()
        .filter_map(|item| {
            let span = extrapolate_item(item, persistence)?;
            Some(ValuedInterval { span, value: item.value.clone() })
        })
        .collect()
}

fn extrapolate_item(item: &DataItem, persistence: PersistenceSpec) -> Option<Span> {
    match item.valid_stop {
        Some(stop) => Span::new(item.valid_start, stop),
        None => Span::new(
            add_secs(item.valid_start, -persistence.good_before_s),
            add_secs(item.valid_start, persistence.good_after_s),
        ),
    }
}

/// Merge overlapping or abutting intervals with equal values (numeric
/// equality within `1e-9`, exact for categories). Different-valued overlaps
/// pass through unchanged. Output is sorted by start.
pub fn merge_same_value(mut intervals: Vec<ValuedInterval>) -> Vec<ValuedInterval> {
    intervals.sort_by_key(|iv| (iv.span.start, iv.span.end));
    let mut out: Vec<ValuedInterval> = Vec::with_capacity(intervals.len());
    for interval in intervals {
        match out.last_mut() {
            Some(prev)
                if prev.span.end >= interval.span.start
                    && prev.value.approx_eq(&interval.value) =>
            {
                if interval.span.end > prev.span.end {
                    prev.span = Span::new(prev.span.start, interval.span.end)
                        .expect("merged span only grows");
                }
            }
            _ => out.push(interval),
        }
    }
    out
}

/// Full per-parameter coverage: extrapolate every item, resolve conflicting
/// overlaps newest-measurement-wins, merge equal-valued neighbours. The
/// result is disjoint and sorted — ready for partitioning.
pub fn coverage_intervals(items: &[DataItem], persistence: PersistenceSpec) -> Vec<ValuedInterval> {
    let mut sorted: Vec<&DataItem> = items.iter().collect();
    sorted.sort_by_key(|i| (i.valid_start, i.source_row));

    struct Candidate<'a> {
        measured_at: Time,
        /// `None` once a clip empties the interval.
        span: Option<Span>,
        value: &'a Value,
    }
    let mut candidates: Vec<Candidate> = sorted
        .iter()
        .filter_map(|item| {
            let span = extrapolate_item(item, persistence)?;
            Some(Candidate { measured_at: item.valid_start, span: Some(span), value: &item.value })
        })
        .collect();

    // Clip 1: cut each end at the earliest later different-valued
    // measurement. Sorted order means the first conflicting later item has
    // the smallest valid_start, so scanning can stop there.
    for i in 0..candidates.len() {
        let Some(span) = candidates[i].span else { continue };
        for j in (i + 1)..candidates.len() {
            let conflicts = !candidates[i].value.approx_eq(candidates[j].value);
            if conflicts {
                let conflict_at = candidates[j].measured_at;
                if conflict_at < span.end {
                    candidates[i].span = Span::new(span.start, conflict_at);
                }
                break;
            }
        }
    }

    // Clip 2: frontier sweep — starts never reach into already-covered time.
    let mut resolved = Vec::with_capacity(candidates.len());
    let mut covered_until: Option<Time> = None;
    for candidate in &candidates {
        let Some(span) = candidate.span else { continue };
        let start = covered_until.map_or(span.start, |frontier| span.start.max(frontier));
        if let Some(clipped) = Span::new(start, span.end) {
            resolved.push(ValuedInterval { span: clipped, value: candidate.value.clone() });
            covered_until =
                Some(covered_until.map_or(clipped.end, |frontier| frontier.max(clipped.end)));
        }
    }

    merge_same_value(resolved)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::knowledge::ConceptKind;
    use crate::time::{parse_timestamp, SECS_PER_HOUR, SECS_PER_MINUTE};

    fn t(s: &str) -> Time {
        parse_timestamp(s).unwrap()
    }

    fn span(a: &str, b: &str) -> Span {
        Span::new(t(a), t(b)).unwrap()
    }

    fn point(value: f64, start: &str, row: usize) -> DataItem {
        DataItem {
            patient_id: "p".into(),
            concept_id: "x".into(),
            kind: ConceptKind::Primitive,
            value: Value::Num(value),
            unit: None,
            dose: None,
            valid_start: t(start),
            valid_stop: None,
            source_row: row,
        }
    }

    fn interval_item(value: f64, start: &str, stop: &str, row: usize) -> DataItem {
        DataItem { valid_stop: Some(t(stop)), ..point(value, start, row) }
    }

    fn persistence(before_s: i64, after_s: i64) -> PersistenceSpec {
        PersistenceSpec { good_before_s: before_s, good_after_s: after_s }
    }

    fn iv(value: f64, start: &str, end: &str) -> ValuedInterval {
        ValuedInterval { span: span(start, end), value: Value::Num(value) }
    }

    #[test]
    fn extrapolation_pads_points_and_keeps_explicit_intervals() {
        let one_hour = persistence(0, SECS_PER_HOUR);
        let out = extrapolate_intervals(&[point(120.0, "2024-03-01T10:00:00Z", 1)], one_hour);
        assert_eq!(out, vec![iv(120.0, "2024-03-01T10:00:00Z", "2024-03-01T11:00:00Z")]);

        let symmetric = persistence(30 * SECS_PER_MINUTE, 30 * SECS_PER_MINUTE);
        let out = extrapolate_intervals(&[point(5.0, "2024-03-01T12:00:00Z", 1)], symmetric);
        assert_eq!(out, vec![iv(5.0, "2024-03-01T11:30:00Z", "2024-03-01T12:30:00Z")]);

        let explicit = interval_item(7.0, "2024-03-01T10:00:00Z", "2024-03-01T18:00:00Z", 1);
        let out = extrapolate_intervals(&[explicit], symmetric);
        assert_eq!(out, vec![iv(7.0, "2024-03-01T10:00:00Z", "2024-03-01T18:00:00Z")]);

        assert!(extrapolate_intervals(&[], one_hour).is_empty());
        // Zero-length explicit interval disappears.
        let empty = interval_item(7.0, "2024-03-01T10:00:00Z", "2024-03-01T10:00:00Z", 1);
        assert!(extrapolate_intervals(&[empty], symmetric).is_empty());
    }

    /// Three equal measurements half an hour apart, each persisting one
    /// hour, merge into a single two-hour interval.
    #[test]
    fn equal_values_merge_into_one_interval() {
        let items = vec![
            point(86.0, "2024-03-01T10:00:00Z", 1),
            point(86.0, "2024-03-01T10:30:00Z", 2),
            point(86.0, "2024-03-01T11:00:00Z", 3),
        ];
        let merged = merge_same_value(extrapolate_intervals(&items, persistence(0, SECS_PER_HOUR)));
        assert_eq!(merged, vec![iv(86.0, "2024-03-01T10:00:00Z", "2024-03-01T12:00:00Z")]);
    }

    #[test]
    fn merge_leaves_gaps_and_conflicts_alone() {
        let disjoint = vec![
            iv(5.0, "2024-03-01T10:00:00Z", "2024-03-01T11:00:00Z"),
            iv(5.0, "2024-03-01T12:00:00Z", "2024-03-01T13:00:00Z"),
        ];
        assert_eq!(merge_same_value(disjoint.clone()), disjoint);

        let conflicting = vec![
            iv(5.0, "2024-03-01T10:00:00Z", "2024-03-01T11:00:00Z"),
            iv(7.0, "2024-03-01T10:30:00Z", "2024-03-01T11:30:00Z"),
        ];
        assert_eq!(merge_same_value(conflicting.clone()), conflicting);
    }

    /// A newer different value cuts the older interval exactly at the newer
    /// measurement's time.
    #[test]
    fn newer_conflicting_measurement_truncates_older_persistence() {
        let items = vec![
            point(125.0, "2024-03-01T10:00:00Z", 1),
            point(139.0, "2024-03-01T10:45:00Z", 2),
        ];
        let out = coverage_intervals(&items, persistence(0, SECS_PER_HOUR));
        assert_eq!(
            out,
            vec![
                iv(125.0, "2024-03-01T10:00:00Z", "2024-03-01T10:45:00Z"),
                iv(139.0, "2024-03-01T10:45:00Z", "2024-03-01T11:45:00Z"),
            ]
        );
    }

    /// Backward extrapolation of the newer point never reaches into time the
    /// older measurement still covers.
    #[test]
    fn backward_extrapolation_fills_only_unobserved_past() {
        let two_hours = persistence(2 * SECS_PER_HOUR, 2 * SECS_PER_HOUR);
        let items = vec![
            point(5.0, "2024-03-01T10:00:00Z", 1),
            point(7.0, "2024-03-01T11:00:00Z", 2),
        ];
        let out = coverage_intervals(&items, two_hours);
        assert_eq!(
            out,
            vec![
                // Cut at the newer measurement (11:00), not at its
                // extrapolated reach (09:00).
                iv(5.0, "2024-03-01T08:00:00Z", "2024-03-01T11:00:00Z"),
                iv(7.0, "2024-03-01T11:00:00Z", "2024-03-01T13:00:00Z"),
            ]
        );
    }

    #[test]
    fn explicit_interval_is_cut_by_later_conflicting_point() {
        let items = vec![
            interval_item(5.0, "2024-03-01T10:00:00Z", "2024-03-01T18:00:00Z", 1),
            point(7.0, "2024-03-01T12:00:00Z", 2),
        ];
        let out = coverage_intervals(&items, persistence(SECS_PER_HOUR, SECS_PER_HOUR));
        assert_eq!(
            out,
            vec![
                iv(5.0, "2024-03-01T10:00:00Z", "2024-03-01T12:00:00Z"),
                iv(7.0, "2024-03-01T12:00:00Z", "2024-03-01T13:00:00Z"),
            ]
        );
    }

    /// A same-value re-measurement inside a long explicit interval must not
    /// shrink coverage: equal values are merged, never cut.
    #[test]
    fn same_value_remeasurement_never_shrinks_coverage() {
        let items = vec![
            interval_item(5.0, "2024-03-01T10:00:00Z", "2024-03-01T18:00:00Z", 1),
            point(5.0, "2024-03-01T12:00:00Z", 2),
        ];
        let out = coverage_intervals(&items, persistence(0, 30 * SECS_PER_MINUTE));
        assert_eq!(out, vec![iv(5.0, "2024-03-01T10:00:00Z", "2024-03-01T18:00:00Z")]);
    }

    /// A value sandwiched between two different measurements survives as its
    /// own interval between them.
    #[test]
    fn alternating_values_produce_alternating_coverage() {
        let items = vec![
            point(1.0, "2024-03-01T10:00:00Z", 1),
            point(2.0, "2024-03-01T10:20:00Z", 2),
            point(1.0, "2024-03-01T10:40:00Z", 3),
        ];
        let out = coverage_intervals(&items, persistence(0, SECS_PER_HOUR));
        assert_eq!(
            out,
            vec![
                iv(1.0, "2024-03-01T10:00:00Z", "2024-03-01T10:20:00Z"),
                iv(2.0, "2024-03-01T10:20:00Z", "2024-03-01T10:40:00Z"),
                iv(1.0, "2024-03-01T10:40:00Z", "2024-03-01T11:40:00Z"),
            ]
        );
    }
}
