//! Timeline partitioning: slicing the analysis window at every interval
//! endpoint so each slice has at most one value per parameter.

use std::collections::{BTreeMap, BTreeSet};

use super::{Partition, ValuedInterval};
use crate::knowledge::ConceptId;
use crate::time::{Span, Time};

/// Slice `window` into the minimal partition set whose boundaries are the
/// window bounds plus every in-window interval endpoint. Expects each
/// parameter's intervals disjoint and sorted (the output of
/// [`super::coverage_intervals`]); partitions where no parameter holds a
/// value are still emitted, with an empty value map.
pub fn partition_timeline(
    by_param: &BTreeMap<ConceptId, Vec<ValuedInterval>>,
    window: Span,
) -> Vec<Partition> {
    let mut boundaries = BTreeSet::new();
    boundaries.insert(window.start);
    boundaries.insert(window.end);
    for intervals in by_param.values() {
        for interval in intervals {
            for t in [interval.span.start, interval.span.end] {
                if t > window.start && t < window.end {
                    boundaries.insert(t);
                }
            }
        }
    }
    let bounds: Vec<Time> = boundaries.into_iter().collect();

    let params: Vec<(&ConceptId, &[ValuedInterval])> =
        by_param.iter().map(|(k, v)| (k, v.as_slice())).collect();
    let mut cursors = vec![0usize; params.len()];

    let mut partitions = Vec::with_capacity(bounds.len().saturating_sub(1));
    for pair in bounds.windows(2) {
        let span = Span::new(pair[0], pair[1]).expect("boundaries strictly increase");
        let mut values = BTreeMap::new();
        for (idx, (param, intervals)) in params.iter().enumerate() {
            let cursor = &mut cursors[idx];
            while *cursor < intervals.len() && intervals[*cursor].span.end <= span.start {
                *cursor += 1;
            }
            if let Some(interval) = intervals.get(*cursor) {
                // Boundaries include every in-window endpoint, so an interval
                // covering the slice start covers the whole slice.
                if interval.span.start <= span.start {
                    values.insert((*param).clone(), interval.value.clone());
                }
            }
        }
        partitions.push(Partition { span, values });
    }
    partitions
}
