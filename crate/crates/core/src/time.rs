//! Time primitives shared across the engine: UTC timestamps with second
//! precision, integer-second durations, and half-open intervals.
//!
//! All timestamps are stored in UTC. Input strings are parsed as ISO-8601 /
//! RFC 3339 and normalized; output always uses the `Z` suffix so that
//! serialized artifacts are byte-stable.

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

/// A point in time, UTC, second precision by convention.
pub type Time = DateTime<Utc>;

pub const SECS_PER_MINUTE: i64 = 60;
pub const SECS_PER_HOUR: i64 = 3_600;
pub const SECS_PER_DAY: i64 = 86_400;

/// Shift a timestamp by a signed number of seconds.
pub fn add_secs(t: Time, secs: i64) -> Time {
    t + chrono::Duration::seconds(secs)
}

/// Parse an ISO-8601 timestamp (e.g. `2024-01-15T10:00:00Z`) into UTC.
pub fn parse_timestamp(s: &str) -> Result<Time, chrono::ParseError> {
    DateTime::parse_from_rfc3339(s).map(|t| t.with_timezone(&Utc))
}

/// Format a timestamp as ISO-8601 with seconds and a `Z` suffix.
pub fn format_timestamp(t: Time) -> String {
    t.to_rfc3339_opts(SecondsFormat::Secs, true)
}

/// A half-open time interval `[start, end)`; `end` is strictly after `start`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Span {
    pub start: Time,
    pub end: Time,
}

impl Span {
    /// Build a span, rejecting empty or inverted bounds.
    pub fn new(start: Time, end: Time) -> Option<Span> {
        if end > start {
            Some(Span { start, end })
        } else {
            None
        }
    }

    /// Whether `t` falls inside `[start, end)`.
    pub fn contains(&self, t: Time) -> bool {
        self.start <= t && t < self.end
    }

    /// Intersection with another span, `None` when they do not overlap.
    pub fn intersect(&self, other: &Span) -> Option<Span> {
        Span::new(self.start.max(other.start), self.end.min(other.end))
    }

    /// Whether `other` lies entirely inside this span.
    pub fn covers(&self, other: &Span) -> bool {
        self.start <= other.start && other.end <= self.end
    }

    /// Whether the two spans share any instant.
    pub fn overlaps(&self, other: &Span) -> bool {
        self.start < other.end && other.start < self.end
    }

    /// Length in whole seconds.
    pub fn duration_secs(&self) -> i64 {
        (self.end - self.start).num_seconds()
    }

    /// Midpoint of the span (second resolution).
    pub fn midpoint(&self) -> Time {
        add_secs(self.start, self.duration_secs() / 2)
    }
}
