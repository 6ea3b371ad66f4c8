//! Recorded and threshold values: numeric measurements (with an implicit
//! unit carried elsewhere) or categorical labels compared by exact string
//! equality.

use serde::{Deserialize, Serialize};

/// Absolute tolerance used for "same value" decisions on numeric data
/// (interval merging, score coalescing).
pub const VALUE_EPS: f64 = 1e-9;

/// A clinical value: a number or a categorical label.
///
/// Serialized untagged, so JSON numbers become [`Value::Num`] and JSON
/// strings become [`Value::Cat`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Num(f64),
    Cat(String),
}

impl Value {
    pub fn as_num(&self) -> Option<f64> {
        match self {
            Value::Num(n) => Some(*n),
            Value::Cat(_) => None,
        }
    }

    /// Equality with [`VALUE_EPS`] tolerance on numbers and exact match on
    /// categorical labels. Values of different domains never compare equal.
    pub fn approx_eq(&self, other: &Value) -> bool {
        match (self, other) {
            (Value::Num(a), Value::Num(b)) => (a - b).abs() <= VALUE_EPS,
            (Value::Cat(a), Value::Cat(b)) => a == b,
            _ => false,
        }
    }
}

impl std::fmt::Display for Value {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Value::Num(n) => write!(f, "{n}"),
            Value::Cat(c) => write!(f, "{c}"),
        }
    }
}
