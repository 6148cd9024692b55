use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::ir::CmpOp;

/// A cell in a table row or a field in a stream event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Null,
    Int(i64),
    Float(f64),
    Text(String),
    /// Minutes since the Unix epoch.
    Timestamp(i64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnType {
    Int,
    Float,
    Text,
    Timestamp,
}

impl Value {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Int(i) | Value::Timestamp(i) => Some(*i as f64),
            Value::Float(f) => Some(*f),
            _ => None,
        }
    }

    pub fn as_text(&self) -> Option<&str> {
        match self {
            Value::Text(s) => Some(s),
            _ => None,
        }
    }

    /// Rendering used for group keys and summaries.
    pub fn render(&self) -> String {
        match self {
            Value::Null => String::new(),
            Value::Int(i) | Value::Timestamp(i) => i.to_string(),
            Value::Float(f) => f.to_string(),
            Value::Text(s) => s.clone(),
        }
    }

    /// Literal form as written in a predicate.
    pub fn literal(&self) -> String {
        match self {
            Value::Text(s) => format!("'{s}'"),
            other => other.render(),
        }
    }

    pub fn compare(&self, op: CmpOp, other: &Value) -> bool {
        let ord = match (self, other) {
            (Value::Text(a), Value::Text(b)) => Some(a.cmp(b)),
            _ => match (self.as_f64(), other.as_f64()) {
                (Some(a), Some(b)) => a.partial_cmp(&b),
                _ => None,
            },
        };
        match (op, ord) {
            (CmpOp::Eq, Some(o)) => o == Ordering::Equal,
            (CmpOp::Ne, Some(o)) => o != Ordering::Equal,
            (CmpOp::Ne, None) => true,
            (CmpOp::Lt, Some(o)) => o == Ordering::Less,
            (CmpOp::Le, Some(o)) => o != Ordering::Greater,
            (CmpOp::Gt, Some(o)) => o == Ordering::Greater,
            (CmpOp::Ge, Some(o)) => o != Ordering::Less,
            _ => false,
        }
    }

    /// Total order used for record ids: numbers before text, nulls first.
    pub fn id_order(&self, other: &Value) -> Ordering {
        fn rank(v: &Value) -> u8 {
            match v {
                Value::Null => 0,
                Value::Int(_) | Value::Float(_) | Value::Timestamp(_) => 1,
                Value::Text(_) => 2,
            }
        }
        match (self, other) {
            (Value::Text(a), Value::Text(b)) => a.cmp(b),
            _ => match (self.as_f64(), other.as_f64()) {
                (Some(a), Some(b)) => a.total_cmp(&b),
                _ => rank(self).cmp(&rank(other)),
            },
        }
    }
}

impl From<&str> for Value {
    fn from(s: &str) -> Self {
        Value::Text(s.to_string())
    }
}

impl From<String> for Value {
    fn from(s: String) -> Self {
        Value::Text(s)
    }
}

impl From<f64> for Value {
    fn from(f: f64) -> Self {
        Value::Float(f)
    }
}

impl From<i64> for Value {
    fn from(i: i64) -> Self {
        Value::Int(i)
    }
}

const TIMESTAMP_FORMATS: [&str; 4] = ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M:%S", "%Y-%m-%d %H:%M"];

/// Minutes since the epoch for the supported ISO-like formats.
pub fn parse_timestamp(s: &str) -> Option<i64> {
    TIMESTAMP_FORMATS.iter().find_map(|fmt| {
        chrono::NaiveDateTime::parse_from_str(s.trim(), fmt)
            .ok()
            .map(|dt| dt.and_utc().timestamp().div_euclid(60))
    })
}

/// Infers the narrowest column type that fits every non-empty cell.
pub fn infer_column_type<'a>(cells: impl Iterator<Item = &'a str> + Clone) -> ColumnType {
    let non_empty = || cells.clone().map(str::trim).filter(|c| !c.is_empty());
    if non_empty().clone().next().is_none() {
        return ColumnType::Text;
    }
    if non_empty().all(|c| c.parse::<i64>().is_ok()) {
        ColumnType::Int
    } else if non_empty().all(|c| c.parse::<f64>().is_ok()) {
        ColumnType::Float
    } else if non_empty().all(|c| parse_timestamp(c).is_some()) {
        ColumnType::Timestamp
    } else {
        ColumnType::Text
    }
}

pub fn parse_cell(cell: &str, ty: ColumnType) -> Value {
    let c = cell.trim();
    if c.is_empty() {
        return Value::Null;
    }
    match ty {
        ColumnType::Int => c.parse().map(Value::Int).unwrap_or(Value::Null),
        ColumnType::Float => c.parse().map(Value::Float).unwrap_or(Value::Null),
        ColumnType::Timestamp => parse_timestamp(c).map(Value::Timestamp).unwrap_or(Value::Null),
        ColumnType::Text => Value::Text(c.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn timestamps_parse_to_minutes() {
        let a = parse_timestamp("2025-03-01T10:00").unwrap();
        let b = parse_timestamp("2025-03-01 10:45").unwrap();
        assert_eq!(b - a, 45);
        assert!(parse_timestamp("soon").is_none());
    }

    #[test]
    fn column_types_are_inferred() {
        assert_eq!(infer_column_type(["1", "2", ""].into_iter()), ColumnType::Int);
        assert_eq!(infer_column_type(["1", "2.5"].into_iter()), ColumnType::Float);
        assert_eq!(infer_column_type(["2025-03-01T10:00"].into_iter()), ColumnType::Timestamp);
        assert_eq!(infer_column_type(["SEA", "EU"].into_iter()), ColumnType::Text);
    }

    #[test]
    fn comparisons() {
        assert!(Value::Int(3).compare(CmpOp::Lt, &Value::Float(3.5)));
        assert!(Value::from("a").compare(CmpOp::Eq, &Value::from("a")));
        assert!(!Value::from("a").compare(CmpOp::Eq, &Value::Int(1)));
        assert!(Value::from("a").compare(CmpOp::Ne, &Value::Int(1)));
    }
}
