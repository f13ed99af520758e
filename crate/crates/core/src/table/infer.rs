//! Metadata dtype inference.
//!
//! Rules, applied to the non-missing values in order:
//! 1. every value is a boolean token (`true`/`false`, or `0`/`1`, not mixed) → boolean
//! 2. every value is numeric → continuous
//! 3. every value parses as an ISO-8601 date/datetime → datetime
//! 4. at most [`NOMINAL_MAX_DISTINCT`] distinct values → nominal, otherwise string
//!
//! A column with no values at all is typed string.

use std::collections::HashSet;

use crate::model::column::DType;
use crate::model::datetime::parse_datetime;

use super::value::Value;

pub const NOMINAL_MAX_DISTINCT: usize = 32;

#[derive(Debug, PartialEq)]
pub enum BoolStyle {
    Words,
    Digits,
}

/// A cell as seen by inference: typed values from JSON-lines or raw CSV text.
pub trait InferCell {
    fn is_missing(&self) -> bool;
    fn bool_style(&self) -> Option<BoolStyle>;
    fn is_numeric(&self) -> bool;
    fn is_datetime(&self) -> bool;
    fn text(&self) -> String;
}

fn text_bool_style(s: &str) -> Option<BoolStyle> {
    match s.trim().to_ascii_lowercase().as_str() {
        "true" | "false" => Some(BoolStyle::Words),
        "0" | "1" => Some(BoolStyle::Digits),
        _ => None,
    }
}

fn text_is_numeric(s: &str) -> bool {
    s.trim().parse::<f64>().is_ok_and(f64::is_finite)
}

impl InferCell for Value {
    fn is_missing(&self) -> bool {
        Value::is_missing(self)
    }

    fn bool_style(&self) -> Option<BoolStyle> {
        match self {
            Value::Bool(_) => Some(BoolStyle::Words),
            Value::Number(x) if *x == 0.0 || *x == 1.0 => Some(BoolStyle::Digits),
            Value::Text(s) => text_bool_style(s),
            _ => None,
        }
    }

    fn is_numeric(&self) -> bool {
        match self {
            Value::Number(x) => x.is_finite(),
            Value::Text(s) => text_is_numeric(s),
            _ => false,
        }
    }

    fn is_datetime(&self) -> bool {
        match self {
            Value::Datetime(_) => true,
            Value::Text(s) => parse_datetime(s).is_some(),
            _ => false,
        }
    }

    fn text(&self) -> String {
        self.to_string()
    }
}

/// Raw delimited-text cells; the empty string is missing.
impl InferCell for &str {
    fn is_missing(&self) -> bool {
        self.is_empty()
    }

    fn bool_style(&self) -> Option<BoolStyle> {
        text_bool_style(self)
    }

    fn is_numeric(&self) -> bool {
        text_is_numeric(self)
    }

    fn is_datetime(&self) -> bool {
        parse_datetime(self).is_some()
    }

    fn text(&self) -> String {
        self.to_string()
    }
}

pub fn infer_dtype<C: InferCell>(values: &[C]) -> DType {
    let mut present = values.iter().filter(|v| !v.is_missing()).peekable();
    let Some(first) = present.peek().copied() else {
        tracing::warn!("column has no non-missing values; typing it as string");
        return DType::String;
    };
    if let Some(style) = first.bool_style() {
        if present.clone().all(|v| v.bool_style().as_ref() == Some(&style)) {
            return DType::Boolean;
        }
    }
    if present.clone().all(|v| v.is_numeric()) {
        return DType::Continuous;
    }
    if present.clone().all(|v| v.is_datetime()) {
        return DType::Datetime;
    }
    let mut distinct = HashSet::new();
    for v in present {
        distinct.insert(v.text());
        if distinct.len() > NOMINAL_MAX_DISTINCT {
            return DType::String;
        }
    }
    DType::Nominal
}

#[cfg(test)]
mod tests {
    use super::*;

    fn texts(items: &[&str]) -> Vec<Value> {
        items
            .iter()
            .map(|s| if s.is_empty() { Value::Missing } else { Value::Text(s.to_string()) })
            .collect()
    }

    #[test]
    fn numeric_is_continuous() {
        assert_eq!(infer_dtype(&texts(&["0.3", "1.5", "2"])), DType::Continuous);
    }

    #[test]
    fn iso_dates_are_datetime() {
        assert_eq!(
            infer_dtype(&texts(&["2023-01-01T00:00:00Z", "2023-02-11T10:00:00Z", "", "2024-01-01"])),
            DType::Datetime
        );
    }

    #[test]
    fn booleans() {
        assert_eq!(infer_dtype(&texts(&["true", "False", "TRUE"])), DType::Boolean);
        assert_eq!(infer_dtype(&texts(&["0", "1", "1"])), DType::Boolean);
        // Mixed styles are not boolean; they are all numeric either.
        assert_eq!(infer_dtype(&texts(&["true", "1"])), DType::Nominal);
        assert_eq!(infer_dtype(&[Value::Bool(true), Value::Bool(false)]), DType::Boolean);
    }

    #[test]
    fn many_distinct_strings() {
        let prompts: Vec<Value> = (0..1000).map(|i| Value::Text(format!("a photo of thing {i}"))).collect();
        assert_eq!(infer_dtype(&prompts), DType::String);
        let few: Vec<Value> = (0..1000).map(|i| Value::Text(format!("class {}", i % 32))).collect();
        assert_eq!(infer_dtype(&few), DType::Nominal);
        let just_over: Vec<Value> = (0..33).map(|i| Value::Text(format!("c{i}"))).collect();
        assert_eq!(infer_dtype(&just_over), DType::String);
    }

    #[test]
    fn all_missing_is_string() {
        assert_eq!(infer_dtype(&texts(&["", ""])), DType::String);
        assert_eq!(infer_dtype::<Value>(&[]), DType::String);
        assert_eq!(infer_dtype(&["1.5", "", "2"]), DType::Continuous);
    }
}
