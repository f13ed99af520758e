//! Slices, reports, behavioral tests and metric records.

use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::predicate::FilterPredicate;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Slice {
    pub slice_id: String,
    pub name: String,
    pub predicate: FilterPredicate,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub folder: Option<String>,
    pub created_at: DateTime<Utc>,
}

impl Slice {
    pub fn new(name: impl Into<String>, predicate: FilterPredicate, folder: Option<String>) -> Self {
        Slice {
            slice_id: new_id("slice"),
            name: name.into(),
            predicate,
            folder,
            created_at: now(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Comparator {
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "<=")]
    Le,
}

impl Comparator {
    pub fn holds(self, value: f64, threshold: f64) -> bool {
        match self {
            Comparator::Gt => value > threshold,
            Comparator::Ge => value >= threshold,
            Comparator::Lt => value < threshold,
            Comparator::Le => value <= threshold,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Comparator::Gt => ">",
            Comparator::Ge => ">=",
            Comparator::Lt => "<",
            Comparator::Le => "<=",
        }
    }
}

impl fmt::Display for Comparator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

/// An expected range for a metric on a slice, e.g. `accuracy > 0.70`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BehavioralTest {
    pub test_id: String,
    pub slice_id: String,
    pub metric_id: String,
    /// Absent means the untransformed data.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transform_id: Option<String>,
    pub comparator: Comparator,
    pub threshold: f64,
}

impl BehavioralTest {
    pub fn new(
        slice_id: impl Into<String>,
        metric_id: impl Into<String>,
        transform_id: Option<String>,
        comparator: Comparator,
        threshold: f64,
    ) -> Self {
        BehavioralTest {
            test_id: new_id("test"),
            slice_id: slice_id.into(),
            metric_id: metric_id.into(),
            transform_id,
            comparator,
            threshold,
        }
    }

    pub fn describe(&self) -> String {
        format!("{} {} {}", self.metric_id, self.comparator, self.threshold)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportEntry {
    pub slice_id: String,
    pub metric_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transform_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test: Option<BehavioralTest>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub report_id: String,
    pub name: String,
    #[serde(default)]
    pub entries: Vec<ReportEntry>,
}

impl Report {
    pub fn new(name: impl Into<String>) -> Self {
        Report { report_id: new_id("report"), name: name.into(), entries: Vec::new() }
    }

    pub fn tests(&self) -> impl Iterator<Item = &BehavioralTest> {
        self.entries.iter().filter_map(|e| e.test.as_ref())
    }
}

/// A metric value for one (slice, model, transform, metric). `value` is `None`
/// when the evaluated subset is empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub slice_id: String,
    pub model_id: String,
    pub transform_id: String,
    pub metric_id: String,
    pub value: Option<f64>,
    pub n: u64,
    pub computed_at: DateTime<Utc>,
}

pub(crate) fn new_id(prefix: &str) -> String {
    let uuid = uuid::Uuid::new_v4().simple().to_string();
    format!("{prefix}-{}", &uuid[..12])
}

/// Current time truncated to whole milliseconds so it survives JSON round-trips.
pub fn now() -> DateTime<Utc> {
    let now = Utc::now();
    DateTime::from_timestamp_millis(now.timestamp_millis()).unwrap_or(now)
}
