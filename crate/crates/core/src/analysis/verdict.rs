//! Behavioral test evaluation against per-model metric records.

use serde::{Deserialize, Serialize};

use crate::model::column::BASE_TRANSFORM;
use crate::model::objects::{BehavioralTest, MetricRecord};

use super::series::find_record;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    /// The slice was empty (or the metric had nothing to score).
    IndeterminateFail,
    /// The model has no outputs for the tested transform.
    NotEvaluated,
}

impl Verdict {
    pub fn passed(self) -> bool {
        self == Verdict::Pass
    }

    pub fn label(self) -> &'static str {
        match self {
            Verdict::Pass => "pass",
            Verdict::Fail => "FAIL",
            Verdict::IndeterminateFail => "FAIL (empty)",
            Verdict::NotEvaluated => "not evaluated",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelVerdict {
    pub model_id: String,
    pub value: Option<f64>,
    pub n: u64,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub test_id: String,
    pub slice_id: String,
    pub metric_id: String,
    pub transform_id: String,
    /// e.g. `accuracy > 0.7`
    pub description: String,
    pub verdicts: Vec<ModelVerdict>,
    /// The last model in the configured order did not pass.
    pub latest_model_failed: bool,
}

/// Applies `test` to each model in order. A model without a record for the
/// test's (slice, metric, transform) has no outputs there and is not evaluated.
pub fn evaluate_test(test: &BehavioralTest, models: &[String], records: &[MetricRecord]) -> TestResult {
    let transform = test.transform_id.as_deref().unwrap_or(BASE_TRANSFORM);
    let verdicts: Vec<ModelVerdict> = models
        .iter()
        .map(|model| match find_record(records, &test.slice_id, model, transform, &test.metric_id) {
            None => ModelVerdict { model_id: model.clone(), value: None, n: 0, verdict: Verdict::NotEvaluated },
            Some(r) => {
                let verdict = match r.value {
                    Some(v) if r.n > 0 => {
                        if test.comparator.holds(v, test.threshold) {
                            Verdict::Pass
                        } else {
                            Verdict::Fail
                        }
                    }
                    _ => Verdict::IndeterminateFail,
                };
                ModelVerdict { model_id: model.clone(), value: r.value, n: r.n, verdict }
            }
        })
        .collect();
    TestResult {
        test_id: test.test_id.clone(),
        slice_id: test.slice_id.clone(),
        metric_id: test.metric_id.clone(),
        transform_id: transform.to_string(),
        description: test.describe(),
        latest_model_failed: verdicts.last().is_some_and(|v| !v.verdict.passed()),
        verdicts,
    }
}
