//! Metric series across ordered models, least-squares trend and flags.

use serde::{Deserialize, Serialize};

use crate::model::objects::MetricRecord;

/// Flag thresholds, both in metric units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    /// Smallest fitted drop across the series that counts as a decline.
    pub decline: f64,
    /// Smallest residual standard deviation that counts as high variance.
    pub variance: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds { decline: 0.05, variance: 0.05 }
    }
}

/// Ordinary least squares line through `(x, y)` points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fit {
    pub slope: f64,
    pub intercept: f64,
    /// `sqrt(SSE / (k - 2))` for k >= 3 points, else 0.
    pub residual_sd: f64,
}

/// Closed-form OLS. `None` with fewer than two points or no spread in x.
pub fn fit_series(points: &[(f64, f64)]) -> Option<Fit> {
    let k = points.len();
    if k < 2 {
        return None;
    }
    let kf = k as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / kf;
    let my = points.iter().map(|p| p.1).sum::<f64>() / kf;
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for &(x, y) in points {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residual_sd = if k >= 3 {
        let sse: f64 = points.iter().map(|&(x, y)| (y - intercept - slope * x).powi(2)).sum();
        (sse / (kf - 2.0)).sqrt()
    } else {
        0.0
    };
    Some(Fit { slope, intercept, residual_sd })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Flag {
    None,
    Downward,
    HighVariance,
}

/// Downward wins over high variance. `span` is the x distance between the
/// first and last fitted points.
pub fn flag(fit: Option<&Fit>, span: f64, thresholds: &Thresholds) -> Flag {
    let Some(fit) = fit else { return Flag::None };
    if fit.slope < 0.0 && fit.slope.abs() * span >= thresholds.decline {
        Flag::Downward
    } else if fit.residual_sd >= thresholds.variance {
        Flag::HighVariance
    } else {
        Flag::None
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    /// Position of the model in the configured order.
    pub x: usize,
    pub model_id: String,
    /// Missing when the model has no record or the slice was empty.
    pub value: Option<f64>,
    pub n: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSeries {
    pub slice_id: String,
    pub metric_id: String,
    pub transform_id: String,
    pub points: Vec<SeriesPoint>,
    pub fit: Option<Fit>,
    pub flag: Flag,
}

impl MetricSeries {
    /// One point per model in `models` order, looked up in `records`.
    pub fn build(
        slice_id: &str,
        metric_id: &str,
        transform_id: &str,
        models: &[String],
        records: &[MetricRecord],
        thresholds: &Thresholds,
    ) -> Self {
        let points: Vec<SeriesPoint> = models
            .iter()
            .enumerate()
            .map(|(x, model)| {
                let record = find_record(records, slice_id, model, transform_id, metric_id);
                SeriesPoint {
                    x,
                    model_id: model.clone(),
                    value: record.and_then(|r| r.value),
                    n: record.map_or(0, |r| r.n),
                }
            })
            .collect();
        Self::from_points(slice_id, metric_id, transform_id, points, thresholds)
    }

    pub fn from_points(
        slice_id: &str,
        metric_id: &str,
        transform_id: &str,
        points: Vec<SeriesPoint>,
        thresholds: &Thresholds,
    ) -> Self {
        let xy: Vec<(f64, f64)> = points.iter().filter_map(|p| p.value.map(|v| (p.x as f64, v))).collect();
        let fit = fit_series(&xy);
        let span = match (xy.first(), xy.last()) {
            (Some(a), Some(b)) => b.0 - a.0,
            _ => 0.0,
        };
        MetricSeries {
            slice_id: slice_id.to_string(),
            metric_id: metric_id.to_string(),
            transform_id: transform_id.to_string(),
            flag: flag(fit.as_ref(), span, thresholds),
            points,
            fit,
        }
    }

    pub fn values(&self) -> Vec<Option<f64>> {
        self.points.iter().map(|p| p.value).collect()
    }
}

pub(crate) fn find_record<'a>(
    records: &'a [MetricRecord],
    slice: &str,
    model: &str,
    transform: &str,
    metric: &str,
) -> Option<&'a MetricRecord> {
    records
        .iter()
        .find(|r| r.slice_id == slice && r.model_id == model && r.transform_id == transform && r.metric_id == metric)
}
