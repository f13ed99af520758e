//! Metric series across model versions, trend and variance flags, behavioral
//! test verdicts and report documents.

pub mod report;
pub mod series;
pub mod verdict;

pub use report::{render_report, sparkline_svg, EntryDocument, ReportDocument};
pub use series::{fit_series, flag, Fit, Flag, MetricSeries, SeriesPoint, Thresholds};
pub use verdict::{evaluate_test, ModelVerdict, TestResult, Verdict};
