//! Report documents and their HTML / Markdown exports.

use std::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::model::column::BASE_TRANSFORM;
use crate::model::objects::{MetricRecord, Report, Slice};

use super::series::{Flag, MetricSeries, Thresholds};
use super::verdict::{evaluate_test, TestResult, Verdict};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDocument {
    pub report_id: String,
    pub name: String,
    /// Model order of every series in the document.
    pub models: Vec<String>,
    pub entries: Vec<EntryDocument>,
    /// Tests whose most recent model did not pass.
    pub failures_latest: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntryDocument {
    pub slice_id: String,
    /// Absent when the slice no longer exists.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slice_name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicate: Option<String>,
    pub metric_id: String,
    pub transform_id: String,
    /// One point per model; missing records are gaps.
    pub series: MetricSeries,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test: Option<TestResult>,
}

/// Builds the document for `report`. Records that are absent show up as gaps.
pub fn render_report(
    report: &Report,
    slices: &[Slice],
    models: &[String],
    records: &[MetricRecord],
    thresholds: &Thresholds,
) -> ReportDocument {
    let entries: Vec<EntryDocument> = report
        .entries
        .iter()
        .map(|e| {
            let transform = e.transform_id.as_deref().unwrap_or(BASE_TRANSFORM);
            let slice = slices.iter().find(|s| s.slice_id == e.slice_id);
            EntryDocument {
                slice_id: e.slice_id.clone(),
                slice_name: slice.map(|s| s.name.clone()),
                predicate: slice.map(|s| s.predicate.to_string()),
                metric_id: e.metric_id.clone(),
                transform_id: transform.to_string(),
                series: MetricSeries::build(&e.slice_id, &e.metric_id, transform, models, records, thresholds),
                test: e.test.as_ref().map(|t| evaluate_test(t, models, records)),
            }
        })
        .collect();
    ReportDocument {
        report_id: report.report_id.clone(),
        name: report.name.clone(),
        models: models.to_vec(),
        failures_latest: entries.iter().filter(|e| e.test.as_ref().is_some_and(|t| t.latest_model_failed)).count(),
        entries,
    }
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            c => out.push(c),
        }
    }
    out
}

fn short(v: Option<f64>) -> String {
    v.map_or_else(|| "–".to_string(), |v| format!("{v:.4}"))
}

fn arrow(flag: Flag) -> (&'static str, &'static str) {
    match flag {
        Flag::Downward => ("↓", "downward trend"),
        Flag::HighVariance => ("↕", "high variance"),
        Flag::None => ("", ""),
    }
}

const SPARK_W: f64 = 120.0;
const SPARK_H: f64 = 28.0;

/// Inline SVG line over the series; gaps break the line.
pub fn sparkline_svg(values: &[Option<f64>], flag: Flag) -> String {
    let present: Vec<f64> = values.iter().flatten().copied().collect();
    let lo = present.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = present.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let step = if values.len() > 1 { (SPARK_W - 8.0) / (values.len() - 1) as f64 } else { 0.0 };
    let y = |v: f64| {
        if hi > lo {
            4.0 + (SPARK_H - 8.0) * (hi - v) / (hi - lo)
        } else {
            SPARK_H / 2.0
        }
    };
    let colour = match flag {
        Flag::Downward => "#c62828",
        Flag::HighVariance => "#ef6c00",
        Flag::None => "#1565c0",
    };
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{SPARK_W}\" height=\"{SPARK_H}\" viewBox=\"0 0 {SPARK_W} {SPARK_H}\" role=\"img\">"
    );
    let mut run: Vec<String> = Vec::new();
    let flush = |run: &mut Vec<String>, svg: &mut String| {
        if run.len() > 1 {
            let _ = write!(svg, "<polyline fill=\"none\" stroke=\"{colour}\" stroke-width=\"1.5\" points=\"{}\"/>", run.join(" "));
        }
        run.clear();
    };
    for (i, v) in values.iter().enumerate() {
        let x = 4.0 + step * i as f64;
        match v {
            Some(v) => {
                let _ = write!(svg, "<circle cx=\"{x:.1}\" cy=\"{:.1}\" r=\"1.8\" fill=\"{colour}\"/>", y(*v));
                run.push(format!("{x:.1},{:.1}", y(*v)));
            }
            None => flush(&mut run, &mut svg),
        }
    }
    flush(&mut run, &mut svg);
    svg.push_str("</svg>");
    svg
}

const STYLE: &str = "body{font-family:system-ui,sans-serif;margin:2em;color:#222}\
table{border-collapse:collapse;margin-top:1em}\
th,td{border:1px solid #ccc;padding:4px 8px;text-align:right;vertical-align:middle}\
th{background:#f3f3f3}td.name{text-align:left}\
td.fail{background:#ffcdd2;color:#b71c1c;font-weight:bold}\
td.pass{background:#e8f5e9}\
.badge{display:inline-block;padding:2px 10px;border-radius:10px;background:#b71c1c;color:#fff}\
.badge.ok{background:#2e7d32}.flag{font-size:1.2em;margin-left:4px}\
code{font-size:.85em;color:#555}\
@media print{body{margin:0}}";

impl ReportDocument {
    fn verdict_of(&self, entry: &EntryDocument, model: usize) -> Option<Verdict> {
        entry.test.as_ref().and_then(|t| t.verdicts.get(model)).map(|v| v.verdict)
    }

    /// Self-contained printable page.
    pub fn to_html(&self) -> String {
        let mut h = String::new();
        let _ = write!(
            h,
            "<!DOCTYPE html>\n<html lang=\"en\"><head><meta charset=\"utf-8\"><title>{name}</title><style>{STYLE}</style></head><body>\n<h1>{name}</h1>\n",
            name = escape(&self.name)
        );
        let class = if self.failures_latest == 0 { "badge ok" } else { "badge" };
        let _ = writeln!(
            h,
            "<p><span class=\"{class}\" data-failures=\"{n}\">{n} failing test{s} on {latest}</span></p>",
            n = self.failures_latest,
            s = if self.failures_latest == 1 { "" } else { "s" },
            latest = escape(self.models.last().map_or("no model", String::as_str)),
        );
        if self.entries.is_empty() {
            h.push_str("<p>This report has no entries.</p>\n</body></html>\n");
            return h;
        }
        h.push_str("<table>\n<tr><th>slice</th><th>metric</th><th>transform</th>");
        for m in &self.models {
            let _ = write!(h, "<th>{}</th>", escape(m));
        }
        h.push_str("<th>trend</th><th>test</th></tr>\n");
        for e in &self.entries {
            let name = e.slice_name.as_deref().unwrap_or(&e.slice_id);
            let _ = write!(
                h,
                "<tr><td class=\"name\">{}<br><code>{}</code></td><td>{}</td><td>{}</td>",
                escape(name),
                escape(e.predicate.as_deref().unwrap_or("deleted slice")),
                escape(&e.metric_id),
                escape(&e.transform_id)
            );
            for (i, p) in e.series.points.iter().enumerate() {
                let class = match self.verdict_of(e, i) {
                    Some(Verdict::Pass) => " class=\"pass\"",
                    Some(Verdict::Fail | Verdict::IndeterminateFail) => " class=\"fail\"",
                    _ => "",
                };
                let title = p.value.map_or_else(|| "no value".to_string(), |v| format!("{v} (n={})", p.n));
                let _ = write!(h, "<td{class} title=\"{title}\">{}</td>", short(p.value));
            }
            let (mark, meaning) = arrow(e.series.flag);
            let fit = e.series.fit.map_or_else(String::new, |f| {
                format!("slope {} intercept {} residual sd {}", f.slope, f.intercept, f.residual_sd)
            });
            let _ = write!(
                h,
                "<td title=\"{}\">{}<span class=\"flag\" title=\"{meaning}\">{mark}</span></td>",
                escape(&fit),
                sparkline_svg(&e.series.values(), e.series.flag)
            );
            match &e.test {
                Some(t) => {
                    let class = if t.latest_model_failed { "fail" } else { "pass" };
                    let _ = write!(h, "<td class=\"{class}\">{}</td>", escape(&t.description));
                }
                None => h.push_str("<td></td>"),
            }
            h.push_str("</tr>\n");
        }
        h.push_str("</table>\n</body></html>\n");
        h
    }

    pub fn to_markdown(&self) -> String {
        let mut m = format!("# {}\n\n", self.name);
        let _ = writeln!(
            m,
            "**{} failing test(s)** on the latest model ({}).\n",
            self.failures_latest,
            self.models.last().map_or("none", String::as_str)
        );
        if self.entries.is_empty() {
            m.push_str("_This report has no entries._\n");
            return m;
        }
        let cell = |s: &str| s.replace('|', "\\|");
        m.push_str("| slice | metric | transform |");
        for model in &self.models {
            let _ = write!(m, " {} |", cell(model));
        }
        m.push_str(" trend | test |\n|---|---|---|");
        m.push_str(&"---:|".repeat(self.models.len()));
        m.push_str("---|---|\n");
        for e in &self.entries {
            let _ = write!(
                m,
                "| {} | {} | {} |",
                cell(e.slice_name.as_deref().unwrap_or(&e.slice_id)),
                cell(&e.metric_id),
                cell(&e.transform_id)
            );
            for (i, p) in e.series.points.iter().enumerate() {
                let failed = matches!(self.verdict_of(e, i), Some(Verdict::Fail | Verdict::IndeterminateFail));
                let v = short(p.value);
                if failed {
                    let _ = write!(m, " **{v}** ✗ |");
                } else {
                    let _ = write!(m, " {v} |");
                }
            }
            let (mark, meaning) = arrow(e.series.flag);
            let trend = if mark.is_empty() { String::new() } else { format!("{mark} {meaning}") };
            let test = e.test.as_ref().map_or(String::new(), |t| cell(&t.description));
            let _ = writeln!(m, " {trend} | {test} |");
        }
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::objects::{now, BehavioralTest, Comparator, ReportEntry};
    use crate::model::predicate::{CompareOp, FilterPredicate, Literal};

    fn records(slice: &str, values: &[f64]) -> Vec<MetricRecord> {
        values
            .iter()
            .enumerate()
            .map(|(i, &v)| MetricRecord {
                slice_id: slice.into(),
                model_id: format!("m{i}"),
                transform_id: "none".into(),
                metric_id: "accuracy".into(),
                value: Some(v),
                n: 25,
                computed_at: now(),
            })
            .collect()
    }

    #[test]
    fn one_slice_three_models() {
        let slice = Slice::new("quiet <audio>", FilterPredicate::leaf("raw::amplitude", CompareOp::Lt, Literal::Number(0.04)), None);
        let mut report = Report::new("weekly");
        report.entries.push(ReportEntry {
            slice_id: slice.slice_id.clone(),
            metric_id: "accuracy".into(),
            transform_id: None,
            test: Some(BehavioralTest::new(&slice.slice_id, "accuracy", None, Comparator::Gt, 0.70)),
        });
        let models: Vec<String> = vec!["m0".into(), "m1".into(), "m2".into()];
        let doc = render_report(&report, &[slice.clone()], &models, &records(&slice.slice_id, &[0.9, 0.8, 0.68]), &Thresholds::default());
        assert_eq!(doc.entries[0].series.points.len(), 3);
        assert_eq!(doc.entries[0].series.flag, Flag::Downward);
        assert_eq!(doc.failures_latest, 1);
        let html = doc.to_html();
        assert!(html.contains("quiet &lt;audio&gt;"));
        assert!(html.contains("data-failures=\"1\""));
        assert!(html.contains("<svg") && html.contains("<polyline"));
        let md = doc.to_markdown();
        assert!(md.contains("**0.6800** ✗"));
    }

    #[test]
    fn empty_report() {
        let doc = render_report(&Report::new("empty"), &[], &["m0".into()], &[], &Thresholds::default());
        assert!(doc.entries.is_empty());
        assert_eq!(doc.failures_latest, 0);
        assert!(doc.to_html().contains("no entries"));
    }

    #[test]
    fn gaps_split_the_sparkline() {
        let svg = sparkline_svg(&[Some(0.9), Some(0.8), None, Some(0.7), Some(0.6)], Flag::Downward);
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert_eq!(svg.matches("<circle").count(), 4);
    }
}
