//! Fit a line through a metric across model versions and flag regressions.

use slicelens::analysis::{sparkline_svg, MetricSeries, SeriesPoint, Thresholds};

fn main() {
    let thresholds = Thresholds::default();
    for (name, values) in [
        ("steady decline", vec![Some(0.9), Some(0.85), Some(0.8), Some(0.75), Some(0.7)]),
        ("flat", vec![Some(0.7); 5]),
        ("zigzag", vec![Some(0.9), Some(0.5), Some(0.9), Some(0.5), Some(0.9)]),
        ("gap in the middle", vec![Some(0.82), Some(0.8), None, Some(0.79), Some(0.81)]),
    ] {
        let points = values
            .iter()
            .enumerate()
            .map(|(x, &value)| SeriesPoint { x, model_id: format!("v{}", x + 1), value, n: 120 })
            .collect();
        let s = MetricSeries::from_points("slice", "accuracy", "none", points, &thresholds);
        let fit = s.fit.map_or("no fit".to_string(), |f| {
            format!("slope {:+.4} intercept {:.4} residual sd {:.4}", f.slope, f.intercept, f.residual_sd)
        });
        println!("{name:<18} {fit:<52} flag={:?}", s.flag);
        let svg = sparkline_svg(&s.values(), s.flag);
        println!("{:18} sparkline: {} bytes of svg", "", svg.len());
    }
}
