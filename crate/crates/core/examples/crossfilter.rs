//! Brush the amplitude widget and watch the other histograms and the metric follow.

use slicelens::demo::{self, DemoOptions};
use slicelens::query::{CrossFilterState, Layout, Selection};
use slicelens::server::{process, ProjectConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let project = demo::create(dir.path(), &DemoOptions { instances: 500, ..Default::default() })?;
    let engine = process(&ProjectConfig::load(&project.config)?, None)?.engine;

    let state = CrossFilterState::new()
        .select("distill::amplitude", Selection::Range { min: 0.04, max: 0.12 })
        .model("m3");
    let h = engine.histograms(&state)?;
    println!("{} of {} rows selected", h.filtered_rows, h.total_rows);

    let gender = &h.columns["raw::gender"];
    if let Layout::Categories { categories, .. } = &gender.spec.layout {
        for (i, c) in categories.iter().enumerate() {
            println!("  gender={c:<10} {:>4} / {:>4}", gender.filtered[i], gender.total[i]);
        }
    }
    let amp = &h.columns["distill::amplitude"];
    if let Layout::Bins { edges } = &amp.spec.layout {
        for (i, w) in edges.windows(2).enumerate() {
            println!("  amplitude [{:.3}, {:.3}) {:>4} {}", w[0], w[1], amp.filtered[i], "#".repeat(amp.filtered[i] as usize / 4));
        }
    }

    let page = engine.page_instances(&state, 0, 5)?;
    for inst in &page.instances {
        println!("  {} label={} output={}", inst.id, inst.label, inst.output.as_ref().map_or("-".into(), |v| v.to_string()));
    }

    let predicate = state.predicate(&engine.table().schema())?;
    for model in ["m1", "m2", "m3"] {
        for transform in ["none", "white_noise"] {
            let r = engine.metric("brushed", &predicate, Some(model), transform, "accuracy")?;
            println!("  {model} {transform:<12} accuracy {:.3} (n={})", r.value.unwrap_or(f64::NAN), r.n);
        }
    }
    Ok(())
}
