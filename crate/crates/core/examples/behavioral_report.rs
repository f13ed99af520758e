//! Save slices and behavioral tests, evaluate them across models and export a
//! report as HTML and Markdown.

use slicelens::demo::{self, DemoOptions};
use slicelens::model::{parse_predicate, BehavioralTest, Comparator, Report, ReportEntry, Slice};
use slicelens::server::cli::verdict_table;
use slicelens::server::project::{evaluate_all, report_document};
use slicelens::server::{process, ProjectConfig, Store};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let project = demo::create(dir.path(), &DemoOptions { instances: 400, ..Default::default() })?;
    let config = ProjectConfig::load(&project.config)?;
    let processed = process(&config, None)?;
    let schema = processed.engine.table().schema();

    let mut store = Store::open(config.state_dir())?;
    let mut report = Report::new("Audio quality");
    for (name, text) in [("quiet", "0.04 < amplitude < 0.12"), ("noisy rooms", "noisy_env == true"), ("older speakers", "speaker_age >= 60")] {
        let slice = store.create_slice(Slice::new(name, parse_predicate(text, &schema)?, Some("audio".into())))?;
        store.create_test(BehavioralTest::new(&slice.slice_id, "accuracy", None, Comparator::Gt, 0.70))?;
        for transform in [None, Some("white_noise".to_string())] {
            report.entries.push(ReportEntry { slice_id: slice.slice_id.clone(), metric_id: "accuracy".into(), transform_id: transform, test: None });
        }
    }
    store.create_report(report)?;

    let results = evaluate_all(&processed.engine, &store, &config)?;
    print!("{}", verdict_table(&results, store.slices(), &config.model_ids()));

    let doc = report_document(&processed.engine, &store, &config, "Audio quality")?;
    let out = dir.path().join("Audio quality.html");
    std::fs::write(&out, doc.to_html())?;
    println!("\nhtml export: {} bytes", std::fs::metadata(&out)?.len());
    println!("{}", doc.to_markdown());
    Ok(())
}
