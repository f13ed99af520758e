//! Talk to a plugin subprocess directly and print the JSON-lines conversation.

use std::time::Duration;

use serde_json::json;
use slicelens::demo;
use slicelens::pipeline::plugin::Direction;
use slicelens::pipeline::protocol::Row;
use slicelens::pipeline::{FunctionKind, PluginProcess, RunFrame, RunOptions};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let script = demo::write_plugin(dir.path())?;
    std::fs::write(dir.path().join("a1.txt"), "amplitude 0.03\nnoise 0\ntranscript turn left\n")?;
    let cmd = demo::plugin_command(&script, &["--fail-model".into(), "broken".into()]);
    let mut plugin = PluginProcess::spawn_recording(&cmd, Duration::from_secs(30))?;
    for f in plugin.functions() {
        println!("{:<14} {:?} v{}", f.name, f.kind, f.version);
    }

    let mut row = Row::new();
    row.insert("id".into(), json!("a1"));
    row.insert("file".into(), json!("a1.txt"));
    let frame = |task: &str, function: &str, kind, model: Option<&str>| RunFrame {
        task_id: task.into(),
        function: function.into(),
        kind,
        options: RunOptions {
            data_path: dir.path().display().to_string(),
            id_column: "id::id".into(),
            model: model.map(str::to_string),
            transform: Some("none".into()),
            scratch_dir: dir.path().join("scratch").display().to_string(),
            ..Default::default()
        },
        rows: vec![row.clone()],
    };
    println!("amplitude -> {:?}", plugin.run(frame("d#0", "amplitude", FunctionKind::Distill, None))?.values);
    println!("broken    -> {:?}", plugin.run(frame("m#0", "transcriber", FunctionKind::Model, Some("broken"))).unwrap_err());

    println!("\nwire transcript:");
    for (dir, line) in plugin.transcript() {
        println!("{} {line}", if *dir == Direction::Sent { ">" } else { "<" });
    }
    plugin.shutdown();
    Ok(())
}
