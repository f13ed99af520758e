#![allow(dead_code)]

pub mod oracle;
pub mod scale;

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use slicelens::demo::{self, DemoOptions, DemoProject};
use slicelens::pipeline::{FunctionKind, FunctionManifest, FunctionRegistry, PluginCommand};
use slicelens::table::{ingest_path, IngestOptions, MetadataTable};

pub fn manifest_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

pub fn bad_plugin(args: &[&str]) -> PluginCommand {
    let mut argv = vec!["python3".to_string(), "-S".to_string(), manifest_dir().join("tests/fixtures/bad_plugin.py").display().to_string()];
    argv.extend(args.iter().map(|s| s.to_string()));
    PluginCommand { argv, cwd: None }
}

pub fn demo_project(dir: &Path, options: DemoOptions) -> DemoProject {
    demo::create(dir, &options).expect("demo project")
}

pub fn demo_table(project: &DemoProject) -> MetadataTable {
    let opts = IngestOptions::new("id").label("transcript").data_file("file");
    ingest_path(&project.metadata, &opts).expect("ingest")
}

pub fn mock(project: &DemoProject, args: &[&str]) -> PluginCommand {
    demo::plugin_command(&project.plugin, &args.iter().map(|s| s.to_string()).collect::<Vec<_>>())
}

/// A task as (function, kind, model, transform).
pub type Task = (String, String, Option<String>, String);

/// Expected task set and edges, enumerated directly from the dependency rules:
/// transforms read base rows; every model and every model-independent distill
/// runs once on base rows and once per transform (after that transform);
/// model-dependent distills run once per (model, rows) after the matching model run.
pub fn expected_dag(
    models: &[(String, String)],
    transforms: &[String],
    distills: &[(String, bool)],
) -> (BTreeSet<Task>, BTreeSet<(Task, Task)>) {
    let mut tasks = BTreeSet::new();
    let mut edges = BTreeSet::new();
    let mut scopes = vec!["none".to_string()];
    scopes.extend(transforms.iter().cloned());
    let t_task = |t: &str| (t.to_string(), "transform".to_string(), None, t.to_string());
    for t in transforms {
        tasks.insert(t_task(t));
    }
    for scope in &scopes {
        for (d, dep) in distills {
            if !dep {
                let task = (d.clone(), "distill".to_string(), None, scope.clone());
                if scope != "none" {
                    edges.insert((task.clone(), t_task(scope)));
                }
                tasks.insert(task);
            }
        }
        for (id, function) in models {
            let model_task = (function.clone(), "model".to_string(), Some(id.clone()), scope.clone());
            if scope != "none" {
                edges.insert((model_task.clone(), t_task(scope)));
            }
            tasks.insert(model_task.clone());
            for (d, dep) in distills {
                if *dep {
                    let task = (d.clone(), "distill".to_string(), Some(id.clone()), scope.clone());
                    edges.insert((task.clone(), model_task.clone()));
                    tasks.insert(task);
                }
            }
        }
    }
    (tasks, edges)
}

pub fn registry_for(
    model_functions: &[String],
    transforms: &[String],
    distills: &[(String, bool)],
) -> FunctionRegistry {
    let mut manifests = Vec::new();
    let base = |name: &str, kind| FunctionManifest {
        name: name.to_string(),
        kind,
        version: "1".into(),
        depends_on_model: None,
        output_dtype: None,
        batch_size_hint: None,
    };
    for m in model_functions {
        manifests.push((0, base(m, FunctionKind::Model)));
    }
    for t in transforms {
        manifests.push((0, base(t, FunctionKind::Transform)));
    }
    for (d, dep) in distills {
        manifests.push((
            0,
            FunctionManifest {
                depends_on_model: Some(*dep),
                output_dtype: Some(slicelens::model::DType::Continuous),
                ..base(d, FunctionKind::Distill)
            },
        ));
    }
    FunctionRegistry::from_manifests(vec![PluginCommand::new(["unused"])], manifests).unwrap()
}
