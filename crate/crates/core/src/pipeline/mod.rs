//! Function plugins and the processing pipeline: plugin subprocesses and their
//! wire protocol, DAG planning with cache pruning, and parallel execution.

pub mod execute;
pub mod manifest;
pub mod plan;
pub mod plugin;
pub mod protocol;
pub mod registry;

pub use execute::{execute, ExecConfig, Progress, RunReport, TaskReport, TaskStatus, TRANSFORMS_DIR};
pub use manifest::{FunctionKind, FunctionManifest, ManifestError, DEFAULT_BATCH_SIZE};
pub use plan::{enumerate_tasks, plan, ModelSpec, Plan, PlannedTask, TaskSpec};
pub use plugin::{PluginCommand, PluginError, PluginProcess, DEFAULT_TIMEOUT};
pub use protocol::{Frame, ResultFrame, RunFrame, RunOptions, PROTOCOL_VERSION};
pub use registry::{FunctionRegistry, RegisteredFunction};

use crate::table::{DiskCache, MetadataTable};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PipelineError {
    #[error("at least one model is required")]
    NoModels,
    #[error("duplicate model id `{0}`")]
    DuplicateModel(String),
    #[error("transform `{0}` listed twice")]
    DuplicateTransform(String),
    #[error("no plugin provides a function named `{0}`")]
    UnknownFunction(String),
    #[error("`{name}` is a {actual} function, expected a {expected}")]
    WrongKind { name: String, expected: FunctionKind, actual: FunctionKind },
    #[error("function `{0}` is provided by more than one plugin")]
    DuplicateFunction(String),
    #[error("no plugin with index {0}")]
    UnknownPlugin(usize),
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error("plugin `{command}`: {source}")]
    Discovery { command: String, source: PluginError },
}

/// Plans against the cache and executes in one step.
pub fn run(
    registry: &FunctionRegistry,
    models: &[ModelSpec],
    transforms: &[String],
    table: MetadataTable,
    cache: Option<&DiskCache>,
    config: &ExecConfig,
) -> Result<(MetadataTable, RunReport), PipelineError> {
    let planned = plan(registry, models, transforms, &table, cache)?;
    Ok(execute(planned, table, registry, cache, config))
}
