use std::collections::{HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::model::column::BASE_TRANSFORM;
use crate::table::{CacheKey, CachedValue, DiskCache, KeyParts, MetadataTable, Value};

use super::manifest::FunctionKind;
use super::registry::FunctionRegistry;
use super::PipelineError;

/// A configured model: a project-level id bound to a model function.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub id: String,
    pub function: String,
}

impl ModelSpec {
    pub fn new(id: impl Into<String>, function: impl Into<String>) -> Self {
        ModelSpec { id: id.into(), function: function.into() }
    }
}

/// What a task computes: one function over the rows of one transform, for at
/// most one model.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TaskSpec {
    pub function: String,
    pub kind: FunctionKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    /// Rows the task runs on. For transform tasks this is the transform itself,
    /// which consumes base rows.
    pub transform: String,
}

impl TaskSpec {
    pub fn task_id(&self) -> String {
        match (self.kind, &self.model) {
            (FunctionKind::Transform, _) => format!("transform:{}", self.function),
            (FunctionKind::Model, Some(m)) => format!("model:{m}@{}", self.transform),
            (kind, Some(m)) => format!("{kind}:{}/{m}@{}", self.function, self.transform),
            (kind, None) => format!("{kind}:{}@{}", self.function, self.transform),
        }
    }

    /// Transform whose rows are read: base rows for transform tasks.
    pub fn input_transform(&self) -> &str {
        if self.kind == FunctionKind::Transform {
            BASE_TRANSFORM
        } else {
            &self.transform
        }
    }
}

impl fmt::Display for TaskSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.task_id())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlannedTask {
    pub spec: TaskSpec,
    pub version: String,
    pub options_fingerprint: String,
    /// Indexes into [`Plan::tasks`].
    pub deps: Vec<usize>,
    /// Instance ids the task covers.
    pub targets: Vec<String>,
    pub hits: Vec<(String, CachedValue)>,
    pub misses: Vec<String>,
}

impl PlannedTask {
    pub fn cache_key(&self, instance_id: &str) -> CacheKey {
        CacheKey::new(&KeyParts {
            function: &self.spec.function,
            version: &self.version,
            kind: self.spec.kind.as_str(),
            model: self.spec.model.as_deref(),
            transform: Some(&self.spec.transform),
            subject: instance_id,
            options_fingerprint: &self.options_fingerprint,
        })
    }
}

/// Tasks to run, in topological order, plus fully cached tasks whose results
/// only need loading.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Plan {
    pub tasks: Vec<PlannedTask>,
    pub pruned: Vec<PlannedTask>,
}

impl Plan {
    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn task_specs(&self) -> Vec<&TaskSpec> {
        self.tasks.iter().map(|t| &t.spec).collect()
    }

    /// (task, dependency) pairs as task specs.
    pub fn edges(&self) -> Vec<(&TaskSpec, &TaskSpec)> {
        self.tasks.iter().flat_map(|t| t.deps.iter().map(move |&d| (&t.spec, &self.tasks[d].spec))).collect()
    }
}

/// The raw dependency structure, before cache probing: every task and, for each,
/// the specs it depends on.
pub fn enumerate_tasks(
    registry: &FunctionRegistry,
    models: &[ModelSpec],
    transforms: &[String],
) -> Result<Vec<(TaskSpec, Vec<TaskSpec>)>, PipelineError> {
    if models.is_empty() {
        return Err(PipelineError::NoModels);
    }
    let mut seen = HashSet::new();
    for m in models {
        registry.expect(&m.function, FunctionKind::Model)?;
        if !seen.insert(&m.id) {
            return Err(PipelineError::DuplicateModel(m.id.clone()));
        }
    }
    let mut seen = HashSet::new();
    for t in transforms {
        registry.expect(t, FunctionKind::Transform)?;
        if !seen.insert(t) {
            return Err(PipelineError::DuplicateTransform(t.clone()));
        }
    }
    let scopes: Vec<&str> = std::iter::once(BASE_TRANSFORM).chain(transforms.iter().map(String::as_str)).collect();
    let transform_task = |t: &str| TaskSpec {
        function: t.to_string(),
        kind: FunctionKind::Transform,
        model: None,
        transform: t.to_string(),
    };
    let deps_on_transform = |t: &str| if t == BASE_TRANSFORM { vec![] } else { vec![transform_task(t)] };

    let mut out = Vec::new();
    for t in transforms {
        out.push((transform_task(t), vec![]));
    }
    let distills: Vec<_> = registry.of_kind(FunctionKind::Distill).collect();
    for d in distills.iter().filter(|d| !d.depends_on_model()) {
        for &t in &scopes {
            let spec = TaskSpec { function: d.name.clone(), kind: FunctionKind::Distill, model: None, transform: t.into() };
            out.push((spec, deps_on_transform(t)));
        }
    }
    for m in models {
        for &t in &scopes {
            let spec = TaskSpec {
                function: m.function.clone(),
                kind: FunctionKind::Model,
                model: Some(m.id.clone()),
                transform: t.into(),
            };
            out.push((spec, deps_on_transform(t)));
        }
    }
    for d in distills.iter().filter(|d| d.depends_on_model()) {
        for m in models {
            for &t in &scopes {
                let model_task = TaskSpec {
                    function: m.function.clone(),
                    kind: FunctionKind::Model,
                    model: Some(m.id.clone()),
                    transform: t.into(),
                };
                let spec = TaskSpec {
                    function: d.name.clone(),
                    kind: FunctionKind::Distill,
                    model: Some(m.id.clone()),
                    transform: t.into(),
                };
                out.push((spec, vec![model_task]));
            }
        }
    }
    Ok(out)
}

/// Builds the task DAG and probes the cache. Fully cached tasks are moved to
/// [`Plan::pruned`]; their dependents lose the corresponding edge.
pub fn plan(
    registry: &FunctionRegistry,
    models: &[ModelSpec],
    transforms: &[String],
    table: &MetadataTable,
    cache: Option<&DiskCache>,
) -> Result<Plan, PipelineError> {
    let enumerated = enumerate_tasks(registry, models, transforms)?;
    let base_ids: Vec<String> = (0..table.base_row_count()).map(|r| table.instance_id(r).to_string()).collect();
    let model_fn: HashMap<&str, &str> = models.iter().map(|m| (m.id.as_str(), m.function.as_str())).collect();
    let version = |name: &str| registry.get(name).map(|f| f.manifest.version.clone()).unwrap_or_default();

    let common = format!("id={};label={}", table.id_column(), table.label_column().unwrap_or(""));
    // Instances with no variant under a fully known transform.
    let mut dropped: HashMap<String, HashSet<String>> = HashMap::new();
    let mut index_of: HashMap<TaskSpec, Option<usize>> = HashMap::new();
    let mut out = Plan::default();

    for (spec, dep_specs) in enumerated {
        let mut fp = common.clone();
        if spec.kind != FunctionKind::Transform && spec.transform != BASE_TRANSFORM {
            fp.push_str(&format!(";transform={}:{}", spec.transform, version(&spec.transform)));
        }
        if spec.kind == FunctionKind::Distill {
            if let Some(m) = &spec.model {
                let f = model_fn[m.as_str()];
                fp.push_str(&format!(";model={m}:{f}:{}", version(f)));
            }
        }
        let targets: Vec<String> = match dropped.get(spec.input_transform()).filter(|_| spec.kind != FunctionKind::Transform) {
            Some(gone) => base_ids.iter().filter(|id| !gone.contains(*id)).cloned().collect(),
            None => base_ids.clone(),
        };
        let mut task = PlannedTask {
            version: version(&spec.function),
            options_fingerprint: fp,
            spec,
            deps: Vec::new(),
            targets,
            hits: Vec::new(),
            misses: Vec::new(),
        };
        for id in &task.targets {
            match cache.and_then(|c| c.get(&task.spec.function, &task.cache_key(id))) {
                Some(v) => task.hits.push((id.clone(), v)),
                None => task.misses.push(id.clone()),
            }
        }
        task.deps = dep_specs.iter().filter_map(|d| index_of.get(d).copied().flatten()).collect();

        if task.misses.is_empty() {
            if task.spec.kind == FunctionKind::Transform {
                let gone = task
                    .hits
                    .iter()
                    .filter(|(_, v)| matches!(v, CachedValue::Value(Value::Missing)))
                    .map(|(id, _)| id.clone())
                    .collect();
                dropped.insert(task.spec.transform.clone(), gone);
            }
            index_of.insert(task.spec.clone(), None);
            out.pruned.push(task);
        } else {
            index_of.insert(task.spec.clone(), Some(out.tasks.len()));
            out.tasks.push(task);
        }
    }
    Ok(out)
}
