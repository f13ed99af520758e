//! Slice metrics: built-ins computed in-core and metric plugins run over the
//! slice's rows.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::model::column::{ColumnKey, DType, Origin, BASE_TRANSFORM};
use crate::pipeline::execute::plugin_row;
use crate::pipeline::{
    FunctionKind, FunctionRegistry, ModelSpec, PluginProcess, RunFrame, RunOptions, DEFAULT_TIMEOUT,
};
use crate::table::cache::sanitize;
use crate::table::{CacheKey, CachedValue, ColumnData, DiskCache, KeyParts, MetadataTable, Value};

use super::eval::rescope;
use super::QueryError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MetricDef {
    /// Share of rows whose model output equals the label.
    Accuracy,
    /// `1 - accuracy`.
    ErrorRate,
    /// Mean of a continuous column over rows where it is present.
    Mean { column: String },
    /// A metric function provided by a plugin.
    Plugin { function: String },
}

impl MetricDef {
    /// Built-ins that average a per-row quantity, so the value over a disjoint
    /// union is the n-weighted mean of the parts.
    pub fn is_mean_decomposable(&self) -> bool {
        !matches!(self, MetricDef::Plugin { .. })
    }
}

/// Metric ids available in a project, in display order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MetricCatalog {
    entries: Vec<(String, MetricDef)>,
}

impl Default for MetricCatalog {
    fn default() -> Self {
        MetricCatalog {
            entries: vec![("accuracy".into(), MetricDef::Accuracy), ("error_rate".into(), MetricDef::ErrorRate)],
        }
    }
}

impl MetricCatalog {
    pub fn empty() -> Self {
        MetricCatalog { entries: Vec::new() }
    }

    /// Adds or replaces a metric.
    pub fn insert(&mut self, id: impl Into<String>, def: MetricDef) {
        let id = id.into();
        match self.entries.iter_mut().find(|(k, _)| *k == id) {
            Some(entry) => entry.1 = def,
            None => self.entries.push((id, def)),
        }
    }

    pub fn get(&self, id: &str) -> Option<&MetricDef> {
        self.entries.iter().find(|(k, _)| k == id).map(|(_, d)| d)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(k, _)| k.as_str())
    }

    pub fn entries(&self) -> &[(String, MetricDef)] {
        &self.entries
    }
}

/// SHA-256 over the transform and the instance ids of `rows`, hex encoded.
pub fn slice_fingerprint(table: &MetadataTable, rows: &[usize], transform: &str) -> String {
    let mut h = Sha256::new();
    h.update(transform.as_bytes());
    h.update([0]);
    for &r in rows {
        h.update(table.instance_id(r).as_bytes());
        h.update([0]);
    }
    hex::encode(h.finalize())
}

/// Runs metric plugins, keeping one process per plugin alive between calls.
#[derive(Debug)]
pub struct PluginMetrics {
    registry: FunctionRegistry,
    models: Vec<ModelSpec>,
    cache: Option<DiskCache>,
    data_root: PathBuf,
    scratch_root: PathBuf,
    timeout: Duration,
    processes: Mutex<HashMap<usize, PluginProcess>>,
    invocations: AtomicU64,
}

impl PluginMetrics {
    pub fn new(
        registry: FunctionRegistry,
        models: Vec<ModelSpec>,
        data_root: impl Into<PathBuf>,
        scratch_root: impl Into<PathBuf>,
    ) -> Self {
        PluginMetrics {
            registry,
            models,
            cache: None,
            data_root: data_root.into(),
            scratch_root: scratch_root.into(),
            timeout: DEFAULT_TIMEOUT,
            processes: Mutex::new(HashMap::new()),
            invocations: AtomicU64::new(0),
        }
    }

    pub fn with_cache(mut self, cache: DiskCache) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn registry(&self) -> &FunctionRegistry {
        &self.registry
    }

    /// Metric runs sent to plugins so far (cache hits excluded).
    pub fn invocations(&self) -> u64 {
        self.invocations.load(Ordering::Relaxed)
    }

    fn version(&self, function: &str) -> String {
        self.registry.get(function).map(|f| f.manifest.version.clone()).unwrap_or_default()
    }

    pub(crate) fn evaluate(
        &self,
        function: &str,
        table: &MetadataTable,
        rows: &[usize],
        model: &str,
        transform: &str,
    ) -> Result<Option<f64>, QueryError> {
        let registered = self
            .registry
            .expect(function, FunctionKind::Metric)
            .map_err(|e| QueryError::Metric(e.to_string()))?;
        let model_fn = self.models.iter().find(|m| m.id == model).map_or("", |m| m.function.as_str());
        let mut fp = format!(
            "id={};label={};model={model}:{model_fn}:{}",
            table.id_column(),
            table.label_column().unwrap_or(""),
            self.version(model_fn)
        );
        if transform != BASE_TRANSFORM {
            fp.push_str(&format!(";transform={transform}:{}", self.version(transform)));
        }
        let subject = slice_fingerprint(table, rows, transform);
        let version = registered.manifest.version.clone();
        let key = CacheKey::new(&KeyParts {
            function,
            version: &version,
            kind: "metric",
            model: Some(model),
            transform: Some(transform),
            subject: &subject,
            options_fingerprint: &fp,
        });
        if let Some(CachedValue::Value(v)) = self.cache.as_ref().and_then(|c| c.get(function, &key)) {
            return Ok(v.as_f64());
        }

        let output = ColumnKey::output(model, transform).to_id();
        let columns: Vec<&str> = table
            .columns()
            .filter(|c| {
                let d = &c.descriptor;
                let scope_ok = d.transform_scope.as_deref().is_none_or(|t| t == transform)
                    && d.model_scope.as_deref().is_none_or(|m| m == model);
                scope_ok && (d.origin != Origin::Output || d.id == output)
            })
            .map(|c| c.descriptor.id.as_str())
            .collect();
        let scratch = self.scratch_root.join(sanitize(function));
        std::fs::create_dir_all(&scratch)
            .map_err(|e| QueryError::Metric(format!("cannot create {}: {e}", scratch.display())))?;
        let frame = RunFrame {
            task_id: format!("metric:{function}/{model}@{transform}"),
            function: function.to_string(),
            kind: FunctionKind::Metric,
            options: RunOptions {
                data_path: self.data_root.display().to_string(),
                id_column: table.id_column().to_string(),
                label_column: table.label_column().map(str::to_string),
                output_column: Some(output),
                output_dir: None,
                scratch_dir: scratch.display().to_string(),
                model: Some(model.to_string()),
                transform: Some(transform.to_string()),
            },
            rows: rows.iter().map(|&r| plugin_row(table, r, &columns)).collect(),
        };

        let plugin = registered.plugin;
        let mut processes = self.processes.lock().unwrap_or_else(|e| e.into_inner());
        if processes.get_mut(&plugin).is_some_and(|p| p.has_exited()) {
            processes.remove(&plugin);
        }
        if !processes.contains_key(&plugin) {
            let command = &self.registry.plugins()[plugin];
            let process = PluginProcess::spawn(command, self.timeout)
                .map_err(|e| QueryError::Metric(format!("{}: {e}", command.display())))?;
            processes.insert(plugin, process);
        }
        let process = processes.get_mut(&plugin).expect("inserted above");
        self.invocations.fetch_add(1, Ordering::Relaxed);
        let result = process.run(frame);
        if result.is_err() && process.has_exited() {
            processes.remove(&plugin);
        }
        drop(processes);
        let result = result.map_err(|e| QueryError::Metric(format!("metric `{function}`: {e}")))?;
        let value = match result.scalar {
            Some(serde_json::Value::Null) => None,
            Some(serde_json::Value::Number(n)) => n.as_f64(),
            other => {
                return Err(QueryError::Metric(format!(
                    "metric `{function}` returned {} instead of a number",
                    other.map_or("no scalar".to_string(), |v| v.to_string())
                )))
            }
        };
        if let Some(cache) = &self.cache {
            let stored = CachedValue::Value(value.map_or(Value::Missing, Value::Number));
            if let Err(e) = cache.put(function, &key, &stored) {
                tracing::warn!("cannot cache metric `{function}`: {e}");
            }
        }
        Ok(value)
    }
}

impl Drop for PluginMetrics {
    fn drop(&mut self) {
        let processes = std::mem::take(self.processes.get_mut().unwrap_or_else(|e| e.into_inner()));
        for (_, p) in processes {
            p.shutdown();
        }
    }
}

/// Value and n for a built-in metric over `rows`.
pub(crate) fn builtin(
    def: &MetricDef,
    table: &MetadataTable,
    rows: &[usize],
    model: Option<&str>,
    transform: &str,
) -> Result<(Option<f64>, u64), QueryError> {
    match def {
        MetricDef::Accuracy | MetricDef::ErrorRate => {
            let model = model.ok_or(QueryError::ModelRequired)?;
            let label = table.label_column().ok_or(QueryError::NoLabelColumn)?;
            let label = table.column(label).ok_or_else(|| QueryError::UnknownColumn(label.to_string()))?;
            let output = table
                .column(&ColumnKey::output(model, transform).to_id())
                .ok_or_else(|| QueryError::NotProcessed { model: model.to_string(), transform: transform.to_string() })?;
            let n = rows.len() as u64;
            if n == 0 {
                return Ok((None, 0));
            }
            let correct = rows.iter().filter(|&&r| output.cell(r).agrees_with(&label.cell(r))).count();
            let accuracy = correct as f64 / n as f64;
            let value = if *def == MetricDef::Accuracy { accuracy } else { 1.0 - accuracy };
            Ok((Some(value), n))
        }
        MetricDef::Mean { column } => {
            let declared = table.column(column).ok_or_else(|| QueryError::UnknownColumn(column.clone()))?;
            if declared.dtype() != DType::Continuous {
                return Err(QueryError::Metric(format!("mean needs a continuous column, `{column}` is {}", declared.dtype())));
            }
            let resolved = rescope(column, model, transform);
            let col = table.column(&resolved).ok_or_else(|| QueryError::NotProcessed {
                model: model.unwrap_or_default().to_string(),
                transform: transform.to_string(),
            })?;
            let ColumnData::Numeric(values) = &col.data else {
                return Err(QueryError::Internal(format!("`{resolved}` is not numeric")));
            };
            let (mut sum, mut n) = (0.0, 0u64);
            for &r in rows {
                let x = values[r];
                if !x.is_nan() {
                    sum += x;
                    n += 1;
                }
            }
            Ok(((n > 0).then(|| sum / n as f64), n))
        }
        MetricDef::Plugin { .. } => Err(QueryError::Internal("plugin metric evaluated as a built-in".into())),
    }
}
