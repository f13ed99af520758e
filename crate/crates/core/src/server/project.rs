//! Loading and processing a configured project, and the analysis views built
//! on top of the processed table.

use std::path::Path;
use std::sync::Arc;

use crate::analysis::{evaluate_test, render_report, MetricSeries, ReportDocument, TestResult};
use crate::model::column::BASE_TRANSFORM;
use crate::model::objects::{BehavioralTest, MetricRecord, Slice};
use crate::pipeline::{self, ExecConfig, FunctionKind, FunctionRegistry, PipelineError, Progress, RunReport};
use crate::query::{MetricDef, PluginMetrics, QueryEngine, QueryError};
use crate::table::{ingest_path, DiskCache, IngestOptions, TableError};

use super::config::{ConfigError, ProjectConfig};
use super::store::{Store, StoreError};

#[derive(Debug, thiserror::Error)]
pub enum ProjectError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("metadata: {0}")]
    Ingest(#[from] TableError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Query(#[from] QueryError),
    #[error("cache directory {path}: {source}")]
    Cache { path: std::path::PathBuf, source: std::io::Error },
    /// A test or report refers to a slice, metric or transform that does not exist.
    #[error("{0}")]
    Reference(String),
}

impl ProjectError {
    /// Problems the user fixes in the config or the saved objects.
    pub fn is_configuration(&self) -> bool {
        matches!(
            self,
            ProjectError::Config(_) | ProjectError::Reference(_) | ProjectError::Ingest(_) | ProjectError::Pipeline(_)
        )
    }
}

/// A processed project: the full table behind a query engine, plus the run report.
#[derive(Debug)]
pub struct Processed {
    pub engine: QueryEngine,
    pub report: RunReport,
    pub plugin_metrics: Option<Arc<PluginMetrics>>,
}

pub fn load_config(path: &Path) -> Result<ProjectConfig, ProjectError> {
    Ok(ProjectConfig::load(path)?)
}

/// Ingests metadata and runs every plugin task the cache cannot answer.
pub fn process(config: &ProjectConfig, progress: Option<Arc<Progress>>) -> Result<Processed, ProjectError> {
    let mut options = IngestOptions::new(&config.id_column).label(&config.label_column);
    if let Some(file) = &config.data_file_column {
        options = options.data_file(file);
    }
    let table = ingest_path(&config.metadata, &options)?;
    let registry = if config.plugins.is_empty() {
        FunctionRegistry::default()
    } else {
        FunctionRegistry::discover(&config.plugins, config.plugin_timeout)?
    };
    for (id, def) in config.metrics.entries() {
        if let MetricDef::Plugin { function } = def {
            registry.expect(function, FunctionKind::Metric).map_err(|e| ProjectError::Reference(format!("metric `{id}`: {e}")))?;
        }
    }
    let cache_io = |source| ProjectError::Cache { path: config.cache_dir.clone(), source };
    let cache = DiskCache::open(config.cache_dir.join("functions")).map_err(cache_io)?;
    let scratch = config.cache_dir.join("scratch");
    let mut exec = ExecConfig::new(&config.data_root, &scratch).workers(config.workers).timeout(config.plugin_timeout);
    if let Some(p) = progress {
        exec = exec.progress(p);
    }
    let (table, report) = pipeline::run(&registry, &config.models, &config.transforms, table, Some(&cache), &exec)?;
    let plugin_metrics = config.metrics.entries().iter().any(|(_, d)| matches!(d, MetricDef::Plugin { .. })).then(|| {
        let metric_cache = DiskCache::open(config.cache_dir.join("metrics")).ok();
        let mut pm = PluginMetrics::new(registry.clone(), config.models.clone(), &config.data_root, &scratch)
            .timeout(config.plugin_timeout);
        if let Some(c) = metric_cache {
            pm = pm.with_cache(c);
        }
        Arc::new(pm)
    });
    let engine = QueryEngine::with_options(table, config.index.clone()).with_metrics(config.metrics.clone(), plugin_metrics.clone());
    Ok(Processed { engine, report, plugin_metrics })
}

/// Checks that a test's slice, metric and transform exist.
pub fn check_test(test: &BehavioralTest, store: &Store, config: &ProjectConfig) -> Result<(), ProjectError> {
    if store.slice(&test.slice_id).is_err() {
        return Err(ProjectError::Reference(format!("test `{}` refers to unknown slice `{}`", test.test_id, test.slice_id)));
    }
    check_metric_transform(&test.metric_id, test.transform_id.as_deref(), config)
        .map_err(|m| ProjectError::Reference(format!("test `{}`: {m}", test.test_id)))
}

pub fn check_metric_transform(metric: &str, transform: Option<&str>, config: &ProjectConfig) -> Result<(), String> {
    if config.metrics.get(metric).is_none() {
        return Err(format!("unknown metric `{metric}`"));
    }
    match transform {
        Some(t) if t != BASE_TRANSFORM && !config.transforms.iter().any(|c| c == t) => Err(format!("unknown transform `{t}`")),
        _ => Ok(()),
    }
}

/// Metric records for every model that has outputs for `transform`.
pub fn records_for(
    engine: &QueryEngine,
    models: &[String],
    slice: &Slice,
    metric: &str,
    transform: &str,
) -> Result<Vec<MetricRecord>, QueryError> {
    let mut out = Vec::new();
    for model in models {
        match engine.slice_metric(slice, model, transform, metric) {
            Ok(r) => out.push(r),
            Err(QueryError::NotProcessed { .. } | QueryError::UnknownTransform(_)) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

pub fn series(
    engine: &QueryEngine,
    config: &ProjectConfig,
    slice: &Slice,
    metric: &str,
    transform: &str,
) -> Result<MetricSeries, ProjectError> {
    check_metric_transform(metric, Some(transform), config).map_err(ProjectError::Reference)?;
    let models = config.model_ids();
    let records = records_for(engine, &models, slice, metric, transform)?;
    Ok(MetricSeries::build(&slice.slice_id, metric, transform, &models, &records, &config.thresholds))
}

/// Evaluates every stand-alone and report test.
pub fn evaluate_all(engine: &QueryEngine, store: &Store, config: &ProjectConfig) -> Result<Vec<TestResult>, ProjectError> {
    let models = config.model_ids();
    store
        .all_tests()
        .iter()
        .map(|t| {
            check_test(t, store, config)?;
            let slice = store.slice(&t.slice_id)?;
            let transform = t.transform_id.as_deref().unwrap_or(BASE_TRANSFORM);
            let records = records_for(engine, &models, slice, &t.metric_id, transform)?;
            Ok(evaluate_test(t, &models, &records))
        })
        .collect()
}

pub fn report_document(
    engine: &QueryEngine,
    store: &Store,
    config: &ProjectConfig,
    key: &str,
) -> Result<ReportDocument, ProjectError> {
    let report = store.report(key)?;
    let models = config.model_ids();
    let mut records = Vec::new();
    for e in &report.entries {
        check_metric_transform(&e.metric_id, e.transform_id.as_deref(), config)
            .map_err(|m| ProjectError::Reference(format!("report `{}`: {m}", report.name)))?;
        if let Some(t) = &e.test {
            check_test(t, store, config)?;
        }
        let slice = store.slice(&e.slice_id)?;
        let transform = e.transform_id.as_deref().unwrap_or(BASE_TRANSFORM);
        records.extend(records_for(engine, &models, slice, &e.metric_id, transform)?);
    }
    Ok(render_report(report, store.slices(), &models, &records, &config.thresholds))
}
