//! Project configuration file.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::Deserialize;

use crate::analysis::Thresholds;
use crate::pipeline::{ModelSpec, PluginCommand, DEFAULT_TIMEOUT};
use crate::query::{IndexOptions, MetricCatalog, MetricDef, DEFAULT_BINS};

pub const DEFAULT_PORT: u16 = 8000;
pub const DEFAULT_HOST: &str = "127.0.0.1";
pub const DEFAULT_CACHE_DIR: &str = ".cache";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("missing required key `{0}`")]
    MissingKey(&'static str),
    #[error("`{key}` points to {path}, which does not exist")]
    BadPath { key: &'static str, path: PathBuf },
    #[error("duplicate model id `{0}`")]
    DuplicateModel(String),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    metadata: Option<PathBuf>,
    data_root: Option<PathBuf>,
    id_column: Option<String>,
    label_column: Option<String>,
    data_file_column: Option<String>,
    view: Option<String>,
    #[serde(default)]
    models: Vec<RawModel>,
    #[serde(default)]
    plugins: Vec<RawPlugin>,
    #[serde(default)]
    metrics: Vec<RawMetric>,
    #[serde(default)]
    transforms: Vec<String>,
    cache_dir: Option<PathBuf>,
    host: Option<String>,
    port: Option<u16>,
    workers: Option<usize>,
    plugin_timeout_secs: Option<u64>,
    bins: Option<usize>,
    #[serde(default)]
    column_bins: BTreeMap<String, usize>,
    #[serde(default)]
    thresholds: RawThresholds,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    id: Option<String>,
    plugin: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPlugin {
    command: Vec<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMetric {
    id: String,
    builtin: Option<String>,
    plugin: Option<String>,
    column: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawThresholds {
    decline: Option<f64>,
    variance: Option<f64>,
}

/// A validated project. Relative paths are resolved against the directory of
/// the config file.
#[derive(Debug, Clone)]
pub struct ProjectConfig {
    pub path: PathBuf,
    pub root: PathBuf,
    pub metadata: PathBuf,
    pub data_root: PathBuf,
    pub id_column: String,
    pub label_column: String,
    pub data_file_column: Option<String>,
    pub view: String,
    /// In version order; the last one is the latest.
    pub models: Vec<ModelSpec>,
    pub plugins: Vec<PluginCommand>,
    pub metrics: MetricCatalog,
    pub transforms: Vec<String>,
    pub cache_dir: PathBuf,
    pub host: String,
    pub port: u16,
    pub workers: usize,
    pub plugin_timeout: Duration,
    pub index: IndexOptions,
    pub thresholds: Thresholds,
}

impl ProjectConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })?;
        let root = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new(".")).to_path_buf();
        Self::parse(&text, path, &root)
    }

    /// Validates `text` as if it were read from `path` inside `root`.
    pub fn parse(text: &str, path: &Path, root: &Path) -> Result<Self, ConfigError> {
        let raw: RawConfig =
            toml::from_str(text).map_err(|e| ConfigError::Parse { path: path.to_path_buf(), message: e.to_string() })?;
        let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { root.join(p) };
        let existing = |key: &'static str, p: Option<PathBuf>| -> Result<PathBuf, ConfigError> {
            let p = resolve(&p.ok_or(ConfigError::MissingKey(key))?);
            if p.exists() {
                Ok(p)
            } else {
                Err(ConfigError::BadPath { key, path: p })
            }
        };
        let metadata = existing("metadata", raw.metadata)?;
        let data_root = existing("data_root", raw.data_root)?;
        let id_column = raw.id_column.ok_or(ConfigError::MissingKey("id_column"))?;
        let label_column = raw.label_column.ok_or(ConfigError::MissingKey("label_column"))?;
        let view = raw.view.ok_or(ConfigError::MissingKey("view"))?;
        if raw.models.is_empty() {
            return Err(ConfigError::MissingKey("models"));
        }
        let mut seen = HashSet::new();
        let mut models = Vec::new();
        for m in raw.models {
            let id = m.id.ok_or(ConfigError::MissingKey("models.id"))?;
            let function = m.plugin.ok_or(ConfigError::MissingKey("models.plugin"))?;
            if !seen.insert(id.clone()) {
                return Err(ConfigError::DuplicateModel(id));
            }
            models.push(ModelSpec::new(id, function));
        }
        let plugins = raw
            .plugins
            .into_iter()
            .map(|p| {
                if p.command.is_empty() {
                    return Err(ConfigError::Invalid("plugin command must not be empty".into()));
                }
                Ok(PluginCommand { argv: p.command, cwd: Some(root.to_path_buf()) })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let metrics = metric_catalog(raw.metrics)?;
        let mut transforms_seen = HashSet::new();
        for t in &raw.transforms {
            if !transforms_seen.insert(t) {
                return Err(ConfigError::Invalid(format!("transform `{t}` listed twice")));
            }
        }
        let thresholds = Thresholds {
            decline: raw.thresholds.decline.unwrap_or(Thresholds::default().decline),
            variance: raw.thresholds.variance.unwrap_or(Thresholds::default().variance),
        };
        if !(thresholds.decline.is_finite() && thresholds.variance.is_finite()) {
            return Err(ConfigError::Invalid("thresholds must be finite".into()));
        }
        let bins = raw.bins.unwrap_or(DEFAULT_BINS);
        if bins == 0 || raw.column_bins.values().any(|&b| b == 0) {
            return Err(ConfigError::Invalid("bin counts must be positive".into()));
        }
        Ok(ProjectConfig {
            path: path.to_path_buf(),
            root: root.to_path_buf(),
            metadata,
            data_root,
            id_column,
            label_column,
            data_file_column: raw.data_file_column,
            view,
            models,
            plugins,
            metrics,
            transforms: raw.transforms,
            cache_dir: resolve(&raw.cache_dir.unwrap_or_else(|| DEFAULT_CACHE_DIR.into())),
            host: raw.host.unwrap_or_else(|| DEFAULT_HOST.to_string()),
            port: raw.port.unwrap_or(DEFAULT_PORT),
            workers: raw.workers.unwrap_or_else(|| std::thread::available_parallelism().map_or(4, |n| n.get())).max(1),
            plugin_timeout: raw.plugin_timeout_secs.map_or(DEFAULT_TIMEOUT, Duration::from_secs),
            index: IndexOptions { bins, bins_override: raw.column_bins.into_iter().collect() },
            thresholds,
        })
    }

    pub fn model_ids(&self) -> Vec<String> {
        self.models.iter().map(|m| m.id.clone()).collect()
    }

    /// Where slices, folders, reports and tests are kept.
    pub fn state_dir(&self) -> &Path {
        &self.root
    }
}

fn metric_catalog(raw: Vec<RawMetric>) -> Result<MetricCatalog, ConfigError> {
    if raw.is_empty() {
        return Ok(MetricCatalog::default());
    }
    let mut catalog = MetricCatalog::empty();
    let mut seen = HashSet::new();
    for m in raw {
        if !seen.insert(m.id.clone()) {
            return Err(ConfigError::Invalid(format!("metric `{}` listed twice", m.id)));
        }
        let def = match (m.builtin.as_deref(), m.plugin) {
            (Some("accuracy"), None) => MetricDef::Accuracy,
            (Some("error_rate"), None) => MetricDef::ErrorRate,
            (Some("mean"), None) => MetricDef::Mean {
                column: m.column.ok_or(ConfigError::MissingKey("metrics.column"))?,
            },
            (Some(other), None) => return Err(ConfigError::Invalid(format!("unknown built-in metric `{other}`"))),
            (None, Some(function)) => MetricDef::Plugin { function },
            (Some(_), Some(_)) => {
                return Err(ConfigError::Invalid(format!("metric `{}` sets both `builtin` and `plugin`", m.id)))
            }
            (None, None) => return Err(ConfigError::MissingKey("metrics.builtin")),
        };
        catalog.insert(m.id, def);
    }
    Ok(catalog)
}
