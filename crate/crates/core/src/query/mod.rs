//! Predicate evaluation, cross-filtered histograms, instance paging and slice
//! metrics over one table snapshot.
//!
//! Every query is scoped to a single transform (`none` for the original
//! instances). Model-scoped columns named in predicates and metrics are read for
//! the active model and the query's transform.

pub mod eval;
pub mod index;
pub mod metric;
pub mod state;

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex};

use fixedbitset::FixedBitSet;
use serde::{Deserialize, Serialize};

use crate::model::column::{ColumnKey, Origin};
use crate::model::objects::{now, MetricRecord, Slice};
use crate::model::predicate::{FilterPredicate, PredicateError};
use crate::table::{MetadataTable, Value};

pub use eval::rescope;
pub use index::{HistogramSpec, IndexOptions, Layout, ScopeIndex, DEFAULT_BINS, MAX_CATEGORIES, OTHER};
pub use metric::{slice_fingerprint, MetricCatalog, MetricDef, PluginMetrics};
pub use state::{CrossFilterState, Selection};

/// Largest page [`QueryEngine::page_instances`] returns.
pub const MAX_PAGE: usize = 500;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum QueryError {
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("unknown transform `{0}`")]
    UnknownTransform(String),
    #[error("unknown metric `{0}`")]
    UnknownMetric(String),
    #[error("invalid predicate: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    InvalidPredicate(Vec<PredicateError>),
    #[error("invalid selection on `{column}`: {message}")]
    InvalidSelection { column: String, message: String },
    #[error("page limit {0} exceeds {MAX_PAGE}")]
    LimitTooLarge(usize),
    #[error("outputs of model `{model}` for transform `{transform}` are not yet processed")]
    NotProcessed { model: String, transform: String },
    #[error("this metric needs a model")]
    ModelRequired,
    #[error("the project has no label column")]
    NoLabelColumn,
    #[error("{0}")]
    Metric(String),
    #[error("internal query error: {0}")]
    Internal(String),
}

/// Bucket counts of one widget column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnHistogram {
    pub spec: HistogramSpec,
    pub total: Vec<u64>,
    pub filtered: Vec<u64>,
    pub total_missing: u64,
    pub filtered_missing: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histograms {
    pub transform_id: String,
    pub total_rows: u64,
    pub filtered_rows: u64,
    /// Keyed by column id. String columns have no histogram.
    pub columns: BTreeMap<String, ColumnHistogram>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InstanceRecord {
    pub id: String,
    /// Data file reference relative to the data root.
    pub file: Option<String>,
    pub label: Value,
    /// Output of the active model; absent when no model is selected.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output: Option<Value>,
    pub values: BTreeMap<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InstancePage {
    /// Size of the filtered set.
    pub total: usize,
    pub offset: usize,
    pub limit: usize,
    pub instances: Vec<InstanceRecord>,
}

type MetricKey = (String, Option<String>, String, String);

/// Query entry point for one immutable table snapshot. Indexes are built per
/// transform on first use.
#[derive(Debug)]
pub struct QueryEngine {
    table: MetadataTable,
    options: IndexOptions,
    scopes: Mutex<HashMap<String, Arc<ScopeIndex>>>,
    metrics: MetricCatalog,
    plugins: Option<Arc<PluginMetrics>>,
    metric_cache: Mutex<HashMap<MetricKey, (Option<f64>, u64, chrono::DateTime<chrono::Utc>)>>,
}

impl QueryEngine {
    pub fn new(table: MetadataTable) -> Self {
        Self::with_options(table, IndexOptions::new())
    }

    pub fn with_options(table: MetadataTable, options: IndexOptions) -> Self {
        QueryEngine {
            table,
            options,
            scopes: Mutex::new(HashMap::new()),
            metrics: MetricCatalog::default(),
            plugins: None,
            metric_cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn with_metrics(mut self, metrics: MetricCatalog, plugins: Option<Arc<PluginMetrics>>) -> Self {
        self.metrics = metrics;
        self.plugins = plugins;
        self
    }

    pub fn table(&self) -> &MetadataTable {
        &self.table
    }

    pub fn metrics(&self) -> &MetricCatalog {
        &self.metrics
    }

    /// The index for `transform`, built if needed.
    pub fn scope(&self, transform: &str) -> Result<Arc<ScopeIndex>, QueryError> {
        if self.table.transform_code(transform).is_none() {
            return Err(QueryError::UnknownTransform(transform.to_string()));
        }
        let mut scopes = self.scopes.lock().unwrap_or_else(|e| e.into_inner());
        let index = scopes
            .entry(transform.to_string())
            .or_insert_with(|| Arc::new(ScopeIndex::build(&self.table, transform, &self.options)));
        Ok(Arc::clone(index))
    }

    fn mask(&self, scope: &ScopeIndex, predicate: &FilterPredicate, model: Option<&str>) -> Result<FixedBitSet, QueryError> {
        predicate.validate(&self.table.schema()).map_err(QueryError::InvalidPredicate)?;
        eval::Evaluator { table: &self.table, scope, model }.eval(predicate)
    }

    /// Rows of `transform` satisfying `predicate`, in ingest order.
    pub fn filter_rows(&self, predicate: &FilterPredicate, transform: &str) -> Result<Vec<usize>, QueryError> {
        self.filter_rows_for(predicate, transform, None)
    }

    /// Like [`QueryEngine::filter_rows`], reading model-scoped columns for `model`.
    pub fn filter_rows_for(
        &self,
        predicate: &FilterPredicate,
        transform: &str,
        model: Option<&str>,
    ) -> Result<Vec<usize>, QueryError> {
        let scope = self.scope(transform)?;
        let mask = self.mask(&scope, predicate, model)?;
        Ok(mask.ones().map(|p| scope.rows[p] as usize).collect())
    }

    /// Columns with a widget under `state`: everything but ids, restricted to the
    /// state's transform and model.
    fn widget_columns(&self, state: &CrossFilterState) -> Vec<String> {
        self.table
            .columns()
            .map(|c| &c.descriptor)
            .filter(|d| d.origin != Origin::Id)
            .filter(|d| d.transform_scope.as_deref().is_none_or(|t| t == state.transform_id))
            .filter(|d| d.model_scope.is_none() || d.model_scope == state.model_id)
            .map(|d| d.id.clone())
            .collect()
    }

    /// Total and cross-filtered bucket counts for every widget column.
    pub fn histograms(&self, state: &CrossFilterState) -> Result<Histograms, QueryError> {
        let predicate = state.predicate(&self.table.schema())?;
        let scope = self.scope(&state.transform_id)?;
        let unfiltered = predicate == FilterPredicate::All;
        let positions: Vec<u32> = if unfiltered {
            Vec::new()
        } else {
            self.mask(&scope, &predicate, state.model_id.as_deref())?.ones().map(|p| p as u32).collect()
        };
        let filtered_rows = if unfiltered { scope.len() } else { positions.len() } as u64;
        let mut columns = BTreeMap::new();
        for id in self.widget_columns(state) {
            let Some(index) = scope.column(&id) else { continue };
            let Some(spec) = &index.spec else { continue };
            let (filtered, filtered_missing) = if unfiltered {
                (index.totals.clone(), index.total_missing)
            } else {
                let mut counts = vec![0u64; index.totals.len()];
                let mut missing = 0u64;
                for &p in &positions {
                    match index.buckets[p as usize] {
                        u8::MAX => missing += 1,
                        b => counts[b as usize] += 1,
                    }
                }
                (counts, missing)
            };
            columns.insert(
                id,
                ColumnHistogram {
                    spec: spec.clone(),
                    total: index.totals.clone(),
                    filtered,
                    total_missing: index.total_missing,
                    filtered_missing,
                },
            );
        }
        Ok(Histograms { transform_id: state.transform_id.clone(), total_rows: scope.len() as u64, filtered_rows, columns })
    }

    /// One page of the filtered instances.
    pub fn page_instances(&self, state: &CrossFilterState, offset: usize, limit: usize) -> Result<InstancePage, QueryError> {
        if limit > MAX_PAGE {
            return Err(QueryError::LimitTooLarge(limit));
        }
        let predicate = state.predicate(&self.table.schema())?;
        let rows = self.filter_rows_for(&predicate, &state.transform_id, state.model_id.as_deref())?;
        let label = self.table.label_column().and_then(|l| self.table.column(l));
        let output = state
            .model_id
            .as_ref()
            .map(|m| self.table.column(&ColumnKey::output(m.as_str(), state.transform_id.as_str()).to_id()));
        let value_columns: Vec<_> = self
            .table
            .columns()
            .filter(|c| {
                let d = &c.descriptor;
                !matches!(d.origin, Origin::Output | Origin::Id | Origin::Label)
                    && d.transform_scope.as_deref().is_none_or(|t| t == state.transform_id)
            })
            .collect();
        let instances = rows
            .iter()
            .skip(offset)
            .take(limit)
            .map(|&r| InstanceRecord {
                id: self.table.instance_id(r).to_string(),
                file: self.table.data_file(r).map(str::to_string),
                label: label.map_or(Value::Missing, |c| c.cell(r)),
                output: output.map(|c| c.map_or(Value::Missing, |c| c.cell(r))),
                values: value_columns.iter().map(|c| (c.descriptor.id.clone(), c.cell(r))).collect(),
            })
            .collect();
        Ok(InstancePage { total: rows.len(), offset, limit, instances })
    }

    /// Metric over a saved slice.
    pub fn slice_metric(&self, slice: &Slice, model: &str, transform: &str, metric: &str) -> Result<MetricRecord, QueryError> {
        self.metric(&slice.slice_id, &slice.predicate, Some(model), transform, metric)
    }

    /// Metric over the rows of `transform` matching `predicate`. Results are
    /// cached per (predicate, model, transform, metric) for this snapshot.
    pub fn metric(
        &self,
        slice_id: &str,
        predicate: &FilterPredicate,
        model: Option<&str>,
        transform: &str,
        metric: &str,
    ) -> Result<MetricRecord, QueryError> {
        let def = self.metrics.get(metric).ok_or_else(|| QueryError::UnknownMetric(metric.to_string()))?;
        let key: MetricKey = (predicate.to_string(), model.map(str::to_string), transform.to_string(), metric.to_string());
        let cached = self.metric_cache.lock().unwrap_or_else(|e| e.into_inner()).get(&key).cloned();
        let (value, n, computed_at) = match cached {
            Some(hit) => hit,
            None => {
                let rows = self.filter_rows_for(predicate, transform, model)?;
                let (value, n) = match def {
                    MetricDef::Plugin { function } => {
                        let model = model.ok_or(QueryError::ModelRequired)?;
                        if !self.table.has_column(&ColumnKey::output(model, transform).to_id()) {
                            return Err(QueryError::NotProcessed { model: model.into(), transform: transform.into() });
                        }
                        let plugins = self
                            .plugins
                            .as_ref()
                            .ok_or_else(|| QueryError::Metric(format!("no plugins to run metric `{function}`")))?;
                        let value = if rows.is_empty() {
                            None
                        } else {
                            plugins.evaluate(function, &self.table, &rows, model, transform)?
                        };
                        (value, rows.len() as u64)
                    }
                    def => metric::builtin(def, &self.table, &rows, model, transform)?,
                };
                let entry = (value, n, now());
                self.metric_cache.lock().unwrap_or_else(|e| e.into_inner()).insert(key, entry);
                entry
            }
        };
        Ok(MetricRecord {
            slice_id: slice_id.to_string(),
            model_id: model.unwrap_or_default().to_string(),
            transform_id: transform.to_string(),
            metric_id: metric.to_string(),
            value,
            n,
            computed_at,
        })
    }
}

/// Rows of `transform` satisfying `predicate`, in ingest order.
pub fn filter_rows(table: &MetadataTable, predicate: &FilterPredicate, transform: &str) -> Result<Vec<usize>, QueryError> {
    QueryEngine::new(table.clone()).filter_rows(predicate, transform)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::column::{ColumnDescriptor, DType};
    use crate::model::dsl::parse_predicate;
    use crate::table::{ingest::ingest_delimited, IngestOptions};

    const FIXTURE: &str = "id,label,amplitude,loud\na1,dog,0.01,true\na2,cat,0.05,false\na3,dog,0.10,true\na4,cat,0.20,\n";

    fn engine() -> QueryEngine {
        let t = ingest_delimited(FIXTURE.as_bytes(), b',', &IngestOptions::new("id").label("label")).unwrap();
        let out = ColumnDescriptor::new(&ColumnKey::output("m1", "none"), DType::Nominal);
        let t = t
            .attach_column(out, ["dog", "dog", "dog", "dog"].iter().map(|s| Value::Text(s.to_string())).collect())
            .unwrap();
        QueryEngine::new(t)
    }

    fn p(engine: &QueryEngine, text: &str) -> FilterPredicate {
        parse_predicate(text, &engine.table().schema()).unwrap()
    }

    #[test]
    fn range_predicate() {
        let e = engine();
        assert_eq!(e.filter_rows(&p(&e, "0.04 < amplitude < 0.12"), "none").unwrap(), vec![1, 2]);
        assert_eq!(e.filter_rows(&FilterPredicate::All, "none").unwrap(), vec![0, 1, 2, 3]);
        assert_eq!(e.filter_rows(&p(&e, "loud is missing"), "none").unwrap(), vec![3]);
        assert_eq!(e.filter_rows(&p(&e, "loud != true"), "none").unwrap(), vec![1]);
        assert!(matches!(e.filter_rows(&FilterPredicate::All, "nope"), Err(QueryError::UnknownTransform(_))));
    }

    #[test]
    fn histogram_counts() {
        let e = engine();
        let state = CrossFilterState::new().select("raw::amplitude", Selection::Range { min: 0.04, max: 0.12 });
        let h = e.histograms(&state).unwrap();
        assert_eq!(h.filtered_rows, 2);
        let label = &h.columns["label::label"];
        assert_eq!(label.spec.bucket_labels(), vec!["cat", "dog"]);
        assert_eq!(label.total, vec![2, 2]);
        assert_eq!(label.filtered, vec![1, 1]);
        let loud = &h.columns["raw::loud"];
        assert_eq!((loud.total_missing, loud.filtered_missing), (1, 0));
        let plain = e.histograms(&CrossFilterState::new()).unwrap();
        assert!(plain.columns.values().all(|c| c.total == c.filtered));
    }

    #[test]
    fn paging() {
        let e = engine();
        let state = CrossFilterState::new().model("m1");
        let page = e.page_instances(&state, 2, 10).unwrap();
        assert_eq!(page.total, 4);
        assert_eq!(page.instances.iter().map(|i| i.id.as_str()).collect::<Vec<_>>(), vec!["a3", "a4"]);
        assert_eq!(page.instances[0].output, Some(Value::Text("dog".into())));
        assert!(e.page_instances(&state, 9, 10).unwrap().instances.is_empty());
        assert_eq!(e.page_instances(&state, 0, 501), Err(QueryError::LimitTooLarge(501)));
    }

    #[test]
    fn accuracy_and_errors() {
        let e = engine();
        let r = e.metric("s", &FilterPredicate::All, Some("m1"), "none", "accuracy").unwrap();
        assert_eq!((r.value, r.n), (Some(0.5), 4));
        let empty = e.metric("s", &p(&e, "amplitude > 5"), Some("m1"), "none", "accuracy").unwrap();
        assert_eq!((empty.value, empty.n), (None, 0));
        assert!(matches!(
            e.metric("s", &FilterPredicate::All, Some("m2"), "none", "accuracy"),
            Err(QueryError::NotProcessed { .. })
        ));
        assert!(matches!(e.metric("s", &FilterPredicate::All, Some("m1"), "none", "f1"), Err(QueryError::UnknownMetric(_))));
    }
}
