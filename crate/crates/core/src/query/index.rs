//! Per-transform acceleration structures: histogram bucket codes for every
//! widget column and a sorted index for ordered columns.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::model::column::DType;
use crate::table::{Column, ColumnData, MetadataTable, MISSING_CODE};

pub const DEFAULT_BINS: usize = 15;
pub const MAX_CATEGORIES: usize = 30;
/// Label of the bucket collecting categories beyond the first [`MAX_CATEGORIES`].
pub const OTHER: &str = "other";

const NO_BUCKET: u8 = u8::MAX;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct IndexOptions {
    pub bins: usize,
    /// Per-column bin counts for continuous and datetime columns.
    pub bins_override: HashMap<String, usize>,
}

impl IndexOptions {
    pub fn new() -> Self {
        IndexOptions { bins: DEFAULT_BINS, bins_override: HashMap::new() }
    }

    pub fn bins_for(&self, column: &str) -> usize {
        let n = self.bins_override.get(column).copied().unwrap_or(self.bins);
        n.clamp(1, (NO_BUCKET - 1) as usize)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "layout", rename_all = "snake_case")]
pub enum Layout {
    /// `edges.len() - 1` bins; bin `i` holds `edges[i] <= x < edges[i+1]`, the
    /// last bin also holds its upper edge. Datetime edges are epoch seconds.
    Bins { edges: Vec<f64> },
    /// One bucket per category, then an [`OTHER`] bucket when `other` is set.
    Categories { categories: Vec<String>, other: bool },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramSpec {
    pub column_id: String,
    pub dtype: DType,
    #[serde(flatten)]
    pub layout: Layout,
}

impl HistogramSpec {
    /// Uniform bins over the observed range of `values` (NaN ignored).
    pub fn uniform(column_id: &str, dtype: DType, values: impl Iterator<Item = f64>, bins: usize) -> Self {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for x in values.filter(|x| !x.is_nan()) {
            lo = lo.min(x);
            hi = hi.max(x);
        }
        let edges = if lo > hi {
            Vec::new()
        } else {
            if lo == hi {
                lo -= 0.5;
                hi += 0.5;
            }
            let width = (hi - lo) / bins as f64;
            let mut edges: Vec<f64> = (0..bins).map(|i| lo + width * i as f64).collect();
            edges.push(hi);
            edges.dedup();
            edges
        };
        HistogramSpec { column_id: column_id.to_string(), dtype, layout: Layout::Bins { edges } }
    }

    /// The most frequent categories (ties broken by name), up to [`MAX_CATEGORIES`].
    pub fn top_categories(column_id: &str, dtype: DType, counts: &HashMap<String, u64>) -> Self {
        let mut ranked: Vec<(&String, &u64)> = counts.iter().filter(|(_, &c)| c > 0).collect();
        ranked.sort_by(|a, b| b.1.cmp(a.1).then_with(|| a.0.cmp(b.0)));
        let other = ranked.len() > MAX_CATEGORIES;
        let categories = ranked.into_iter().take(MAX_CATEGORIES).map(|(k, _)| k.clone()).collect();
        HistogramSpec { column_id: column_id.to_string(), dtype, layout: Layout::Categories { categories, other } }
    }

    pub fn bucket_count(&self) -> usize {
        match &self.layout {
            Layout::Bins { edges } => edges.len().saturating_sub(1),
            Layout::Categories { categories, other } => categories.len() + usize::from(*other),
        }
    }

    pub fn bin_of(&self, x: f64) -> Option<usize> {
        let Layout::Bins { edges } = &self.layout else { return None };
        if x.is_nan() || edges.len() < 2 || x < edges[0] || x > edges[edges.len() - 1] {
            return None;
        }
        let after = edges.partition_point(|&e| e <= x);
        Some((after - 1).min(edges.len() - 2))
    }

    pub fn category_of(&self, value: &str) -> Option<usize> {
        let Layout::Categories { categories, other } = &self.layout else { return None };
        match categories.iter().position(|c| c == value) {
            Some(i) => Some(i),
            None if *other => Some(categories.len()),
            None => None,
        }
    }

    pub fn bucket_labels(&self) -> Vec<String> {
        match &self.layout {
            Layout::Bins { edges } => edges.windows(2).map(|w| format!("{}..{}", w[0], w[1])).collect(),
            Layout::Categories { categories, other } => {
                let mut labels = categories.clone();
                if *other {
                    labels.push(OTHER.to_string());
                }
                labels
            }
        }
    }
}

/// Non-missing values of an ordered column sorted ascending, with their scope positions.
#[derive(Debug, Clone, Default)]
pub struct SortedIndex {
    pub values: Vec<f64>,
    pub positions: Vec<u32>,
}

impl SortedIndex {
    fn build(values: &[f64], rows: &[u32]) -> Self {
        let mut pairs: Vec<(f64, u32)> = rows
            .iter()
            .enumerate()
            .map(|(p, &r)| (values[r as usize], p as u32))
            .filter(|(x, _)| !x.is_nan())
            .collect();
        pairs.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let (values, positions) = pairs.into_iter().unzip();
        SortedIndex { values, positions }
    }

    /// Index of the first value `>= x` (`strict = false`) or `> x` (`strict = true`).
    pub fn lower(&self, x: f64, strict: bool) -> usize {
        if strict {
            self.values.partition_point(|&v| v <= x)
        } else {
            self.values.partition_point(|&v| v < x)
        }
    }
}

#[derive(Debug, Clone)]
pub struct ColumnIndex {
    pub spec: Option<HistogramSpec>,
    /// Bucket per scope position; `u8::MAX` is missing. Empty without a spec.
    pub buckets: Vec<u8>,
    pub totals: Vec<u64>,
    pub total_missing: u64,
    pub sorted: Option<SortedIndex>,
}

impl ColumnIndex {
    pub fn bucket(&self, position: usize) -> Option<usize> {
        match self.buckets.get(position) {
            Some(&b) if b != NO_BUCKET => Some(b as usize),
            _ => None,
        }
    }

    fn build(column: &Column, rows: &[u32], bins: usize) -> Self {
        let id = &column.descriptor.id;
        let dtype = column.dtype();
        let (spec, buckets) = match &column.data {
            ColumnData::Numeric(values) => {
                let spec = HistogramSpec::uniform(id, dtype, rows.iter().map(|&r| values[r as usize]), bins);
                let buckets = rows
                    .iter()
                    .map(|&r| spec.bin_of(values[r as usize]).map_or(NO_BUCKET, |b| b as u8))
                    .collect();
                (Some(spec), buckets)
            }
            ColumnData::Boolean(values) => {
                let mut counts = HashMap::new();
                for &r in rows {
                    if let Some(b) = bool_text(values[r as usize]) {
                        *counts.entry(b.to_string()).or_insert(0) += 1;
                    }
                }
                let spec = HistogramSpec::top_categories(id, dtype, &counts);
                let map: Vec<u8> = ["false", "true"]
                    .iter()
                    .map(|v| spec.category_of(v).map_or(NO_BUCKET, |b| b as u8))
                    .collect();
                let buckets = rows
                    .iter()
                    .map(|&r| map.get(values[r as usize] as usize).copied().unwrap_or(NO_BUCKET))
                    .collect();
                (Some(spec), buckets)
            }
            ColumnData::Categorical { codes, dictionary } => {
                let mut by_code = vec![0u64; dictionary.len()];
                for &r in rows {
                    let c = codes[r as usize];
                    if c != MISSING_CODE {
                        by_code[c as usize] += 1;
                    }
                }
                let counts: HashMap<String, u64> =
                    dictionary.iter().cloned().zip(by_code.iter().copied()).collect();
                let spec = HistogramSpec::top_categories(id, dtype, &counts);
                let map: Vec<u8> = dictionary
                    .iter()
                    .map(|v| spec.category_of(v).map_or(NO_BUCKET, |b| b as u8))
                    .collect();
                let buckets = rows
                    .iter()
                    .map(|&r| match codes[r as usize] {
                        MISSING_CODE => NO_BUCKET,
                        c => map[c as usize],
                    })
                    .collect();
                (Some(spec), buckets)
            }
            ColumnData::Text(_) => (None, Vec::new()),
        };
        let mut totals = vec![0u64; spec.as_ref().map_or(0, HistogramSpec::bucket_count)];
        let mut total_missing = 0;
        for &b in &buckets {
            match b {
                NO_BUCKET => total_missing += 1,
                b => totals[b as usize] += 1,
            }
        }
        if spec.is_none() {
            total_missing = rows.iter().filter(|&&r| column.data.is_missing(r as usize)).count() as u64;
        }
        let sorted = match &column.data {
            ColumnData::Numeric(values) => Some(SortedIndex::build(values, rows)),
            _ => None,
        };
        ColumnIndex { spec, buckets, totals, total_missing, sorted }
    }
}

fn bool_text(code: u8) -> Option<&'static str> {
    match code {
        0 => Some("false"),
        1 => Some("true"),
        _ => None,
    }
}

/// Index over the rows of one transform. Positions are offsets into `rows`.
#[derive(Debug)]
pub struct ScopeIndex {
    pub transform: String,
    /// Global table rows of this scope in ingest order.
    pub rows: Vec<u32>,
    pub columns: HashMap<String, ColumnIndex>,
}

impl ScopeIndex {
    pub fn build(table: &MetadataTable, transform: &str, options: &IndexOptions) -> Self {
        let rows: Vec<u32> = table.rows_in_transform(transform).into_iter().map(|r| r as u32).collect();
        let columns: Vec<&Column> = table.columns().collect();
        let built: Vec<(String, ColumnIndex)> = std::thread::scope(|s| {
            let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(columns.len().max(1));
            let chunk = columns.len().div_ceil(workers.max(1)).max(1);
            let handles: Vec<_> = columns
                .chunks(chunk)
                .map(|group| {
                    let rows = &rows;
                    s.spawn(move || {
                        group
                            .iter()
                            .map(|c| {
                                let id = c.descriptor.id.clone();
                                let index = ColumnIndex::build(c, rows, options.bins_for(&id));
                                (id, index)
                            })
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            handles.into_iter().flat_map(|h| h.join().expect("index builder panicked")).collect()
        });
        ScopeIndex { transform: transform.to_string(), rows, columns: built.into_iter().collect() }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn column(&self, id: &str) -> Option<&ColumnIndex> {
        self.columns.get(id)
    }
}
