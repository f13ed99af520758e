//! Columnar instance metadata: typed columns, copy-on-write table snapshots,
//! CSV / JSON-lines ingest and the on-disk result cache.

pub mod cache;
pub mod column;
pub mod infer;
pub mod ingest;
pub mod store;
pub mod value;

use std::path::PathBuf;

pub use cache::{CacheKey, CachedValue, DiskCache, KeyParts};
pub use column::{Column, ColumnData, MISSING_CODE};
pub use infer::{infer_dtype, NOMINAL_MAX_DISTINCT};
pub use ingest::{export_csv, ingest_path, IngestOptions};
pub use store::{MetadataTable, TransformVariantRow};
pub use value::Value;

use crate::model::{DType, ModelError};

#[derive(Debug, thiserror::Error)]
pub enum TableError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("unsupported metadata format: {0} (expected .csv, .tsv, .jsonl or .ndjson)")]
    UnsupportedFormat(PathBuf),
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("metadata has no rows")]
    Empty,
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("duplicate column `{0}`")]
    DuplicateColumn(String),
    #[error("duplicate instance ids: {}", .0.join(", "))]
    DuplicateIds(Vec<String>),
    #[error("instance id missing in rows {rows:?}")]
    MissingIds { rows: Vec<usize> },
    #[error("column `{column}` has {actual} values, expected {expected}")]
    LengthMismatch { column: String, expected: usize, actual: usize },
    #[error("value `{value}` in column `{column}` is not {dtype}")]
    TypeMismatch { column: String, dtype: DType, value: String },
    #[error("column `{column}` is {existing}, cannot write {requested} values")]
    DtypeConflict { column: String, existing: DType, requested: DType },
    #[error("row {0} out of range")]
    RowOutOfRange(usize),
    #[error("transform `{transform}` refers to unknown instances: {}", .ids.join(", "))]
    UnknownParent { transform: String, ids: Vec<String> },
    #[error("invalid transform variant for instance `{0}`")]
    InvalidVariant(String),
    #[error("the base transform cannot have variants")]
    ReservedTransform,
    #[error(transparent)]
    InvalidIdentifier(#[from] ModelError),
}
