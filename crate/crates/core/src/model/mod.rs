//! Domain types shared across the crate: column typing, predicates, slices,
//! reports, behavioral tests and metric records.

pub mod column;
pub mod datetime;
pub mod dsl;
pub mod objects;
pub mod persist;
pub mod predicate;

pub use column::{validate_identifier, ColumnDescriptor, ColumnKey, DType, Origin, BASE_TRANSFORM};
pub use dsl::{parse_predicate, DslError};
pub use objects::{BehavioralTest, Comparator, MetricRecord, Report, ReportEntry, Slice};
pub use persist::{from_canonical_json, to_canonical_json, PersistError};
pub use predicate::{CompareOp, FilterPredicate, Literal, PredicateError, Timestamp, MAX_DEPTH};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ModelError {
    #[error("invalid column id `{0}`")]
    InvalidColumnId(String),
    #[error("invalid {kind} identifier `{value}`")]
    InvalidIdentifier { kind: String, value: String },
}
