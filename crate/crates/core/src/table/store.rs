use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::model::column::{validate_identifier, ColumnDescriptor, Origin, BASE_TRANSFORM};

use super::column::{Column, ColumnData};
use super::value::Value;
use super::TableError;

static GENERATION: AtomicU64 = AtomicU64::new(1);

fn next_generation() -> u64 {
    GENERATION.fetch_add(1, Ordering::Relaxed)
}

/// A modified copy of a base instance produced by a transform.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransformVariantRow {
    pub parent_instance_id: String,
    pub transform_id: String,
    /// Path relative to the data root.
    pub data_file_reference: String,
}

/// Immutable columnar snapshot of a project's instances.
///
/// Rows are (instance, transform) pairs: base rows come first in ingest order,
/// transform variants are appended after them. Every mutation returns a new
/// snapshot that shares untouched columns with its predecessor.
#[derive(Debug, Clone)]
pub struct MetadataTable {
    columns: Vec<Arc<Column>>,
    by_id: Arc<HashMap<String, usize>>,
    files: Arc<Vec<Option<Box<str>>>>,
    parent: Arc<Vec<u32>>,
    row_transform: Arc<Vec<u16>>,
    transforms: Arc<Vec<String>>,
    base_index: Arc<HashMap<Box<str>, u32>>,
    variant_index: Arc<HashMap<(u32, u16), u32>>,
    base_row_count: usize,
    id_column: String,
    label_column: Option<String>,
    data_column: Option<String>,
    generation: u64,
}

impl MetadataTable {
    /// Builds the base table. `data_column` names the column holding instance file
    /// references; without one, instance ids double as file names.
    pub fn from_columns(
        columns: Vec<Column>,
        label_column: Option<&str>,
        data_column: Option<&str>,
    ) -> Result<Self, TableError> {
        let ids: Vec<&Column> = columns.iter().filter(|c| c.descriptor.origin == Origin::Id).collect();
        let id_col = match ids.as_slice() {
            [one] => *one,
            [] => return Err(TableError::MissingColumn("<id>".into())),
            _ => return Err(TableError::DuplicateColumn("<id>".into())),
        };
        let rows = id_col.len();
        let mut by_id = HashMap::new();
        for (i, col) in columns.iter().enumerate() {
            col.descriptor.validate().map_err(TableError::InvalidIdentifier)?;
            if col.len() != rows {
                return Err(TableError::LengthMismatch {
                    column: col.descriptor.id.clone(),
                    expected: rows,
                    actual: col.len(),
                });
            }
            if by_id.insert(col.descriptor.id.clone(), i).is_some() {
                return Err(TableError::DuplicateColumn(col.descriptor.id.clone()));
            }
        }
        for name in [label_column, data_column].into_iter().flatten() {
            if !by_id.contains_key(name) {
                return Err(TableError::MissingColumn(name.to_string()));
            }
        }

        let mut base_index = HashMap::with_capacity(rows);
        let mut duplicates = Vec::new();
        let mut missing = Vec::new();
        for row in 0..rows {
            match id_col.data.text(row) {
                None => missing.push(row),
                Some(id) => {
                    if base_index.insert(Box::<str>::from(id), row as u32).is_some()
                        && !duplicates.iter().any(|d: &String| d == id)
                    {
                        duplicates.push(id.to_string());
                    }
                }
            }
        }
        if !missing.is_empty() {
            return Err(TableError::MissingIds { rows: missing });
        }
        if !duplicates.is_empty() {
            return Err(TableError::DuplicateIds(duplicates));
        }

        let file_source = data_column.map_or(id_col, |d| &columns[by_id[d]]);
        let files = (0..rows).map(|r| file_source.cell(r)).map(|v| match v {
            Value::Missing => None,
            v => Some(v.to_string().into_boxed_str()),
        });

        Ok(MetadataTable {
            files: Arc::new(files.collect()),
            parent: Arc::new((0..rows as u32).collect()),
            row_transform: Arc::new(vec![0; rows]),
            transforms: Arc::new(vec![BASE_TRANSFORM.to_string()]),
            base_index: Arc::new(base_index),
            variant_index: Arc::new(HashMap::new()),
            base_row_count: rows,
            id_column: id_col.descriptor.id.clone(),
            label_column: label_column.map(str::to_string),
            data_column: data_column.map(str::to_string),
            columns: columns.into_iter().map(Arc::new).collect(),
            by_id: Arc::new(by_id),
            generation: next_generation(),
        })
    }

    pub fn schema(&self) -> Vec<ColumnDescriptor> {
        self.columns.iter().map(|c| c.descriptor.clone()).collect()
    }

    pub fn columns(&self) -> impl Iterator<Item = &Column> {
        self.columns.iter().map(|c| c.as_ref())
    }

    pub fn column(&self, id: &str) -> Option<&Column> {
        self.by_id.get(id).map(|&i| self.columns[i].as_ref())
    }

    pub fn has_column(&self, id: &str) -> bool {
        self.by_id.contains_key(id)
    }

    pub fn row_count(&self) -> usize {
        self.parent.len()
    }

    pub fn base_row_count(&self) -> usize {
        self.base_row_count
    }

    /// Changes whenever a new snapshot is derived.
    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn id_column(&self) -> &str {
        &self.id_column
    }

    pub fn label_column(&self) -> Option<&str> {
        self.label_column.as_deref()
    }

    pub fn data_column(&self) -> Option<&str> {
        self.data_column.as_deref()
    }

    pub fn instance_id(&self, row: usize) -> &str {
        let id_col = &self.columns[self.by_id[&self.id_column]];
        id_col.data.text(self.parent[row] as usize).unwrap_or_default()
    }

    pub fn parent_row(&self, row: usize) -> usize {
        self.parent[row] as usize
    }

    pub fn transform_of(&self, row: usize) -> &str {
        &self.transforms[self.row_transform[row] as usize]
    }

    pub fn data_file(&self, row: usize) -> Option<&str> {
        self.files[row].as_deref()
    }

    /// Transform ids present in the table, the base transform first.
    pub fn transforms(&self) -> &[String] {
        &self.transforms
    }

    pub fn transform_code(&self, transform: &str) -> Option<u16> {
        self.transforms.iter().position(|t| t == transform).map(|i| i as u16)
    }

    /// Per-row transform codes, indexes into [`MetadataTable::transforms`].
    pub fn row_transform_codes(&self) -> &[u16] {
        &self.row_transform
    }

    pub fn row_of(&self, instance_id: &str, transform: &str) -> Option<usize> {
        let base = *self.base_index.get(instance_id)?;
        match self.transform_code(transform)? {
            0 => Some(base as usize),
            code => self.variant_index.get(&(base, code)).map(|&r| r as usize),
        }
    }

    /// Rows belonging to `transform`, in ingest order. Unknown transforms have no rows.
    pub fn rows_in_transform(&self, transform: &str) -> Vec<usize> {
        match self.transform_code(transform) {
            Some(0) => (0..self.base_row_count).collect(),
            Some(code) => (self.base_row_count..self.row_count())
                .filter(|&r| self.row_transform[r] == code)
                .collect(),
            None => Vec::new(),
        }
    }

    pub fn cell(&self, column: &str, row: usize) -> Option<Value> {
        self.column(column).map(|c| c.cell(row))
    }

    fn derive(&self) -> Self {
        let mut next = self.clone();
        next.generation = next_generation();
        next
    }

    /// Adds a new full-length column.
    pub fn attach_column(&self, descriptor: ColumnDescriptor, values: Vec<Value>) -> Result<Self, TableError> {
        if self.has_column(&descriptor.id) {
            return Err(TableError::DuplicateColumn(descriptor.id));
        }
        if values.len() != self.row_count() {
            return Err(TableError::LengthMismatch {
                column: descriptor.id,
                expected: self.row_count(),
                actual: values.len(),
            });
        }
        descriptor.validate().map_err(TableError::InvalidIdentifier)?;
        let column = Column::from_values(descriptor, values)?;
        let mut next = self.derive();
        let mut by_id = (*next.by_id).clone();
        by_id.insert(column.descriptor.id.clone(), next.columns.len());
        next.by_id = Arc::new(by_id);
        next.columns.push(Arc::new(column));
        Ok(next)
    }

    /// Writes `values` into `rows` of a column, creating it (all missing) if absent.
    pub fn set_cells(
        &self,
        descriptor: &ColumnDescriptor,
        rows: &[usize],
        values: Vec<Value>,
    ) -> Result<Self, TableError> {
        if rows.len() != values.len() {
            return Err(TableError::LengthMismatch {
                column: descriptor.id.clone(),
                expected: rows.len(),
                actual: values.len(),
            });
        }
        if let Some(&bad) = rows.iter().find(|&&r| r >= self.row_count()) {
            return Err(TableError::RowOutOfRange(bad));
        }
        let mut next = self.derive();
        match self.by_id.get(&descriptor.id) {
            Some(&i) => {
                let existing = &self.columns[i];
                if existing.dtype() != descriptor.dtype {
                    return Err(TableError::DtypeConflict {
                        column: descriptor.id.clone(),
                        existing: existing.dtype(),
                        requested: descriptor.dtype,
                    });
                }
                let mut column = (**existing).clone();
                column.set_rows(rows, values)?;
                next.columns[i] = Arc::new(column);
            }
            None => {
                descriptor.validate().map_err(TableError::InvalidIdentifier)?;
                let mut column = Column {
                    descriptor: descriptor.clone(),
                    data: ColumnData::missing(descriptor.dtype, self.row_count()),
                };
                column.set_rows(rows, values)?;
                let mut by_id = (*next.by_id).clone();
                by_id.insert(descriptor.id.clone(), next.columns.len());
                next.by_id = Arc::new(by_id);
                next.columns.push(Arc::new(column));
            }
        }
        Ok(next)
    }

    /// Appends transform variants of base instances. Raw, label and id columns are
    /// copied from the parent; model-scoped and distill columns start missing.
    /// Re-adding an existing (parent, transform) pair is a no-op.
    pub fn add_transform_variants(
        &self,
        transform_id: &str,
        rows: &[TransformVariantRow],
    ) -> Result<Self, TableError> {
        validate_identifier("transform", transform_id).map_err(TableError::InvalidIdentifier)?;
        if transform_id == BASE_TRANSFORM {
            return Err(TableError::ReservedTransform);
        }
        let unknown: Vec<String> = rows
            .iter()
            .filter(|r| !self.base_index.contains_key(r.parent_instance_id.as_str()))
            .map(|r| r.parent_instance_id.clone())
            .collect();
        if !unknown.is_empty() {
            return Err(TableError::UnknownParent { transform: transform_id.to_string(), ids: unknown });
        }
        if let Some(r) = rows.iter().find(|r| r.transform_id != transform_id || r.data_file_reference.is_empty()) {
            return Err(TableError::InvalidVariant(r.parent_instance_id.clone()));
        }

        let mut next = self.derive();
        let mut transforms = (*self.transforms).clone();
        let code = match transforms.iter().position(|t| t == transform_id) {
            Some(i) => i as u16,
            None => {
                transforms.push(transform_id.to_string());
                (transforms.len() - 1) as u16
            }
        };
        next.transforms = Arc::new(transforms);

        let mut fresh: Vec<(u32, &TransformVariantRow)> = Vec::new();
        for r in rows {
            let base = self.base_index[r.parent_instance_id.as_str()];
            if !self.variant_index.contains_key(&(base, code)) && !fresh.iter().any(|(b, _)| *b == base) {
                fresh.push((base, r));
            }
        }
        if fresh.is_empty() {
            return Ok(next);
        }

        let mut parent = (*self.parent).clone();
        let mut row_transform = (*self.row_transform).clone();
        let mut files = (*self.files).clone();
        let mut variant_index = (*self.variant_index).clone();
        for (base, r) in &fresh {
            variant_index.insert((*base, code), parent.len() as u32);
            parent.push(*base);
            row_transform.push(code);
            files.push(Some(r.data_file_reference.clone().into_boxed_str()));
        }
        for col in next.columns.iter_mut() {
            let mut column = (**col).clone();
            match column.descriptor.origin {
                Origin::Raw | Origin::Label | Origin::Id => {
                    for (base, _) in &fresh {
                        column.data.push_copy_of(*base as usize);
                    }
                }
                Origin::Distill | Origin::Output => column.data.push_missing(fresh.len()),
            }
            *col = Arc::new(column);
        }
        next.parent = Arc::new(parent);
        next.row_transform = Arc::new(row_transform);
        next.files = Arc::new(files);
        next.variant_index = Arc::new(variant_index);
        Ok(next)
    }
}
