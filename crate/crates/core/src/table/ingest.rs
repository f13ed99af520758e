use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::model::column::{ColumnDescriptor, ColumnKey, DType, Origin};

use super::column::Column;
use super::infer::infer_dtype;
use super::store::MetadataTable;
use super::value::Value;
use super::TableError;

/// Which metadata fields play special roles. Names are as they appear in the file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IngestOptions {
    pub id_column: String,
    pub label_column: Option<String>,
    pub data_file_column: Option<String>,
}

impl IngestOptions {
    pub fn new(id_column: impl Into<String>) -> Self {
        IngestOptions { id_column: id_column.into(), label_column: None, data_file_column: None }
    }

    pub fn label(mut self, name: impl Into<String>) -> Self {
        self.label_column = Some(name.into());
        self
    }

    pub fn data_file(mut self, name: impl Into<String>) -> Self {
        self.data_file_column = Some(name.into());
        self
    }

    fn key_for(&self, name: &str) -> ColumnKey {
        if name == self.id_column {
            ColumnKey::id(name)
        } else if self.label_column.as_deref() == Some(name) {
            ColumnKey::label(name)
        } else {
            ColumnKey::raw(name)
        }
    }
}

/// Reads a metadata file, choosing the format by extension.
pub fn ingest_path(path: &Path, options: &IngestOptions) -> Result<MetadataTable, TableError> {
    let io_err = |source| TableError::Io { path: path.to_path_buf(), source };
    let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
    let file = File::open(path).map_err(io_err)?;
    match ext.as_deref() {
        Some("csv") => ingest_delimited(file, b',', options),
        Some("tsv") => ingest_delimited(file, b'\t', options),
        Some("jsonl" | "ndjson") => ingest_jsonl(BufReader::new(file), options),
        _ => Err(TableError::UnsupportedFormat(path.to_path_buf())),
    }
}

pub fn ingest_delimited<R: Read>(reader: R, delimiter: u8, options: &IngestOptions) -> Result<MetadataTable, TableError> {
    let mut rdr = csv::ReaderBuilder::new().delimiter(delimiter).from_reader(reader);
    let parse_err = |e: csv::Error| TableError::Parse {
        line: e.position().map_or(0, |p| p.line()),
        message: e.to_string(),
    };
    let headers: Vec<String> = rdr.headers().map_err(parse_err)?.iter().map(str::to_string).collect();
    let records = rdr.into_records().collect::<Result<Vec<_>, _>>().map_err(parse_err)?;
    if records.is_empty() {
        return Err(TableError::Empty);
    }
    check_headers(&headers, options)?;

    let columns: Result<Vec<Column>, TableError> = std::thread::scope(|scope| {
        let handles: Vec<_> = headers
            .iter()
            .enumerate()
            .map(|(i, name)| {
                let records = &records;
                scope.spawn(move || {
                    let cells: Vec<&str> = records.iter().map(|r| r.get(i).unwrap_or("")).collect();
                    let key = options.key_for(name);
                    let dtype = if key.origin == Origin::Id { DType::String } else { infer_dtype(&cells) };
                    Column::from_strs(ColumnDescriptor::new(&key, dtype), &cells)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("column parser panicked")).collect()
    });
    build(columns?, options)
}

pub fn ingest_jsonl<R: BufRead>(reader: R, options: &IngestOptions) -> Result<MetadataTable, TableError> {
    let mut names: Vec<String> = Vec::new();
    let mut positions: HashMap<String, usize> = HashMap::new();
    let mut cells: Vec<Vec<Value>> = Vec::new();
    let mut rows = 0usize;
    for (i, line) in reader.lines().enumerate() {
        let line_no = i as u64 + 1;
        let line = line.map_err(|e| TableError::Parse { line: line_no, message: e.to_string() })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: serde_json::Map<String, serde_json::Value> = serde_json::from_str(&line)
            .map_err(|e| TableError::Parse { line: line_no, message: e.to_string() })?;
        for (key, value) in record {
            let col = *positions.entry(key.clone()).or_insert_with(|| {
                names.push(key);
                cells.push(vec![Value::Missing; rows]);
                cells.len() - 1
            });
            cells[col].push(Value::from_json(&value));
        }
        rows += 1;
        for col in cells.iter_mut() {
            col.resize(rows, Value::Missing);
        }
    }
    if rows == 0 {
        return Err(TableError::Empty);
    }
    check_headers(&names, options)?;
    let mut columns = Vec::with_capacity(names.len());
    for (name, mut values) in names.iter().zip(cells) {
        let key = options.key_for(name);
        let dtype = if key.origin == Origin::Id {
            for v in values.iter_mut().filter(|v| !v.is_missing()) {
                *v = Value::Text(v.to_string());
            }
            DType::String
        } else {
            infer_dtype(&values)
        };
        columns.push(Column::from_values(ColumnDescriptor::new(&key, dtype), values)?);
    }
    build(columns, options)
}

fn check_headers(headers: &[String], options: &IngestOptions) -> Result<(), TableError> {
    for (i, h) in headers.iter().enumerate() {
        if headers[..i].contains(h) {
            return Err(TableError::DuplicateColumn(h.clone()));
        }
    }
    let required = std::iter::once(&options.id_column)
        .chain(options.label_column.as_ref())
        .chain(options.data_file_column.as_ref());
    for name in required {
        if !headers.contains(name) {
            return Err(TableError::MissingColumn(name.clone()));
        }
    }
    Ok(())
}

fn build(columns: Vec<Column>, options: &IngestOptions) -> Result<MetadataTable, TableError> {
    let label = options.label_column.as_ref().map(|n| options.key_for(n).to_id());
    let data = options.data_file_column.as_ref().map(|n| options.key_for(n).to_id());
    MetadataTable::from_columns(columns, label.as_deref(), data.as_deref())
}

/// Writes the base rows' metadata columns as CSV, with their original names.
pub fn export_csv<W: Write>(table: &MetadataTable, writer: W) -> Result<(), csv::Error> {
    let columns: Vec<_> = table
        .columns()
        .filter(|c| matches!(c.descriptor.origin, Origin::Raw | Origin::Label | Origin::Id))
        .collect();
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(columns.iter().map(|c| c.descriptor.display_name.as_str()))?;
    for row in 0..table.base_row_count() {
        w.write_record(columns.iter().map(|c| c.cell(row).to_string()))?;
    }
    w.flush()?;
    Ok(())
}
