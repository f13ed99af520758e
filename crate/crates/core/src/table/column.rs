use std::collections::HashMap;

use crate::model::column::{ColumnDescriptor, DType};
use crate::model::datetime::{millis_to_seconds, parse_datetime};

use super::value::Value;
use super::TableError;

pub const MISSING_CODE: u32 = u32::MAX;
const BOOL_MISSING: u8 = 2;

/// Typed storage for one column.
#[derive(Debug, Clone, PartialEq)]
pub enum ColumnData {
    /// Continuous values, or datetimes as epoch seconds. `NaN` is missing.
    Numeric(Vec<f64>),
    /// 0 = false, 1 = true, 2 = missing.
    Boolean(Vec<u8>),
    /// Dictionary-encoded nominal values; [`MISSING_CODE`] is missing.
    Categorical { codes: Vec<u32>, dictionary: Vec<String> },
    Text(Vec<Option<Box<str>>>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub descriptor: ColumnDescriptor,
    pub data: ColumnData,
}

impl ColumnData {
    pub fn missing(dtype: DType, len: usize) -> Self {
        match dtype {
            DType::Continuous | DType::Datetime => ColumnData::Numeric(vec![f64::NAN; len]),
            DType::Boolean => ColumnData::Boolean(vec![BOOL_MISSING; len]),
            DType::Nominal => ColumnData::Categorical { codes: vec![MISSING_CODE; len], dictionary: Vec::new() },
            DType::String => ColumnData::Text(vec![None; len]),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            ColumnData::Numeric(v) => v.len(),
            ColumnData::Boolean(v) => v.len(),
            ColumnData::Categorical { codes, .. } => codes.len(),
            ColumnData::Text(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_missing(&self, row: usize) -> bool {
        match self {
            ColumnData::Numeric(v) => v[row].is_nan(),
            ColumnData::Boolean(v) => v[row] == BOOL_MISSING,
            ColumnData::Categorical { codes, .. } => codes[row] == MISSING_CODE,
            ColumnData::Text(v) => v[row].is_none(),
        }
    }

    /// Text of a nominal or string cell.
    pub fn text(&self, row: usize) -> Option<&str> {
        match self {
            ColumnData::Categorical { codes, dictionary } => {
                dictionary.get(codes[row] as usize).map(String::as_str)
            }
            ColumnData::Text(v) => v[row].as_deref(),
            _ => None,
        }
    }

    pub fn push_missing(&mut self, n: usize) {
        match self {
            ColumnData::Numeric(v) => v.extend(std::iter::repeat_n(f64::NAN, n)),
            ColumnData::Boolean(v) => v.extend(std::iter::repeat_n(BOOL_MISSING, n)),
            ColumnData::Categorical { codes, .. } => codes.extend(std::iter::repeat_n(MISSING_CODE, n)),
            ColumnData::Text(v) => v.extend(std::iter::repeat_n(None, n)),
        }
    }

    /// Appends a copy of `row`.
    pub fn push_copy_of(&mut self, row: usize) {
        match self {
            ColumnData::Numeric(v) => v.push(v[row]),
            ColumnData::Boolean(v) => v.push(v[row]),
            ColumnData::Categorical { codes, .. } => codes.push(codes[row]),
            ColumnData::Text(v) => v.push(v[row].clone()),
        }
    }
}

impl Column {
    pub fn dtype(&self) -> DType {
        self.descriptor.dtype
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Builds a column of `descriptor.dtype` from loosely typed values.
    pub fn from_values(descriptor: ColumnDescriptor, values: Vec<Value>) -> Result<Self, TableError> {
        let mut data = ColumnData::missing(descriptor.dtype, values.len());
        let mut dict = HashMap::new();
        for (row, value) in values.into_iter().enumerate() {
            set_cell(&mut data, &mut dict, &descriptor, row, value)?;
        }
        Ok(Column { descriptor, data })
    }

    /// Builds a column from raw delimited-text cells; the empty string is missing.
    pub fn from_strs(descriptor: ColumnDescriptor, cells: &[&str]) -> Result<Self, TableError> {
        let mismatch = |s: &str| TableError::TypeMismatch {
            column: descriptor.id.clone(),
            dtype: descriptor.dtype,
            value: s.to_string(),
        };
        let data = match descriptor.dtype {
            DType::Continuous | DType::Datetime => {
                let datetime = descriptor.dtype == DType::Datetime;
                let mut out = Vec::with_capacity(cells.len());
                for &s in cells {
                    if s.is_empty() {
                        out.push(f64::NAN);
                        continue;
                    }
                    let x = if datetime {
                        parse_datetime(s).map(millis_to_seconds)
                    } else {
                        s.trim().parse::<f64>().ok()
                    };
                    match x {
                        Some(x) if x.is_finite() => out.push(x),
                        _ => return Err(mismatch(s)),
                    }
                }
                ColumnData::Numeric(out)
            }
            DType::Boolean => {
                let mut out = Vec::with_capacity(cells.len());
                for &s in cells {
                    out.push(match s {
                        "" => BOOL_MISSING,
                        s => parse_bool(s).map(u8::from).ok_or_else(|| mismatch(s))?,
                    });
                }
                ColumnData::Boolean(out)
            }
            DType::Nominal => {
                let mut dict: HashMap<&str, u32> = HashMap::new();
                let mut dictionary = Vec::new();
                let codes = cells
                    .iter()
                    .map(|&s| {
                        if s.is_empty() {
                            return MISSING_CODE;
                        }
                        *dict.entry(s).or_insert_with(|| {
                            dictionary.push(s.to_string());
                            (dictionary.len() - 1) as u32
                        })
                    })
                    .collect();
                ColumnData::Categorical { codes, dictionary }
            }
            DType::String => ColumnData::Text(
                cells.iter().map(|&s| (!s.is_empty()).then(|| Box::<str>::from(s))).collect(),
            ),
        };
        Ok(Column { descriptor, data })
    }

    /// Overwrites the given rows; `rows` and `values` have equal length.
    pub fn set_rows(&mut self, rows: &[usize], values: Vec<Value>) -> Result<(), TableError> {
        let mut dict = match &self.data {
            ColumnData::Categorical { dictionary, .. } => {
                dictionary.iter().enumerate().map(|(i, s)| (s.clone(), i as u32)).collect()
            }
            _ => HashMap::new(),
        };
        for (&row, value) in rows.iter().zip(values) {
            set_cell(&mut self.data, &mut dict, &self.descriptor, row, value)?;
        }
        Ok(())
    }

    pub fn cell(&self, row: usize) -> Value {
        match &self.data {
            ColumnData::Numeric(v) => {
                let x = v[row];
                if x.is_nan() {
                    Value::Missing
                } else if self.dtype() == DType::Datetime {
                    Value::Datetime(x)
                } else {
                    Value::Number(x)
                }
            }
            ColumnData::Boolean(v) => match v[row] {
                0 => Value::Bool(false),
                1 => Value::Bool(true),
                _ => Value::Missing,
            },
            ColumnData::Categorical { .. } | ColumnData::Text(_) => {
                self.data.text(row).map_or(Value::Missing, |s| Value::Text(s.to_string()))
            }
        }
    }

    pub fn non_missing(&self) -> usize {
        (0..self.len()).filter(|&r| !self.data.is_missing(r)).count()
    }
}

fn set_cell(
    data: &mut ColumnData,
    dict: &mut HashMap<String, u32>,
    descriptor: &ColumnDescriptor,
    row: usize,
    value: Value,
) -> Result<(), TableError> {
    let mismatch = |value: &Value| TableError::TypeMismatch {
        column: descriptor.id.clone(),
        dtype: descriptor.dtype,
        value: value.to_string(),
    };
    if value.is_missing() {
        match data {
            ColumnData::Numeric(v) => v[row] = f64::NAN,
            ColumnData::Boolean(v) => v[row] = BOOL_MISSING,
            ColumnData::Categorical { codes, .. } => codes[row] = MISSING_CODE,
            ColumnData::Text(v) => v[row] = None,
        }
        return Ok(());
    }
    match data {
        ColumnData::Numeric(v) => {
            let x = match (&value, descriptor.dtype) {
                (Value::Number(x), DType::Continuous) => Some(*x),
                (Value::Text(s), DType::Continuous) => s.trim().parse::<f64>().ok(),
                (Value::Datetime(x) | Value::Number(x), DType::Datetime) => Some(*x),
                (Value::Text(s), DType::Datetime) => parse_datetime(s).map(millis_to_seconds),
                _ => None,
            };
            match x {
                Some(x) if x.is_finite() => v[row] = x,
                _ => return Err(mismatch(&value)),
            }
        }
        ColumnData::Boolean(v) => {
            v[row] = match &value {
                Value::Bool(b) => u8::from(*b),
                Value::Number(x) if *x == 0.0 || *x == 1.0 => *x as u8,
                Value::Text(s) => parse_bool(s).map(u8::from).ok_or_else(|| mismatch(&value))?,
                _ => return Err(mismatch(&value)),
            };
        }
        ColumnData::Categorical { codes, dictionary } => {
            let text = value.to_string();
            let code = match dict.get(&text) {
                Some(&c) => c,
                None => {
                    let c = dictionary.len() as u32;
                    dictionary.push(text.clone());
                    dict.insert(text, c);
                    c
                }
            };
            codes[row] = code;
        }
        ColumnData::Text(v) => v[row] = Some(value.to_string().into_boxed_str()),
    }
    Ok(())
}

pub(crate) fn parse_bool(s: &str) -> Option<bool> {
    match s.trim().to_ascii_lowercase().as_str() {
        "true" | "1" => Some(true),
        "false" | "0" => Some(false),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::column::ColumnKey;

    fn desc(dtype: DType) -> ColumnDescriptor {
        ColumnDescriptor::new(&ColumnKey::raw("c"), dtype)
    }

    #[test]
    fn typed_round_trip_of_cells() {
        let col = Column::from_values(
            desc(DType::Nominal),
            vec![Value::Text("dog".into()), Value::Missing, Value::Text("cat".into()), Value::Text("dog".into())],
        )
        .unwrap();
        assert_eq!(col.cell(0), Value::Text("dog".into()));
        assert_eq!(col.cell(1), Value::Missing);
        match &col.data {
            ColumnData::Categorical { codes, dictionary } => {
                assert_eq!(dictionary, &["dog", "cat"]);
                assert_eq!(codes, &[0, MISSING_CODE, 1, 0]);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn conversions() {
        let col = Column::from_values(desc(DType::Continuous), vec![Value::Text("0.5".into())]).unwrap();
        assert_eq!(col.cell(0), Value::Number(0.5));
        let col = Column::from_values(desc(DType::Boolean), vec![Value::Text("TRUE".into()), Value::Number(0.0)]).unwrap();
        assert_eq!(col.cell(0), Value::Bool(true));
        assert_eq!(col.cell(1), Value::Bool(false));
        let col = Column::from_values(desc(DType::Datetime), vec![Value::Text("1970-01-02".into())]).unwrap();
        assert_eq!(col.cell(0), Value::Datetime(86_400.0));
        assert!(Column::from_values(desc(DType::Continuous), vec![Value::Text("abc".into())]).is_err());
    }

    #[test]
    fn from_strs_matches_from_values() {
        let cells = ["dog", "", "cat", "dog"];
        for dtype in [DType::Nominal, DType::String] {
            let fast = Column::from_strs(desc(dtype), &cells).unwrap();
            let values = cells
                .iter()
                .map(|s| if s.is_empty() { Value::Missing } else { Value::Text(s.to_string()) })
                .collect();
            assert_eq!(fast, Column::from_values(desc(dtype), values).unwrap());
        }
        let col = Column::from_strs(desc(DType::Datetime), &["1970-01-02", ""]).unwrap();
        assert_eq!(col.cell(0), Value::Datetime(86_400.0));
        assert!(Column::from_strs(desc(DType::Boolean), &["yes"]).is_err());
    }

    #[test]
    fn set_rows_extends_dictionary() {
        let mut col = Column::from_values(desc(DType::Nominal), vec![Value::Text("a".into()), Value::Missing]).unwrap();
        col.set_rows(&[1], vec![Value::Text("b".into())]).unwrap();
        assert_eq!(col.cell(1), Value::Text("b".into()));
        col.set_rows(&[0], vec![Value::Text("b".into())]).unwrap();
        match &col.data {
            ColumnData::Categorical { dictionary, .. } => assert_eq!(dictionary.len(), 2),
            _ => unreachable!(),
        }
    }
}
