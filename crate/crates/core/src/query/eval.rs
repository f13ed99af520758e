//! Predicate evaluation into bitsets over the positions of a [`ScopeIndex`].

use std::collections::HashSet;

use fixedbitset::FixedBitSet;
use regex::Regex;

use crate::model::column::{ColumnKey, DType};
use crate::model::datetime::millis_to_seconds;
use crate::model::predicate::{CompareOp, FilterPredicate, Literal};
use crate::table::{ColumnData, MetadataTable, MISSING_CODE};

use super::index::{ScopeIndex, SortedIndex};
use super::QueryError;

/// Maps a model-scoped column id onto the active model and the scope's transform.
/// Other ids are returned unchanged.
pub fn rescope(id: &str, model: Option<&str>, transform: &str) -> String {
    match ColumnKey::parse(id) {
        Ok(mut key) if key.model_scope.is_some() => {
            if let Some(m) = model {
                key.model_scope = Some(m.to_string());
                if key.origin == crate::model::column::Origin::Output {
                    key.name = m.to_string();
                }
            }
            key.transform_scope = Some(transform.to_string());
            key.to_id()
        }
        _ => id.to_string(),
    }
}

pub(crate) struct Evaluator<'a> {
    pub table: &'a MetadataTable,
    pub scope: &'a ScopeIndex,
    pub model: Option<&'a str>,
}

impl Evaluator<'_> {
    fn full(&self) -> FixedBitSet {
        let mut all = FixedBitSet::with_capacity(self.scope.len());
        all.insert_range(..);
        all
    }

    pub fn eval(&self, predicate: &FilterPredicate) -> Result<FixedBitSet, QueryError> {
        match predicate {
            FilterPredicate::All => Ok(self.full()),
            FilterPredicate::And { children } => {
                let mut acc = self.full();
                for child in children {
                    if acc.is_clear() {
                        break;
                    }
                    acc.intersect_with(&self.eval(child)?);
                }
                Ok(acc)
            }
            FilterPredicate::Or { children } => {
                let mut acc = FixedBitSet::with_capacity(self.scope.len());
                for child in children {
                    acc.union_with(&self.eval(child)?);
                }
                Ok(acc)
            }
            FilterPredicate::Leaf { column, op, value } => self.leaf(column, *op, value),
        }
    }

    fn leaf(&self, column: &str, op: CompareOp, value: &Literal) -> Result<FixedBitSet, QueryError> {
        let declared = self
            .table
            .column(column)
            .ok_or_else(|| QueryError::UnknownColumn(column.to_string()))?;
        let resolved = rescope(column, self.model, &self.scope.transform);
        let n = self.scope.len();
        let Some(col) = self.table.column(&resolved) else {
            // Not computed for this scope: every cell is missing.
            let mut out = FixedBitSet::with_capacity(n);
            if op == CompareOp::IsMissing {
                out.insert_range(..);
            }
            return Ok(out);
        };
        if col.dtype() != declared.dtype() {
            return Err(QueryError::Internal(format!("`{resolved}` is {} but `{column}` is {}", col.dtype(), declared.dtype())));
        }
        if op == CompareOp::IsMissing {
            return Ok(self.scan(|r| col.data.is_missing(r)));
        }
        let mismatch = || QueryError::Internal(format!("literal {value} does not fit `{column}` for `{op}`"));
        match &col.data {
            ColumnData::Numeric(values) => {
                let x = |lit: &Literal| match (lit, col.dtype()) {
                    (Literal::Number(x), DType::Continuous) => Some(*x),
                    (Literal::Datetime(ts), DType::Datetime) => Some(millis_to_seconds(ts.0)),
                    _ => None,
                };
                let sorted = self.scope.column(&resolved).and_then(|c| c.sorted.as_ref());
                match (op, value) {
                    (CompareOp::In, Literal::List(items)) => {
                        let mut out = FixedBitSet::with_capacity(n);
                        for item in items {
                            let v = x(item).ok_or_else(mismatch)?;
                            out.union_with(&self.numeric(values, sorted, CompareOp::Eq, v));
                        }
                        Ok(out)
                    }
                    (op, lit) if op == CompareOp::Eq || op == CompareOp::Ne || op.is_order() => {
                        Ok(self.numeric(values, sorted, op, x(lit).ok_or_else(mismatch)?))
                    }
                    _ => Err(mismatch()),
                }
            }
            ColumnData::Boolean(values) => {
                let wanted: Vec<u8> = match (op, value) {
                    (CompareOp::Eq | CompareOp::Ne, Literal::Bool(b)) => vec![u8::from(*b)],
                    (CompareOp::In, Literal::List(items)) => items
                        .iter()
                        .map(|l| match l {
                            Literal::Bool(b) => Ok(u8::from(*b)),
                            _ => Err(mismatch()),
                        })
                        .collect::<Result<_, _>>()?,
                    _ => return Err(mismatch()),
                };
                let negate = op == CompareOp::Ne;
                Ok(self.scan(|r| {
                    let v = values[r];
                    v <= 1 && (wanted.contains(&v) != negate)
                }))
            }
            ColumnData::Categorical { codes, dictionary } => {
                // Decide once per dictionary entry, then scan the codes.
                let text_match = TextMatch::new(op, value).ok_or_else(mismatch)?;
                let accept: Vec<bool> = dictionary.iter().map(|s| text_match.test(s)).collect();
                Ok(self.scan(|r| {
                    let c = codes[r];
                    c != MISSING_CODE && accept[c as usize]
                }))
            }
            ColumnData::Text(values) => {
                let text_match = TextMatch::new(op, value).ok_or_else(mismatch)?;
                Ok(self.scan(|r| values[r].as_deref().is_some_and(|s| text_match.test(s))))
            }
        }
    }

    /// Bitset of scope positions whose global row satisfies `f`.
    fn scan(&self, f: impl Fn(usize) -> bool) -> FixedBitSet {
        let mut out = FixedBitSet::with_capacity(self.scope.len());
        for (p, &r) in self.scope.rows.iter().enumerate() {
            if f(r as usize) {
                out.insert(p);
            }
        }
        out
    }

    fn numeric(&self, values: &[f64], sorted: Option<&SortedIndex>, op: CompareOp, x: f64) -> FixedBitSet {
        let n = self.scope.len();
        let Some(sorted) = sorted else {
            return self.scan(|r| compare(values[r], op, x));
        };
        let mut out = FixedBitSet::with_capacity(n);
        let len = sorted.values.len();
        let ranges: [(usize, usize); 2] = match op {
            CompareOp::Lt => [(0, sorted.lower(x, false)), (0, 0)],
            CompareOp::Le => [(0, sorted.lower(x, true)), (0, 0)],
            CompareOp::Gt => [(sorted.lower(x, true), len), (0, 0)],
            CompareOp::Ge => [(sorted.lower(x, false), len), (0, 0)],
            CompareOp::Eq => [(sorted.lower(x, false), sorted.lower(x, true)), (0, 0)],
            CompareOp::Ne => [(0, sorted.lower(x, false)), (sorted.lower(x, true), len)],
            _ => [(0, 0), (0, 0)],
        };
        for (start, end) in ranges {
            for &p in &sorted.positions[start..end.max(start)] {
                out.insert(p as usize);
            }
        }
        out
    }
}

fn compare(v: f64, op: CompareOp, x: f64) -> bool {
    if v.is_nan() {
        return false;
    }
    match op {
        CompareOp::Eq => v == x,
        CompareOp::Ne => v != x,
        CompareOp::Lt => v < x,
        CompareOp::Le => v <= x,
        CompareOp::Gt => v > x,
        CompareOp::Ge => v >= x,
        _ => false,
    }
}

enum TextMatch {
    Set { values: HashSet<String>, negate: bool },
    Contains(String),
    Pattern(Regex),
}

impl TextMatch {
    fn new(op: CompareOp, value: &Literal) -> Option<Self> {
        let text = |l: &Literal| match l {
            Literal::Text(s) => Some(s.clone()),
            _ => None,
        };
        Some(match (op, value) {
            (CompareOp::Eq, lit) => TextMatch::Set { values: HashSet::from([text(lit)?]), negate: false },
            (CompareOp::Ne, lit) => TextMatch::Set { values: HashSet::from([text(lit)?]), negate: true },
            (CompareOp::In, Literal::List(items)) => {
                TextMatch::Set { values: items.iter().map(text).collect::<Option<_>>()?, negate: false }
            }
            (CompareOp::Matches, lit) => TextMatch::Contains(text(lit)?),
            (CompareOp::Regex, lit) => TextMatch::Pattern(Regex::new(&text(lit)?).ok()?),
            _ => return None,
        })
    }

    fn test(&self, s: &str) -> bool {
        match self {
            TextMatch::Set { values, negate } => values.contains(s) != *negate,
            TextMatch::Contains(needle) => s.contains(needle.as_str()),
            TextMatch::Pattern(re) => re.is_match(s),
        }
    }
}
