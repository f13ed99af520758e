use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::model::column::{ColumnDescriptor, DType, BASE_TRANSFORM};
use crate::model::datetime::seconds_to_millis;
use crate::model::predicate::{CompareOp, FilterPredicate, Literal, Timestamp};

use super::QueryError;

/// A widget selection on one column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Selection {
    /// Open interval `min < x < max`; datetimes in epoch seconds.
    Range { min: f64, max: f64 },
    /// Values to keep. Booleans are `"true"` / `"false"`.
    Categories { values: Vec<String> },
    /// Substring search.
    Search { text: String },
}

/// Everything the exploration view filters and displays by.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossFilterState {
    #[serde(default)]
    pub selections: BTreeMap<String, Selection>,
    /// Additional predicate, e.g. a saved slice being viewed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filter: Option<FilterPredicate>,
    #[serde(default = "base_transform")]
    pub transform_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metric_id: Option<String>,
}

fn base_transform() -> String {
    BASE_TRANSFORM.to_string()
}

impl Default for CrossFilterState {
    fn default() -> Self {
        CrossFilterState {
            selections: BTreeMap::new(),
            filter: None,
            transform_id: base_transform(),
            model_id: None,
            metric_id: None,
        }
    }
}

impl CrossFilterState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn select(mut self, column: impl Into<String>, selection: Selection) -> Self {
        self.selections.insert(column.into(), selection);
        self
    }

    pub fn transform(mut self, transform: impl Into<String>) -> Self {
        self.transform_id = transform.into();
        self
    }

    pub fn model(mut self, model: impl Into<String>) -> Self {
        self.model_id = Some(model.into());
        self
    }

    /// Checks selections against the schema and converts them, together with
    /// `filter`, into one conjunctive predicate.
    pub fn predicate(&self, schema: &[ColumnDescriptor]) -> Result<FilterPredicate, QueryError> {
        let mut children = Vec::new();
        if let Some(filter) = &self.filter {
            filter.validate(schema).map_err(QueryError::InvalidPredicate)?;
            if *filter != FilterPredicate::All {
                children.push(filter.clone());
            }
        }
        for (column, selection) in &self.selections {
            let desc = schema
                .iter()
                .find(|d| &d.id == column)
                .ok_or_else(|| QueryError::UnknownColumn(column.clone()))?;
            match selection_predicate(desc, selection)? {
                FilterPredicate::And { children: parts } => children.extend(parts),
                leaf => children.push(leaf),
            }
        }
        Ok(FilterPredicate::and(children))
    }
}

fn selection_predicate(desc: &ColumnDescriptor, selection: &Selection) -> Result<FilterPredicate, QueryError> {
    let invalid = |message: &str| QueryError::InvalidSelection { column: desc.id.clone(), message: message.to_string() };
    let column = desc.id.clone();
    match (selection, desc.dtype) {
        (Selection::Range { min, max }, DType::Continuous | DType::Datetime) => {
            if !min.is_finite() || !max.is_finite() {
                return Err(invalid("range bounds must be finite"));
            }
            let lit = |x: f64| match desc.dtype {
                DType::Datetime => Literal::Datetime(Timestamp(seconds_to_millis(x))),
                _ => Literal::Number(x),
            };
            Ok(FilterPredicate::And {
                children: vec![
                    FilterPredicate::leaf(column.clone(), CompareOp::Gt, lit(*min)),
                    FilterPredicate::leaf(column, CompareOp::Lt, lit(*max)),
                ],
            })
        }
        (Selection::Categories { values }, DType::Nominal) => Ok(FilterPredicate::leaf(
            column,
            CompareOp::In,
            Literal::List(values.iter().cloned().map(Literal::Text).collect()),
        )),
        (Selection::Categories { values }, DType::Boolean) => {
            let items = values
                .iter()
                .map(|v| match v.as_str() {
                    "true" => Ok(Literal::Bool(true)),
                    "false" => Ok(Literal::Bool(false)),
                    _ => Err(invalid("boolean categories are \"true\" and \"false\"")),
                })
                .collect::<Result<_, _>>()?;
            Ok(FilterPredicate::leaf(column, CompareOp::In, Literal::List(items)))
        }
        (Selection::Search { text }, DType::String | DType::Nominal) => {
            Ok(FilterPredicate::leaf(column, CompareOp::Matches, Literal::Text(text.clone())))
        }
        (Selection::Range { .. }, _) => Err(invalid("range selections need a continuous or datetime column")),
        (Selection::Categories { .. }, _) => Err(invalid("category selections need a nominal or boolean column")),
        (Selection::Search { .. }, _) => Err(invalid("search needs a string or nominal column")),
    }
}
