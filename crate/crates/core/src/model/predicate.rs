//! Boolean filter predicates over typed columns.

use std::fmt::{self, Write as _};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::column::{ColumnDescriptor, DType};
use super::datetime::{format_datetime, parse_datetime};

/// Maximum nesting depth of a predicate tree. A leaf has depth 1.
pub const MAX_DEPTH: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CompareOp {
    #[serde(rename = "==")]
    Eq,
    #[serde(rename = "!=")]
    Ne,
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = "in")]
    In,
    #[serde(rename = "matches")]
    Matches,
    #[serde(rename = "regex")]
    Regex,
    #[serde(rename = "is_missing")]
    IsMissing,
}

impl CompareOp {
    pub fn symbol(self) -> &'static str {
        match self {
            CompareOp::Eq => "==",
            CompareOp::Ne => "!=",
            CompareOp::Lt => "<",
            CompareOp::Le => "<=",
            CompareOp::Gt => ">",
            CompareOp::Ge => ">=",
            CompareOp::In => "in",
            CompareOp::Matches => "matches",
            CompareOp::Regex => "=~",
            CompareOp::IsMissing => "is missing",
        }
    }

    pub fn is_order(self) -> bool {
        matches!(self, CompareOp::Lt | CompareOp::Le | CompareOp::Gt | CompareOp::Ge)
    }

    /// The operator with its operands swapped (`a < b` ⇔ `b > a`).
    pub fn flipped(self) -> Self {
        match self {
            CompareOp::Lt => CompareOp::Gt,
            CompareOp::Le => CompareOp::Ge,
            CompareOp::Gt => CompareOp::Lt,
            CompareOp::Ge => CompareOp::Le,
            other => other,
        }
    }

    pub fn applies_to(self, dtype: DType) -> bool {
        match self {
            CompareOp::Eq | CompareOp::Ne | CompareOp::In | CompareOp::IsMissing => true,
            CompareOp::Lt | CompareOp::Le | CompareOp::Gt | CompareOp::Ge => dtype.is_ordered(),
            CompareOp::Matches | CompareOp::Regex => dtype.is_textual(),
        }
    }
}

impl fmt::Display for CompareOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

/// Epoch milliseconds, serialized as an RFC 3339 string.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Timestamp(pub i64);

impl Serialize for Timestamp {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&format_datetime(self.0))
    }
}

impl<'de> Deserialize<'de> for Timestamp {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        parse_datetime(&text)
            .map(Timestamp)
            .ok_or_else(|| serde::de::Error::custom(format!("invalid datetime `{text}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "value", rename_all = "snake_case")]
pub enum Literal {
    Number(f64),
    Text(String),
    Bool(bool),
    Datetime(Timestamp),
    List(Vec<Literal>),
    /// Placeholder operand of `is missing`.
    None,
}

impl Literal {
    fn fits(&self, dtype: DType) -> bool {
        matches!(
            (self, dtype),
            (Literal::Number(_), DType::Continuous)
                | (Literal::Datetime(_), DType::Datetime)
                | (Literal::Bool(_), DType::Boolean)
                | (Literal::Text(_), DType::Nominal | DType::String)
        )
    }

    fn is_finite(&self) -> bool {
        match self {
            Literal::Number(x) => x.is_finite(),
            Literal::List(items) => items.iter().all(Literal::is_finite),
            _ => true,
        }
    }
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Literal::Number(x) => write!(f, "{x}"),
            Literal::Text(s) => write_quoted(f, s),
            Literal::Bool(b) => write!(f, "{b}"),
            Literal::Datetime(ts) => write_quoted(f, &format_datetime(ts.0)),
            Literal::List(items) => {
                f.write_char('[')?;
                for (i, item) in items.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{item}")?;
                }
                f.write_char(']')
            }
            Literal::None => Ok(()),
        }
    }
}

fn write_quoted(f: &mut fmt::Formatter<'_>, s: &str) -> fmt::Result {
    // JSON string escaping is what the lexer reads back.
    f.write_str(&serde_json::to_string(s).map_err(|_| fmt::Error)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FilterPredicate {
    All,
    Leaf {
        column: String,
        op: CompareOp,
        #[serde(default = "literal_none", skip_serializing_if = "is_literal_none")]
        value: Literal,
    },
    And {
        children: Vec<FilterPredicate>,
    },
    Or {
        children: Vec<FilterPredicate>,
    },
}

fn literal_none() -> Literal {
    Literal::None
}

fn is_literal_none(l: &Literal) -> bool {
    matches!(l, Literal::None)
}

#[derive(Debug, Clone, PartialEq, thiserror::Error, Serialize)]
#[serde(tag = "error", rename_all = "snake_case")]
pub enum PredicateError {
    #[error("unknown column `{column}`")]
    UnknownColumn { column: String },
    #[error("ambiguous column `{column}` (matches {candidates:?})")]
    AmbiguousColumn { column: String, candidates: Vec<String> },
    #[error("operator `{op}` does not apply to {dtype} column `{column}`")]
    TypeMismatch { column: String, op: String, dtype: DType },
    #[error("literal {literal} does not match {dtype} column `{column}`")]
    LiteralMismatch { column: String, literal: String, dtype: DType },
    #[error("non-finite number in predicate on `{column}`")]
    NonFinite { column: String },
    #[error("invalid regular expression on `{column}`: {message}")]
    InvalidRegex { column: String, message: String },
    #[error("predicate depth {depth} exceeds the limit of {limit}")]
    DepthExceeded { depth: usize, limit: usize },
    #[error("`{connective}` requires at least one child")]
    EmptyConnective { connective: String },
}

impl FilterPredicate {
    pub fn leaf(column: impl Into<String>, op: CompareOp, value: Literal) -> Self {
        FilterPredicate::Leaf { column: column.into(), op, value }
    }

    /// Conjunction; a single child is returned unwrapped, no children gives `All`.
    pub fn and(mut children: Vec<FilterPredicate>) -> Self {
        match children.len() {
            0 => FilterPredicate::All,
            1 => children.pop().unwrap(),
            _ => FilterPredicate::And { children },
        }
    }

    /// Disjunction; a single child is returned unwrapped.
    pub fn or(mut children: Vec<FilterPredicate>) -> Self {
        match children.len() {
            1 => children.pop().unwrap(),
            _ => FilterPredicate::Or { children },
        }
    }

    /// Looks through single-child connectives.
    fn effective(&self) -> &FilterPredicate {
        match self {
            FilterPredicate::And { children } | FilterPredicate::Or { children } if children.len() == 1 => {
                children[0].effective()
            }
            other => other,
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            FilterPredicate::All | FilterPredicate::Leaf { .. } => 1,
            FilterPredicate::And { children } | FilterPredicate::Or { children } => {
                1 + children.iter().map(FilterPredicate::depth).max().unwrap_or(0)
            }
        }
    }

    /// Column ids referenced anywhere in the tree, in first-seen order.
    pub fn columns(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.visit_columns(&mut out);
        out
    }

    fn visit_columns<'a>(&'a self, out: &mut Vec<&'a str>) {
        match self {
            FilterPredicate::All => {}
            FilterPredicate::Leaf { column, .. } => {
                if !out.contains(&column.as_str()) {
                    out.push(column);
                }
            }
            FilterPredicate::And { children } | FilterPredicate::Or { children } => {
                children.iter().for_each(|c| c.visit_columns(out))
            }
        }
    }

    /// Returns every violation against `schema`, not just the first.
    pub fn validate(&self, schema: &[ColumnDescriptor]) -> Result<(), Vec<PredicateError>> {
        let mut errors = Vec::new();
        let depth = self.depth();
        if depth > MAX_DEPTH {
            errors.push(PredicateError::DepthExceeded { depth, limit: MAX_DEPTH });
        }
        self.collect_errors(schema, &mut errors);
        if errors.is_empty() {
            Ok(())
        } else {
            Err(errors)
        }
    }

    fn collect_errors(&self, schema: &[ColumnDescriptor], errors: &mut Vec<PredicateError>) {
        match self {
            FilterPredicate::All => {}
            FilterPredicate::And { children } | FilterPredicate::Or { children } => {
                if children.is_empty() {
                    let connective = if matches!(self, FilterPredicate::And { .. }) { "and" } else { "or" };
                    errors.push(PredicateError::EmptyConnective { connective: connective.into() });
                }
                children.iter().for_each(|c| c.collect_errors(schema, errors));
            }
            FilterPredicate::Leaf { column, op, value } => {
                let Some(desc) = schema.iter().find(|d| &d.id == column) else {
                    errors.push(PredicateError::UnknownColumn { column: column.clone() });
                    return;
                };
                check_leaf(desc, *op, value, errors);
            }
        }
    }
}

fn check_leaf(desc: &ColumnDescriptor, op: CompareOp, value: &Literal, errors: &mut Vec<PredicateError>) {
    let column = desc.id.clone();
    if !op.applies_to(desc.dtype) {
        errors.push(PredicateError::TypeMismatch { column, op: op.symbol().into(), dtype: desc.dtype });
        return;
    }
    let mismatch = |errors: &mut Vec<PredicateError>| {
        errors.push(PredicateError::LiteralMismatch {
            column: desc.id.clone(),
            literal: value.to_string(),
            dtype: desc.dtype,
        })
    };
    match op {
        CompareOp::IsMissing => {
            if !matches!(value, Literal::None) {
                mismatch(errors);
            }
        }
        CompareOp::In => match value {
            Literal::List(items) if items.iter().all(|l| l.fits(desc.dtype)) => {}
            _ => mismatch(errors),
        },
        CompareOp::Matches => {
            if !matches!(value, Literal::Text(_)) {
                mismatch(errors);
            }
        }
        CompareOp::Regex => match value {
            Literal::Text(pattern) => {
                if let Err(e) = regex::Regex::new(pattern) {
                    errors.push(PredicateError::InvalidRegex { column, message: e.to_string() });
                }
            }
            _ => mismatch(errors),
        },
        _ => {
            if !value.fits(desc.dtype) {
                mismatch(errors);
            }
        }
    }
    if !value.is_finite() {
        errors.push(PredicateError::NonFinite { column: desc.id.clone() });
    }
}

/// Whether a column id can be printed without backtick quoting.
pub(crate) fn is_bare_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '.' | ':' | '-'))
        && !super::dsl::KEYWORDS.contains(&s)
}

fn write_column(f: &mut fmt::Formatter<'_>, column: &str) -> fmt::Result {
    if is_bare_identifier(column) {
        return f.write_str(column);
    }
    f.write_char('`')?;
    for c in column.chars() {
        if c == '`' || c == '\\' {
            f.write_char('\\')?;
        }
        f.write_char(c)?;
    }
    f.write_char('`')
}

/// Prints the canonical DSL form. Single-child connectives print as their child.
impl fmt::Display for FilterPredicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FilterPredicate::All => f.write_char('*'),
            FilterPredicate::Leaf { column, op, value } => {
                write_column(f, column)?;
                match op {
                    CompareOp::IsMissing => f.write_str(" is missing"),
                    _ => write!(f, " {} {}", op.symbol(), value),
                }
            }
            FilterPredicate::And { children } | FilterPredicate::Or { children } => {
                let is_and = matches!(self, FilterPredicate::And { .. });
                if children.len() == 1 {
                    return write!(f, "{}", children[0].effective());
                }
                for (i, child) in children.iter().enumerate() {
                    if i > 0 {
                        f.write_str(if is_and { " && " } else { " || " })?;
                    }
                    let child = child.effective();
                    let wrap = match child {
                        FilterPredicate::And { .. } => is_and,
                        FilterPredicate::Or { .. } => true,
                        _ => false,
                    };
                    if wrap {
                        write!(f, "({child})")?;
                    } else {
                        write!(f, "{child}")?;
                    }
                }
                Ok(())
            }
        }
    }
}
