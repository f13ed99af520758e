//! Textual predicate language.
//!
//! ```text
//! expr       := and ( "||" and )*
//! and        := atom ( "&&" atom )*
//! atom       := "(" expr ")" | "*" | comparison
//! comparison := column OP literal
//!             | literal OP column [ OP literal ]     // chained range
//!             | column "in" "[" [ literal ( "," literal )* ] "]"
//!             | column "matches" string              // substring
//!             | column "=~" string                   // regular expression
//!             | column "is" "missing"
//! OP         := "==" | "!=" | "<" | "<=" | ">" | ">="
//! ```
//!
//! Columns are bare identifiers (`amplitude`, `raw::amplitude`) or backtick-quoted
//! (`` `my column` ``). A column resolves by canonical id first, then by display
//! name. Literals are numbers, JSON-style quoted strings, `true`/`false`, and
//! ISO-8601 datetimes (quoted or bare). `a < col < b` desugars to
//! `col > a && col < b`.

use std::fmt;

use super::column::{ColumnDescriptor, DType};
use super::datetime::parse_datetime;
use super::predicate::{CompareOp, FilterPredicate, Literal, PredicateError, Timestamp};

pub(crate) const KEYWORDS: &[&str] = &["in", "matches", "is", "missing", "true", "false"];

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DslError {
    #[error("syntax error at position {position}: {message}")]
    Syntax { position: usize, message: String },
    #[error("invalid predicate: {}", join_errors(.0))]
    Invalid(Vec<PredicateError>),
}

fn join_errors(errors: &[PredicateError]) -> String {
    errors.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

impl DslError {
    pub fn position(&self) -> Option<usize> {
        match self {
            DslError::Syntax { position, .. } => Some(*position),
            DslError::Invalid(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Str(String),
    /// A bare literal starting with a digit or `-`: a number or a datetime.
    Bare(String),
    Star,
    LParen,
    RParen,
    LBracket,
    RBracket,
    Comma,
    Cmp(CompareOp),
    RegexOp,
    AndAnd,
    OrOr,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Ident(s) => write!(f, "`{s}`"),
            Tok::Str(s) => write!(f, "{s:?}"),
            Tok::Bare(s) => f.write_str(s),
            Tok::Star => f.write_str("*"),
            Tok::LParen => f.write_str("("),
            Tok::RParen => f.write_str(")"),
            Tok::LBracket => f.write_str("["),
            Tok::RBracket => f.write_str("]"),
            Tok::Comma => f.write_str(","),
            Tok::Cmp(op) => f.write_str(op.symbol()),
            Tok::RegexOp => f.write_str("=~"),
            Tok::AndAnd => f.write_str("&&"),
            Tok::OrOr => f.write_str("||"),
        }
    }
}

struct Token {
    tok: Tok,
    pos: usize,
    /// Backtick-quoted identifiers are never keywords.
    quoted: bool,
}

fn syntax(position: usize, message: impl Into<String>) -> DslError {
    DslError::Syntax { position, message: message.into() }
}

fn lex(text: &str) -> Result<Vec<Token>, DslError> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        let start = i;
        let simple = |tok| Token { tok, pos: start, quoted: false };
        match c {
            b' ' | b'\t' | b'\n' | b'\r' => {
                i += 1;
                continue;
            }
            b'*' => out.push(simple(Tok::Star)),
            b'(' => out.push(simple(Tok::LParen)),
            b')' => out.push(simple(Tok::RParen)),
            b'[' => out.push(simple(Tok::LBracket)),
            b']' => out.push(simple(Tok::RBracket)),
            b',' => out.push(simple(Tok::Comma)),
            b'&' | b'|' => {
                if bytes.get(i + 1) != Some(&c) {
                    return Err(syntax(i, format!("expected `{0}{0}`", c as char)));
                }
                out.push(simple(if c == b'&' { Tok::AndAnd } else { Tok::OrOr }));
                i += 2;
                continue;
            }
            b'=' | b'!' | b'<' | b'>' => {
                let next = bytes.get(i + 1).copied();
                let (tok, len) = match (c, next) {
                    (b'=', Some(b'=')) => (Tok::Cmp(CompareOp::Eq), 2),
                    (b'=', Some(b'~')) => (Tok::RegexOp, 2),
                    (b'!', Some(b'=')) => (Tok::Cmp(CompareOp::Ne), 2),
                    (b'<', Some(b'=')) => (Tok::Cmp(CompareOp::Le), 2),
                    (b'>', Some(b'=')) => (Tok::Cmp(CompareOp::Ge), 2),
                    (b'<', _) => (Tok::Cmp(CompareOp::Lt), 1),
                    (b'>', _) => (Tok::Cmp(CompareOp::Gt), 1),
                    _ => return Err(syntax(i, format!("unexpected `{}`", c as char))),
                };
                out.push(simple(tok));
                i += len;
                continue;
            }
            b'"' => {
                let end = scan_string(bytes, i).ok_or_else(|| syntax(i, "unterminated string"))?;
                let value: String = serde_json::from_str(&text[i..end])
                    .map_err(|e| syntax(i, format!("invalid string literal: {e}")))?;
                out.push(simple(Tok::Str(value)));
                i = end;
                continue;
            }
            b'`' => {
                let mut name = String::new();
                let mut j = i + 1;
                let mut chars = text[j..].char_indices();
                loop {
                    match chars.next() {
                        None => return Err(syntax(i, "unterminated quoted column")),
                        Some((off, '`')) => {
                            j += off + 1;
                            break;
                        }
                        Some((_, '\\')) => match chars.next() {
                            Some((_, ch)) => name.push(ch),
                            None => return Err(syntax(i, "unterminated quoted column")),
                        },
                        Some((_, ch)) => name.push(ch),
                    }
                }
                out.push(Token { tok: Tok::Ident(name), pos: start, quoted: true });
                i = j;
                continue;
            }
            b'0'..=b'9' | b'-' | b'+' | b'.' => {
                let mut j = i + 1;
                while j < bytes.len()
                    && (bytes[j].is_ascii_alphanumeric() || matches!(bytes[j], b'.' | b':' | b'-' | b'+'))
                {
                    j += 1;
                }
                out.push(simple(Tok::Bare(text[i..j].to_string())));
                i = j;
                continue;
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                let mut j = i + 1;
                while j < bytes.len()
                    && (bytes[j].is_ascii_alphanumeric() || matches!(bytes[j], b'_' | b'.' | b':' | b'-'))
                {
                    j += 1;
                }
                out.push(simple(Tok::Ident(text[i..j].to_string())));
                i = j;
                continue;
            }
            _ => {
                let ch = text[i..].chars().next().unwrap_or('?');
                return Err(syntax(i, format!("unexpected character `{ch}`")));
            }
        }
        i += 1;
    }
    Ok(out)
}

/// Returns the byte offset just past the closing quote.
fn scan_string(bytes: &[u8], start: usize) -> Option<usize> {
    let mut j = start + 1;
    while j < bytes.len() {
        match bytes[j] {
            b'\\' => j += 2,
            b'"' => return Some(j + 1),
            _ => j += 1,
        }
    }
    None
}

/// A literal as written, before it is typed against a column.
#[derive(Debug, Clone)]
enum RawLiteral {
    Bare(String),
    Str(String),
    Bool(bool),
}

enum Operand {
    Column(String, usize),
    Literal(RawLiteral, usize),
}

struct Parser<'a> {
    tokens: Vec<Token>,
    at: usize,
    end: usize,
    schema: &'a [ColumnDescriptor],
    errors: Vec<PredicateError>,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.at)
    }

    fn pos(&self) -> usize {
        self.peek().map_or(self.end, |t| t.pos)
    }

    fn bump(&mut self) -> Option<&Token> {
        let t = self.tokens.get(self.at);
        self.at += 1;
        t
    }

    fn peek_keyword(&self, kw: &str) -> bool {
        matches!(self.peek(), Some(Token { tok: Tok::Ident(s), quoted: false, .. }) if s == kw)
    }

    fn expect(&mut self, want: Tok) -> Result<(), DslError> {
        match self.peek() {
            Some(t) if t.tok == want => {
                self.at += 1;
                Ok(())
            }
            Some(t) => Err(syntax(t.pos, format!("expected `{want}`, found {}", t.tok))),
            None => Err(syntax(self.end, format!("expected `{want}`, found end of input"))),
        }
    }

    fn expr(&mut self) -> Result<FilterPredicate, DslError> {
        let mut children = vec![self.and_expr()?];
        while matches!(self.peek(), Some(Token { tok: Tok::OrOr, .. })) {
            self.at += 1;
            children.push(self.and_expr()?);
        }
        Ok(FilterPredicate::or(children))
    }

    fn and_expr(&mut self) -> Result<FilterPredicate, DslError> {
        let mut children = vec![self.atom()?];
        while matches!(self.peek(), Some(Token { tok: Tok::AndAnd, .. })) {
            self.at += 1;
            children.push(self.atom()?);
        }
        Ok(FilterPredicate::and(children))
    }

    fn atom(&mut self) -> Result<FilterPredicate, DslError> {
        match self.peek().map(|t| &t.tok) {
            Some(Tok::LParen) => {
                self.at += 1;
                let inner = self.expr()?;
                self.expect(Tok::RParen)?;
                Ok(inner)
            }
            Some(Tok::Star) => {
                self.at += 1;
                Ok(FilterPredicate::All)
            }
            Some(_) => self.comparison(),
            None => Err(syntax(self.end, "unexpected end of input")),
        }
    }

    fn operand(&mut self) -> Result<Operand, DslError> {
        let pos = self.pos();
        let Some(token) = self.bump() else {
            return Err(syntax(pos, "expected a column or literal, found end of input"));
        };
        match &token.tok {
            Tok::Ident(s) if !token.quoted && (s == "true" || s == "false") => {
                Ok(Operand::Literal(RawLiteral::Bool(s == "true"), pos))
            }
            Tok::Ident(s) if !token.quoted && KEYWORDS.contains(&s.as_str()) => {
                Err(syntax(pos, format!("unexpected keyword `{s}`")))
            }
            Tok::Ident(s) => Ok(Operand::Column(s.clone(), pos)),
            Tok::Str(s) => Ok(Operand::Literal(RawLiteral::Str(s.clone()), pos)),
            Tok::Bare(s) => Ok(Operand::Literal(RawLiteral::Bare(s.clone()), pos)),
            other => Err(syntax(pos, format!("expected a column or literal, found {other}"))),
        }
    }

    fn cmp_op(&mut self) -> Option<CompareOp> {
        match self.peek().map(|t| &t.tok) {
            Some(Tok::Cmp(op)) => {
                let op = *op;
                self.at += 1;
                Some(op)
            }
            _ => None,
        }
    }

    fn comparison(&mut self) -> Result<FilterPredicate, DslError> {
        match self.operand()? {
            Operand::Column(name, pos) => self.column_first(name, pos),
            Operand::Literal(lit, lit_pos) => {
                let op_pos = self.pos();
                let first = self.cmp_op().ok_or_else(|| syntax(op_pos, "expected a comparison operator"))?;
                let (name, col_pos) = match self.operand()? {
                    Operand::Column(name, pos) => (name, pos),
                    Operand::Literal(_, pos) => return Err(syntax(pos, "expected a column")),
                };
                let column = self.resolve(&name, col_pos);
                let lower = self.leaf(column.clone(), first.flipped(), lit, lit_pos)?;
                let op2_pos = self.pos();
                let Some(second) = self.cmp_op() else {
                    return Ok(lower);
                };
                let same_direction = matches!(
                    (first, second),
                    (CompareOp::Lt | CompareOp::Le, CompareOp::Lt | CompareOp::Le)
                        | (CompareOp::Gt | CompareOp::Ge, CompareOp::Gt | CompareOp::Ge)
                );
                if !same_direction {
                    return Err(syntax(op2_pos, "chained comparison must use `<`/`<=` or `>`/`>=` on both sides"));
                }
                let (lit2, lit2_pos) = match self.operand()? {
                    Operand::Literal(l, p) => (l, p),
                    Operand::Column(_, p) => return Err(syntax(p, "expected a literal")),
                };
                let upper = self.leaf(column, second, lit2, lit2_pos)?;
                Ok(FilterPredicate::And { children: vec![lower, upper] })
            }
        }
    }

    fn column_first(&mut self, name: String, pos: usize) -> Result<FilterPredicate, DslError> {
        let column = self.resolve(&name, pos);
        let op_pos = self.pos();
        if self.peek_keyword("in") {
            self.at += 1;
            self.expect(Tok::LBracket)?;
            let mut items = Vec::new();
            if !matches!(self.peek().map(|t| &t.tok), Some(Tok::RBracket)) {
                loop {
                    match self.operand()? {
                        Operand::Literal(l, p) => items.push((l, p)),
                        Operand::Column(_, p) => return Err(syntax(p, "expected a literal")),
                    }
                    if matches!(self.peek().map(|t| &t.tok), Some(Tok::Comma)) {
                        self.at += 1;
                    } else {
                        break;
                    }
                }
            }
            self.expect(Tok::RBracket)?;
            let dtype = self.dtype_of(&column);
            let values = items
                .into_iter()
                .map(|(l, p)| type_literal(l, dtype, p))
                .collect::<Result<Vec<_>, _>>()?;
            return Ok(FilterPredicate::leaf(column, CompareOp::In, Literal::List(values)));
        }
        if self.peek_keyword("matches") {
            self.at += 1;
            let text = self.string_operand()?;
            return Ok(FilterPredicate::leaf(column, CompareOp::Matches, Literal::Text(text)));
        }
        if matches!(self.peek().map(|t| &t.tok), Some(Tok::RegexOp)) {
            self.at += 1;
            let text = self.string_operand()?;
            return Ok(FilterPredicate::leaf(column, CompareOp::Regex, Literal::Text(text)));
        }
        if self.peek_keyword("is") {
            self.at += 1;
            if !self.peek_keyword("missing") {
                return Err(syntax(self.pos(), "expected `missing`"));
            }
            self.at += 1;
            return Ok(FilterPredicate::leaf(column, CompareOp::IsMissing, Literal::None));
        }
        let op = self.cmp_op().ok_or_else(|| syntax(op_pos, "expected an operator"))?;
        match self.operand()? {
            Operand::Literal(lit, p) => self.leaf(column, op, lit, p),
            Operand::Column(_, p) => Err(syntax(p, "expected a literal")),
        }
    }

    fn string_operand(&mut self) -> Result<String, DslError> {
        let pos = self.pos();
        match self.bump().map(|t| &t.tok) {
            Some(Tok::Str(s)) => Ok(s.clone()),
            _ => Err(syntax(pos, "expected a quoted string")),
        }
    }

    fn leaf(&self, column: String, op: CompareOp, lit: RawLiteral, pos: usize) -> Result<FilterPredicate, DslError> {
        let value = type_literal(lit, self.dtype_of(&column), pos)?;
        Ok(FilterPredicate::leaf(column, op, value))
    }

    fn dtype_of(&self, column: &str) -> Option<DType> {
        self.schema.iter().find(|d| d.id == column).map(|d| d.dtype)
    }

    /// Maps a written column name onto a canonical id, recording resolution errors
    /// so that parsing can continue and report all of them.
    fn resolve(&mut self, name: &str, _pos: usize) -> String {
        if self.schema.iter().any(|d| d.id == name) {
            return name.to_string();
        }
        let candidates: Vec<&ColumnDescriptor> =
            self.schema.iter().filter(|d| d.display_name == name).collect();
        match candidates.as_slice() {
            [one] => one.id.clone(),
            [] => {
                self.errors.push(PredicateError::UnknownColumn { column: name.to_string() });
                name.to_string()
            }
            many => {
                self.errors.push(PredicateError::AmbiguousColumn {
                    column: name.to_string(),
                    candidates: many.iter().map(|d| d.id.clone()).collect(),
                });
                name.to_string()
            }
        }
    }
}

/// Types a literal against the column it is compared with. Unknown columns keep
/// the literal's natural type.
fn type_literal(lit: RawLiteral, dtype: Option<DType>, pos: usize) -> Result<Literal, DslError> {
    let natural = |lit: &RawLiteral| -> Result<Literal, DslError> {
        match lit {
            RawLiteral::Bool(b) => Ok(Literal::Bool(*b)),
            RawLiteral::Str(s) => Ok(Literal::Text(s.clone())),
            RawLiteral::Bare(s) => {
                if let Ok(x) = s.parse::<f64>() {
                    if x.is_finite() {
                        return Ok(Literal::Number(x));
                    }
                }
                parse_datetime(s)
                    .map(|ms| Literal::Datetime(Timestamp(ms)))
                    .ok_or_else(|| syntax(pos, format!("invalid literal `{s}`")))
            }
        }
    };
    match (dtype, &lit) {
        (Some(DType::Datetime), RawLiteral::Str(s) | RawLiteral::Bare(s)) => parse_datetime(s)
            .map(|ms| Literal::Datetime(Timestamp(ms)))
            .ok_or_else(|| syntax(pos, format!("invalid datetime `{s}`"))),
        (Some(DType::Nominal | DType::String), RawLiteral::Bare(s)) => Ok(Literal::Text(s.clone())),
        (Some(DType::Nominal | DType::String), RawLiteral::Bool(b)) => Ok(Literal::Text(b.to_string())),
        _ => natural(&lit),
    }
}

/// Parses predicate text against `schema` and validates the result.
///
/// `*` alone matches everything.
pub fn parse_predicate(text: &str, schema: &[ColumnDescriptor]) -> Result<FilterPredicate, DslError> {
    if text.trim().is_empty() {
        return Err(syntax(0, "empty predicate"));
    }
    let tokens = lex(text)?;
    let mut parser = Parser { tokens, at: 0, end: text.len(), schema, errors: Vec::new() };
    let tree = parser.expr()?;
    if let Some(t) = parser.peek() {
        return Err(syntax(t.pos, format!("unexpected {}", t.tok)));
    }
    if !parser.errors.is_empty() {
        return Err(DslError::Invalid(parser.errors));
    }
    tree.validate(schema).map_err(DslError::Invalid)?;
    Ok(tree)
}
