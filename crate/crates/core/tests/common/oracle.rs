//! Naive full-scan reference for the query engine: random tables are generated
//! as plain rows of [`Value`]s and every query is answered by scanning them.

use std::collections::{BTreeMap, HashMap};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use slicelens::model::{ColumnDescriptor, ColumnKey, CompareOp, DType, FilterPredicate, Literal, Timestamp};
use slicelens::query::{CrossFilterState, Layout, QueryEngine, QueryError, Selection};
use slicelens::table::{Column, MetadataTable, TransformVariantRow, Value};

pub const MODEL: &str = "m1";
pub const TRANSFORM: &str = "t1";
const BINS: usize = 15;
const TOP: usize = 30;

const WORDS: &[&str] = &["red", "green", "blue", "amber", "teal", "violet", "grey", "black"];

#[derive(Debug, Clone)]
pub struct NaiveRow {
    pub id: Value,
    pub transform: String,
    /// Metadata values keyed by column id (raw and label columns).
    pub values: HashMap<String, Value>,
    /// Output of `MODEL` for this row's transform.
    pub output: Value,
}

pub struct Case {
    pub table: MetadataTable,
    pub schema: Vec<ColumnDescriptor>,
    pub rows: Vec<NaiveRow>,
    pub label: String,
    pub rng: ChaCha8Rng,
}

fn gen_value(rng: &mut ChaCha8Rng, dtype: DType, distinct: usize, missing: f64) -> Value {
    if rng.gen_bool(missing) {
        return Value::Missing;
    }
    match dtype {
        // Coarse values so that ties and equality predicates hit.
        DType::Continuous => Value::Number((rng.gen_range(-500..500) as f64) / 20.0),
        DType::Datetime => Value::Datetime(1_600_000_000.0 + 3600.0 * rng.gen_range(0..2000) as f64),
        DType::Boolean => Value::Bool(rng.gen_bool(0.5)),
        DType::Nominal => Value::Text(format!("c{}", rng.gen_range(0..distinct))),
        DType::String => {
            let n = rng.gen_range(1..4);
            Value::Text((0..n).map(|_| *WORDS.choose(rng).unwrap()).collect::<Vec<_>>().join(" "))
        }
    }
}

/// A random table of up to `max_rows` base rows and up to 20 columns, with a
/// label column, outputs of `MODEL`, and usually a `TRANSFORM` variant subset.
pub fn random_case(seed: u64, max_rows: usize) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = if rng.gen_bool(0.05) { 0 } else { rng.gen_range(1..=max_rows) };
    let extra = rng.gen_range(1..=17);
    let dtypes = [DType::Continuous, DType::Datetime, DType::Boolean, DType::Nominal, DType::String];
    let mut specs: Vec<(ColumnKey, DType, usize, f64)> = vec![(ColumnKey::label("label"), DType::Nominal, 4, 0.05)];
    for i in 0..extra {
        let dtype = *dtypes.choose(&mut rng).unwrap();
        let distinct = if rng.gen_bool(0.3) { rng.gen_range(31..60) } else { rng.gen_range(1..8) };
        let missing = [0.0, 0.1, 0.5][rng.gen_range(0..3)];
        specs.push((ColumnKey::raw(format!("c{i}")), dtype, distinct, missing));
    }

    let ids: Vec<String> = (0..n).map(|i| format!("i{i}")).collect();
    let mut rows: Vec<NaiveRow> = ids
        .iter()
        .map(|id| NaiveRow { id: Value::Text(id.clone()), transform: "none".into(), values: HashMap::new(), output: Value::Missing })
        .collect();
    let mut columns = vec![Column::from_values(
        ColumnDescriptor::new(&ColumnKey::id("id"), DType::String),
        ids.iter().map(|s| Value::Text(s.clone())).collect(),
    )
    .unwrap()];
    for (key, dtype, distinct, missing) in &specs {
        let desc = ColumnDescriptor::new(key, *dtype);
        let values: Vec<Value> = (0..n).map(|_| gen_value(&mut rng, *dtype, *distinct, *missing)).collect();
        for (row, v) in rows.iter_mut().zip(&values) {
            row.values.insert(desc.id.clone(), v.clone());
        }
        columns.push(Column::from_values(desc, values).unwrap());
    }
    let label = "label::label".to_string();
    let mut table = match MetadataTable::from_columns(columns, Some(&label), None) {
        Ok(t) => t,
        Err(e) => panic!("seed {seed}: {e}"),
    };

    let set_outputs = |table: MetadataTable, rows: &mut Vec<NaiveRow>, transform: &str, rng: &mut ChaCha8Rng| {
        let desc = ColumnDescriptor::new(&ColumnKey::output(MODEL, transform), DType::Nominal);
        let mut targets = Vec::new();
        let mut values = Vec::new();
        for (r, row) in rows.iter_mut().enumerate().filter(|(_, row)| row.transform == transform) {
            let v = if rng.gen_bool(0.6) { row.values[&label].clone() } else { gen_value(rng, DType::Nominal, 4, 0.05) };
            row.output = v.clone();
            targets.push(r);
            values.push(v);
        }
        if targets.is_empty() {
            return table;
        }
        table.set_cells(&desc, &targets, values).unwrap()
    };
    table = set_outputs(table, &mut rows, "none", &mut rng);
    if n > 0 && rng.gen_bool(0.5) {
        let parents: Vec<usize> = (0..n).filter(|_| rng.gen_bool(0.5)).collect();
        let variants: Vec<TransformVariantRow> = parents
            .iter()
            .map(|&p| TransformVariantRow {
                parent_instance_id: ids[p].clone(),
                transform_id: TRANSFORM.into(),
                data_file_reference: format!("_transforms/t1/{}", ids[p]),
            })
            .collect();
        table = table.add_transform_variants(TRANSFORM, &variants).unwrap();
        for &p in &parents {
            let mut row = rows[p].clone();
            row.transform = TRANSFORM.into();
            row.output = Value::Missing;
            rows.push(row);
        }
        table = set_outputs(table, &mut rows, TRANSFORM, &mut rng);
    }
    let schema = table.schema();
    Case { table, schema, rows, label, rng }
}

impl Case {
    pub fn transforms(&self) -> Vec<String> {
        self.table.transforms().to_vec()
    }

    fn scope_rows(&self, transform: &str) -> Vec<usize> {
        (0..self.rows.len()).filter(|&r| self.rows[r].transform == transform).collect()
    }

    fn value<'a>(&'a self, row: &'a NaiveRow, column: &str) -> &'a Value {
        if column.starts_with("output::") {
            &row.output
        } else if column == "id::id" {
            &row.id
        } else {
            row.values.get(column).unwrap_or(&Value::Missing)
        }
    }

    /// A literal of the right type, usually drawn from the column's data.
    fn literal(&mut self, desc: &ColumnDescriptor) -> Literal {
        let pick = if self.rows.is_empty() || self.rng.gen_bool(0.2) {
            gen_value(&mut self.rng, desc.dtype, 40, 0.0)
        } else {
            let r = self.rng.gen_range(0..self.rows.len());
            match self.value(&self.rows[r], &desc.id).clone() {
                Value::Missing => gen_value(&mut self.rng, desc.dtype, 40, 0.0),
                v => v,
            }
        };
        match pick {
            Value::Number(x) => Literal::Number(x),
            Value::Datetime(s) => Literal::Datetime(Timestamp((s * 1000.0) as i64)),
            Value::Bool(b) => Literal::Bool(b),
            Value::Text(s) => Literal::Text(s),
            Value::Missing => unreachable!(),
        }
    }

    pub fn random_predicate(&mut self, depth: usize) -> FilterPredicate {
        let roll = self.rng.gen_range(0..10);
        if depth > 0 && roll < 3 {
            let k = self.rng.gen_range(1..4);
            let children = (0..k).map(|_| self.random_predicate(depth - 1)).collect();
            return if roll == 0 { FilterPredicate::Or { children } } else { FilterPredicate::And { children } };
        }
        if roll == 3 {
            return FilterPredicate::All;
        }
        let queryable: Vec<ColumnDescriptor> = self
            .schema
            .iter()
            .filter(|d| d.transform_scope.as_deref().is_none_or(|t| t == "none"))
            .cloned()
            .collect();
        let desc = queryable.choose(&mut self.rng).unwrap().clone();
        let ops: Vec<CompareOp> = [
            CompareOp::Eq,
            CompareOp::Ne,
            CompareOp::Lt,
            CompareOp::Le,
            CompareOp::Gt,
            CompareOp::Ge,
            CompareOp::In,
            CompareOp::Matches,
            CompareOp::Regex,
            CompareOp::IsMissing,
        ]
        .into_iter()
        .filter(|op| op.applies_to(desc.dtype))
        .collect();
        let op = *ops.choose(&mut self.rng).unwrap();
        let value = match op {
            CompareOp::IsMissing => Literal::None,
            CompareOp::In => {
                let k = self.rng.gen_range(0..4);
                Literal::List((0..k).map(|_| self.literal(&desc)).collect())
            }
            CompareOp::Matches => Literal::Text(WORDS.choose(&mut self.rng).unwrap()[..2].to_string()),
            CompareOp::Regex => Literal::Text(format!("{}$", self.rng.gen_range(0..10))),
            _ => self.literal(&desc),
        };
        FilterPredicate::leaf(desc.id, op, value)
    }

    pub fn random_state(&mut self, transform: &str) -> CrossFilterState {
        let mut state = CrossFilterState::new().transform(transform).model(MODEL);
        let widgets: Vec<ColumnDescriptor> =
            self.schema.iter().filter(|d| d.id.starts_with("raw::") || d.id.starts_with("label::")).cloned().collect();
        for desc in widgets {
            if !self.rng.gen_bool(0.25) {
                continue;
            }
            let selection = match desc.dtype {
                DType::Continuous | DType::Datetime => {
                    let (a, b) = match (self.literal(&desc), self.literal(&desc)) {
                        (Literal::Number(a), Literal::Number(b)) => (a, b),
                        (Literal::Datetime(a), Literal::Datetime(b)) => (a.0 as f64 / 1000.0, b.0 as f64 / 1000.0),
                        _ => unreachable!(),
                    };
                    Selection::Range { min: a.min(b) - 0.5, max: a.max(b) + 0.5 }
                }
                DType::Nominal => {
                    let k = self.rng.gen_range(0..4);
                    let values = (0..k)
                        .map(|_| match self.literal(&desc) {
                            Literal::Text(s) => s,
                            _ => unreachable!(),
                        })
                        .collect();
                    Selection::Categories { values }
                }
                DType::Boolean => Selection::Categories { values: vec![self.rng.gen_bool(0.5).to_string()] },
                DType::String => Selection::Search { text: WORDS.choose(&mut self.rng).unwrap()[1..3].to_string() },
            };
            state.selections.insert(desc.id.clone(), selection);
        }
        if self.rng.gen_bool(0.3) {
            state.filter = Some(self.random_predicate(1));
        }
        state
    }

    pub fn eval(&self, row: &NaiveRow, p: &FilterPredicate) -> bool {
        match p {
            FilterPredicate::All => true,
            FilterPredicate::And { children } => children.iter().all(|c| self.eval(row, c)),
            FilterPredicate::Or { children } => children.iter().any(|c| self.eval(row, c)),
            FilterPredicate::Leaf { column, op, value } => leaf(self.value(row, column), *op, value),
        }
    }

    pub fn naive_filter(&self, p: &FilterPredicate, transform: &str) -> Vec<usize> {
        self.scope_rows(transform).into_iter().filter(|&r| self.eval(&self.rows[r], p)).collect()
    }

    fn selected(&self, row: &NaiveRow, state: &CrossFilterState) -> bool {
        if let Some(f) = &state.filter {
            if !self.eval(row, f) {
                return false;
            }
        }
        state.selections.iter().all(|(column, sel)| {
            let v = self.value(row, column);
            match (sel, v) {
                (Selection::Range { min, max }, Value::Number(x) | Value::Datetime(x)) => *min < *x && *x < *max,
                (Selection::Categories { values }, Value::Text(s)) => values.contains(s),
                (Selection::Categories { values }, Value::Bool(b)) => values.contains(&b.to_string()),
                (Selection::Search { text }, Value::Text(s)) => s.contains(text.as_str()),
                _ => false,
            }
        })
    }

    /// Expected histograms as column id -> (labels-or-edges, total, filtered, total missing, filtered missing).
    pub fn naive_histograms(&self, state: &CrossFilterState) -> (u64, BTreeMap<String, NaiveHistogram>) {
        let scope = self.scope_rows(&state.transform_id);
        let filtered: Vec<usize> = scope.iter().copied().filter(|&r| self.selected(&self.rows[r], state)).collect();
        let mut out = BTreeMap::new();
        for desc in &self.schema {
            let visible = match desc.id.split("::").next().unwrap() {
                "raw" | "label" => true,
                "output" => desc.transform_scope.as_deref() == Some(state.transform_id.as_str()),
                _ => false,
            };
            if !visible || desc.dtype == DType::String {
                continue;
            }
            let values = |rows: &[usize]| rows.iter().map(|&r| self.value(&self.rows[r], &desc.id).clone()).collect::<Vec<_>>();
            let all = values(&scope);
            let h = match desc.dtype {
                DType::Continuous | DType::Datetime => {
                    let xs: Vec<f64> = all.iter().filter_map(Value::as_f64).collect();
                    let edges = uniform_edges(&xs);
                    let count = |vals: &[Value]| {
                        let mut counts = vec![0u64; edges.len().saturating_sub(1)];
                        let mut missing = 0;
                        for v in vals {
                            match v.as_f64().and_then(|x| bin(&edges, x)) {
                                Some(b) => counts[b] += 1,
                                None => missing += 1,
                            }
                        }
                        (counts, missing)
                    };
                    let (total, total_missing) = count(&all);
                    let (filt, filtered_missing) = count(&values(&filtered));
                    NaiveHistogram { edges, labels: Vec::new(), total, filtered: filt, total_missing, filtered_missing }
                }
                _ => {
                    let text = |v: &Value| match v {
                        Value::Missing => None,
                        v => Some(v.to_string()),
                    };
                    let mut freq: BTreeMap<String, u64> = BTreeMap::new();
                    for v in all.iter().filter_map(text) {
                        *freq.entry(v).or_default() += 1;
                    }
                    let mut ranked: Vec<(String, u64)> = freq.into_iter().collect();
                    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
                    let other = ranked.len() > TOP;
                    let mut labels: Vec<String> = ranked.into_iter().take(TOP).map(|(k, _)| k).collect();
                    if other {
                        labels.push("other".into());
                    }
                    let count = |vals: &[Value]| {
                        let mut counts = vec![0u64; labels.len()];
                        let mut missing = 0;
                        for v in vals {
                            match text(v) {
                                None => missing += 1,
                                Some(s) => match labels[..labels.len() - usize::from(other)].iter().position(|l| *l == s) {
                                    Some(i) => counts[i] += 1,
                                    None => counts[labels.len() - 1] += 1,
                                },
                            }
                        }
                        (counts, missing)
                    };
                    let (total, total_missing) = count(&all);
                    let (filt, filtered_missing) = count(&values(&filtered));
                    NaiveHistogram { edges: Vec::new(), labels, total, filtered: filt, total_missing, filtered_missing }
                }
            };
            out.insert(desc.id.clone(), h);
        }
        (filtered.len() as u64, out)
    }

    /// (value, n) of accuracy / error_rate / mean over the rows of `transform` matching `p`.
    pub fn naive_metric(&self, p: &FilterPredicate, transform: &str, metric: &str) -> (Option<f64>, u64) {
        let rows = self.naive_filter(p, transform);
        match metric {
            "accuracy" | "error_rate" => {
                if rows.is_empty() {
                    return (None, 0);
                }
                let correct = rows
                    .iter()
                    .filter(|&&r| {
                        let row = &self.rows[r];
                        let label = &row.values[&self.label];
                        !label.is_missing() && !row.output.is_missing() && label.to_string() == row.output.to_string()
                    })
                    .count();
                let acc = correct as f64 / rows.len() as f64;
                (Some(if metric == "accuracy" { acc } else { 1.0 - acc }), rows.len() as u64)
            }
            column => {
                let xs: Vec<f64> = rows.iter().filter_map(|&r| self.value(&self.rows[r], column).as_f64()).collect();
                let n = xs.len() as u64;
                ((n > 0).then(|| xs.iter().sum::<f64>() / n as f64), n)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NaiveHistogram {
    pub edges: Vec<f64>,
    pub labels: Vec<String>,
    pub total: Vec<u64>,
    pub filtered: Vec<u64>,
    pub total_missing: u64,
    pub filtered_missing: u64,
}

fn uniform_edges(xs: &[f64]) -> Vec<f64> {
    if xs.is_empty() {
        return Vec::new();
    }
    let mut lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let mut hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if lo == hi {
        lo -= 0.5;
        hi += 0.5;
    }
    let w = (hi - lo) / BINS as f64;
    let mut edges: Vec<f64> = (0..BINS).map(|i| lo + w * i as f64).collect();
    edges.push(hi);
    edges.dedup();
    edges
}

fn bin(edges: &[f64], x: f64) -> Option<usize> {
    let last = edges.len().checked_sub(2)?;
    (0..=last).find(|&i| edges[i] <= x && (x < edges[i + 1] || (i == last && x <= edges[i + 1])))
}

fn literal_number(l: &Literal) -> Option<f64> {
    match l {
        Literal::Number(x) => Some(*x),
        Literal::Datetime(ts) => Some(ts.0 as f64 / 1000.0),
        _ => None,
    }
}

thread_local! {
    static PATTERNS: std::cell::RefCell<HashMap<String, regex::Regex>> = Default::default();
}

fn leaf(v: &Value, op: CompareOp, lit: &Literal) -> bool {
    if op == CompareOp::IsMissing {
        return v.is_missing();
    }
    let eq = |v: &Value, l: &Literal| match (v, l) {
        (Value::Number(x) | Value::Datetime(x), l) => literal_number(l) == Some(*x),
        (Value::Bool(b), Literal::Bool(c)) => b == c,
        (Value::Text(s), Literal::Text(t)) => s == t,
        _ => false,
    };
    match (v, op) {
        (Value::Missing, _) => false,
        (_, CompareOp::Eq) => eq(v, lit),
        (_, CompareOp::Ne) => !eq(v, lit),
        (_, CompareOp::In) => match lit {
            Literal::List(items) => items.iter().any(|l| eq(v, l)),
            _ => false,
        },
        (Value::Text(s), CompareOp::Matches) => matches!(lit, Literal::Text(t) if s.contains(t.as_str())),
        (Value::Text(s), CompareOp::Regex) => match lit {
            Literal::Text(t) => PATTERNS.with(|cache| {
                cache.borrow_mut().entry(t.clone()).or_insert_with(|| regex::Regex::new(t).unwrap()).is_match(s)
            }),
            _ => false,
        },
        (Value::Number(x) | Value::Datetime(x), op) => match literal_number(lit) {
            Some(y) => match op {
                CompareOp::Lt => *x < y,
                CompareOp::Le => *x <= y,
                CompareOp::Gt => *x > y,
                CompareOp::Ge => *x >= y,
                _ => false,
            },
            None => false,
        },
        _ => false,
    }
}

/// Compares engine and oracle on one random case; returns the number of checks.
pub fn check_case(seed: u64, max_rows: usize) -> Result<usize, String> {
    let mut case = random_case(seed, max_rows);
    let engine = QueryEngine::new(case.table.clone());
    let mut checks = 0;
    let fail = |what: &str, detail: String| Err(format!("seed {seed}: {what}: {detail}"));
    for transform in case.transforms() {
        // An empty scope never gets an output column.
        let processed = case.rows.iter().any(|r| r.transform == transform);
        for _ in 0..4 {
            let p = case.random_predicate(3);
            let got = engine.filter_rows_for(&p, &transform, Some(MODEL)).map_err(|e| format!("seed {seed}: {p}: {e}"))?;
            let want = case.naive_filter(&p, &transform);
            if got != want {
                return fail("filter_rows", format!("`{p}` on {transform}: got {} rows, want {}", got.len(), want.len()));
            }
            checks += 1;
            for metric in ["accuracy", "error_rate"] {
                let (value, n) = case.naive_metric(&p, &transform, metric);
                let got = match engine.metric("s", &p, Some(MODEL), &transform, metric) {
                    Err(QueryError::NotProcessed { .. }) if !processed => {
                        checks += 1;
                        continue;
                    }
                    r => r.map_err(|e| format!("seed {seed}: {metric} `{p}`: {e}"))?,
                };
                if !close(got.value, value) || got.n != n {
                    return fail("slice_metric", format!("{metric} `{p}`: got {:?}/{}, want {value:?}/{n}", got.value, got.n));
                }
                checks += 1;
            }
        }
        let continuous: Vec<String> =
            case.schema.iter().filter(|d| d.dtype == DType::Continuous).map(|d| d.id.clone()).collect();
        for column in continuous {
            let mut catalog = slicelens::query::MetricCatalog::default();
            catalog.insert("mean", slicelens::query::MetricDef::Mean { column: column.clone() });
            let engine = QueryEngine::new(case.table.clone()).with_metrics(catalog, None);
            let p = case.random_predicate(2);
            let got = match engine.metric("s", &p, Some(MODEL), &transform, "mean") {
                Err(QueryError::NotProcessed { .. }) if !processed => continue,
                r => r.map_err(|e| format!("seed {seed}: mean `{p}`: {e}"))?,
            };
            let (value, n) = case.naive_metric(&p, &transform, &column);
            if !close(got.value, value) || got.n != n {
                return fail("mean", format!("{column} `{p}`: got {:?}/{}, want {value:?}/{n}", got.value, got.n));
            }
            checks += 1;
        }
        for _ in 0..3 {
            let state = case.random_state(&transform);
            let got = engine.histograms(&state).map_err(|e| format!("seed {seed}: {e}"))?;
            let (filtered_rows, want) = case.naive_histograms(&state);
            if got.filtered_rows != filtered_rows {
                return fail("histograms", format!("filtered rows {} vs {filtered_rows} under {state:?}", got.filtered_rows));
            }
            let got_keys: Vec<&String> = got.columns.keys().collect();
            let want_keys: Vec<&String> = want.keys().collect();
            if got_keys != want_keys {
                return fail("histograms", format!("columns {got_keys:?} vs {want_keys:?}"));
            }
            for (id, h) in &got.columns {
                let w = &want[id];
                let layout_ok = match &h.spec.layout {
                    Layout::Bins { edges } => *edges == w.edges,
                    Layout::Categories { .. } => h.spec.bucket_labels() == w.labels,
                };
                if !layout_ok
                    || h.total != w.total
                    || h.filtered != w.filtered
                    || h.total_missing != w.total_missing
                    || h.filtered_missing != w.filtered_missing
                {
                    return fail("histograms", format!("{id}: got {h:?}, want {w:?}"));
                }
                if h.filtered.iter().sum::<u64>() + h.filtered_missing != got.filtered_rows {
                    return fail("histograms", format!("{id}: filtered counts do not sum to the filtered size"));
                }
                checks += 1;
            }
        }
    }
    Ok(checks)
}

fn close(a: Option<f64>, b: Option<f64>) -> bool {
    match (a, b) {
        (Some(x), Some(y)) => (x - y).abs() <= 1e-12,
        (None, None) => true,
        _ => false,
    }
}
