use std::collections::{HashMap, VecDeque};
use std::path::{Component, Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use crossbeam_channel::{Receiver, Sender};
use serde::Serialize;

use crate::model::column::{ColumnDescriptor, ColumnKey, Origin};
use crate::table::cache::sanitize;
use crate::table::{infer_dtype, CachedValue, DiskCache, MetadataTable, TransformVariantRow, Value};

use super::manifest::FunctionKind;
use super::plan::{Plan, PlannedTask};
use super::plugin::{PluginError, PluginProcess, DEFAULT_TIMEOUT};
use super::protocol::{ResultFrame, Row, RunFrame, RunOptions};
use super::registry::FunctionRegistry;

/// Directory under the data root that receives transform outputs.
pub const TRANSFORMS_DIR: &str = "_transforms";

#[derive(Debug, Clone)]
pub struct ExecConfig {
    pub workers: usize,
    pub timeout: Duration,
    /// Root that instance file references resolve against.
    pub data_root: PathBuf,
    /// Parent of per-function scratch directories.
    pub scratch_root: PathBuf,
    /// Updated as tasks settle, for observers on other threads.
    pub progress: Option<Arc<Progress>>,
}

/// Task counts of a running pipeline.
#[derive(Debug, Default)]
pub struct Progress {
    pub total: AtomicUsize,
    pub settled: AtomicUsize,
}

impl Progress {
    /// (settled, total)
    pub fn snapshot(&self) -> (usize, usize) {
        (self.settled.load(Ordering::Relaxed), self.total.load(Ordering::Relaxed))
    }
}

impl ExecConfig {
    pub fn new(data_root: impl Into<PathBuf>, scratch_root: impl Into<PathBuf>) -> Self {
        ExecConfig {
            workers: thread::available_parallelism().map_or(4, |n| n.get()),
            timeout: DEFAULT_TIMEOUT,
            data_root: data_root.into(),
            scratch_root: scratch_root.into(),
            progress: None,
        }
    }

    pub fn progress(mut self, progress: Arc<Progress>) -> Self {
        self.progress = Some(progress);
        self
    }

    pub fn workers(mut self, workers: usize) -> Self {
        self.workers = workers.max(1);
        self
    }

    pub fn timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum TaskStatus {
    Executed,
    Cached,
    Failed { error: String },
    Skipped { failed_dependency: String },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaskReport {
    pub task_id: String,
    #[serde(flatten)]
    pub status: TaskStatus,
    pub rows: usize,
    pub cached_rows: usize,
    pub executed_rows: usize,
    pub batches: usize,
    pub duration_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Started,
    Finished,
    Failed,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaskEvent {
    pub seq: u64,
    pub task_id: String,
    pub event: EventKind,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RunReport {
    pub tasks: Vec<TaskReport>,
    pub events: Vec<TaskEvent>,
    /// `run` frames sent to plugins.
    pub invocations: u64,
    pub wall_ms: f64,
}

impl RunReport {
    fn count(&self, pred: impl Fn(&TaskStatus) -> bool) -> usize {
        self.tasks.iter().filter(|t| pred(&t.status)).count()
    }

    pub fn executed(&self) -> usize {
        self.count(|s| matches!(s, TaskStatus::Executed))
    }

    pub fn cached(&self) -> usize {
        self.count(|s| matches!(s, TaskStatus::Cached))
    }

    pub fn failed(&self) -> usize {
        self.count(|s| matches!(s, TaskStatus::Failed { .. }))
    }

    pub fn skipped(&self) -> usize {
        self.count(|s| matches!(s, TaskStatus::Skipped { .. }))
    }

    pub fn is_success(&self) -> bool {
        self.failed() == 0 && self.skipped() == 0
    }

    pub fn task(&self, task_id: &str) -> Option<&TaskReport> {
        self.tasks.iter().find(|t| t.task_id == task_id)
    }

    pub fn summary(&self) -> String {
        let mut s = format!("{} tasks executed (cache: {} hit)", self.executed(), self.cached());
        if !self.is_success() {
            s.push_str(&format!(", {} failed, {} skipped", self.failed(), self.skipped()));
        }
        s
    }
}

struct WorkItem {
    task: usize,
    batch: usize,
    ids: Vec<String>,
    plugin: usize,
    kind: FunctionKind,
    transform: String,
    output_dir: Option<PathBuf>,
    frame: RunFrame,
    cancel: Arc<AtomicBool>,
}

struct WorkResult {
    task: usize,
    batch: usize,
    ids: Vec<String>,
    outcome: Result<Vec<CachedValue>, String>,
}

enum State {
    Pending,
    Running { started: Instant, outstanding: usize, batches: Vec<Vec<(String, CachedValue)>>, cancel: Arc<AtomicBool> },
    Done,
}

/// Single writer: owns the table, the DAG bookkeeping and the report.
struct Coordinator<'a> {
    tasks: &'a [PlannedTask],
    registry: &'a FunctionRegistry,
    cache: Option<&'a DiskCache>,
    table: MetadataTable,
    state: Vec<State>,
    outcome: Vec<Option<TaskReport>>,
    dependents: Vec<Vec<usize>>,
    waiting: Vec<usize>,
    ready: VecDeque<usize>,
    report: RunReport,
    seq: u64,
    progress: Option<Arc<Progress>>,
}

impl Coordinator<'_> {
    fn event(&mut self, task_id: &str, kind: EventKind) {
        self.report.events.push(TaskEvent { seq: self.seq, task_id: task_id.to_string(), event: kind });
        self.seq += 1;
        if kind != EventKind::Started {
            if let Some(p) = &self.progress {
                p.settled.fetch_add(1, Ordering::Relaxed);
            }
        }
    }

    /// Records a task's end: applies and caches its results on success, or marks
    /// it failed and skips everything downstream.
    fn finish(&mut self, i: usize, result: Result<(), String>, started: Instant, fresh: Vec<(String, CachedValue)>) {
        let task = &self.tasks[i];
        let task_id = task.spec.task_id();
        let executed_rows = fresh.len();
        let result = result.and_then(|_| {
            let mut values = task.hits.clone();
            values.extend(fresh.iter().cloned());
            apply(&self.table, task, values, self.registry)
        });
        let status = match result {
            Ok(next) => {
                self.table = next;
                if let Some(cache) = self.cache {
                    for (id, value) in &fresh {
                        if let Err(e) = cache.put(&task.spec.function, &task.cache_key(id), value) {
                            tracing::warn!(task = %task_id, error = %e, "cache write failed");
                        }
                    }
                }
                self.event(&task_id, EventKind::Finished);
                for &d in &self.dependents[i] {
                    self.waiting[d] -= 1;
                    if self.waiting[d] == 0 && matches!(self.state[d], State::Pending) {
                        self.ready.push_back(d);
                    }
                }
                TaskStatus::Executed
            }
            Err(error) => {
                tracing::error!(task = %task_id, %error, "task failed");
                self.event(&task_id, EventKind::Failed);
                let mut stack = self.dependents[i].clone();
                while let Some(d) = stack.pop() {
                    if !matches!(self.state[d], State::Pending) {
                        continue;
                    }
                    self.state[d] = State::Done;
                    let dep = &self.tasks[d];
                    let dep_id = dep.spec.task_id();
                    self.event(&dep_id, EventKind::Skipped);
                    self.outcome[d] = Some(TaskReport {
                        task_id: dep_id,
                        status: TaskStatus::Skipped { failed_dependency: task_id.clone() },
                        rows: dep.targets.len(),
                        cached_rows: dep.hits.len(),
                        executed_rows: 0,
                        batches: 0,
                        duration_ms: 0.0,
                    });
                    stack.extend(self.dependents[d].iter().copied());
                }
                TaskStatus::Failed { error }
            }
        };
        let batch_size = self.registry.get(&task.spec.function).map_or(1, |f| f.manifest.batch_size());
        self.outcome[i] = Some(TaskReport {
            task_id,
            rows: task.targets.len(),
            cached_rows: task.hits.len(),
            executed_rows,
            batches: executed_rows.div_ceil(batch_size),
            duration_ms: started.elapsed().as_secs_f64() * 1e3,
            status,
        });
    }
}

/// Runs a plan. Fully cached tasks are loaded first; the rest run on a pool of
/// `config.workers` threads, each owning its own plugin processes. Results are
/// applied to the table and written to the cache by this thread only, one
/// completed task at a time.
pub fn execute(
    plan: Plan,
    table: MetadataTable,
    registry: &FunctionRegistry,
    cache: Option<&DiskCache>,
    config: &ExecConfig,
) -> (MetadataTable, RunReport) {
    let wall = Instant::now();
    let tasks = plan.tasks;
    let n = tasks.len();
    let mut dependents = vec![Vec::new(); n];
    for (i, t) in tasks.iter().enumerate() {
        for &d in &t.deps {
            dependents[d].push(i);
        }
    }
    let waiting: Vec<usize> = tasks.iter().map(|t| t.deps.len()).collect();
    let mut co = Coordinator {
        tasks: &tasks,
        registry,
        cache,
        table,
        state: (0..n).map(|_| State::Pending).collect(),
        outcome: vec![None; n],
        ready: (0..n).filter(|&i| waiting[i] == 0).collect(),
        dependents,
        waiting,
        report: RunReport::default(),
        seq: 0,
        progress: config.progress.clone(),
    };
    if let Some(p) = &config.progress {
        p.total.store(n + plan.pruned.len(), Ordering::Relaxed);
        p.settled.store(0, Ordering::Relaxed);
    }

    for task in &plan.pruned {
        let started = Instant::now();
        let status = match apply(&co.table, task, task.hits.clone(), registry) {
            Ok(t) => {
                co.table = t;
                TaskStatus::Cached
            }
            Err(error) => {
                tracing::warn!(task = %task.spec, %error, "cached results could not be applied");
                TaskStatus::Failed { error }
            }
        };
        if let Some(p) = &co.progress {
            p.settled.fetch_add(1, Ordering::Relaxed);
        }
        co.report.tasks.push(TaskReport {
            task_id: task.spec.task_id(),
            status,
            rows: task.targets.len(),
            cached_rows: task.hits.len(),
            executed_rows: 0,
            batches: 0,
            duration_ms: started.elapsed().as_secs_f64() * 1e3,
        });
    }

    let invocations = AtomicU64::new(0);
    let (work_tx, work_rx) = crossbeam_channel::unbounded::<WorkItem>();
    let (result_tx, result_rx) = crossbeam_channel::unbounded::<WorkResult>();

    thread::scope(|scope| {
        for _ in 0..config.workers.max(1).min(n.max(1)) {
            let rx = work_rx.clone();
            let tx = result_tx.clone();
            let invocations = &invocations;
            scope.spawn(move || worker(rx, tx, registry, config.timeout, invocations));
        }
        drop(result_tx);
        let mut running = 0usize;

        loop {
            while let Some(i) = co.ready.pop_front() {
                let task = &tasks[i];
                co.event(&task.spec.task_id(), EventKind::Started);
                let started = Instant::now();
                match build_batches(i, task, &co.table, registry, config) {
                    Ok(items) if items.is_empty() => {
                        co.state[i] = State::Done;
                        co.finish(i, Ok(()), started, Vec::new());
                    }
                    Ok(items) => {
                        let cancel = Arc::new(AtomicBool::new(false));
                        let batches = vec![Vec::new(); items.len()];
                        for mut item in items {
                            item.cancel = Arc::clone(&cancel);
                            work_tx.send(item).expect("workers alive");
                        }
                        co.state[i] = State::Running { started, outstanding: batches.len(), batches, cancel };
                        running += 1;
                    }
                    Err(error) => {
                        co.state[i] = State::Done;
                        co.finish(i, Err(error), started, Vec::new());
                    }
                }
            }
            if running == 0 {
                break;
            }
            let result = result_rx.recv().expect("workers alive");
            let i = result.task;
            let State::Running { started, outstanding, batches, cancel } = &mut co.state[i] else {
                unreachable!("result for a task that is not running");
            };
            let started = *started;
            *outstanding -= 1;
            let mut failure = None;
            match result.outcome {
                Ok(values) if !cancel.load(Ordering::SeqCst) => {
                    batches[result.batch] = result.ids.into_iter().zip(values).collect();
                }
                Ok(_) => {}
                Err(e) => {
                    if !cancel.swap(true, Ordering::SeqCst) {
                        failure = Some(e);
                    }
                }
            }
            let done = *outstanding == 0;
            let cancelled = cancel.load(Ordering::SeqCst);
            let fresh: Vec<(String, CachedValue)> =
                if done && !cancelled { std::mem::take(batches).into_iter().flatten().collect() } else { Vec::new() };
            if done {
                running -= 1;
                co.state[i] = State::Done;
            }
            if let Some(error) = failure {
                co.finish(i, Err(error), started, Vec::new());
            } else if done && !cancelled {
                co.finish(i, Ok(()), started, fresh);
            }
        }
        drop(work_tx);
    });

    let mut report = co.report;
    report.tasks.extend(co.outcome.into_iter().flatten());
    report.invocations = invocations.load(Ordering::Relaxed);
    report.wall_ms = wall.elapsed().as_secs_f64() * 1e3;
    (co.table, report)
}

/// Table rows a task reads, keyed by instance id; ids without a row are dropped.
fn input_rows(task: &PlannedTask, table: &MetadataTable) -> Vec<(String, usize)> {
    let scope = task.spec.input_transform();
    task.misses
        .iter()
        .filter_map(|id| table.row_of(id, scope).map(|r| (id.clone(), r)))
        .collect()
}

fn output_column(task: &PlannedTask) -> Option<String> {
    let model = task.spec.model.as_ref()?;
    Some(ColumnKey::output(model.as_str(), task.spec.transform.as_str()).to_id())
}

fn build_batches(
    index: usize,
    task: &PlannedTask,
    table: &MetadataTable,
    registry: &FunctionRegistry,
    config: &ExecConfig,
) -> Result<Vec<WorkItem>, String> {
    let function = registry
        .get(&task.spec.function)
        .ok_or_else(|| format!("unknown function `{}`", task.spec.function))?;
    let rows = input_rows(task, table);
    if rows.is_empty() {
        return Ok(Vec::new());
    }
    let scratch = config.scratch_root.join(sanitize(&task.spec.function));
    std::fs::create_dir_all(&scratch).map_err(|e| format!("cannot create {}: {e}", scratch.display()))?;
    let output_dir = if task.spec.kind == FunctionKind::Transform {
        let dir = config.data_root.join(TRANSFORMS_DIR).join(&task.spec.transform);
        std::fs::create_dir_all(&dir).map_err(|e| format!("cannot create {}: {e}", dir.display()))?;
        Some(dir)
    } else {
        None
    };
    let options = RunOptions {
        data_path: config.data_root.display().to_string(),
        id_column: table.id_column().to_string(),
        label_column: table.label_column().map(str::to_string),
        output_column: output_column(task),
        output_dir: output_dir.as_ref().map(|d| d.display().to_string()),
        scratch_dir: scratch.display().to_string(),
        model: task.spec.model.clone(),
        transform: Some(task.spec.transform.clone()),
    };
    let mut columns: Vec<&str> = table
        .columns()
        .filter(|c| matches!(c.descriptor.origin, Origin::Raw | Origin::Label | Origin::Id))
        .map(|c| c.descriptor.id.as_str())
        .collect();
    let out_col = options.output_column.clone();
    if task.spec.kind == FunctionKind::Distill {
        if let Some(c) = out_col.as_deref().filter(|c| table.has_column(c)) {
            columns.push(c);
        }
    }
    let size = function.manifest.batch_size();
    Ok(rows
        .chunks(size)
        .enumerate()
        .map(|(b, chunk)| {
            let payload = chunk
                .iter()
                .map(|(_, r)| plugin_row(table, *r, &columns))
                .collect();
            WorkItem {
                task: index,
                batch: b,
                ids: chunk.iter().map(|(id, _)| id.clone()).collect(),
                plugin: function.plugin,
                kind: task.spec.kind,
                transform: task.spec.transform.clone(),
                output_dir: output_dir.clone(),
                frame: RunFrame {
                    task_id: format!("{}#{b}", task.spec.task_id()),
                    function: task.spec.function.clone(),
                    kind: task.spec.kind,
                    options: options.clone(),
                    rows: payload,
                },
                cancel: Arc::new(AtomicBool::new(false)),
            }
        })
        .collect())
}

/// The `rows` entry for one table row: `id`, `file` and the given columns.
pub(crate) fn plugin_row(table: &MetadataTable, row: usize, columns: &[&str]) -> Row {
    let mut out = Row::new();
    out.insert("id".into(), table.instance_id(row).into());
    out.insert("file".into(), table.data_file(row).map_or(serde_json::Value::Null, |f| f.into()));
    for c in columns {
        let v = table.cell(c, row).unwrap_or(Value::Missing);
        out.insert((*c).to_string(), serde_json::to_value(v).unwrap_or_default());
    }
    out
}

fn worker(
    rx: Receiver<WorkItem>,
    tx: Sender<WorkResult>,
    registry: &FunctionRegistry,
    timeout: Duration,
    invocations: &AtomicU64,
) {
    let mut processes: HashMap<usize, PluginProcess> = HashMap::new();
    for item in rx {
        let outcome = if item.cancel.load(Ordering::SeqCst) {
            Err("cancelled".to_string())
        } else {
            run_item(&mut processes, registry, &item, timeout, invocations)
        };
        if tx.send(WorkResult { task: item.task, batch: item.batch, ids: item.ids, outcome }).is_err() {
            break;
        }
    }
    for (_, p) in processes {
        p.shutdown();
    }
}

fn run_item(
    processes: &mut HashMap<usize, PluginProcess>,
    registry: &FunctionRegistry,
    item: &WorkItem,
    timeout: Duration,
    invocations: &AtomicU64,
) -> Result<Vec<CachedValue>, String> {
    if processes.get_mut(&item.plugin).is_some_and(|p| p.has_exited()) {
        processes.remove(&item.plugin);
    }
    if !processes.contains_key(&item.plugin) {
        let command = &registry.plugins()[item.plugin];
        let p = PluginProcess::spawn(command, timeout).map_err(|e| e.to_string())?;
        processes.insert(item.plugin, p);
    }
    let process = processes.get_mut(&item.plugin).expect("just inserted");
    invocations.fetch_add(1, Ordering::Relaxed);
    let expected = item.frame.rows.len();
    match process.run(item.frame.clone()) {
        Ok(result) => validate(result, item, expected).map_err(|m| {
            let stderr = process.stderr();
            PluginError::Protocol { message: m, stderr }.to_string()
        }),
        Err(e) => {
            if !matches!(e, PluginError::Reported(_)) {
                processes.remove(&item.plugin);
            }
            Err(e.to_string())
        }
    }
}

fn validate(result: ResultFrame, item: &WorkItem, expected: usize) -> Result<Vec<CachedValue>, String> {
    match item.kind {
        FunctionKind::Transform => {
            let files = result.files.ok_or("transform result without `files`")?;
            if files.len() != expected {
                return Err(format!("returned {} files for {expected} rows", files.len()));
            }
            let dir = item.output_dir.as_deref().expect("transform output dir");
            files.into_iter().map(|f| transform_ref(f, dir, &item.transform)).collect()
        }
        FunctionKind::Model | FunctionKind::Distill => {
            let values = result.values.ok_or("result without `values`")?;
            if values.len() != expected {
                return Err(format!("returned {} values for {expected} rows", values.len()));
            }
            Ok(values.iter().map(|v| CachedValue::Value(Value::from_json(v))).collect())
        }
        FunctionKind::Metric => Err("metrics are not run by the pipeline".into()),
    }
}

fn transform_ref(file: Option<String>, dir: &Path, transform: &str) -> Result<CachedValue, String> {
    let Some(name) = file else {
        return Ok(CachedValue::Value(Value::Missing));
    };
    let rel = Path::new(&name);
    if name.is_empty() || !rel.components().all(|c| matches!(c, Component::Normal(_))) {
        return Err(format!("transform returned invalid file name `{name}`"));
    }
    if !dir.join(rel).is_file() {
        return Err(format!("transform output `{name}` does not exist"));
    }
    Ok(CachedValue::File(format!("{TRANSFORMS_DIR}/{transform}/{name}")))
}

/// Writes a task's complete result set into a new table snapshot.
fn apply(
    table: &MetadataTable,
    task: &PlannedTask,
    values: Vec<(String, CachedValue)>,
    registry: &FunctionRegistry,
) -> Result<MetadataTable, String> {
    let spec = &task.spec;
    if spec.kind == FunctionKind::Transform {
        let mut rows = Vec::new();
        for (id, v) in values {
            match v {
                CachedValue::File(f) => rows.push(TransformVariantRow {
                    parent_instance_id: id,
                    transform_id: spec.transform.clone(),
                    data_file_reference: f,
                }),
                CachedValue::Value(Value::Missing) => {}
                CachedValue::Value(other) => return Err(format!("transform produced a value `{other}`, not a file")),
            }
        }
        return table.add_transform_variants(&spec.transform, &rows).map_err(|e| e.to_string());
    }

    let mut rows = Vec::with_capacity(values.len());
    let mut cells = Vec::with_capacity(values.len());
    for (id, v) in values {
        let Some(row) = table.row_of(&id, &spec.transform) else { continue };
        match v {
            CachedValue::Value(v) => {
                rows.push(row);
                cells.push(v);
            }
            CachedValue::File(_) => return Err(format!("{} produced a file, not a value", spec.kind)),
        }
    }
    let (key, dtype) = match spec.kind {
        FunctionKind::Model => {
            let model = spec.model.as_deref().ok_or("model task without a model id")?;
            let key = ColumnKey::output(model, spec.transform.as_str());
            let dtype = table.column(&key.to_id()).map_or_else(|| infer_dtype(&cells), |c| c.dtype());
            (key, dtype)
        }
        FunctionKind::Distill => {
            let manifest = &registry.get(&spec.function).ok_or("unknown function")?.manifest;
            let scope = spec.model.as_deref().map(|m| (m, spec.transform.as_str()));
            let dtype = manifest.output_dtype.ok_or("distill without output_dtype")?;
            (ColumnKey::distill(spec.function.as_str(), scope), dtype)
        }
        _ => return Err(format!("cannot store {} results", spec.kind)),
    };
    table
        .set_cells(&ColumnDescriptor::new(&key, dtype), &rows, cells)
        .map_err(|e| e.to_string())
}
