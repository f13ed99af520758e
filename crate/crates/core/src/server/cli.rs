//! Command-line entry points: `process`, `serve`, `test`, `export-report`.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::analysis::{TestResult, Verdict};
use crate::model::objects::Slice;

use super::api::{router, AppState};
use super::project::{self, ProjectError};
use super::export_file_name;

pub const EXIT_OK: i32 = 0;
pub const EXIT_TESTS_FAILED: i32 = 1;
pub const EXIT_PARTIAL: i32 = 2;
pub const EXIT_USAGE: i32 = 64;

#[derive(Debug, Parser)]
#[command(name = "slicelens", version, about = "Slice-based behavioral evaluation of ML models")]
struct Cli {
    /// Project config file.
    #[arg(short, long, global = true, default_value = "slicelens.toml")]
    config: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run every plugin task the cache cannot answer.
    Process,
    /// Process, then serve the HTTP API (requests get 503 until processing ends).
    Serve {
        #[arg(long)]
        port: Option<u16>,
        #[arg(long)]
        host: Option<String>,
    },
    /// Evaluate all behavioral tests; exit 1 if any fails on the latest model.
    Test,
    /// Write <name>.html and <name>.md for a report.
    ExportReport {
        /// Report name or id.
        name: String,
        /// Output directory.
        #[arg(short, long, default_value = ".")]
        out: PathBuf,
    },
}

/// Binary entry point.
pub fn main() -> std::process::ExitCode {
    let _ = tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info")),
        )
        .with_writer(std::io::stderr)
        .try_init();
    let code = run(std::env::args_os());
    std::process::ExitCode::from(code as u8)
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let config = match project::load_config(&cli.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_USAGE;
        }
    };
    let failed = |e: ProjectError| {
        eprintln!("error: {e}");
        if e.is_configuration() {
            EXIT_USAGE
        } else {
            EXIT_PARTIAL
        }
    };
    match cli.command {
        Command::Process => match project::process(&config, None) {
            Ok(p) => {
                for t in &p.report.tasks {
                    if let crate::pipeline::TaskStatus::Failed { error } = &t.status {
                        eprintln!("task {} failed: {error}", t.task_id);
                    }
                }
                println!("{}", p.report.summary());
                if p.report.is_success() {
                    EXIT_OK
                } else {
                    EXIT_PARTIAL
                }
            }
            Err(e) => failed(e),
        },
        Command::Serve { port, host } => {
            let mut config = config;
            if let Some(p) = port {
                config.port = p;
            }
            if let Some(h) = host {
                config.host = h;
            }
            serve(config)
        }
        Command::Test => {
            let processed = match project::process(&config, None) {
                Ok(p) => p,
                Err(e) => return failed(e),
            };
            if !processed.report.is_success() {
                eprintln!("warning: {}", processed.report.summary());
            }
            let store = match super::store::Store::open(config.state_dir()) {
                Ok(s) => s,
                Err(e) => return failed(e.into()),
            };
            let results = match project::evaluate_all(&processed.engine, &store, &config) {
                Ok(r) => r,
                Err(e) => return failed(e),
            };
            let models = config.model_ids();
            print!("{}", verdict_table(&results, store.slices(), &models));
            if results.iter().any(|r| r.latest_model_failed) {
                EXIT_TESTS_FAILED
            } else {
                EXIT_OK
            }
        }
        Command::ExportReport { name, out } => {
            let processed = match project::process(&config, None) {
                Ok(p) => p,
                Err(e) => return failed(e),
            };
            let store = match super::store::Store::open(config.state_dir()) {
                Ok(s) => s,
                Err(e) => return failed(e.into()),
            };
            let doc = match project::report_document(&processed.engine, &store, &config, &name) {
                Ok(d) => d,
                Err(ProjectError::Store(e)) => {
                    eprintln!("error: {e}");
                    return EXIT_USAGE;
                }
                Err(e) => return failed(e),
            };
            if let Err(e) = std::fs::create_dir_all(&out) {
                eprintln!("error: {}: {e}", out.display());
                return EXIT_PARTIAL;
            }
            for (ext, body) in [("html", doc.to_html()), ("md", doc.to_markdown())] {
                let path = out.join(export_file_name(&doc.name, ext));
                if let Err(e) = std::fs::write(&path, body) {
                    eprintln!("error: {}: {e}", path.display());
                    return EXIT_PARTIAL;
                }
                println!("wrote {}", path.display());
            }
            EXIT_OK
        }
    }
}

fn serve(config: super::config::ProjectConfig) -> i32 {
    let runtime = match tokio::runtime::Runtime::new() {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_PARTIAL;
        }
    };
    runtime.block_on(async move {
        let addr = format!("{}:{}", config.host, config.port);
        let state = match AppState::new(config) {
            Ok(s) => s,
            Err(e) => {
                eprintln!("error: {e}");
                return EXIT_USAGE;
            }
        };
        let listener = match tokio::net::TcpListener::bind(&addr).await {
            Ok(l) => l,
            Err(e) => {
                eprintln!("error: cannot bind {addr}: {e}");
                return EXIT_PARTIAL;
            }
        };
        let bound = listener.local_addr().map_or(addr, |a| a.to_string());
        println!("listening on http://{bound}{}", super::api::API_PREFIX);
        let _ = std::io::stdout().flush();
        state.start_processing();
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
        };
        match axum::serve(listener, router(state)).with_graceful_shutdown(shutdown).await {
            Ok(()) => EXIT_OK,
            Err(e) => {
                eprintln!("error: {e}");
                EXIT_PARTIAL
            }
        }
    })
}

/// Plain-text table of per-model verdicts, one row per test.
pub fn verdict_table(results: &[TestResult], slices: &[Slice], models: &[String]) -> String {
    let mut rows: Vec<Vec<String>> = vec![{
        let mut h = vec!["test".to_string(), "slice".into(), "transform".into()];
        h.extend(models.iter().cloned());
        h.push("latest".into());
        h
    }];
    for r in results {
        let slice = slices.iter().find(|s| s.slice_id == r.slice_id).map_or(r.slice_id.as_str(), |s| s.name.as_str());
        let mut row = vec![r.description.clone(), slice.to_string(), r.transform_id.clone()];
        for v in &r.verdicts {
            row.push(match (v.verdict, v.value) {
                (Verdict::NotEvaluated, _) => "n/a".into(),
                (Verdict::IndeterminateFail, _) => "empty ✗".into(),
                (verdict, Some(x)) => format!("{x:.4}{}", if verdict.passed() { "" } else { " ✗" }),
                (_, None) => "–".into(),
            });
        }
        let latest = r.verdicts.last().map_or("none", |v| v.verdict.label());
        row.push(latest.to_string());
        rows.push(row);
    }
    let columns = rows[0].len();
    let widths: Vec<usize> =
        (0..columns).map(|c| rows.iter().map(|r| r.get(c).map_or(0, |s| s.chars().count())).max().unwrap_or(0)).collect();
    let mut out = String::new();
    for row in &rows {
        let cells: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(c, s)| format!("{s}{}", " ".repeat(widths[c] - s.chars().count())))
            .collect();
        out.push_str(cells.join("  ").trim_end());
        out.push('\n');
    }
    let failing = results.iter().filter(|r| r.latest_model_failed).count();
    let latest = models.last().map_or("no model", String::as_str);
    out.push_str(&format!("{failing} of {} tests failing on {latest}\n", results.len()));
    out
}
