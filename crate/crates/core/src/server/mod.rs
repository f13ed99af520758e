//! The operational shell: project config, persistence of slices, folders,
//! reports and tests, the HTTP API and the command line.

pub mod api;
pub mod cli;
pub mod config;
pub mod project;
pub mod store;

pub use api::{router, AppState, Phase, API_PREFIX};
pub use config::{ConfigError, ProjectConfig};
pub use project::{process, Processed, ProjectError};
pub use store::{Store, StoreError};

/// `<name>.<ext>` with path separators and control characters replaced.
pub fn export_file_name(name: &str, ext: &str) -> String {
    let stem: String =
        name.chars().map(|c| if c == '/' || c == '\\' || c.is_control() { '_' } else { c }).collect();
    let stem = stem.trim().trim_start_matches('.');
    format!("{}.{ext}", if stem.is_empty() { "report" } else { stem })
}
