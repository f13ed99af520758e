//! Slices, folders, reports and tests persisted as JSON files next to the
//! project config. Every mutation rewrites the affected file atomically.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::model::objects::{BehavioralTest, Report, Slice};
use crate::model::persist::{from_canonical_json, to_canonical_json, PersistError};

pub const SLICES_FILE: &str = "slices.json";
pub const FOLDERS_FILE: &str = "folders.json";
pub const REPORTS_FILE: &str = "reports.json";
pub const TESTS_FILE: &str = "tests.json";

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("{kind} `{id}` not found")]
    NotFound { kind: &'static str, id: String },
    #[error("{0}")]
    Conflict(String),
    #[error("{0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Format { path: PathBuf, source: PersistError },
}

#[derive(Serialize, Deserialize)]
struct SlicesFile {
    slices: Vec<Slice>,
}

#[derive(Serialize, Deserialize)]
struct FoldersFile {
    folders: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct ReportsFile {
    reports: Vec<Report>,
}

#[derive(Serialize, Deserialize)]
struct TestsFile {
    tests: Vec<BehavioralTest>,
}

#[derive(Debug)]
pub struct Store {
    dir: PathBuf,
    slices: Vec<Slice>,
    folders: Vec<String>,
    reports: Vec<Report>,
    tests: Vec<BehavioralTest>,
}

fn read<T: DeserializeOwned>(path: &Path) -> Result<Option<T>, StoreError> {
    match std::fs::read_to_string(path) {
        Ok(text) => from_canonical_json(&text).map(Some).map_err(|source| StoreError::Format { path: path.into(), source }),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(source) => Err(StoreError::Io { path: path.into(), source }),
    }
}

fn write<T: Serialize>(path: &Path, value: &T) -> Result<(), StoreError> {
    let io = |source| StoreError::Io { path: path.into(), source };
    let tmp = path.with_extension("json.tmp");
    std::fs::write(&tmp, to_canonical_json(value)).map_err(io)?;
    std::fs::rename(&tmp, path).map_err(io)
}

impl Store {
    /// Loads whatever files exist in `dir`; absent files are empty collections.
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let dir = dir.into();
        Ok(Store {
            slices: read::<SlicesFile>(&dir.join(SLICES_FILE))?.map_or_else(Vec::new, |f| f.slices),
            folders: read::<FoldersFile>(&dir.join(FOLDERS_FILE))?.map_or_else(Vec::new, |f| f.folders),
            reports: read::<ReportsFile>(&dir.join(REPORTS_FILE))?.map_or_else(Vec::new, |f| f.reports),
            tests: read::<TestsFile>(&dir.join(TESTS_FILE))?.map_or_else(Vec::new, |f| f.tests),
            dir,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn save_slices(&self) -> Result<(), StoreError> {
        write(&self.dir.join(SLICES_FILE), &SlicesFile { slices: self.slices.clone() })
    }

    fn save_folders(&self) -> Result<(), StoreError> {
        write(&self.dir.join(FOLDERS_FILE), &FoldersFile { folders: self.folders.clone() })
    }

    fn save_reports(&self) -> Result<(), StoreError> {
        write(&self.dir.join(REPORTS_FILE), &ReportsFile { reports: self.reports.clone() })
    }

    fn save_tests(&self) -> Result<(), StoreError> {
        write(&self.dir.join(TESTS_FILE), &TestsFile { tests: self.tests.clone() })
    }

    pub fn slices(&self) -> &[Slice] {
        &self.slices
    }

    pub fn slice(&self, id: &str) -> Result<&Slice, StoreError> {
        self.slices.iter().find(|s| s.slice_id == id).ok_or_else(|| StoreError::NotFound { kind: "slice", id: id.into() })
    }

    /// Adds a slice; its folder is created if needed. Names are unique per folder.
    pub fn create_slice(&mut self, slice: Slice) -> Result<Slice, StoreError> {
        if slice.name.trim().is_empty() {
            return Err(StoreError::Invalid("slice name must not be empty".into()));
        }
        if self.slices.iter().any(|s| s.slice_id == slice.slice_id) {
            return Err(StoreError::Conflict(format!("slice id `{}` already exists", slice.slice_id)));
        }
        if self.slices.iter().any(|s| s.name == slice.name && s.folder == slice.folder) {
            let place = slice.folder.as_deref().map_or("at the top level".to_string(), |f| format!("in folder `{f}`"));
            return Err(StoreError::Conflict(format!("a slice named `{}` already exists {place}", slice.name)));
        }
        if let Some(folder) = &slice.folder {
            if !self.folders.contains(folder) {
                self.folders.push(folder.clone());
                self.save_folders()?;
            }
        }
        self.slices.push(slice.clone());
        self.save_slices()?;
        Ok(slice)
    }

    /// Removes a slice together with the tests and report entries that use it.
    pub fn delete_slice(&mut self, id: &str) -> Result<Slice, StoreError> {
        let pos = self
            .slices
            .iter()
            .position(|s| s.slice_id == id)
            .ok_or_else(|| StoreError::NotFound { kind: "slice", id: id.into() })?;
        let slice = self.slices.remove(pos);
        self.save_slices()?;
        let before = self.tests.len();
        self.tests.retain(|t| t.slice_id != id);
        if self.tests.len() != before {
            self.save_tests()?;
        }
        let mut touched = false;
        for r in &mut self.reports {
            let n = r.entries.len();
            r.entries.retain(|e| e.slice_id != id);
            touched |= r.entries.len() != n;
        }
        if touched {
            self.save_reports()?;
        }
        Ok(slice)
    }

    pub fn folders(&self) -> &[String] {
        &self.folders
    }

    pub fn create_folder(&mut self, name: &str) -> Result<(), StoreError> {
        if name.trim().is_empty() {
            return Err(StoreError::Invalid("folder name must not be empty".into()));
        }
        if self.folders.iter().any(|f| f == name) {
            return Err(StoreError::Conflict(format!("folder `{name}` already exists")));
        }
        self.folders.push(name.to_string());
        self.save_folders()
    }

    /// Only empty folders can be removed.
    pub fn delete_folder(&mut self, name: &str) -> Result<(), StoreError> {
        let pos = self
            .folders
            .iter()
            .position(|f| f == name)
            .ok_or_else(|| StoreError::NotFound { kind: "folder", id: name.into() })?;
        if self.slices.iter().any(|s| s.folder.as_deref() == Some(name)) {
            return Err(StoreError::Conflict(format!("folder `{name}` still holds slices")));
        }
        self.folders.remove(pos);
        self.save_folders()
    }

    pub fn reports(&self) -> &[Report] {
        &self.reports
    }

    /// Looks a report up by id, then by name.
    pub fn report(&self, key: &str) -> Result<&Report, StoreError> {
        self.reports
            .iter()
            .find(|r| r.report_id == key)
            .or_else(|| self.reports.iter().find(|r| r.name == key))
            .ok_or_else(|| StoreError::NotFound { kind: "report", id: key.into() })
    }

    fn check_report(&self, report: &Report) -> Result<(), StoreError> {
        if report.name.trim().is_empty() {
            return Err(StoreError::Invalid("report name must not be empty".into()));
        }
        if self.reports.iter().any(|r| r.name == report.name && r.report_id != report.report_id) {
            return Err(StoreError::Conflict(format!("a report named `{}` already exists", report.name)));
        }
        for e in &report.entries {
            self.slice(&e.slice_id)?;
            if let Some(t) = &e.test {
                if t.slice_id != e.slice_id || t.metric_id != e.metric_id || t.transform_id != e.transform_id {
                    return Err(StoreError::Invalid(format!(
                        "test `{}` must use the slice, metric and transform of its entry",
                        t.test_id
                    )));
                }
                check_threshold(t)?;
            }
        }
        Ok(())
    }

    pub fn create_report(&mut self, report: Report) -> Result<Report, StoreError> {
        if self.reports.iter().any(|r| r.report_id == report.report_id) {
            return Err(StoreError::Conflict(format!("report id `{}` already exists", report.report_id)));
        }
        self.check_report(&report)?;
        self.reports.push(report.clone());
        self.save_reports()?;
        Ok(report)
    }

    pub fn update_report(&mut self, report: Report) -> Result<Report, StoreError> {
        let pos = self
            .reports
            .iter()
            .position(|r| r.report_id == report.report_id)
            .ok_or_else(|| StoreError::NotFound { kind: "report", id: report.report_id.clone() })?;
        self.check_report(&report)?;
        self.reports[pos] = report.clone();
        self.save_reports()?;
        Ok(report)
    }

    pub fn delete_report(&mut self, id: &str) -> Result<Report, StoreError> {
        let pos = self
            .reports
            .iter()
            .position(|r| r.report_id == id)
            .ok_or_else(|| StoreError::NotFound { kind: "report", id: id.into() })?;
        let report = self.reports.remove(pos);
        self.save_reports()?;
        Ok(report)
    }

    /// Stand-alone tests.
    pub fn tests(&self) -> &[BehavioralTest] {
        &self.tests
    }

    /// Stand-alone tests followed by tests attached to report entries.
    pub fn all_tests(&self) -> Vec<BehavioralTest> {
        let mut out = self.tests.clone();
        for t in self.reports.iter().flat_map(Report::tests) {
            if !out.iter().any(|o| o.test_id == t.test_id) {
                out.push(t.clone());
            }
        }
        out
    }

    pub fn create_test(&mut self, test: BehavioralTest) -> Result<BehavioralTest, StoreError> {
        self.slice(&test.slice_id)?;
        check_threshold(&test)?;
        if self.all_tests().iter().any(|t| t.test_id == test.test_id) {
            return Err(StoreError::Conflict(format!("test id `{}` already exists", test.test_id)));
        }
        self.tests.push(test.clone());
        self.save_tests()?;
        Ok(test)
    }

    pub fn delete_test(&mut self, id: &str) -> Result<BehavioralTest, StoreError> {
        let pos = self
            .tests
            .iter()
            .position(|t| t.test_id == id)
            .ok_or_else(|| StoreError::NotFound { kind: "test", id: id.into() })?;
        let test = self.tests.remove(pos);
        self.save_tests()?;
        Ok(test)
    }
}

fn check_threshold(test: &BehavioralTest) -> Result<(), StoreError> {
    if test.threshold.is_finite() {
        Ok(())
    } else {
        Err(StoreError::Invalid("test threshold must be finite".into()))
    }
}
