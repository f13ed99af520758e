use std::collections::BTreeMap;
use std::thread;
use std::time::Duration;

use super::manifest::{FunctionKind, FunctionManifest};
use super::plugin::{PluginCommand, PluginProcess};
use super::PipelineError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegisteredFunction {
    /// Index into [`FunctionRegistry::plugins`].
    pub plugin: usize,
    pub manifest: FunctionManifest,
}

/// Every function offered by a project's plugins, by name.
#[derive(Debug, Clone, Default)]
pub struct FunctionRegistry {
    plugins: Vec<PluginCommand>,
    functions: BTreeMap<String, RegisteredFunction>,
}

impl FunctionRegistry {
    /// Launches each plugin once, in parallel, to read its manifest.
    pub fn discover(plugins: &[PluginCommand], timeout: Duration) -> Result<Self, PipelineError> {
        let manifests: Vec<Result<Vec<FunctionManifest>, PipelineError>> = thread::scope(|s| {
            let handles: Vec<_> = plugins
                .iter()
                .map(|cmd| {
                    s.spawn(move || {
                        let process = PluginProcess::spawn(cmd, timeout)
                            .map_err(|e| PipelineError::Discovery { command: cmd.display(), source: e })?;
                        let functions = process.functions().to_vec();
                        process.shutdown();
                        Ok(functions)
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("discovery thread panicked")).collect()
        });
        let mut all = Vec::new();
        for (i, m) in manifests.into_iter().enumerate() {
            all.extend(m?.into_iter().map(|f| (i, f)));
        }
        Self::from_manifests(plugins.to_vec(), all)
    }

    /// Builds a registry from already known manifests.
    pub fn from_manifests(
        plugins: Vec<PluginCommand>,
        manifests: Vec<(usize, FunctionManifest)>,
    ) -> Result<Self, PipelineError> {
        let mut functions = BTreeMap::new();
        for (plugin, manifest) in manifests {
            manifest.validate()?;
            if plugin >= plugins.len() {
                return Err(PipelineError::UnknownPlugin(plugin));
            }
            let name = manifest.name.clone();
            if functions.insert(name.clone(), RegisteredFunction { plugin, manifest }).is_some() {
                return Err(PipelineError::DuplicateFunction(name));
            }
        }
        Ok(FunctionRegistry { plugins, functions })
    }

    pub fn plugins(&self) -> &[PluginCommand] {
        &self.plugins
    }

    pub fn get(&self, name: &str) -> Option<&RegisteredFunction> {
        self.functions.get(name)
    }

    /// Looks a function up and checks its kind.
    pub fn expect(&self, name: &str, kind: FunctionKind) -> Result<&RegisteredFunction, PipelineError> {
        let f = self.get(name).ok_or_else(|| PipelineError::UnknownFunction(name.to_string()))?;
        if f.manifest.kind != kind {
            return Err(PipelineError::WrongKind { name: name.to_string(), expected: kind, actual: f.manifest.kind });
        }
        Ok(f)
    }

    /// Functions of one kind, sorted by name.
    pub fn of_kind(&self, kind: FunctionKind) -> impl Iterator<Item = &FunctionManifest> {
        self.functions.values().map(|f| &f.manifest).filter(move |m| m.kind == kind)
    }

    pub fn functions(&self) -> impl Iterator<Item = &RegisteredFunction> {
        self.functions.values()
    }
}
