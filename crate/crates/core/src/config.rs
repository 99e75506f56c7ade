//! Run settings: built-in defaults, overlaid by a JSON config file, overlaid
//! by command-line flags.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{
    Backend, BackendImpl, BackendSpec, EnsembleConfig, FixtureBackend, FixtureError, FixtureStore,
    Gateway, HttpBackend, MissPolicy, RecordingBackend, Role,
};
use crate::planner::{RepoError, TaskRepository};
use crate::task::TaskKind;

pub const CONFIG_ENV: &str = "PLANSCRIPT_CONFIG";
pub const CONFIG_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config file {path}: {message}")]
    Read { path: String, message: String },
    #[error("config file {path} has schema version {found}, expected {CONFIG_SCHEMA_VERSION}")]
    Schema { path: String, found: u32 },
    #[error("backend {0} needs an endpoint")]
    MissingEndpoint(String),
    #[error("two {role} backends share priority {priority}")]
    DuplicatePriority { role: Role, priority: u32 },
    #[error(transparent)]
    Fixture(#[from] FixtureError),
    #[error(transparent)]
    Repository(#[from] RepoError),
}

/// How backends are reached, overriding each backend's own `impl`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendMode {
    Fixture,
    Http,
    /// HTTP calls whose responses are appended to the fixture files.
    Record,
}

/// Contents of a config file. Every field is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub schema_version: Option<u32>,
    pub task: Option<TaskKind>,
    pub backend: Option<BackendMode>,
    pub fixtures: Option<PathBuf>,
    pub repository: Option<PathBuf>,
    pub backends: Option<Vec<BackendSpec>>,
    pub ensemble: Option<EnsembleConfig>,
    pub fixture_miss: Option<MissPolicy>,
    pub timeout_secs: Option<u64>,
    pub ssparser: Option<bool>,
    pub verifier: Option<bool>,
    pub use_ensemble: Option<bool>,
    pub parallel: Option<bool>,
    pub strict: Option<bool>,
    pub jobs: Option<usize>,
}

impl FileConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let read_err = |message: String| ConfigError::Read {
            path: path.display().to_string(),
            message,
        };
        let text = std::fs::read_to_string(path).map_err(|e| read_err(e.to_string()))?;
        let mut config: FileConfig =
            serde_json::from_str(&text).map_err(|e| read_err(e.to_string()))?;
        if let Some(found) = config
            .schema_version
            .filter(|v| *v != CONFIG_SCHEMA_VERSION)
        {
            return Err(ConfigError::Schema {
                path: path.display().to_string(),
                found,
            });
        }
        // relative paths in a config file are relative to the file
        let base = path.parent().unwrap_or(Path::new(""));
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        config.fixtures.as_mut().map(rebase);
        config.repository.as_mut().map(rebase);
        for spec in config.backends.iter_mut().flatten() {
            spec.fixture.as_mut().map(rebase);
        }
        Ok(config)
    }

    /// The explicit path if given, else `$PLANSCRIPT_CONFIG`, else nothing.
    pub fn discover(explicit: Option<&Path>) -> Result<Self, ConfigError> {
        match explicit {
            Some(path) => Self::load(path),
            None => match std::env::var_os(CONFIG_ENV) {
                Some(path) if !path.is_empty() => Self::load(PathBuf::from(path)),
                _ => Ok(Self::default()),
            },
        }
    }
}

/// Flag values from the command line; `None` leaves the lower layers alone.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub task: Option<TaskKind>,
    pub backend: Option<BackendMode>,
    pub fixtures: Option<PathBuf>,
    pub no_ssparser: bool,
    pub no_verifier: bool,
    pub no_ensemble: bool,
    pub parallel: bool,
    pub strict: bool,
    pub jobs: Option<usize>,
}

/// Fully resolved settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Settings {
    pub task: TaskKind,
    pub backend: Option<BackendMode>,
    pub fixtures: PathBuf,
    pub repository: Option<PathBuf>,
    pub backends: Vec<BackendSpec>,
    pub ensemble: EnsembleConfig,
    pub fixture_miss: MissPolicy,
    pub timeout_secs: u64,
    pub ssparser: bool,
    pub verifier: bool,
    pub use_ensemble: bool,
    pub parallel: bool,
    pub strict: bool,
    pub jobs: usize,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            task: TaskKind::Gqa,
            backend: None,
            fixtures: PathBuf::from("fixtures"),
            repository: None,
            backends: Role::ALL
                .into_iter()
                .map(|role| BackendSpec::fixture(role, role.as_str(), 0))
                .collect(),
            ensemble: EnsembleConfig::default(),
            fixture_miss: MissPolicy::Fatal,
            timeout_secs: crate::gateway::DEFAULT_TIMEOUT.as_secs(),
            ssparser: true,
            verifier: true,
            use_ensemble: true,
            parallel: false,
            strict: false,
            jobs: 1,
        }
    }
}

impl Settings {
    /// Defaults, then `file`, then `cli`.
    pub fn resolve(file: FileConfig, cli: &Overrides) -> Self {
        let d = Settings::default();
        let mut s = Settings {
            task: file.task.unwrap_or(d.task),
            backend: file.backend,
            fixtures: file.fixtures.unwrap_or(d.fixtures),
            repository: file.repository,
            backends: file
                .backends
                .filter(|b| !b.is_empty())
                .unwrap_or(d.backends),
            ensemble: file.ensemble.unwrap_or(d.ensemble),
            fixture_miss: file.fixture_miss.unwrap_or(d.fixture_miss),
            timeout_secs: file.timeout_secs.unwrap_or(d.timeout_secs),
            ssparser: file.ssparser.unwrap_or(d.ssparser),
            verifier: file.verifier.unwrap_or(d.verifier),
            use_ensemble: file.use_ensemble.unwrap_or(d.use_ensemble),
            parallel: file.parallel.unwrap_or(d.parallel),
            strict: file.strict.unwrap_or(d.strict),
            jobs: file.jobs.unwrap_or(d.jobs),
        };
        if let Some(task) = cli.task {
            s.task = task;
        }
        if let Some(mode) = cli.backend {
            s.backend = Some(mode);
        }
        if let Some(dir) = &cli.fixtures {
            s.fixtures = dir.clone();
        }
        if let Some(jobs) = cli.jobs {
            s.jobs = jobs;
        }
        s.ssparser &= !cli.no_ssparser;
        s.verifier &= !cli.no_verifier;
        s.use_ensemble &= !cli.no_ensemble;
        s.parallel |= cli.parallel;
        s.strict |= cli.strict;
        s.jobs = s.jobs.max(1);
        s
    }

    fn fixture_path(&self, spec: &BackendSpec) -> PathBuf {
        spec.fixture
            .clone()
            .unwrap_or_else(|| self.fixtures.join(format!("{}.jsonl", spec.name)))
    }

    fn check_priorities(&self) -> Result<(), ConfigError> {
        let mut seen = std::collections::BTreeSet::new();
        for spec in &self.backends {
            if !seen.insert((spec.role, spec.priority)) {
                return Err(ConfigError::DuplicatePriority {
                    role: spec.role,
                    priority: spec.priority,
                });
            }
        }
        Ok(())
    }

    fn backend_for(&self, spec: &BackendSpec) -> Result<Arc<dyn Backend>, ConfigError> {
        let mode = self.backend.unwrap_or(match spec.implementation {
            BackendImpl::Fixture => BackendMode::Fixture,
            BackendImpl::Http => BackendMode::Http,
        });
        let http = || -> Result<HttpBackend, ConfigError> {
            let endpoint = spec
                .endpoint
                .clone()
                .ok_or_else(|| ConfigError::MissingEndpoint(spec.name.clone()))?;
            Ok(HttpBackend::with_timeout(
                spec.name.clone(),
                endpoint,
                Duration::from_secs(self.timeout_secs),
            ))
        };
        Ok(match mode {
            BackendMode::Fixture => {
                let path = self.fixture_path(spec);
                // a missing file is an empty store: every call reports a miss
                let store = if path.exists() {
                    FixtureStore::load(&path)?
                } else {
                    FixtureStore::empty()
                };
                Arc::new(FixtureBackend::new(spec.name.clone(), Arc::new(store)))
            }
            BackendMode::Http => Arc::new(http()?),
            BackendMode::Record => {
                let store = Arc::new(FixtureStore::open_for_recording(self.fixture_path(spec))?);
                Arc::new(RecordingBackend::new(store, Arc::new(http()?))?)
            }
        })
    }

    pub fn build_gateway(&self) -> Result<Gateway, ConfigError> {
        self.check_priorities()?;
        let mut gateway = Gateway::new()
            .with_ensemble(self.ensemble, self.use_ensemble)
            .with_miss_policy(self.fixture_miss);
        for spec in &self.backends {
            gateway.add_backend(spec.clone(), self.backend_for(spec)?);
        }
        Ok(gateway)
    }

    pub fn repository(&self) -> Result<TaskRepository, ConfigError> {
        Ok(match &self.repository {
            Some(dir) => TaskRepository::load_dir(dir)?,
            None => TaskRepository::builtin().clone(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precedence() {
        let file = FileConfig {
            task: Some(TaskKind::Nlvr2),
            verifier: Some(false),
            jobs: Some(4),
            fixtures: Some("from_file".into()),
            ..FileConfig::default()
        };
        let s = Settings::resolve(file.clone(), &Overrides::default());
        assert_eq!((s.task, s.verifier, s.jobs), (TaskKind::Nlvr2, false, 4));
        assert!(s.ssparser);

        let cli = Overrides {
            task: Some(TaskKind::Mme),
            fixtures: Some("from_cli".into()),
            no_ssparser: true,
            jobs: Some(0),
            ..Overrides::default()
        };
        let s = Settings::resolve(file, &cli);
        assert_eq!(s.task, TaskKind::Mme);
        assert_eq!(s.fixtures, PathBuf::from("from_cli"));
        assert!(!s.ssparser);
        assert_eq!(s.jobs, 1);
    }

    #[test]
    fn file_loading() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(
            &path,
            r#"{"schema_version":1,"fixtures":"fx","backends":[{"role":"vqa","impl":"http","name":"blip","endpoint":"http://127.0.0.1:9/","priority":1}]}"#,
        )
        .unwrap();
        let cfg = FileConfig::load(&path).unwrap();
        assert_eq!(cfg.fixtures.unwrap(), dir.path().join("fx"));
        std::fs::write(&path, r#"{"schema_version":2}"#).unwrap();
        assert!(matches!(
            FileConfig::load(&path),
            Err(ConfigError::Schema { found: 2, .. })
        ));
        std::fs::write(&path, r#"{"bogus":1}"#).unwrap();
        assert!(matches!(
            FileConfig::load(&path),
            Err(ConfigError::Read { .. })
        ));
    }

    #[test]
    fn gateway_construction() {
        let mut s = Settings {
            fixtures: PathBuf::from("/nonexistent"),
            ..Settings::default()
        };
        let gw = s.build_gateway().unwrap();
        assert_eq!(gw.backend_names(Role::Vqa), vec!["vqa"]);

        s.backends
            .push(BackendSpec::fixture(Role::Vqa, "second", 0));
        assert!(matches!(
            s.build_gateway(),
            Err(ConfigError::DuplicatePriority { .. })
        ));

        let h = Settings {
            backend: Some(BackendMode::Http),
            ..Settings::default()
        };
        assert!(matches!(
            h.build_gateway(),
            Err(ConfigError::MissingEndpoint(_))
        ));
    }
}
