//! Run configuration: a TOML file plus `COUNCIL_` environment overrides.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::Deserialize;

use council_core::agents::RetryPolicy;
use council_core::council::CouncilConfig;
use council_core::overrides::GuardPolicy;
use council_core::retrieval::RetrievalConfig;
use council_core::DmrsLabel;

const ENV_PREFIX: &str = "COUNCIL_";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config syntax: {0}")]
    Syntax(String),
    #[error("environment override {key}: {message}")]
    Env { key: String, message: String },
    #[error("{field} refers to missing path {path}")]
    MissingPath { field: String, path: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Mock,
    Http,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MockProfile {
    /// Answers drawn from the calibrated stochastic profile.
    Stochastic,
    /// Answers read from `backend.script`.
    Scripted,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendSection {
    pub kind: BackendKind,
    pub profile: MockProfile,
    pub script: Option<PathBuf>,
    pub templates: Option<PathBuf>,
    pub url: Option<String>,
    pub similarity_url: Option<String>,
    pub timeout_secs: u64,
    /// Seed of the stochastic profile's canonical answers; the run seed
    /// only picks the perturbed draws.
    pub profile_seed: u64,
}

impl Default for BackendSection {
    fn default() -> Self {
        BackendSection {
            kind: BackendKind::Mock,
            profile: MockProfile::Stochastic,
            script: None,
            templates: None,
            url: None,
            similarity_url: None,
            timeout_secs: 30,
            profile_seed: 0,
        }
    }
}

impl BackendSection {
    pub fn timeout(&self) -> Duration {
        Duration::from_secs(self.timeout_secs)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// Labeled corpus the retrieval index is built from.
    pub corpus: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub trace_dir: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CouncilSection {
    pub tau: f64,
    pub minority_classes: BTreeSet<DmrsLabel>,
    pub max_calls: u32,
    pub max_advocates: usize,
    pub retry: RetryPolicy,
}

impl Default for CouncilSection {
    fn default() -> Self {
        let d = CouncilConfig::default();
        CouncilSection {
            tau: d.tau,
            minority_classes: d.minority_classes,
            max_calls: d.max_calls,
            max_advocates: d.max_advocates,
            retry: d.retry,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker threads; 0 means one per logical core.
    pub parallelism: usize,
    pub data: DataSection,
    pub council: CouncilSection,
    pub retrieval: RetrievalConfig,
    pub policy: GuardPolicy,
    pub backend: BackendSection,
    pub output: OutputSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            parallelism: 0,
            data: DataSection::default(),
            council: CouncilSection::default(),
            retrieval: RetrievalConfig::default(),
            policy: GuardPolicy::default(),
            backend: BackendSection::default(),
            output: OutputSection::default(),
        }
    }
}

impl RunConfig {
    /// Parses `text`, applies overrides from `env`, and resolves relative
    /// paths against `base_dir`. Does not touch the filesystem.
    pub fn parse<I>(text: &str, env: I, base_dir: &Path) -> Result<Self, ConfigError>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Syntax(e.to_string()))?;
        let mut overrides: Vec<(String, String)> = env.into_iter().filter(|(k, _)| k.starts_with(ENV_PREFIX)).collect();
        overrides.sort();
        for (key, value) in overrides {
            apply_override(&mut table, &key, &value)?;
        }
        let mut cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Syntax(e.to_string()))?;
        cfg.resolve_paths(base_dir);
        cfg.council_config()
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        cfg.policy.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(cfg)
    }

    /// Loads `path` (or defaults when `None`) with process environment
    /// overrides. Call [`RunConfig::check_paths`] once command-line flags
    /// have been applied.
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        let (text, base) = match path {
            Some(p) => (
                std::fs::read_to_string(p).map_err(|source| ConfigError::Io {
                    path: p.display().to_string(),
                    source,
                })?,
                p.parent().map(Path::to_path_buf).unwrap_or_default(),
            ),
            None => (String::new(), PathBuf::new()),
        };
        Self::parse(&text, std::env::vars(), &base)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(path) = p {
                if path.is_relative() {
                    *path = base.join(&*path);
                }
            }
        };
        fix(&mut self.data.corpus);
        fix(&mut self.backend.script);
        fix(&mut self.backend.templates);
        fix(&mut self.output.trace_dir);
    }

    pub fn check_paths(&self) -> Result<(), ConfigError> {
        let must_exist = [
            ("data.corpus", &self.data.corpus),
            ("backend.script", &self.backend.script),
            ("backend.templates", &self.backend.templates),
        ];
        for (field, path) in must_exist {
            if let Some(p) = path {
                if !p.exists() {
                    return Err(ConfigError::MissingPath {
                        field: field.into(),
                        path: p.display().to_string(),
                    });
                }
            }
        }
        if self.backend.kind == BackendKind::Http && self.backend.url.is_none() {
            return Err(ConfigError::Invalid("backend.kind = \"http\" requires backend.url".into()));
        }
        if self.backend.kind == BackendKind::Mock && self.backend.profile == MockProfile::Scripted && self.backend.script.is_none() {
            return Err(ConfigError::Invalid("backend.profile = \"scripted\" requires backend.script".into()));
        }
        Ok(())
    }

    pub fn council_config(&self) -> CouncilConfig {
        CouncilConfig {
            tau: self.council.tau,
            minority_classes: self.council.minority_classes.clone(),
            max_calls: self.council.max_calls,
            max_advocates: self.council.max_advocates,
            seed: self.seed,
            retrieval: self.retrieval.clone(),
            retry: self.council.retry.clone(),
        }
    }
}

/// `COUNCIL_SEED=3` sets `seed`; `COUNCIL_COUNCIL__TAU=0.8` sets `council.tau`.
/// Values are parsed as TOML and fall back to plain strings.
fn apply_override(table: &mut toml::Table, key: &str, value: &str) -> Result<(), ConfigError> {
    let path: Vec<String> = key[ENV_PREFIX.len()..].split("__").map(str::to_lowercase).collect();
    if path.iter().any(String::is_empty) {
        return Err(ConfigError::Env {
            key: key.into(),
            message: "empty path segment".into(),
        });
    }
    let parsed = format!("v = {value}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(value.to_string()));
    let (last, parents) = path.split_last().expect("non-empty path");
    let mut cursor = table;
    for seg in parents {
        let entry = cursor
            .entry(seg.clone())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cursor = entry.as_table_mut().ok_or_else(|| ConfigError::Env {
            key: key.into(),
            message: format!("{seg} is not a table"),
        })?;
    }
    cursor.insert(last.clone(), parsed);
    Ok(())
}
