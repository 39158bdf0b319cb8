use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::usage;

pub const MANIFEST_FILE: &str = "manifest.json";

/// A file an experiment read, pinned by fingerprint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputRef {
    pub role: String,
    pub path: PathBuf,
    pub fingerprint: String,
}

/// Everything needed to reproduce one output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentManifest {
    pub command: String,
    /// Fully resolved configuration, after flag overrides.
    pub config: Value,
    pub seeds: Vec<u64>,
    pub inputs: Vec<InputRef>,
    /// Output files, relative to the manifest's directory.
    pub outputs: Vec<String>,
    pub tool_version: String,
}

impl ExperimentManifest {
    pub fn new(command: &str, config: &impl Serialize, seeds: Vec<u64>) -> Result<Self> {
        Ok(ExperimentManifest {
            command: command.to_string(),
            config: serde_json::to_value(config)?,
            seeds,
            inputs: Vec::new(),
            outputs: Vec::new(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
        })
    }

    pub fn input(&mut self, role: &str, path: &Path, fingerprint: &str) {
        self.inputs.push(InputRef {
            role: role.to_string(),
            path: path.to_path_buf(),
            fingerprint: fingerprint.to_string(),
        });
    }

    pub fn find_input(&self, role: &str) -> Option<&InputRef> {
        self.inputs.iter().find(|i| i.role == role)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        write_json(&dir.join(MANIFEST_FILE), self)
    }

    pub fn read(dir: &Path) -> Result<Self> {
        read_json(&dir.join(MANIFEST_FILE))
    }
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", path.display()))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// A config file is either the bare config or a manifest written by `command`.
pub struct LoadedConfig<T> {
    pub config: T,
    pub manifest: Option<ExperimentManifest>,
}

pub fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>, command: &str) -> Result<LoadedConfig<T>> {
    let Some(path) = path else {
        return Ok(LoadedConfig {
            config: T::default(),
            manifest: None,
        });
    };
    let value: Value = read_json(path)?;
    let is_manifest = value.get("tool_version").is_some() && value.get("command").is_some();
    if is_manifest {
        let m: ExperimentManifest =
            serde_json::from_value(value).with_context(|| format!("parsing manifest {}", path.display()))?;
        if m.command != command {
            return Err(usage(format!(
                "{} is a manifest for `{}`, not `{command}`",
                path.display(),
                m.command
            )));
        }
        let config = serde_json::from_value(m.config.clone()).with_context(|| format!("config in {}", path.display()))?;
        Ok(LoadedConfig {
            config,
            manifest: Some(m),
        })
    } else {
        let config = serde_json::from_value(value).with_context(|| format!("parsing {}", path.display()))?;
        Ok(LoadedConfig { config, manifest: None })
    }
}
