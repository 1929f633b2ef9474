//! Run manifests: a JSON record written beside every command's outputs that
//! holds everything needed to rerun the command bit-identically.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Input role to path, as given on the command line.
    pub inputs: BTreeMap<String, String>,
    /// Files written, relative to the output directory.
    pub outputs: Vec<String>,
    /// Fully resolved parameters of the command.
    pub params: serde_json::Value,
}

impl RunManifest {
    pub fn new(command: &str, params: serde_json::Value) -> Self {
        Self {
            tool: "reflidar".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            mode: None,
            seed: None,
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
            params,
        }
    }

    pub fn input(mut self, role: &str, path: &Path) -> Self {
        self.inputs.insert(role.into(), path.display().to_string());
        self
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)? + "\n";
        let path = dir.join(MANIFEST_FILE);
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text =
            fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing manifest {}", path.display()))
    }

    pub fn input_path(&self, role: &str) -> Result<&str> {
        self.inputs
            .get(role)
            .map(String::as_str)
            .with_context(|| format!("manifest has no `{role}` input"))
    }
}
