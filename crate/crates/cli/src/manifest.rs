use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use diffcomet::bench::SweepConfig;
use diffcomet::sim::ScenarioConfig;

pub const ARTIFACT: &str = "diffcomet";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

/// Sidecar of a `simulate` run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationManifest {
    pub artifact: String,
    pub version: String,
    pub command: String,
    pub scenario: ScenarioConfig,
    pub master_seed: u64,
    pub stream: u64,
    pub format: String,
    pub created: String,
    pub outputs: Vec<PathBuf>,
}

/// Record of a `sweep` run; its `sweeps` re-run to the same tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepManifest {
    pub artifact: String,
    pub version: String,
    pub command: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    pub sweeps: Vec<SweepConfig>,
    pub started: String,
    pub finished: String,
    pub outputs: Vec<PathBuf>,
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn sidecar_path(data: &Path) -> PathBuf {
    data.with_extension("json")
}
