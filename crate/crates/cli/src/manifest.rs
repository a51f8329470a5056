use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::args::Command;
use crate::error::{CliError, CliResult};

/// Record of one command invocation, written next to its primary output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub subcommand: String,
    /// The command with every default filled in; replay runs exactly this.
    pub command: Command,
    pub seeds: Vec<u64>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub wall_time_s: f64,
}

impl RunManifest {
    pub fn new(command: &Command, seeds: Vec<u64>, inputs: Vec<PathBuf>, outputs: Vec<PathBuf>, wall_time_s: f64) -> Self {
        RunManifest {
            tool: "accguard".to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            subcommand: command.name().to_string(),
            command: command.clone(),
            seeds,
            inputs,
            outputs,
            wall_time_s,
        }
    }

    pub fn write(&self, path: &Path) -> CliResult<()> {
        let json = serde_json::to_string_pretty(self).map_err(|e| CliError::io(path, e))?;
        std::fs::write(path, json + "\n").map_err(|e| CliError::io(path, e))
    }

    pub fn read(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::io(path, format!("not a run manifest: {e}")))
    }
}

/// `<primary>.manifest.json`, or `<dir>/<subcommand>.manifest.json` for directory outputs.
pub fn manifest_path(primary: &Path, is_dir: bool, subcommand: &str) -> PathBuf {
    if is_dir {
        primary.join(format!("{subcommand}.manifest.json"))
    } else {
        let mut name = primary.as_os_str().to_owned();
        name.push(".manifest.json");
        PathBuf::from(name)
    }
}
