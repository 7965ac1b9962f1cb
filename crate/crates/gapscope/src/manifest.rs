//! Run manifests: enough to re-run a command and check its outputs.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::output::{sha256_file, OutputFile};

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputFile {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    /// Arguments that reproduce the run; `--out-dir` and `--threads` are
    /// left out because they do not affect any output.
    pub args: Vec<String>,
    /// Every option after defaults were applied.
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub inputs: Vec<InputFile>,
    pub outputs: Vec<OutputFile>,
    /// Fixed methodological choices that shape the numbers.
    pub conventions: Vec<String>,
}

impl RunManifest {
    pub fn read(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
    }

    /// Check that every input still has the recorded digest.
    pub fn verify_inputs(&self) -> CliResult<()> {
        for i in &self.inputs {
            let now = sha256_file(Path::new(&i.path))?;
            if now != i.sha256 {
                return Err(CliError::data(format!(
                    "input {} changed since the recorded run (sha256 {} != {})",
                    i.path, now, i.sha256
                )));
            }
        }
        Ok(())
    }
}

pub fn input_file(path: &Path) -> CliResult<InputFile> {
    Ok(InputFile {
        path: path.display().to_string(),
        sha256: sha256_file(path)?,
    })
}

/// Drop `--out-dir`/`--threads` (and their values) from an argument list.
pub fn replayable_args(args: &[String]) -> Vec<String> {
    let mut out = Vec::new();
    let mut skip_next = false;
    for a in args {
        if skip_next {
            skip_next = false;
            continue;
        }
        match a.as_str() {
            "--out-dir" | "--threads" => skip_next = true,
            s if s.starts_with("--out-dir=") || s.starts_with("--threads=") => {}
            _ => out.push(a.clone()),
        }
    }
    out
}
