use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const MANIFEST: &str = "manifest.json";
pub const DETECTIONS_SUFFIX: &str = ".detections.json";

/// Pretty JSON with object keys in sorted order, newline-terminated.
pub fn to_sorted_json<T: Serialize>(value: &T) -> Result<String, CliError> {
    let v = serde_json::to_value(value).map_err(|e| CliError::runtime(format!("serializing output: {e}")))?;
    let mut s = serde_json::to_string_pretty(&v).map_err(|e| CliError::runtime(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    write_text(path, &to_sorted_json(value)?)
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::io(format!("writing {}: {e}", path.display())))
}

pub fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::io(format!("reading {}: {e}", path.display())))
}

pub fn ensure_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|e| CliError::io(format!("creating {}: {e}", path.display())))
}

pub fn require_exists(path: &Path) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::io(format!("{} does not exist", path.display())))
    }
}

/// Scene files under `path`: the file itself, or every `*.json` in the
/// directory except manifests and detection files, sorted by name.
pub fn list_scenes(path: &Path) -> Result<Vec<PathBuf>, CliError> {
    require_exists(path)?;
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let entries = fs::read_dir(path).map_err(|e| CliError::io(format!("listing {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for entry in entries {
        let p = entry
            .map_err(|e| CliError::io(format!("listing {}: {e}", path.display())))?
            .path();
        let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
        // outputs such as `x.detections.json` carry a second extension
        let scene_like = name
            .strip_suffix(".json")
            .is_some_and(|s| !s.is_empty() && !s.contains('.'));
        if p.is_file() && scene_like && name != MANIFEST {
            out.push(p);
        }
    }
    out.sort();
    if out.is_empty() {
        return Err(CliError::io(format!("no scene files in {}", path.display())));
    }
    Ok(out)
}

pub fn stem(path: &Path) -> String {
    path.file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("scene")
        .to_string()
}

/// Record of one command invocation, written next to its outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: Option<PathBuf>,
    pub scenes: Vec<PathBuf>,
    pub output_dir: PathBuf,
    pub tool_version: String,
    pub seed: u64,
}

impl RunManifest {
    pub fn new(command: &str, config: Option<&Path>, scenes: Vec<PathBuf>, output_dir: &Path, seed: u64) -> Self {
        Self {
            command: command.to_string(),
            config: config.map(Path::to_path_buf),
            scenes,
            output_dir: output_dir.to_path_buf(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
        }
    }

    pub fn write(&self) -> Result<(), CliError> {
        write_json(&self.output_dir.join(MANIFEST), self)
    }
}
