//! Input loading, atomic output writes and the run manifest.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

/// A JSON input file together with its content hash.
pub struct Loaded<T> {
    pub value: T,
    pub input: InputFile,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputFile {
    pub path: String,
    pub sha256: String,
}

pub fn read_input(path: &Path) -> Result<(String, InputFile), CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    let input = InputFile {
        path: path.display().to_string(),
        sha256: hex::encode(Sha256::digest(text.as_bytes())),
    };
    Ok((text, input))
}

/// Parses `text` as `T`, reporting failures as `file:line:column: message`.
pub fn parse_json<T: DeserializeOwned>(path: &str, text: &str) -> Result<T, CliError> {
    serde_json::from_str(text).map_err(|e| {
        CliError::Input(format!("{path}:{}:{}: {e}", e.line(), e.column()))
    })
}

pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<Loaded<T>, CliError> {
    let (text, input) = read_input(path)?;
    let value = parse_json(&input.path, &text)?;
    Ok(Loaded { value, input })
}

/// Writes through a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| CliError::Io(format!("{}: not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let io = |e: std::io::Error| CliError::Io(format!("{}: {e}", path.display()));
    let mut f = fs::File::create(&tmp).map_err(io)?;
    f.write_all(bytes).map_err(io)?;
    f.sync_all().map_err(io)?;
    drop(f);
    fs::rename(&tmp, path).map_err(io)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn write_csv(
    path: &Path,
    fill: impl FnOnce(&mut Vec<u8>) -> csv::Result<()>,
) -> Result<(), CliError> {
    let mut buf = Vec::new();
    fill(&mut buf).map_err(|e| CliError::Io(e.to_string()))?;
    write_atomic(path, &buf)
}

pub fn ensure_dir(dir: &Path) -> Result<PathBuf, CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    Ok(dir.to_path_buf())
}

/// Everything that determines a run's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub command: String,
    pub tool_version: String,
    pub inputs: Vec<InputFile>,
    /// Non-file settings that affect the outputs.
    pub parameters: serde_json::Value,
    pub seeds: Vec<u64>,
    pub out_dir: String,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, out_dir: &Path) -> Self {
        Self {
            schema_version: MANIFEST_SCHEMA_VERSION,
            command: command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            inputs: Vec::new(),
            parameters: serde_json::Value::Null,
            seeds: Vec::new(),
            out_dir: out_dir.display().to_string(),
            outputs: Vec::new(),
        }
    }

    pub fn write(&self, out_dir: &Path) -> Result<(), CliError> {
        write_json(&out_dir.join("manifest.json"), self)
    }
}
