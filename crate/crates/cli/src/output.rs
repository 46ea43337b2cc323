//! Artifact writing. Every table starts with the resolved configuration as
//! `#` comment lines; every key-value report carries it as a `[config]`
//! table.

use std::fs;
use std::path::{Path, PathBuf};

use deconfounder::{Error, Result};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

/// Config echo as comment lines (without the leading `# `).
pub fn preamble(cfg: &RunConfig, command: &str) -> Vec<String> {
    let mut lines = vec![format!("deconfounder {} {command}", cfg.version), "resolved configuration:".into()];
    lines.extend(cfg.to_toml().lines().map(str::to_string));
    lines
}

pub fn write_table(path: &Path, cfg: &RunConfig, command: &str, body: &str) -> Result<PathBuf> {
    let mut out = String::new();
    for line in preamble(cfg, command) {
        out.push_str("# ");
        out.push_str(&line);
        out.push('\n');
    }
    out.push_str(body);
    fs::write(path, out).map_err(|e| io_err(path, e))?;
    Ok(path.to_path_buf())
}

pub fn write_report(path: &Path, cfg: &RunConfig, command: &str, mut report: toml::Table) -> Result<PathBuf> {
    report.insert("command".into(), toml::Value::String(command.into()));
    report.insert("config".into(), cfg.to_value());
    let text = toml::to_string(&report).map_err(|e| Error::Format(e.to_string()))?;
    fs::write(path, text).map_err(|e| io_err(path, e))?;
    Ok(path.to_path_buf())
}

/// Hex SHA-256 of a file.
pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Builds a `toml::Table` from `key => value` pairs.
#[macro_export]
macro_rules! table {
    ($($k:expr => $v:expr),* $(,)?) => {{
        let mut t = toml::Table::new();
        $( t.insert($k.to_string(), toml::Value::try_from($v).expect("serializable")); )*
        t
    }};
}
