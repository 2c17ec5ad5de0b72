//! Run bookkeeping: output files, config hash and the manifest.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub config_path: Option<String>,
    /// Hex SHA-256 of the config file bytes; of the empty string without one.
    pub config_hash: String,
    pub seed: u64,
    pub tool_version: String,
    /// Parsed config after defaults were filled in.
    pub config: serde_json::Value,
    /// Files written, relative to the output directory.
    pub outputs: Vec<String>,
    /// Command-specific headline results.
    pub results: serde_json::Value,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Output directory plus the provenance every artifact carries.
#[derive(Debug)]
pub struct RunContext {
    pub out: PathBuf,
    pub seed: u64,
    pub config_hash: String,
    outputs: Vec<String>,
}

/// Formats a float so that it parses back to the same value.
pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

impl RunContext {
    pub fn new(out: &Path, seed: u64, config_hash: String) -> CliResult<Self> {
        fs::create_dir_all(out)
            .map_err(|e| CliError::runtime(format!("creating {}: {e}", out.display())))?;
        Ok(Self {
            out: out.to_path_buf(),
            seed,
            config_hash,
            outputs: Vec::new(),
        })
    }

    /// Absolute path of output `name`, recorded in the manifest.
    pub fn output(&mut self, name: &str) -> CliResult<PathBuf> {
        let path = self.out.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)
                .map_err(|e| CliError::runtime(format!("creating {}: {e}", parent.display())))?;
        }
        if !self.outputs.iter().any(|o| o == name) {
            self.outputs.push(name.to_string());
        }
        Ok(path)
    }

    /// Writes a CSV whose fields are already formatted.
    pub fn write_csv(
        &mut self,
        name: &str,
        header: &[&str],
        rows: &[Vec<String>],
    ) -> CliResult<()> {
        let path = self.output(name)?;
        let mut w = csv::Writer::from_path(&path).map_err(CliError::runtime)?;
        w.write_record(header).map_err(CliError::runtime)?;
        for r in rows {
            w.write_record(r).map_err(CliError::runtime)?;
        }
        w.flush().map_err(CliError::runtime)?;
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> CliResult<()> {
        let path = self.output(name)?;
        let mut w = BufWriter::new(File::create(&path).map_err(CliError::runtime)?);
        serde_json::to_writer_pretty(&mut w, value).map_err(CliError::runtime)?;
        writeln!(w).map_err(CliError::runtime)?;
        w.flush().map_err(CliError::runtime)
    }

    /// Provenance block embedded in checkpoints and JSON outputs.
    pub fn provenance(&self, command: &str) -> serde_json::Value {
        serde_json::json!({
            "command": command,
            "seed": self.seed,
            "config_hash": self.config_hash,
        })
    }

    /// Checks every output exists, then writes the manifest.
    pub fn finish(
        mut self,
        command: &str,
        config_path: Option<&Path>,
        config: serde_json::Value,
        results: serde_json::Value,
    ) -> CliResult<Manifest> {
        for o in &self.outputs {
            if !self.out.join(o).exists() {
                return Err(CliError::runtime(format!(
                    "declared output {o} was not written"
                )));
            }
        }
        self.outputs.sort();
        let manifest = Manifest {
            command: command.to_string(),
            config_path: config_path.map(|p| p.display().to_string()),
            config_hash: self.config_hash.clone(),
            seed: self.seed,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config,
            outputs: self.outputs.clone(),
            results,
        };
        let path = self.out.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(&manifest).map_err(CliError::runtime)?;
        fs::write(&path, text + "\n").map_err(CliError::runtime)?;
        Ok(manifest)
    }
}

pub fn read_manifest(dir: &Path) -> CliResult<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path)
        .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}
