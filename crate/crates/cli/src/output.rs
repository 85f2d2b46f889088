//! Artifact writing: run manifests, schema-tagged JSON/JSONL/CSV files.
//!
//! Determinism rules for everything written here: maps are ordered, floats
//! go through serde_json's exact formatter, and nothing records time or
//! host state — so a rerun with the same seed and inputs is byte-identical.

use cdhmm_core::{Error, Result};
use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

/// A run's output directory, created up front; all artifacts and the
/// manifest land inside it.
pub struct OutDir {
    root: PathBuf,
}

impl OutDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root)?;
        Ok(OutDir { root: root.to_path_buf() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// Record what this run saw: the subcommand, the fully resolved
    /// configuration, and a SHA-256 per input file (keyed by the path as
    /// given on the command line).
    pub fn write_manifest<C: Serialize>(
        &self,
        command: &str,
        config: &C,
        inputs: &[&Path],
    ) -> Result<()> {
        let mut hashes = BTreeMap::new();
        for path in inputs {
            hashes.insert(path.display().to_string(), sha256_file(path)?);
        }
        let manifest = json!({
            "schema": "cdhmm.manifest.v1",
            "command": command,
            "config": config,
            "inputs": hashes,
        });
        write_json(&self.path("manifest.json"), &manifest)
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path)?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(format!("{:x}", hasher.finalize()))
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    Ok(fs::write(path, text)?)
}

/// JSON Lines writer whose first record declares the schema.
pub struct JsonlWriter {
    out: BufWriter<File>,
}

impl JsonlWriter {
    pub fn create(path: &Path, schema: &str) -> Result<Self> {
        let mut out = BufWriter::new(File::create(path)?);
        serde_json::to_writer(&mut out, &json!({ "schema": schema }))?;
        out.write_all(b"\n")?;
        Ok(JsonlWriter { out })
    }

    pub fn write<T: Serialize>(&mut self, record: &T) -> Result<()> {
        serde_json::to_writer(&mut self.out, record)?;
        self.out.write_all(b"\n")?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }
}

/// CSV writer preceded by a `# schema:` comment line (skippable by any
/// comment-aware reader).
pub fn csv_writer(path: &Path, schema: &str) -> Result<CsvWriter> {
    let mut file = File::create(path)?;
    writeln!(file, "# schema: {schema}")?;
    Ok(CsvWriter { out: csv::Writer::from_writer(file) })
}

/// Thin wrapper converting `csv::Error` into the crate-wide error type.
pub struct CsvWriter {
    out: csv::Writer<File>,
}

impl CsvWriter {
    pub fn write_record<I, T>(&mut self, record: I) -> Result<()>
    where
        I: IntoIterator<Item = T>,
        T: AsRef<[u8]>,
    {
        self.out.write_record(record).map_err(csv_error)
    }

    pub fn flush(&mut self) -> Result<()> {
        Ok(self.out.flush()?)
    }
}

fn csv_error(err: csv::Error) -> Error {
    Error::Io(std::io::Error::other(err))
}

/// Render an optional float for CSV: empty when absent.
pub fn opt_cell(value: Option<f64>) -> String {
    value.map(|v| v.to_string()).unwrap_or_default()
}
