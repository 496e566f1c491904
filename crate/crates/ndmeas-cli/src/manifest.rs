//! Run manifests: atomic output writes, content digests, and the manifest
//! document emitted after all outputs landed.

use crate::args::ResolvedConfig;
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};
use std::time::Instant;

#[derive(Debug, Serialize)]
struct OutputEntry {
    path: String,
    sha256: String,
    bytes: usize,
}

#[derive(Debug, Serialize)]
struct ManifestDoc<'a> {
    version: &'static str,
    command: &'a str,
    config: &'a ResolvedConfig,
    outputs: &'a [OutputEntry],
    elapsed_ms: u128,
}

/// Collects outputs for one run directory; every file goes through an
/// atomic write-then-rename and is digested, and the manifest is written
/// last so interrupted runs never leave a complete-looking directory.
pub struct RunWriter {
    dir: PathBuf,
    command: String,
    outputs: Vec<OutputEntry>,
    started: Instant,
}

impl RunWriter {
    pub fn new(dir: &Path, command: &str) -> std::io::Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            command: command.to_string(),
            outputs: Vec::new(),
            started: Instant::now(),
        })
    }


    fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
        let tmp = path.with_extension(format!(
            "{}.tmp",
            path.extension().and_then(|e| e.to_str()).unwrap_or("out")
        ));
        std::fs::write(&tmp, bytes)?;
        std::fs::rename(&tmp, path)
    }

    /// Write one output file atomically and record its digest.
    pub fn emit(&mut self, name: &str, bytes: &[u8]) -> std::io::Result<()> {
        let path = self.dir.join(name);
        Self::write_atomic(&path, bytes)?;
        let mut hasher = Sha256::new();
        hasher.update(bytes);
        self.outputs.push(OutputEntry {
            path: name.to_string(),
            sha256: hex::encode(hasher.finalize()),
            bytes: bytes.len(),
        });
        Ok(())
    }

    pub fn emit_json<T: Serialize>(&mut self, name: &str, value: &T) -> std::io::Result<()> {
        let mut text = serde_json::to_string_pretty(value).expect("reports serialize");
        text.push('\n');
        self.emit(name, text.as_bytes())
    }

    /// Write the manifest (last) and finish the run.
    pub fn finish(self, config: &ResolvedConfig) -> std::io::Result<()> {
        let doc = ManifestDoc {
            version: env!("CARGO_PKG_VERSION"),
            command: &self.command,
            config,
            outputs: &self.outputs,
            elapsed_ms: self.started.elapsed().as_millis(),
        };
        let mut text = serde_json::to_string_pretty(&doc).expect("manifest serializes");
        text.push('\n');
        Self::write_atomic(&self.dir.join("manifest.json"), text.as_bytes())
    }
}
