//! Run manifests: one key=value text file per command invocation, recording
//! the exact configuration, input/output paths, content hashes of produced
//! artifacts, and wall time.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use sha2::{Digest, Sha256};

pub struct Manifest {
    command: String,
    entries: Vec<(String, String)>,
    started: Instant,
}

impl Manifest {
    pub fn new(command: &str) -> Self {
        Self {
            command: command.to_string(),
            entries: Vec::new(),
            started: Instant::now(),
        }
    }

    pub fn set(&mut self, key: &str, value: impl std::fmt::Display) {
        self.entries.push((key.to_string(), value.to_string()));
    }

    /// Records an output path along with the SHA-256 of its current content.
    pub fn artifact(&mut self, key: &str, path: &Path) -> Result<()> {
        let bytes = fs::read(path)
            .with_context(|| format!("hashing artifact {}", path.display()))?;
        let digest = Sha256::digest(&bytes);
        self.set(key, path.display());
        self.set(&format!("{}_sha256", key), hex(&digest));
        Ok(())
    }

    pub fn write(mut self, path: &Path) -> Result<()> {
        self.set("wall_seconds", format!("{:.3}", self.started.elapsed().as_secs_f64()));
        let mut out = String::new();
        let _ = writeln!(out, "command={}", self.command);
        for (k, v) in &self.entries {
            let _ = writeln!(out, "{}={}", k, v);
        }
        fs::write(path, out).with_context(|| format!("writing manifest {}", path.display()))?;
        Ok(())
    }
}

fn hex(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        let _ = write!(s, "{:02x}", b);
    }
    s
}

/// `<path>.manifest` next to the primary output.
pub fn default_manifest_path(primary_output: &Path) -> PathBuf {
    let mut os = primary_output.as_os_str().to_os_string();
    os.push(".manifest");
    PathBuf::from(os)
}
