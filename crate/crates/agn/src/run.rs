//! Run-directory persistence: every invocation gets a fresh directory named
//! by timestamp plus a short config digest, holding a config snapshot and
//! line-delimited metric records. Existing run directories are never
//! mutated.

use serde::Serialize;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use crate::error::{AgnError, Result};

/// Environment variable overriding the runs root (default `./runs`).
pub const RUNS_ROOT_ENV: &str = "AGN_RUNS_DIR";

pub fn runs_root() -> PathBuf {
    std::env::var_os(RUNS_ROOT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs"))
}

/// FNV-1a over the serialized config; enough to tell runs apart in a name.
fn short_digest(bytes: &[u8]) -> String {
    let mut hash: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    format!("{hash:016x}")[..8].to_string()
}

#[derive(Debug)]
pub struct RunDir {
    path: PathBuf,
}

impl RunDir {
    /// Create `<root>/<label>-<unix_ts>-<digest8>`; refuses to reuse an
    /// existing directory.
    pub fn create(root: &Path, label: &str, config: &impl Serialize) -> Result<Self> {
        let snapshot = serde_json::to_vec_pretty(config)?;
        let ts = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        let mut name = format!("{label}-{ts}-{}", short_digest(&snapshot));
        let mut path = root.join(&name);
        let mut bump = 0u32;
        while path.exists() {
            // Same second, same config: disambiguate rather than mutate.
            bump += 1;
            name = format!("{label}-{ts}-{}-{bump}", short_digest(&snapshot));
            path = root.join(&name);
            if bump > 1000 {
                return Err(AgnError::InvalidValue(
                    "cannot allocate a fresh run directory".into(),
                ));
            }
        }
        fs::create_dir_all(&path)?;
        fs::write(path.join("config.json"), &snapshot)?;
        Ok(Self { path })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    /// Append one JSON record to a line-delimited metrics file.
    pub fn record(&self, file: &str, value: &impl Serialize) -> Result<()> {
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(self.path.join(file))?;
        f.write_all(serde_json::to_string(value)?.as_bytes())?;
        f.write_all(b"\n")?;
        Ok(())
    }

    /// Write a pretty JSON report file.
    pub fn write_json(&self, file: &str, value: &impl Serialize) -> Result<()> {
        let mut f = File::create(self.path.join(file))?;
        f.write_all(serde_json::to_string_pretty(value)?.as_bytes())?;
        f.write_all(b"\n")?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn run_dirs_never_collide() {
        let dir = tempfile::tempdir().unwrap();
        let a = RunDir::create(dir.path(), "attack", &serde_json::json!({"seed": 1})).unwrap();
        let b = RunDir::create(dir.path(), "attack", &serde_json::json!({"seed": 1})).unwrap();
        assert_ne!(a.path(), b.path());
        assert!(a.file("config.json").exists());
    }

    #[test]
    fn records_append_jsonl() {
        let dir = tempfile::tempdir().unwrap();
        let run = RunDir::create(dir.path(), "x", &serde_json::json!({})).unwrap();
        run.record("metrics.jsonl", &serde_json::json!({"iter": 0})).unwrap();
        run.record("metrics.jsonl", &serde_json::json!({"iter": 1})).unwrap();
        let text = std::fs::read_to_string(run.file("metrics.jsonl")).unwrap();
        assert_eq!(text.lines().count(), 2);
    }
}
