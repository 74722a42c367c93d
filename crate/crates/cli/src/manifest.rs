//! Run manifests, file digests and the run-directory lock.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::SystemTime;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::UsageError;

pub const MANIFEST: &str = "manifest.json";
pub const LOCK: &str = ".lock";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    /// Relative to the manifest for outputs; as given for inputs.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

impl FileDigest {
    pub fn of(path: &Path, recorded: String) -> Result<Self> {
        let data = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        Ok(Self {
            path: recorded,
            sha256: sha256_hex(&data),
            bytes: data.len() as u64,
        })
    }
}

pub fn sha256_hex(data: &[u8]) -> String {
    hex::encode(Sha256::digest(data))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub tool_version: String,
    pub seed: u64,
    /// Fully resolved configuration, defaults included.
    pub config: serde_json::Value,
    pub started: String,
    pub finished: Option<String>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

pub fn timestamp() -> String {
    humantime::format_rfc3339_seconds(SystemTime::now()).to_string()
}

impl RunManifest {
    pub fn start(command: &str, args: Vec<String>, seed: u64, config: serde_json::Value) -> Self {
        Self {
            command: command.into(),
            args,
            tool_version: env!("CARGO_PKG_VERSION").into(),
            seed,
            config,
            started: timestamp(),
            finished: None,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    /// Inputs are recorded by absolute path so they can be checked from
    /// anywhere.
    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        let abs = fs::canonicalize(path).with_context(|| format!("resolving {}", path.display()))?;
        self.inputs.push(FileDigest::of(&abs, abs.display().to_string())?);
        Ok(())
    }

    /// Record every file under `root` except the manifest and lock.
    pub fn inventory(&mut self, root: &Path) -> Result<()> {
        let mut files = Vec::new();
        walk(root, &mut files)?;
        files.sort();
        self.outputs.clear();
        for f in files {
            let rel = relative(root, &f);
            if rel == MANIFEST || rel == LOCK {
                continue;
            }
            self.outputs.push(FileDigest::of(&f, rel)?);
        }
        Ok(())
    }

    /// Record specific output files, named relative to `root`.
    pub fn add_outputs(&mut self, root: &Path, files: &[PathBuf]) -> Result<()> {
        for f in files {
            self.outputs.push(FileDigest::of(f, relative(root, f))?);
        }
        Ok(())
    }

    pub fn finish(&mut self) {
        self.finished = Some(timestamp());
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    /// Input files whose current digest differs from the recorded one.
    pub fn changed_inputs(&self) -> Vec<String> {
        self.inputs
            .iter()
            .filter(|d| match fs::read(&d.path) {
                Ok(data) => sha256_hex(&data) != d.sha256,
                Err(_) => true,
            })
            .map(|d| d.path.clone())
            .collect()
    }
}

fn relative(root: &Path, f: &Path) -> String {
    let rel = f.strip_prefix(root).unwrap_or(f);
    rel.components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("/")
}

fn walk(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let path = entry?.path();
        if path.is_dir() {
            walk(&path, out)?;
        } else {
            out.push(path);
        }
    }
    Ok(())
}

/// Advisory lock on a run directory, released on drop.
#[derive(Debug)]
pub struct RunLock {
    path: PathBuf,
}

impl RunLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join(LOCK);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                writeln!(f, "{}", std::process::id())?;
                Ok(Self { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(UsageError(format!(
                "{} is in use by another run (remove {} if that run is gone)",
                dir.display(),
                path.display()
            ))
            .into()),
            Err(e) => Err(e).with_context(|| format!("locking {}", dir.display())),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}
