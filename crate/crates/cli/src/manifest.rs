//! Run directories and their manifests.
//!
//! A run is staged in a sibling directory `<out>.partial-<pid>` that holds
//! `manifest.json` from the start; it is renamed to `<out>` only when the
//! command succeeds and is deleted otherwise, so a failed run leaves
//! nothing behind.

use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::args::Invocation;
use crate::error::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const TOOL: &str = "offeval";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputRecord {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    /// Fully resolved arguments with absolute paths.
    pub invocation: Invocation,
    /// Every settings key after defaults, config files and overrides.
    pub config: BTreeMap<String, String>,
    pub seed: u64,
    pub inputs: Vec<InputRecord>,
    /// Files produced, relative to the run directory.
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let m: RunManifest = serde_json::from_str(&text)
            .map_err(|e| CliError::runtime("manifest", format!("{}: {e}", path.display())))?;
        if m.tool != TOOL {
            return Err(CliError::runtime(
                "manifest",
                format!("{}: written by `{}`, not {TOOL}", path.display(), m.tool),
            ));
        }
        Ok(m)
    }

    fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes") + "\n"
    }
}

/// SHA-256 of a file, or of every file below a directory in path order.
pub fn digest(path: &Path) -> Result<String, CliError> {
    let mut hasher = Sha256::new();
    let mut files = Vec::new();
    collect_files(path, &mut files)?;
    files.sort();
    for f in files {
        if f != path {
            hasher.update(f.strip_prefix(path).unwrap_or(&f).to_string_lossy().as_bytes());
        }
        let mut file = fs::File::open(&f).map_err(|e| CliError::io(&f, e))?;
        let mut buf = [0u8; 1 << 16];
        loop {
            let n = file.read(&mut buf).map_err(|e| CliError::io(&f, e))?;
            if n == 0 {
                break;
            }
            hasher.update(&buf[..n]);
        }
    }
    Ok(format!("{:x}", hasher.finalize()))
}

fn collect_files(path: &Path, out: &mut Vec<PathBuf>) -> Result<(), CliError> {
    let meta = fs::metadata(path).map_err(|e| CliError::io(path, e))?;
    if meta.is_dir() {
        for entry in fs::read_dir(path).map_err(|e| CliError::io(path, e))? {
            let entry = entry.map_err(|e| CliError::io(path, e))?;
            collect_files(&entry.path(), out)?;
        }
    } else {
        out.push(path.to_path_buf());
    }
    Ok(())
}

/// A run directory being filled. Dropping it without [`RunDir::commit`]
/// removes the staging directory.
pub struct RunDir {
    target: PathBuf,
    staging: PathBuf,
    manifest: RunManifest,
    committed: bool,
}

impl RunDir {
    /// Creates the staging directory and writes the manifest into it.
    /// `target` must not exist or be an empty directory.
    pub fn create(target: &Path, manifest: RunManifest) -> Result<Self, CliError> {
        if target.exists() {
            let empty = target.is_dir()
                && fs::read_dir(target)
                    .map_err(|e| CliError::io(target, e))?
                    .next()
                    .is_none();
            if !empty {
                return Err(CliError::runtime(
                    "output",
                    format!("{} already exists and is not an empty directory", target.display()),
                ));
            }
        }
        let name = target
            .file_name()
            .ok_or_else(|| CliError::Usage(format!("invalid output directory {}", target.display())))?;
        let parent = target.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
        let staging = parent.join(format!("{}.partial-{}", name.to_string_lossy(), std::process::id()));
        if staging.exists() {
            fs::remove_dir_all(&staging).map_err(|e| CliError::io(&staging, e))?;
        }
        fs::create_dir(&staging).map_err(|e| CliError::io(&staging, e))?;
        let run = RunDir {
            target: target.to_path_buf(),
            staging,
            manifest,
            committed: false,
        };
        run.write_manifest()?;
        Ok(run)
    }

    fn write_manifest(&self) -> Result<(), CliError> {
        let path = self.staging.join(MANIFEST_FILE);
        fs::write(&path, self.manifest.to_json()).map_err(|e| CliError::io(&path, e))
    }

    /// Path of an output file inside the run; records it in the manifest.
    pub fn file(&mut self, name: &str) -> PathBuf {
        if !self.manifest.outputs.iter().any(|o| o == name) {
            self.manifest.outputs.push(name.to_string());
        }
        let path = self.staging.join(name);
        if let Some(parent) = path.parent() {
            let _ = fs::create_dir_all(parent);
        }
        path
    }

    pub fn write(&mut self, name: &str, contents: impl AsRef<[u8]>) -> Result<PathBuf, CliError> {
        let path = self.file(name);
        fs::write(&path, contents).map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }

    pub fn commit(mut self) -> Result<PathBuf, CliError> {
        self.write_manifest()?;
        if self.target.exists() {
            fs::remove_dir(&self.target).map_err(|e| CliError::io(&self.target, e))?;
        }
        fs::rename(&self.staging, &self.target).map_err(|e| CliError::io(&self.target, e))?;
        self.committed = true;
        Ok(self.target.clone())
    }
}

impl Drop for RunDir {
    fn drop(&mut self) {
        if !self.committed {
            let _ = fs::remove_dir_all(&self.staging);
        }
    }
}
