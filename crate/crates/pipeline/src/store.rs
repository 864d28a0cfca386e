//! Content-addressed, write-once workdir.
//!
//! ```text
//! <workdir>/
//!   index.json                 stage -> cache key, manifest and outputs
//!   artifacts/<sha256>.<ext>   immutable artifact files
//!   exports/                   hand-off files for people (annotation tasks)
//!   .lock                      present while a stage runs
//! ```

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{PipelineError, Result};
use crate::stage::Stage;

pub const LOCK_FILE: &str = ".lock";
pub const INDEX_FILE: &str = "index.json";
const ARTIFACT_DIR: &str = "artifacts";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactRef {
    pub hash: String,
    /// Path relative to the workdir.
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageEntry {
    pub cache_key: String,
    pub manifest: ArtifactRef,
    pub outputs: BTreeMap<String, ArtifactRef>,
}

/// The human-readable map from stages to their artifacts.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Index {
    pub stages: BTreeMap<Stage, StageEntry>,
}

#[derive(Debug, Clone)]
pub struct Workdir {
    root: PathBuf,
}

/// Held while a stage runs; removes the lock file on drop.
#[derive(Debug)]
pub struct WorkdirLock {
    path: PathBuf,
}

impl Drop for WorkdirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

impl Workdir {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(root.join(ARTIFACT_DIR)).map_err(|e| PipelineError::io(&root, e))?;
        Ok(Workdir { root })
    }

    /// Opens without creating anything; used by read-only inspection.
    pub fn existing(root: impl Into<PathBuf>) -> Self {
        Workdir { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn lock(&self) -> Result<WorkdirLock> {
        let path = self.root.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(WorkdirLock { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(PipelineError::Locked(self.root.clone())),
            Err(e) => Err(PipelineError::io(path, e)),
        }
    }

    pub fn path_of(&self, r: &ArtifactRef) -> PathBuf {
        self.root.join(&r.file)
    }

    /// Stores `bytes` under their hash. Storing the same content twice is a
    /// no-op; a file that no longer matches its name is replaced.
    pub fn put(&self, bytes: &[u8], ext: &str) -> Result<ArtifactRef> {
        let hash = sha256_hex(bytes);
        let file = format!("{ARTIFACT_DIR}/{hash}.{ext}");
        let path = self.root.join(&file);
        let intact = fs::read(&path).is_ok_and(|old| sha256_hex(&old) == hash);
        if !intact {
            let tmp = self.root.join(ARTIFACT_DIR).join(format!(".{hash}.tmp"));
            fs::write(&tmp, bytes).map_err(|e| PipelineError::io(&tmp, e))?;
            fs::rename(&tmp, &path).map_err(|e| PipelineError::io(&path, e))?;
        }
        Ok(ArtifactRef { hash, file })
    }

    /// Reads an artifact and checks it against its recorded hash.
    pub fn read(&self, r: &ArtifactRef) -> Result<Vec<u8>> {
        let path = self.path_of(r);
        let bytes = fs::read(&path).map_err(|e| PipelineError::io(&path, e))?;
        let actual = sha256_hex(&bytes);
        if actual != r.hash {
            return Err(PipelineError::Corrupt {
                file: r.file.clone(),
                expected: r.hash.clone(),
                actual,
            });
        }
        Ok(bytes)
    }

    pub fn read_string(&self, r: &ArtifactRef) -> Result<String> {
        let bytes = self.read(r)?;
        String::from_utf8(bytes)
            .map_err(|e| PipelineError::io(self.path_of(r), std::io::Error::new(std::io::ErrorKind::InvalidData, e)))
    }

    pub fn index(&self) -> Result<Index> {
        let path = self.root.join(INDEX_FILE);
        match fs::read(&path) {
            Ok(bytes) => serde_json::from_slice(&bytes)
                .map_err(|e| PipelineError::io(&path, std::io::Error::new(std::io::ErrorKind::InvalidData, e))),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Index::default()),
            Err(e) => Err(PipelineError::io(path, e)),
        }
    }

    /// Records one stage's entry, leaving every other entry untouched.
    pub fn record_stage(&self, stage: Stage, entry: StageEntry) -> Result<()> {
        let mut index = self.index()?;
        index.stages.insert(stage, entry);
        let mut text = serde_json::to_string_pretty(&index).expect("index serializes");
        text.push('\n');
        let path = self.root.join(INDEX_FILE);
        let tmp = self.root.join(".index.json.tmp");
        fs::write(&tmp, text).map_err(|e| PipelineError::io(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| PipelineError::io(path, e))
    }

    pub fn exports_dir(&self) -> Result<PathBuf> {
        let dir = self.root.join("exports");
        fs::create_dir_all(&dir).map_err(|e| PipelineError::io(&dir, e))?;
        Ok(dir)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn put_is_content_addressed_and_idempotent() {
        let dir = tempfile::tempdir().unwrap();
        let wd = Workdir::open(dir.path()).unwrap();
        let a = wd.put(b"hello", "txt").unwrap();
        let b = wd.put(b"hello", "txt").unwrap();
        assert_eq!(a, b);
        assert_eq!(a.hash, sha256_hex(b"hello"));
        assert_eq!(wd.read(&a).unwrap(), b"hello");
    }

    #[test]
    fn tampering_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let wd = Workdir::open(dir.path()).unwrap();
        let a = wd.put(b"hello", "txt").unwrap();
        fs::write(wd.path_of(&a), b"jello").unwrap();
        assert!(matches!(wd.read(&a), Err(PipelineError::Corrupt { .. })));
    }

    #[test]
    fn lock_is_exclusive_and_released() {
        let dir = tempfile::tempdir().unwrap();
        let wd = Workdir::open(dir.path()).unwrap();
        let held = wd.lock().unwrap();
        assert!(matches!(wd.lock(), Err(PipelineError::Locked(_))));
        drop(held);
        wd.lock().unwrap();
    }
}
