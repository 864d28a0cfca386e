//! Read-only workdir diagnosis.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::runner::StageManifest;
use crate::stage::Stage;
use crate::store::{sha256_hex, ArtifactRef, Index, Workdir, INDEX_FILE, LOCK_FILE};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum Status {
    Done,
    Pending,
    Blocked {
        on: String,
    },
    /// Recorded, but some of its files are missing or altered.
    Damaged,
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Status::Done => f.write_str("done"),
            Status::Pending => f.write_str("pending"),
            Status::Blocked { on } => write!(f, "blocked on {on}"),
            Status::Damaged => f.write_str("damaged"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Issue {
    /// File content no longer matches the hash it is stored under.
    Mismatch {
        stage: Stage,
        artifact: String,
        expected: String,
        actual: String,
    },
    Missing {
        stage: Stage,
        artifact: String,
        file: String,
    },
    /// A manifest input that no longer exists in the store.
    Dangling {
        stage: Stage,
        input: String,
        hash: String,
    },
    /// Built from an upstream output that has since been replaced.
    Stale {
        stage: Stage,
        input: String,
    },
    UnreadableIndex {
        message: String,
    },
    LockPresent,
}

impl fmt::Display for Issue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Issue::Mismatch {
                stage,
                artifact,
                expected,
                actual,
            } => write!(
                f,
                "{stage}/{artifact}: hash mismatch (recorded {}, file has {})",
                short(expected),
                short(actual)
            ),
            Issue::Missing { stage, artifact, file } => write!(f, "{stage}/{artifact}: file {file} is missing"),
            Issue::Dangling { stage, input, hash } => {
                write!(
                    f,
                    "{stage}: input {input} refers to {} which is not in the store",
                    short(hash)
                )
            }
            Issue::Stale { stage, input } => write!(f, "{stage}: input {input} has been rebuilt since; rerun {stage}"),
            Issue::UnreadableIndex { message } => write!(f, "{INDEX_FILE} is unreadable: {message}"),
            Issue::LockPresent => write!(f, "{LOCK_FILE} present: a run is in progress or was interrupted"),
        }
    }
}

fn short(h: &str) -> &str {
    &h[..h.len().min(12)]
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageStatus {
    pub stage: Stage,
    pub status: Status,
    pub artifacts: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DoctorReport {
    pub stages: Vec<StageStatus>,
    pub issues: Vec<Issue>,
}

impl DoctorReport {
    pub fn status(&self, stage: Stage) -> &Status {
        &self
            .stages
            .iter()
            .find(|s| s.stage == stage)
            .expect("every stage listed")
            .status
    }

    pub fn is_healthy(&self) -> bool {
        self.issues.is_empty()
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for st in &self.stages {
            let _ = writeln!(s, "{:<16} {}", st.stage.name(), st.status);
            for (name, hash) in &st.artifacts {
                let _ = writeln!(s, "    {name:<18} {}", short(hash));
            }
        }
        if self.issues.is_empty() {
            s.push_str("no problems found\n");
        } else {
            let _ = writeln!(s, "{} problem(s):", self.issues.len());
            for i in &self.issues {
                let _ = writeln!(s, "  - {i}");
            }
        }
        s
    }
}

fn check_file(wd: &Workdir, stage: Stage, artifact: &str, r: &ArtifactRef, issues: &mut Vec<Issue>) -> bool {
    match fs::read(wd.path_of(r)) {
        Ok(bytes) => {
            let actual = sha256_hex(&bytes);
            if actual == r.hash {
                return true;
            }
            issues.push(Issue::Mismatch {
                stage,
                artifact: artifact.to_string(),
                expected: r.hash.clone(),
                actual,
            });
        }
        Err(_) => issues.push(Issue::Missing {
            stage,
            artifact: artifact.to_string(),
            file: r.file.clone(),
        }),
    }
    false
}

fn stored_hashes(root: &Path) -> Vec<String> {
    let Ok(dir) = fs::read_dir(root.join("artifacts")) else {
        return Vec::new();
    };
    dir.filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().to_string_lossy().to_string();
            name.split_once('.').map(|(h, _)| h.to_string())
        })
        .collect()
}

/// Inspects `root` without creating or changing anything.
pub fn doctor(root: &Path) -> DoctorReport {
    let wd = Workdir::existing(root);
    let mut issues = Vec::new();
    if root.join(LOCK_FILE).exists() {
        issues.push(Issue::LockPresent);
    }
    let index = match wd.index() {
        Ok(i) => i,
        Err(e) => {
            issues.push(Issue::UnreadableIndex { message: e.to_string() });
            Index::default()
        }
    };
    let stored = stored_hashes(root);

    let mut done: BTreeMap<Stage, bool> = BTreeMap::new();
    let mut stages = Vec::new();
    for stage in Stage::ALL {
        let Some(entry) = index.stages.get(&stage) else {
            continue;
        };
        let mut healthy = check_file(&wd, stage, "manifest", &entry.manifest, &mut issues);
        for (name, r) in &entry.outputs {
            healthy &= check_file(&wd, stage, name, r, &mut issues);
        }
        if let Ok(bytes) = fs::read(wd.path_of(&entry.manifest)) {
            if let Ok(m) = serde_json::from_slice::<StageManifest>(&bytes) {
                for (input, hash) in m.inputs.iter().filter(|(k, _)| !k.starts_with("file:")) {
                    if !stored.iter().any(|h| h == hash) {
                        issues.push(Issue::Dangling {
                            stage,
                            input: input.clone(),
                            hash: hash.clone(),
                        });
                        continue;
                    }
                    let current = input.split_once('/').and_then(|(st, name)| {
                        let st: Stage = st.parse().ok()?;
                        let e = index.stages.get(&st)?;
                        Some(if name == "manifest" {
                            e.manifest.hash.clone()
                        } else {
                            e.outputs.get(name)?.hash.clone()
                        })
                    });
                    if current.is_some_and(|c| &c != hash) {
                        issues.push(Issue::Stale {
                            stage,
                            input: input.clone(),
                        });
                    }
                }
            }
        }
        done.insert(stage, healthy);
    }

    for stage in Stage::ALL {
        let status = match done.get(&stage) {
            Some(true) => Status::Done,
            Some(false) => Status::Damaged,
            None => {
                let prereqs = stage.prerequisites();
                let missing: Vec<Stage> = prereqs.iter().copied().filter(|p| !done.contains_key(p)).collect();
                if !missing.is_empty() && missing.len() < prereqs.len() {
                    Status::Blocked {
                        on: missing[0].product_label(),
                    }
                } else {
                    Status::Pending
                }
            }
        };
        let artifacts = index
            .stages
            .get(&stage)
            .map(|e| e.outputs.iter().map(|(k, r)| (k.clone(), r.hash.clone())).collect())
            .unwrap_or_default();
        stages.push(StageStatus {
            stage,
            status,
            artifacts,
        });
    }
    DoctorReport { stages, issues }
}
