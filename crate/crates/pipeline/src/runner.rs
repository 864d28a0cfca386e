//! Stage execution with caching and manifests.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use persona_align::train::TrainRunManifest;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::PipelineConfig;
use crate::error::{PipelineError, Result};
use crate::stage::Stage;
use crate::stages;
use crate::store::{sha256_hex, ArtifactRef, StageEntry, Workdir};

/// What a stage run consumed and produced. Holds hashes only, so two runs
/// in different directories with the same inputs write identical bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageManifest {
    pub stage: Stage,
    pub cache_key: String,
    pub config_hash: String,
    pub config: serde_json::Value,
    pub seed: u64,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub stats: serde_json::Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainRunManifest>,
}

#[derive(Debug, Clone)]
pub struct StageOutcome {
    pub stage: Stage,
    pub cache_hit: bool,
    pub entry: StageEntry,
    pub manifest: StageManifest,
}

/// One output file of a stage.
pub(crate) struct Output {
    pub name: &'static str,
    pub ext: &'static str,
    pub bytes: Vec<u8>,
}

impl Output {
    pub fn new(name: &'static str, ext: &'static str, bytes: impl Into<Vec<u8>>) -> Self {
        Output {
            name,
            ext,
            bytes: bytes.into(),
        }
    }
}

#[derive(Default)]
pub(crate) struct Product {
    pub outputs: Vec<Output>,
    pub stats: serde_json::Map<String, serde_json::Value>,
    pub train: Option<TrainRunManifest>,
}

/// Read access to a stage's inputs.
pub(crate) struct StageInputs<'a> {
    pub stage: Stage,
    pub config: &'a PipelineConfig,
    workdir: &'a Workdir,
    artifacts: BTreeMap<String, ArtifactRef>,
    pub files: BTreeMap<String, PathBuf>,
}

impl StageInputs<'_> {
    pub fn has(&self, from: Stage, name: &str) -> bool {
        self.artifacts.contains_key(&format!("{from}/{name}"))
    }

    pub fn hash(&self, from: Stage, name: &str) -> Option<String> {
        self.artifacts.get(&format!("{from}/{name}")).map(|r| r.hash.clone())
    }

    pub fn bytes(&self, from: Stage, name: &str) -> Result<Vec<u8>> {
        let key = format!("{from}/{name}");
        let r = self.artifacts.get(&key).ok_or(PipelineError::MissingPrerequisite {
            stage: self.stage,
            producer: from,
            kind: from.product(),
        })?;
        self.workdir.read(r)
    }

    pub fn text(&self, from: Stage, name: &str) -> Result<String> {
        let bytes = self.bytes(from, name)?;
        String::from_utf8(bytes).map_err(|e| PipelineError::Core {
            context: format!("artifact {from}/{name}"),
            source: persona_align::Error::InvalidArgument(e.to_string()),
        })
    }
}

pub struct Pipeline {
    pub config: PipelineConfig,
    pub workdir: Workdir,
}

impl Pipeline {
    pub fn new(config: PipelineConfig, workdir: impl Into<PathBuf>) -> Result<Self> {
        Ok(Pipeline {
            config,
            workdir: Workdir::open(workdir)?,
        })
    }

    /// Runs one stage under the workdir lock.
    pub fn run_stage(&self, stage: Stage) -> Result<StageOutcome> {
        let _lock = self.workdir.lock()?;
        self.execute(stage, None)
    }

    /// Runs every stage in order. Annotations come from `inputs.annotations`.
    pub fn run_all(&self) -> Result<Vec<StageOutcome>> {
        let _lock = self.workdir.lock()?;
        Stage::ALL.into_iter().map(|s| self.execute(s, None)).collect()
    }

    /// Runs `stages` in order under one lock.
    pub fn run_stages(&self, stages: &[Stage]) -> Result<Vec<StageOutcome>> {
        let _lock = self.workdir.lock()?;
        stages.iter().map(|&s| self.execute(s, None)).collect()
    }

    /// Records an annotation vote log (JSONL) as the output of `annotate`.
    pub fn import_annotations(&self, file: &Path) -> Result<StageOutcome> {
        let _lock = self.workdir.lock()?;
        self.execute(Stage::Annotate, Some(file))
    }

    /// Writes the items that still need votes to `out`, or to
    /// `exports/annotation_tasks.jsonl` in the workdir.
    pub fn export_annotation_tasks(&self, out: Option<&Path>) -> Result<(PathBuf, usize)> {
        let _lock = self.workdir.lock()?;
        let inputs = self.gather(Stage::Annotate, &[Stage::Ingest], BTreeMap::new())?;
        let (text, count) = stages::annotation_tasks(&inputs, &self.workdir)?;
        let path = match out {
            Some(p) => p.to_path_buf(),
            None => self.workdir.exports_dir()?.join("annotation_tasks.jsonl"),
        };
        fs::write(&path, text).map_err(|e| PipelineError::io(&path, e))?;
        Ok((path, count))
    }

    fn external_files(&self, stage: Stage, import: Option<&Path>) -> Result<BTreeMap<String, PathBuf>> {
        let i = &self.config.inputs;
        let mut files = BTreeMap::new();
        match stage {
            Stage::Ingest => {
                let personas = i
                    .personas
                    .clone()
                    .ok_or_else(|| PipelineError::config("inputs.personas", "a persona file is required"))?;
                files.insert("personas".to_string(), personas);
                if i.seeds.is_empty() {
                    return Err(PipelineError::config(
                        "inputs.seeds",
                        "at least one seed file is required",
                    ));
                }
                for (n, p) in i.seeds.iter().enumerate() {
                    files.insert(format!("seeds.{n:03}"), p.clone());
                }
                for (name, p) in [
                    ("general", &i.general),
                    ("annotated_variants", &i.annotated_variants),
                    ("eval", &i.eval),
                ] {
                    if let Some(p) = p {
                        files.insert(name.to_string(), p.clone());
                    }
                }
            }
            Stage::Annotate => {
                let file = import.map(Path::to_path_buf).or_else(|| i.annotations.clone()).ok_or_else(|| {
                    PipelineError::config(
                        "inputs.annotations",
                        "no annotation log; export tasks with `annotate export` and load votes with `annotate import FILE`",
                    )
                })?;
                files.insert("annotations".to_string(), file);
            }
            _ => {}
        }
        Ok(files)
    }

    fn gather(&self, stage: Stage, prereqs: &[Stage], files: BTreeMap<String, PathBuf>) -> Result<StageInputs<'_>> {
        let index = self.workdir.index()?;
        let mut artifacts = BTreeMap::new();
        for &p in prereqs {
            let entry = index.stages.get(&p).ok_or(PipelineError::MissingPrerequisite {
                stage,
                producer: p,
                kind: p.product(),
            })?;
            for (name, r) in &entry.outputs {
                artifacts.insert(format!("{p}/{name}"), r.clone());
            }
            artifacts.insert(format!("{p}/manifest"), entry.manifest.clone());
        }
        Ok(StageInputs {
            stage,
            config: &self.config,
            workdir: &self.workdir,
            artifacts,
            files,
        })
    }

    fn execute(&self, stage: Stage, import: Option<&Path>) -> Result<StageOutcome> {
        let inputs = self.gather(stage, stage.prerequisites(), BTreeMap::new())?;
        let inputs = StageInputs {
            files: self.external_files(stage, import)?,
            ..inputs
        };

        let mut input_hashes: BTreeMap<String, String> = inputs
            .artifacts
            .iter()
            .map(|(k, r)| (k.clone(), r.hash.clone()))
            .collect();
        for (name, path) in &inputs.files {
            let bytes = fs::read(path).map_err(|e| PipelineError::io(path, e))?;
            input_hashes.insert(format!("file:{name}"), sha256_hex(&bytes));
        }
        let config = self.config.stage_slice(stage);
        let config_hash = sha256_hex(config.to_string().as_bytes());
        let seed = self.config.seed;
        let cache_key = sha256_hex(
            json!({ "stage": stage, "config": config_hash, "inputs": input_hashes, "seed": seed })
                .to_string()
                .as_bytes(),
        );

        if let Some(outcome) = self.cached(stage, &cache_key)? {
            log::info!("{stage}: cache hit ({})", &cache_key[..12]);
            return Ok(outcome);
        }

        log::info!("{stage}: running");
        let product = stages::run(stage, &inputs, &self.workdir)?;

        let mut outputs = BTreeMap::new();
        for o in &product.outputs {
            outputs.insert(o.name.to_string(), self.workdir.put(&o.bytes, o.ext)?);
        }
        let mut train = product.train;
        if let (Some(t), Some(ckpt)) = (train.as_mut(), outputs.get("checkpoint")) {
            t.output_checkpoint = Some(ckpt.hash.clone());
        }
        let manifest = StageManifest {
            stage,
            cache_key: cache_key.clone(),
            config_hash,
            config,
            seed,
            inputs: input_hashes,
            outputs: outputs.iter().map(|(k, r)| (k.clone(), r.hash.clone())).collect(),
            stats: serde_json::Value::Object(product.stats),
            train,
        };
        let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        text.push('\n');
        let entry = StageEntry {
            cache_key,
            manifest: self.workdir.put(text.as_bytes(), "json")?,
            outputs,
        };
        self.workdir.record_stage(stage, entry.clone())?;
        log::info!("{stage}: done, manifest {}", &entry.manifest.hash[..12]);
        Ok(StageOutcome {
            stage,
            cache_hit: false,
            entry,
            manifest,
        })
    }

    /// The recorded outcome when its key matches and every file verifies.
    fn cached(&self, stage: Stage, cache_key: &str) -> Result<Option<StageOutcome>> {
        let index = self.workdir.index()?;
        let Some(entry) = index.stages.get(&stage) else {
            return Ok(None);
        };
        if entry.cache_key != cache_key {
            return Ok(None);
        }
        let Ok(bytes) = self.workdir.read(&entry.manifest) else {
            log::warn!("{stage}: recorded manifest failed verification, recomputing");
            return Ok(None);
        };
        if entry.outputs.values().any(|r| self.workdir.read(r).is_err()) {
            log::warn!("{stage}: recorded outputs failed verification, recomputing");
            return Ok(None);
        }
        let Ok(manifest) = serde_json::from_slice(&bytes) else {
            return Ok(None);
        };
        Ok(Some(StageOutcome {
            stage,
            cache_hit: true,
            entry: entry.clone(),
            manifest,
        }))
    }

    /// Parsed manifest of a completed stage.
    pub fn manifest(&self, stage: Stage) -> Result<Option<StageManifest>> {
        let index = self.workdir.index()?;
        let Some(entry) = index.stages.get(&stage) else {
            return Ok(None);
        };
        let bytes = self.workdir.read(&entry.manifest)?;
        Ok(serde_json::from_slice(&bytes).ok())
    }

    /// Bytes of a named output of a completed stage.
    pub fn output(&self, stage: Stage, name: &str) -> Result<Option<Vec<u8>>> {
        let index = self.workdir.index()?;
        match index.stages.get(&stage).and_then(|e| e.outputs.get(name)) {
            Some(r) => self.workdir.read(r).map(Some),
            None => Ok(None),
        }
    }
}
