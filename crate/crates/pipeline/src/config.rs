//! Pipeline configuration: one TOML file, overridable from the command line.

use std::fs;
use std::path::{Path, PathBuf};

use persona_align::annotate::PairPolicy;
use persona_align::augment::{AugmentTarget, AugmentationConfig};
use persona_align::metrics::Grading;
use persona_align::model::Hyper;
use persona_align::train::{OptimizerConfig, SftStage};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{PipelineError, Result};
use crate::stage::Stage;

/// Dataset names a SFT stage may reference.
pub const SFT_DATASETS: [&str; 2] = ["general", "augmented"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub seed: u64,
    /// DPO temperature.
    pub beta: f64,
    /// Learning rate shared by the RM and DPO stages unless overridden there.
    pub lr: f64,
    /// DPO epochs.
    pub epochs: usize,
    pub batch_size: usize,
    pub rouge_threshold: f64,
    pub pair_policy: PairPolicy,
    /// Supervised fine-tuning stages, run in order.
    pub stages: Vec<SftStage>,
    pub inputs: Inputs,
    pub model: Hyper,
    pub train: TrainSection,
    pub augment: AugmentSection,
    pub annotate: AnnotateSection,
    pub rm: RmSection,
    pub label: LabelSection,
    pub pairs: PairsSection,
    pub dpo: DpoSection,
    pub eval: EvalSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            beta: 0.1,
            lr: 0.01,
            epochs: 1,
            batch_size: 4,
            rouge_threshold: 0.7,
            pair_policy: PairPolicy::AllStrict,
            stages: vec![
                SftStage {
                    dataset: "general".into(),
                    epochs: 1,
                    lr: 0.01,
                },
                SftStage {
                    dataset: "augmented".into(),
                    epochs: 5,
                    lr: 0.01,
                },
            ],
            inputs: Inputs::default(),
            model: Hyper::default(),
            train: TrainSection::default(),
            augment: AugmentSection::default(),
            annotate: AnnotateSection::default(),
            rm: RmSection::default(),
            label: LabelSection::default(),
            pairs: PairsSection::default(),
            dpo: DpoSection::default(),
            eval: EvalSection::default(),
        }
    }
}

/// Input files. Relative paths resolve against the config file's directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Inputs {
    pub personas: Option<PathBuf>,
    pub seeds: Vec<PathBuf>,
    pub general: Option<PathBuf>,
    pub annotated_variants: Option<PathBuf>,
    pub annotations: Option<PathBuf>,
    pub eval: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub optimizer: OptimizerConfig,
    pub grad_clip: Option<f64>,
    pub workers: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            optimizer: OptimizerConfig::Sgd,
            grad_clip: None,
            workers: 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TranslatorKind {
    #[default]
    Lexicon,
    ReverseWords,
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentSection {
    pub translator: TranslatorKind,
    pub pivot_chain: Vec<String>,
    /// Back-translation grows the casual seeds to this multiple of their count.
    pub back_translation_factor: usize,
    pub expansion_factor: usize,
    pub max_rounds: usize,
    pub parallelism: usize,
    pub instruction: String,
}

impl Default for AugmentSection {
    fn default() -> Self {
        AugmentSection {
            translator: TranslatorKind::Lexicon,
            pivot_chain: vec!["de".into(), "fr".into(), "ja".into()],
            back_translation_factor: 3,
            expansion_factor: 3,
            max_rounds: 5,
            parallelism: 4,
            instruction: "Rewrite the reply in the character's voice, keeping its meaning.".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnnotateSection {
    pub quorum: usize,
}

impl Default for AnnotateSection {
    fn default() -> Self {
        AnnotateSection { quorum: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RmSection {
    pub epochs: usize,
    pub lr: Option<f64>,
    pub batch_size: Option<usize>,
}

impl Default for RmSection {
    fn default() -> Self {
        RmSection {
            epochs: 1,
            lr: None,
            batch_size: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LabelSection {
    /// Minimum reward gap for a machine-labelled pair; smaller gaps go to humans.
    pub margin: f64,
}

impl Default for LabelSection {
    fn default() -> Self {
        LabelSection { margin: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PairsSection {
    /// Share of pairs held out for evaluation.
    pub test_fraction: f64,
}

impl Default for PairsSection {
    fn default() -> Self {
        PairsSection { test_fraction: 0.2 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DpoSection {
    pub lr: Option<f64>,
    pub max_steps: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub grading: Grading,
    pub max_new_tokens: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            grading: Grading::KeyFacts,
            max_new_tokens: 96,
        }
    }
}

/// Command-line overrides for the top-level keys.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub beta: Option<f64>,
    pub lr: Option<f64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub rouge_threshold: Option<f64>,
    pub pair_policy: Option<PairPolicy>,
}

fn check(ok: bool, key: &str, message: impl FnOnce() -> String) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(PipelineError::config(key, message()))
    }
}

fn positive_real(key: &str, v: f64) -> Result<()> {
    check(v > 0.0 && v.is_finite(), key, || {
        format!("must be a positive number, got {v}")
    })
}

fn at_least_one(key: &str, v: usize) -> Result<()> {
    check(v >= 1, key, || "must be at least 1".into())
}

impl PipelineConfig {
    /// Parses TOML; errors carry the key path of the offending value.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let de = toml::Deserializer::parse(text).map_err(|e| PipelineError::config("(document)", e.to_string()))?;
        let cfg: PipelineConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let key = e.path().to_string();
            let message = e.into_inner().message().trim().to_string();
            PipelineError::config(key, message)
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file and resolves its input paths.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| PipelineError::config("(file)", format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml_str(&text)?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        let i = &mut self.inputs;
        for p in i
            .personas
            .iter_mut()
            .chain(i.seeds.iter_mut())
            .chain(i.general.iter_mut())
            .chain(i.annotated_variants.iter_mut())
            .chain(i.annotations.iter_mut())
            .chain(i.eval.iter_mut())
        {
            fix(p);
        }
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        if let Some(v) = o.seed {
            self.seed = v;
        }
        if let Some(v) = o.beta {
            self.beta = v;
        }
        if let Some(v) = o.lr {
            self.lr = v;
        }
        if let Some(v) = o.epochs {
            self.epochs = v;
        }
        if let Some(v) = o.batch_size {
            self.batch_size = v;
        }
        if let Some(v) = o.rouge_threshold {
            self.rouge_threshold = v;
        }
        if let Some(v) = o.pair_policy {
            self.pair_policy = v;
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        positive_real("beta", self.beta)?;
        positive_real("lr", self.lr)?;
        at_least_one("epochs", self.epochs)?;
        at_least_one("batch_size", self.batch_size)?;
        check((0.0..=1.0).contains(&self.rouge_threshold), "rouge_threshold", || {
            format!("must lie in [0, 1], got {}", self.rouge_threshold)
        })?;
        check(!self.stages.is_empty(), "stages", || {
            "at least one sft stage is required".into()
        })?;
        for (i, s) in self.stages.iter().enumerate() {
            check(
                SFT_DATASETS.contains(&s.dataset.as_str()),
                &format!("stages[{i}].dataset"),
                || {
                    format!(
                        "unknown dataset `{}` (expected one of {})",
                        s.dataset,
                        SFT_DATASETS.join(", ")
                    )
                },
            )?;
            at_least_one(&format!("stages[{i}].epochs"), s.epochs)?;
            positive_real(&format!("stages[{i}].lr"), s.lr)?;
        }
        at_least_one("model.embed_dim", self.model.embed_dim)?;
        at_least_one("model.hidden_dim", self.model.hidden_dim)?;
        at_least_one("model.layers", self.model.layers)?;
        at_least_one("train.workers", self.train.workers)?;
        if let Some(c) = self.train.grad_clip {
            positive_real("train.grad_clip", c)?;
        }
        at_least_one("augment.expansion_factor", self.augment.expansion_factor)?;
        at_least_one("augment.back_translation_factor", self.augment.back_translation_factor)?;
        at_least_one("augment.max_rounds", self.augment.max_rounds)?;
        at_least_one("augment.parallelism", self.augment.parallelism)?;
        at_least_one("annotate.quorum", self.annotate.quorum)?;
        at_least_one("rm.epochs", self.rm.epochs)?;
        if let Some(lr) = self.rm.lr {
            positive_real("rm.lr", lr)?;
        }
        if let Some(b) = self.rm.batch_size {
            at_least_one("rm.batch_size", b)?;
        }
        check(
            self.label.margin >= 0.0 && self.label.margin.is_finite(),
            "label.margin",
            || format!("must be a non-negative number, got {}", self.label.margin),
        )?;
        check(
            (0.0..1.0).contains(&self.pairs.test_fraction),
            "pairs.test_fraction",
            || format!("must lie in [0, 1), got {}", self.pairs.test_fraction),
        )?;
        if let Some(lr) = self.dpo.lr {
            positive_real("dpo.lr", lr)?;
        }
        at_least_one("eval.max_new_tokens", self.eval.max_new_tokens)
    }

    pub fn augmentation(&self) -> AugmentationConfig {
        AugmentationConfig {
            rouge_threshold: self.rouge_threshold,
            pivot_chain: self.augment.pivot_chain.clone(),
            expansion_factor: self.augment.expansion_factor,
            max_rounds: self.augment.max_rounds,
            seed: self.seed,
            parallelism: self.augment.parallelism,
            target: AugmentTarget::Answer,
            ..AugmentationConfig::default()
        }
    }

    /// The part of the configuration a stage depends on. Its hash enters the
    /// stage's cache key and manifest; input paths are deliberately absent
    /// because inputs are identified by content.
    pub fn stage_slice(&self, stage: Stage) -> serde_json::Value {
        match stage {
            Stage::Ingest => json!({}),
            Stage::Augment => json!({
                "seed": self.seed,
                "rouge_threshold": self.rouge_threshold,
                "augment": self.augment,
            }),
            Stage::Sft => json!({
                "seed": self.seed,
                "stages": self.stages,
                "batch_size": self.batch_size,
                "model": self.model,
                "train": self.train,
            }),
            Stage::Annotate => json!({ "quorum": self.annotate.quorum }),
            Stage::Rm => json!({
                "seed": self.seed,
                "pair_policy": self.pair_policy,
                "epochs": self.rm.epochs,
                "lr": self.rm.lr.unwrap_or(self.lr),
                "batch_size": self.rm.batch_size.unwrap_or(self.batch_size),
                "train": self.train,
            }),
            Stage::LabelRemainder => json!({
                "pair_policy": self.pair_policy,
                "margin": self.label.margin,
            }),
            Stage::Pairs => json!({
                "seed": self.seed,
                "test_fraction": self.pairs.test_fraction,
            }),
            Stage::Dpo => json!({
                "seed": self.seed,
                "beta": self.beta,
                "lr": self.dpo.lr.unwrap_or(self.lr),
                "epochs": self.epochs,
                "batch_size": self.batch_size,
                "max_steps": self.dpo.max_steps,
                "train": self.train,
            }),
            Stage::Eval => json!({ "eval": self.eval }),
        }
    }
}
