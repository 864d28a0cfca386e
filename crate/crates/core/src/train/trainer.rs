// An abort carries the partial manifest, so the error side is large on purpose.
#![allow(clippy::result_large_err)]

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{DpoConfig, RmConfig, SftConfig};
use super::losses::{dpo_loss_and_grad, reference_logprobs, rm_loss_and_grad, sft_loss_and_grad, LossOutput};
use super::optim::{clip_grad_norm, Optimizer, OptimizerConfig};
use crate::corpus::{to_jsonl, PreferencePair, QaPair};
use crate::error::{Error, Result};
use crate::model::{PolicyHandle, TrainablePolicy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    Sft,
    Rm,
    Dpo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossEntry {
    pub step: usize,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Aborted { step: usize, reason: String },
}

/// Everything needed to reproduce a training run on the same backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRunManifest {
    pub run_id: String,
    pub objective: Objective,
    pub config: serde_json::Value,
    pub dataset_hashes: BTreeMap<String, String>,
    pub seed: u64,
    pub steps: usize,
    pub loss_log: Vec<LossEntry>,
    /// Unweighted mean of batch losses per epoch.
    pub epoch_losses: Vec<f64>,
    /// Mean pairwise margin over the last epoch (RM and DPO only).
    pub final_mean_margin: Option<f64>,
    pub output_checkpoint: Option<String>,
    pub status: RunStatus,
}

impl TrainRunManifest {
    fn start(
        objective: Objective,
        config: serde_json::Value,
        dataset_hashes: BTreeMap<String, String>,
        seed: u64,
    ) -> Self {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&(objective, &config, &dataset_hashes, seed)).expect("serializable"));
        TrainRunManifest {
            run_id: hex::encode(&h.finalize()[..8]),
            objective,
            config,
            dataset_hashes,
            seed,
            steps: 0,
            loss_log: Vec::new(),
            epoch_losses: Vec::new(),
            final_mean_margin: None,
            output_checkpoint: None,
            status: RunStatus::Completed,
        }
    }

    /// `step,loss` CSV.
    pub fn loss_csv(&self) -> String {
        let mut s = String::from("step,loss\n");
        for e in &self.loss_log {
            let _ = writeln!(s, "{},{}", e.step, e.loss);
        }
        s
    }
}

/// A failed run and the manifest up to the failure.
#[derive(Debug)]
pub struct TrainAbort {
    pub error: Error,
    pub manifest: TrainRunManifest,
}

impl std::fmt::Display for TrainAbort {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "training aborted after {} steps: {}",
            self.manifest.steps, self.error
        )
    }
}

impl std::error::Error for TrainAbort {}

pub type TrainResult = std::result::Result<TrainRunManifest, TrainAbort>;

type LossFn<'a, T> = dyn Fn(&dyn TrainablePolicy, &[T]) -> Result<LossOutput> + 'a;

pub fn dataset_hash<T: Serialize>(records: &[T]) -> String {
    let text = to_jsonl(records).expect("records serialize");
    hex::encode(Sha256::digest(text.as_bytes()))
}

struct Schedule {
    epochs: usize,
    batch_size: usize,
    lr: f64,
    grad_clip: Option<f64>,
}

struct Loop<'a> {
    policy: &'a mut dyn TrainablePolicy,
    optimizer: Optimizer,
    rng: ChaCha8Rng,
    max_steps: Option<usize>,
    manifest: TrainRunManifest,
}

impl Loop<'_> {
    fn done(&self) -> bool {
        self.max_steps.is_some_and(|m| self.manifest.steps >= m)
    }

    fn abort(self, error: Error) -> TrainAbort {
        let mut manifest = self.manifest;
        manifest.status = RunStatus::Aborted {
            step: manifest.steps,
            reason: error.to_string(),
        };
        TrainAbort { error, manifest }
    }

    fn run<T: Clone>(&mut self, data: &[T], sched: &Schedule, loss: &LossFn<'_, T>) -> Result<()> {
        if data.is_empty() {
            return Err(Error::InvalidArgument("training set is empty".into()));
        }
        let mut order: Vec<usize> = (0..data.len()).collect();
        for _ in 0..sched.epochs {
            if self.done() {
                break;
            }
            order.shuffle(&mut self.rng);
            let (mut sum, mut margin_sum, mut batches) = (0.0, 0.0, 0usize);
            for idx in order.chunks(sched.batch_size) {
                if self.done() {
                    break;
                }
                let batch: Vec<T> = idx.iter().map(|&i| data[i].clone()).collect();
                let mut out = loss(&*self.policy, &batch)?;
                let step = self.manifest.steps + 1;
                if !out.loss.is_finite() || out.grad.iter().any(|g| !g.is_finite()) {
                    return Err(Error::NonFiniteLoss { step });
                }
                if let Some(c) = sched.grad_clip {
                    clip_grad_norm(&mut out.grad, c);
                }
                self.optimizer.step(self.policy.parameters_mut()?, &out.grad, sched.lr);
                self.manifest.steps = step;
                self.manifest.loss_log.push(LossEntry { step, loss: out.loss });
                sum += out.loss;
                margin_sum += out.mean_margin;
                batches += 1;
            }
            if batches > 0 {
                self.manifest.epoch_losses.push(sum / batches as f64);
                self.manifest.final_mean_margin = Some(margin_sum / batches as f64);
            }
        }
        Ok(())
    }
}

fn start_loop<'a>(
    policy: &'a mut dyn TrainablePolicy,
    optimizer: OptimizerConfig,
    seed: u64,
    max_steps: Option<usize>,
    manifest: TrainRunManifest,
) -> Loop<'a> {
    let n = policy.num_parameters();
    Loop {
        policy,
        optimizer: Optimizer::new(optimizer, n),
        rng: ChaCha8Rng::seed_from_u64(seed),
        max_steps,
        manifest,
    }
}

fn invalid_config(objective: Objective, config: serde_json::Value, seed: u64, e: Error) -> TrainAbort {
    let mut manifest = TrainRunManifest::start(objective, config, BTreeMap::new(), seed);
    manifest.status = RunStatus::Aborted {
        step: 0,
        reason: e.to_string(),
    };
    TrainAbort { error: e, manifest }
}

/// Supervised fine-tuning, one stage after another. `datasets[i]` feeds
/// `config.stages[i]`.
pub fn train_sft(policy: &mut dyn TrainablePolicy, config: &SftConfig, datasets: &[&[QaPair]]) -> TrainResult {
    let snapshot = serde_json::to_value(config).expect("config serializes");
    if let Err(e) = config.validate().and_then(|_| {
        if datasets.len() == config.stages.len() {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "{} sft stages but {} datasets",
                config.stages.len(),
                datasets.len()
            )))
        }
    }) {
        return Err(invalid_config(Objective::Sft, snapshot, config.seed, e));
    }
    let hashes = config
        .stages
        .iter()
        .zip(datasets)
        .enumerate()
        .map(|(i, (s, d))| (format!("stage{}:{}", i + 1, s.dataset), dataset_hash(d)))
        .collect();
    let manifest = TrainRunManifest::start(Objective::Sft, snapshot, hashes, config.seed);
    let workers = config.workers;
    let mut lp = start_loop(policy, config.optimizer, config.seed, config.max_steps, manifest);
    for (stage, data) in config.stages.iter().zip(datasets) {
        let sched = Schedule {
            epochs: stage.epochs,
            batch_size: config.batch_size,
            lr: stage.lr,
            grad_clip: config.grad_clip,
        };
        if let Err(e) = lp.run(data, &sched, &|p, b| sft_loss_and_grad(p, b, workers)) {
            return Err(lp.abort(e));
        }
    }
    Ok(lp.manifest)
}

/// Reward-model training on preference pairs.
pub fn train_rm(policy: &mut dyn TrainablePolicy, config: &RmConfig, pairs: &[PreferencePair]) -> TrainResult {
    let snapshot = serde_json::to_value(config).expect("config serializes");
    if let Err(e) = config.validate() {
        return Err(invalid_config(Objective::Rm, snapshot, config.seed, e));
    }
    let hashes = BTreeMap::from([("pairs".to_string(), dataset_hash(pairs))]);
    let manifest = TrainRunManifest::start(Objective::Rm, snapshot, hashes, config.seed);
    let workers = config.workers;
    let mut lp = start_loop(policy, config.optimizer, config.seed, config.max_steps, manifest);
    let sched = Schedule {
        epochs: config.epochs,
        batch_size: config.batch_size,
        lr: config.lr,
        grad_clip: config.grad_clip,
    };
    match lp.run(pairs, &sched, &|p, b| rm_loss_and_grad(p, b, workers)) {
        Ok(()) => Ok(lp.manifest),
        Err(e) => Err(lp.abort(e)),
    }
}

/// DPO against a frozen reference. The reference is required: it is the
/// supervised checkpoint the policy starts from.
pub fn train_dpo(
    policy: &mut dyn TrainablePolicy,
    reference: Option<&dyn PolicyHandle>,
    config: &DpoConfig,
    pairs: &[PreferencePair],
) -> TrainResult {
    let snapshot = serde_json::to_value(config).expect("config serializes");
    let Some(reference) = reference else {
        let e = Error::ReferenceMissing("dpo requires a checkpoint from stage sft".into());
        return Err(invalid_config(Objective::Dpo, snapshot, config.seed, e));
    };
    if let Err(e) = config.validate() {
        return Err(invalid_config(Objective::Dpo, snapshot, config.seed, e));
    }
    let hashes = BTreeMap::from([("pairs".to_string(), dataset_hash(pairs))]);
    let manifest = TrainRunManifest::start(Objective::Dpo, snapshot, hashes, config.seed);
    let refs = match reference_logprobs(reference, pairs) {
        Ok(r) => r,
        Err(e) => return Err(invalid_config(Objective::Dpo, manifest.config, config.seed, e)),
    };
    // Reference log-probs travel with their pair through shuffling.
    let data: Vec<(PreferencePair, (f64, f64))> = pairs.iter().cloned().zip(refs).collect();
    let (beta, workers) = (config.beta, config.workers);
    let mut lp = start_loop(policy, config.optimizer, config.seed, config.max_steps, manifest);
    let sched = Schedule {
        epochs: config.epochs,
        batch_size: config.batch_size,
        lr: config.lr,
        grad_clip: config.grad_clip,
    };
    let loss = |p: &dyn TrainablePolicy, b: &[(PreferencePair, (f64, f64))]| {
        let (batch, refs): (Vec<PreferencePair>, Vec<(f64, f64)>) = b.iter().cloned().unzip();
        dpo_loss_and_grad(p, &refs, &batch, beta, workers)
    };
    match lp.run(&data, &sched, &loss) {
        Ok(()) => Ok(lp.manifest),
        Err(e) => Err(lp.abort(e)),
    }
}

/// Configuration for one objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "objective", rename_all = "snake_case")]
pub enum TrainConfig {
    Sft(SftConfig),
    Rm(RmConfig),
    Dpo(DpoConfig),
}

/// Datasets for [`train`]; each objective reads the fields it needs.
#[derive(Default)]
pub struct TrainInputs<'a> {
    pub sft_stages: Vec<&'a [QaPair]>,
    pub pairs: &'a [PreferencePair],
    pub reference: Option<&'a dyn PolicyHandle>,
}

pub fn train(config: &TrainConfig, inputs: &TrainInputs<'_>, policy: &mut dyn TrainablePolicy) -> TrainResult {
    match config {
        TrainConfig::Sft(c) => train_sft(policy, c, &inputs.sft_stages),
        TrainConfig::Rm(c) => train_rm(policy, c, inputs.pairs),
        TrainConfig::Dpo(c) => train_dpo(policy, inputs.reference, c, inputs.pairs),
    }
}
