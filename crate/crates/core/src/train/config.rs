use serde::{Deserialize, Serialize};

use super::optim::OptimizerConfig;
use crate::error::{Error, Result};

/// One supervised fine-tuning stage: a dataset reference and its schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftStage {
    pub dataset: String,
    pub epochs: usize,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SftConfig {
    pub stages: Vec<SftStage>,
    pub batch_size: usize,
    pub seed: u64,
    pub optimizer: OptimizerConfig,
    pub grad_clip: Option<f64>,
    pub max_steps: Option<usize>,
    pub workers: usize,
}

impl Default for SftConfig {
    fn default() -> Self {
        SftConfig {
            stages: Vec::new(),
            batch_size: 8,
            seed: 0,
            optimizer: OptimizerConfig::Sgd,
            grad_clip: None,
            max_steps: None,
            workers: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RmConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub optimizer: OptimizerConfig,
    pub grad_clip: Option<f64>,
    pub max_steps: Option<usize>,
    pub workers: usize,
}

impl Default for RmConfig {
    fn default() -> Self {
        RmConfig {
            epochs: 1,
            lr: 0.05,
            batch_size: 4,
            seed: 0,
            optimizer: OptimizerConfig::Sgd,
            grad_clip: None,
            max_steps: None,
            workers: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DpoConfig {
    pub beta: f64,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Checkpoint the frozen reference policy is loaded from.
    pub reference: Option<String>,
    pub optimizer: OptimizerConfig,
    pub grad_clip: Option<f64>,
    pub max_steps: Option<usize>,
    pub workers: usize,
}

impl Default for DpoConfig {
    fn default() -> Self {
        DpoConfig {
            beta: 0.1,
            lr: 0.05,
            epochs: 1,
            batch_size: 4,
            seed: 0,
            reference: None,
            optimizer: OptimizerConfig::Sgd,
            grad_clip: None,
            max_steps: None,
            workers: 4,
        }
    }
}

fn positive(name: &str, v: usize) -> Result<()> {
    if v == 0 {
        Err(Error::InvalidArgument(format!("{name} must be at least 1")))
    } else {
        Ok(())
    }
}

fn positive_lr(lr: f64) -> Result<()> {
    if lr > 0.0 && lr.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("lr must be positive, got {lr}")))
    }
}

impl SftConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(Error::InvalidArgument("sft needs at least one stage".into()));
        }
        for s in &self.stages {
            positive("epochs", s.epochs)?;
            positive_lr(s.lr)?;
        }
        positive("batch_size", self.batch_size)
    }
}

impl RmConfig {
    pub fn validate(&self) -> Result<()> {
        positive("epochs", self.epochs)?;
        positive("batch_size", self.batch_size)?;
        positive_lr(self.lr)
    }
}

impl DpoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "beta must be positive, got {}",
                self.beta
            )));
        }
        positive("epochs", self.epochs)?;
        positive("batch_size", self.batch_size)?;
        positive_lr(self.lr)
    }
}
