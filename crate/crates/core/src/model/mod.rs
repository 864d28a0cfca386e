//! The trainable sequence-model abstraction and a small hermetic reference
//! implementation.
//!
//! A [`PolicyHandle`] scores completions token by token, generates text, and
//! carries a scalar reward head read off the final token. Training code only
//! sees the [`TrainablePolicy`] extension, which exposes a flat parameter
//! vector and a vector-Jacobian product over one `(prompt, completion)`
//! sequence. Every loss in this crate reduces to weights on per-token
//! log-probabilities and on the reward, so that one backward pass serves SFT,
//! reward modelling and DPO alike.

mod checkpoint;
mod tiny;
mod tokenizer;

use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_FORMAT_VERSION};
pub use tiny::{Hyper, TinyLm};
pub use tokenizer::{TokenId, Tokenizer, TokenizerSpec, SPECIALS};

use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub max_new_tokens: usize,
    /// 0 means greedy decoding.
    pub temperature: f64,
    pub seed: u64,
}

impl Default for GenerationParams {
    fn default() -> Self {
        GenerationParams {
            max_new_tokens: 96,
            temperature: 0.0,
            seed: 0,
        }
    }
}

impl GenerationParams {
    pub fn greedy(max_new_tokens: usize) -> Self {
        GenerationParams {
            max_new_tokens,
            ..Default::default()
        }
    }
}

/// Forward values for one `(prompt, completion)` sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceScores {
    /// `log p(y_t | x, y_<t)` for each completion token.
    pub token_logprobs: Vec<f64>,
    /// `log p(<eos> | x, y)`.
    pub eos_logprob: f64,
    /// Reward head output at the final token.
    pub reward: f64,
}

impl SequenceScores {
    pub fn completion_logprob(&self) -> f64 {
        self.token_logprobs.iter().sum()
    }
}

/// Upstream gradient for one sequence: `dL/d log p` for every completion
/// token (and for the end marker when `eos` is set), and `dL/d reward`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossWeights {
    pub per_token: f64,
    pub eos: Option<f64>,
    pub reward: f64,
}

pub trait PolicyHandle: Send + Sync {
    fn tokenizer(&self) -> &Tokenizer;

    fn scores(&self, prompt: &str, completion: &str) -> Result<SequenceScores>;

    /// Log-probabilities over the whole vocabulary for the token following
    /// `prompt <sep> partial`.
    fn next_token_logprobs(&self, prompt: &str, partial: &str) -> Result<Vec<f64>>;

    fn generate(&self, prompt: &str, params: &GenerationParams) -> Result<String>;

    /// Flat parameter view; `None` for backends that do not expose weights.
    fn parameters(&self) -> Option<&[f64]>;

    fn is_frozen(&self) -> bool;

    /// Immutable copy whose outputs never change afterwards.
    fn clone_frozen(&self) -> Box<dyn PolicyHandle>;

    fn token_logprobs(&self, prompt: &str, completion: &str) -> Result<Vec<f64>> {
        Ok(self.scores(prompt, completion)?.token_logprobs)
    }
}

pub trait TrainablePolicy: PolicyHandle {
    fn num_parameters(&self) -> usize;

    /// Fails for frozen handles.
    fn parameters_mut(&mut self) -> Result<&mut [f64]>;

    /// Adds `dL/dθ` for one sequence into `grad` and returns the forward
    /// values it was computed at.
    fn accumulate_grad(
        &self,
        prompt: &str,
        completion: &str,
        weights: &LossWeights,
        grad: &mut [f64],
    ) -> Result<SequenceScores>;

    fn save(&self, path: &std::path::Path) -> Result<()>;
}

/// `Σ_t log p(y_t | x, y_<t)` over the completion tokens; 0 for an empty
/// completion.
pub fn sequence_logprob(policy: &dyn PolicyHandle, prompt: &str, completion: &str) -> Result<f64> {
    Ok(policy.scores(prompt, completion)?.completion_logprob())
}

pub fn reward_score(policy: &dyn PolicyHandle, prompt: &str, completion: &str) -> Result<f64> {
    Ok(policy.scores(prompt, completion)?.reward)
}
