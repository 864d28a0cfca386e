//! SFT cross-entropy, pairwise reward loss, and the DPO loss, each with its
//! gradient expressed as weights for [`TrainablePolicy::accumulate_grad`].

use std::thread;

use crate::corpus::{PreferencePair, QaPair};
use crate::error::{Error, Result};
use crate::model::{LossWeights, PolicyHandle, SequenceScores, TrainablePolicy};

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `-ln σ(m)`, computed without overflow for large |m|.
pub fn neg_log_sigmoid(m: f64) -> f64 {
    if m >= 0.0 {
        (-m).exp().ln_1p()
    } else {
        -m + m.exp().ln_1p()
    }
}

/// Reward margin `r_w - r_l`.
pub fn reward_margin(r_chosen: f64, r_rejected: f64) -> f64 {
    r_chosen - r_rejected
}

/// DPO margin `β·(Δ_w − Δ_l)` where `Δ = log π_θ(y|x) − log π_ref(y|x)`.
pub fn dpo_margin(beta: f64, delta_chosen: f64, delta_rejected: f64) -> f64 {
    beta * (delta_chosen - delta_rejected)
}

/// A loss value, its gradient, and the mean margin for pairwise losses.
#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub loss: f64,
    pub grad: Vec<f64>,
    pub mean_margin: f64,
}

/// Runs `f` over `items` split into `workers` contiguous chunks, each with a
/// private gradient buffer. Buffers are summed in chunk order, so results do
/// not depend on thread scheduling.
pub(crate) fn chunked_grad<T: Sync, R: Send>(
    n_params: usize,
    items: &[T],
    workers: usize,
    f: impl Fn(&T, &mut [f64]) -> Result<R> + Sync,
) -> Result<(Vec<f64>, Vec<R>)> {
    let workers = workers.clamp(1, items.len().max(1));
    let chunk = items.len().div_ceil(workers).max(1);
    let parts: Vec<Result<(Vec<f64>, Vec<R>)>> = thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|c| {
                let f = &f;
                s.spawn(move || {
                    let mut g = vec![0.0; n_params];
                    let out = c.iter().map(|it| f(it, &mut g)).collect::<Result<Vec<R>>>()?;
                    Ok((g, out))
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("gradient worker panicked"))
            .collect()
    });
    let mut grad = vec![0.0; n_params];
    let mut outs = Vec::with_capacity(items.len());
    for p in parts {
        let (g, o) = p?;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
        outs.extend(o);
    }
    Ok((grad, outs))
}

fn answer_tokens(policy: &dyn PolicyHandle, r: &QaPair) -> Result<usize> {
    let n = policy.tokenizer().encode(&r.answer)?.len();
    if n == 0 {
        return Err(Error::invalid(&r.id, "answer", "tokenizes to nothing"));
    }
    // Answer tokens plus the end marker.
    Ok(n + 1)
}

fn check_nonempty<T>(batch: &[T]) -> Result<()> {
    if batch.is_empty() {
        Err(Error::InvalidArgument("empty batch".into()))
    } else {
        Ok(())
    }
}

/// Mean negative log-likelihood of the reference answer tokens (and the end
/// marker) given the prompt. Prompt tokens carry no loss.
pub fn sft_loss(policy: &dyn PolicyHandle, batch: &[QaPair]) -> Result<f64> {
    check_nonempty(batch)?;
    let mut total = 0.0;
    let mut count = 0;
    for r in batch {
        count += answer_tokens(policy, r)?;
        let s = policy.scores(&r.prompt, &r.answer)?;
        total -= s.completion_logprob() + s.eos_logprob;
    }
    Ok(total / count as f64)
}

pub fn sft_loss_and_grad(policy: &dyn TrainablePolicy, batch: &[QaPair], workers: usize) -> Result<LossOutput> {
    check_nonempty(batch)?;
    let count: usize = batch.iter().map(|r| answer_tokens(policy, r)).sum::<Result<usize>>()?;
    let w = -1.0 / count as f64;
    let weights = LossWeights {
        per_token: w,
        eos: Some(w),
        reward: 0.0,
    };
    let (grad, scores) = chunked_grad(policy.num_parameters(), batch, workers, |r, g| {
        policy.accumulate_grad(&r.prompt, &r.answer, &weights, g)
    })?;
    let nll: f64 = scores
        .iter()
        .map(|s: &SequenceScores| -(s.completion_logprob() + s.eos_logprob))
        .sum();
    Ok(LossOutput {
        loss: nll / count as f64,
        grad,
        mean_margin: 0.0,
    })
}

/// Mean over pairs of `-ln σ(r(x, y_w) − r(x, y_l))`.
pub fn rm_loss(policy: &dyn PolicyHandle, batch: &[PreferencePair]) -> Result<f64> {
    check_nonempty(batch)?;
    let mut total = 0.0;
    for p in batch {
        let rw = policy.scores(&p.prompt, &p.chosen)?.reward;
        let rl = policy.scores(&p.prompt, &p.rejected)?.reward;
        total += neg_log_sigmoid(reward_margin(rw, rl));
    }
    Ok(total / batch.len() as f64)
}

pub fn rm_loss_and_grad(policy: &dyn TrainablePolicy, batch: &[PreferencePair], workers: usize) -> Result<LossOutput> {
    check_nonempty(batch)?;
    let b = batch.len() as f64;
    let (grad, per_pair) = chunked_grad(policy.num_parameters(), batch, workers, |p, g| {
        let rw = policy.scores(&p.prompt, &p.chosen)?.reward;
        let rl = policy.scores(&p.prompt, &p.rejected)?.reward;
        let m = reward_margin(rw, rl);
        // d/dm of -ln σ(m) is -σ(-m).
        let dm = -sigmoid(-m) / b;
        let chosen = LossWeights {
            reward: dm,
            ..Default::default()
        };
        let rejected = LossWeights {
            reward: -dm,
            ..Default::default()
        };
        policy.accumulate_grad(&p.prompt, &p.chosen, &chosen, g)?;
        policy.accumulate_grad(&p.prompt, &p.rejected, &rejected, g)?;
        Ok((neg_log_sigmoid(m), m))
    })?;
    Ok(LossOutput {
        loss: per_pair.iter().map(|x| x.0).sum::<f64>() / b,
        grad,
        mean_margin: per_pair.iter().map(|x| x.1).sum::<f64>() / b,
    })
}

/// Reference log-probabilities `(log π_ref(y_w|x), log π_ref(y_l|x))`.
pub fn reference_logprobs(reference: &dyn PolicyHandle, batch: &[PreferencePair]) -> Result<Vec<(f64, f64)>> {
    if !reference.is_frozen() {
        return Err(Error::ReferenceNotFrozen);
    }
    batch
        .iter()
        .map(|p| {
            Ok((
                reference.scores(&p.prompt, &p.chosen)?.completion_logprob(),
                reference.scores(&p.prompt, &p.rejected)?.completion_logprob(),
            ))
        })
        .collect()
}

fn check_beta(beta: f64) -> Result<()> {
    if beta > 0.0 && beta.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("beta must be positive, got {beta}")))
    }
}

/// Mean over pairs of `-ln σ(β·(Δ_w − Δ_l))`.
pub fn dpo_loss(
    policy: &dyn PolicyHandle,
    reference: &dyn PolicyHandle,
    batch: &[PreferencePair],
    beta: f64,
) -> Result<f64> {
    check_nonempty(batch)?;
    check_beta(beta)?;
    let refs = reference_logprobs(reference, batch)?;
    let mut total = 0.0;
    for (p, (ref_w, ref_l)) in batch.iter().zip(refs) {
        let lw = policy.scores(&p.prompt, &p.chosen)?.completion_logprob();
        let ll = policy.scores(&p.prompt, &p.rejected)?.completion_logprob();
        total += neg_log_sigmoid(dpo_margin(beta, lw - ref_w, ll - ref_l));
    }
    Ok(total / batch.len() as f64)
}

/// DPO loss and gradient given precomputed reference log-probabilities.
pub fn dpo_loss_and_grad(
    policy: &dyn TrainablePolicy,
    reference_logprobs: &[(f64, f64)],
    batch: &[PreferencePair],
    beta: f64,
    workers: usize,
) -> Result<LossOutput> {
    check_nonempty(batch)?;
    check_beta(beta)?;
    if reference_logprobs.len() != batch.len() {
        return Err(Error::InvalidArgument(
            "reference log-probabilities do not match the batch".into(),
        ));
    }
    let b = batch.len() as f64;
    let items: Vec<(&PreferencePair, &(f64, f64))> = batch.iter().zip(reference_logprobs).collect();
    let (grad, per_pair) = chunked_grad(policy.num_parameters(), &items, workers, |(p, (ref_w, ref_l)), g| {
        let lw = policy.scores(&p.prompt, &p.chosen)?.completion_logprob();
        let ll = policy.scores(&p.prompt, &p.rejected)?.completion_logprob();
        let m = dpo_margin(beta, lw - ref_w, ll - ref_l);
        // Every completion token contributes equally to log π(y|x).
        let dm = -sigmoid(-m) * beta / b;
        let chosen = LossWeights {
            per_token: dm,
            ..Default::default()
        };
        let rejected = LossWeights {
            per_token: -dm,
            ..Default::default()
        };
        policy.accumulate_grad(&p.prompt, &p.chosen, &chosen, g)?;
        policy.accumulate_grad(&p.prompt, &p.rejected, &rejected, g)?;
        Ok((neg_log_sigmoid(m), m))
    })?;
    Ok(LossOutput {
        loss: per_pair.iter().map(|x| x.0).sum::<f64>() / b,
        grad,
        mean_margin: per_pair.iter().map(|x| x.1).sum::<f64>() / b,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logistic_values() {
        assert!((neg_log_sigmoid(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((neg_log_sigmoid(2.0) - 0.126928).abs() < 1e-6);
        assert!((neg_log_sigmoid(-2.0) - 2.126928).abs() < 1e-6);
        assert!((neg_log_sigmoid(0.2) - 0.598139).abs() < 1e-6);
        assert!(neg_log_sigmoid(-800.0).is_finite());
        assert_eq!(neg_log_sigmoid(800.0), 0.0);
    }

    #[test]
    fn margin_shift_is_exact_for_dyadic_values() {
        for (w, l, c) in [(1.5, -0.25, 3.0), (0.0, 0.0, 1024.0), (-7.75, 2.5, -0.5)] {
            assert_eq!(reward_margin(w + c, l + c), reward_margin(w, l));
        }
    }
}
