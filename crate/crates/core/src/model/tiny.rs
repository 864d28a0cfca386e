//! Reference model: character embeddings feeding a stack of tanh recurrent
//! layers, a softmax output layer, and a scalar reward head on the top
//! hidden state. All arithmetic is `f64` so finite differences can check the
//! hand-written backward pass.

use std::path::Path;

use rand::distributions::{Distribution, Uniform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::{save_checkpoint, Checkpoint, TensorInfo};
use super::tokenizer::{TokenId, Tokenizer};
use super::{GenerationParams, LossWeights, PolicyHandle, SequenceScores, TrainablePolicy};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hyper {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub layers: usize,
}

impl Default for Hyper {
    fn default() -> Self {
        Hyper {
            embed_dim: 32,
            hidden_dim: 64,
            layers: 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct LayerSlots {
    w_in: usize,
    w_rec: usize,
    bias: usize,
    in_dim: usize,
}

/// Offsets of each tensor in the flat parameter vector. Matrices are
/// row-major with one row per output unit.
#[derive(Debug, Clone, PartialEq)]
struct Layout {
    vocab: usize,
    hidden: usize,
    embed_dim: usize,
    embed: usize,
    layers: Vec<LayerSlots>,
    out_w: usize,
    out_b: usize,
    head_w: usize,
    head_b: usize,
    total: usize,
}

impl Layout {
    fn new(vocab: usize, h: Hyper) -> Self {
        let mut at = 0;
        let mut take = |n: usize| {
            let o = at;
            at += n;
            o
        };
        let embed = take(vocab * h.embed_dim);
        let layers = (0..h.layers)
            .map(|l| {
                let in_dim = if l == 0 { h.embed_dim } else { h.hidden_dim };
                LayerSlots {
                    w_in: take(h.hidden_dim * in_dim),
                    w_rec: take(h.hidden_dim * h.hidden_dim),
                    bias: take(h.hidden_dim),
                    in_dim,
                }
            })
            .collect();
        let out_w = take(vocab * h.hidden_dim);
        let out_b = take(vocab);
        let head_w = take(h.hidden_dim);
        let head_b = take(1);
        Layout {
            vocab,
            hidden: h.hidden_dim,
            embed_dim: h.embed_dim,
            embed,
            layers,
            out_w,
            out_b,
            head_w,
            head_b,
            total: at,
        }
    }

    fn tensors(&self) -> Vec<TensorInfo> {
        let mut t = vec![TensorInfo::new("embedding", [self.vocab, self.embed_dim], self.embed)];
        for (i, l) in self.layers.iter().enumerate() {
            t.push(TensorInfo::new(
                format!("rnn.{i}.w_in"),
                [self.hidden, l.in_dim],
                l.w_in,
            ));
            t.push(TensorInfo::new(
                format!("rnn.{i}.w_rec"),
                [self.hidden, self.hidden],
                l.w_rec,
            ));
            t.push(TensorInfo::new(format!("rnn.{i}.bias"), [self.hidden, 1], l.bias));
        }
        t.push(TensorInfo::new("out.w", [self.vocab, self.hidden], self.out_w));
        t.push(TensorInfo::new("out.b", [self.vocab, 1], self.out_b));
        t.push(TensorInfo::new("reward.w", [1, self.hidden], self.head_w));
        t.push(TensorInfo::new("reward.b", [1, 1], self.head_b));
        t
    }
}

// out[i] += Σ_j w[i, j] x[j]
fn matvec_add(out: &mut [f64], w: &[f64], x: &[f64]) {
    let cols = x.len();
    for (o, row) in out.iter_mut().zip(w.chunks_exact(cols)) {
        *o += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

// out[j] += Σ_i w[i, j] d[i]
fn matvec_t_add(out: &mut [f64], w: &[f64], d: &[f64]) {
    let cols = out.len();
    for (&di, row) in d.iter().zip(w.chunks_exact(cols)) {
        if di != 0.0 {
            for (o, a) in out.iter_mut().zip(row) {
                *o += a * di;
            }
        }
    }
}

// g[i, j] += d[i] x[j]
fn outer_add(g: &mut [f64], d: &[f64], x: &[f64]) {
    let cols = x.len();
    for (&di, row) in d.iter().zip(g.chunks_exact_mut(cols)) {
        if di != 0.0 {
            for (gij, xj) in row.iter_mut().zip(x) {
                *gij += di * xj;
            }
        }
    }
}

fn log_softmax(logits: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    for z in logits.iter_mut() {
        *z -= lse;
    }
}

/// Hidden states of every layer after each input token.
struct Trace {
    tokens: Vec<TokenId>,
    // hs[layer][t * hidden .. (t + 1) * hidden]
    hs: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct TinyLm {
    tokenizer: Tokenizer,
    hyper: Hyper,
    layout: Layout,
    params: Vec<f64>,
    frozen: bool,
}

impl TinyLm {
    /// All-zero parameters: a uniform next-token distribution and zero reward.
    pub fn zeros(tokenizer: Tokenizer, hyper: Hyper) -> Self {
        let layout = Layout::new(tokenizer.vocab_size(), hyper);
        TinyLm {
            params: vec![0.0; layout.total],
            tokenizer,
            hyper,
            layout,
            frozen: false,
        }
    }

    /// Uniform fan-in initialization; output layer scaled down and the reward
    /// head left at zero.
    pub fn new(tokenizer: Tokenizer, hyper: Hyper, seed: u64) -> Self {
        let mut m = TinyLm::zeros(tokenizer, hyper);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lay = m.layout.clone();
        let fill = |p: &mut [f64], scale: f64, rng: &mut ChaCha8Rng| {
            let d = Uniform::new_inclusive(-scale, scale);
            for x in p {
                *x = d.sample(rng);
            }
        };
        let h = hyper.hidden_dim;
        fill(
            &mut m.params[lay.embed..lay.embed + lay.vocab * lay.embed_dim],
            0.5,
            &mut rng,
        );
        for l in &lay.layers {
            fill(
                &mut m.params[l.w_in..l.w_in + h * l.in_dim],
                1.0 / (l.in_dim as f64).sqrt(),
                &mut rng,
            );
            fill(
                &mut m.params[l.w_rec..l.w_rec + h * h],
                0.5 / (h as f64).sqrt(),
                &mut rng,
            );
        }
        fill(
            &mut m.params[lay.out_w..lay.out_w + lay.vocab * h],
            0.5 / (h as f64).sqrt(),
            &mut rng,
        );
        m
    }

    pub(crate) fn from_parts(tokenizer: Tokenizer, hyper: Hyper, params: Vec<f64>) -> Result<Self> {
        let layout = Layout::new(tokenizer.vocab_size(), hyper);
        if params.len() != layout.total {
            return Err(Error::Checkpoint(format!(
                "expected {} parameters, found {}",
                layout.total,
                params.len()
            )));
        }
        Ok(TinyLm {
            tokenizer,
            hyper,
            layout,
            params,
            frozen: false,
        })
    }

    pub fn hyper(&self) -> Hyper {
        self.hyper
    }

    pub fn frozen(&self) -> TinyLm {
        TinyLm {
            frozen: true,
            ..self.clone()
        }
    }

    /// A trainable copy, e.g. a policy initialized from a frozen reference.
    pub fn thawed(&self) -> TinyLm {
        TinyLm {
            frozen: false,
            ..self.clone()
        }
    }

    /// Reinitializes the reward head with small random weights.
    pub fn init_reward_head(&mut self, seed: u64, scale: f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (w, h) = (self.layout.head_w, self.layout.hidden);
        for x in &mut self.params[w..w + h] {
            *x = rng.gen_range(-scale..=scale);
        }
        self.params[self.layout.head_b] = 0.0;
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            tokenizer: self.tokenizer.clone(),
            hyper: self.hyper,
            tensors: self.layout.tensors(),
            params: self.params.clone(),
        }
    }

    fn embed(&self, tok: TokenId) -> &[f64] {
        let d = self.layout.embed_dim;
        let o = self.layout.embed + tok as usize * d;
        &self.params[o..o + d]
    }

    /// Advances every layer by one token. `state[l]` holds layer l's hidden
    /// vector and is overwritten.
    fn step(&self, state: &mut [Vec<f64>], tok: TokenId) {
        let h = self.layout.hidden;
        let mut input: Vec<f64> = self.embed(tok).to_vec();
        for (l, slots) in self.layout.layers.iter().enumerate() {
            let mut a = self.params[slots.bias..slots.bias + h].to_vec();
            matvec_add(&mut a, &self.params[slots.w_in..slots.w_in + h * slots.in_dim], &input);
            matvec_add(&mut a, &self.params[slots.w_rec..slots.w_rec + h * h], &state[l]);
            for v in a.iter_mut() {
                *v = v.tanh();
            }
            state[l].copy_from_slice(&a);
            input = a;
        }
    }

    fn fresh_state(&self) -> Vec<Vec<f64>> {
        vec![vec![0.0; self.layout.hidden]; self.layout.layers.len()]
    }

    fn run(&self, tokens: Vec<TokenId>) -> Trace {
        let h = self.layout.hidden;
        let mut state = self.fresh_state();
        let mut hs: Vec<Vec<f64>> = vec![Vec::with_capacity(tokens.len() * h); self.layout.layers.len()];
        for &t in &tokens {
            self.step(&mut state, t);
            for (l, s) in state.iter().enumerate() {
                hs[l].extend_from_slice(s);
            }
        }
        Trace { tokens, hs }
    }

    fn top<'a>(&self, trace: &'a Trace, t: usize) -> &'a [f64] {
        let h = self.layout.hidden;
        &trace.hs[self.layout.layers.len() - 1][t * h..(t + 1) * h]
    }

    fn logits(&self, hidden: &[f64]) -> Vec<f64> {
        let (v, h) = (self.layout.vocab, self.layout.hidden);
        let mut z = self.params[self.layout.out_b..self.layout.out_b + v].to_vec();
        matvec_add(
            &mut z,
            &self.params[self.layout.out_w..self.layout.out_w + v * h],
            hidden,
        );
        z
    }

    fn reward_of(&self, hidden: &[f64]) -> f64 {
        let h = self.layout.hidden;
        let w = &self.params[self.layout.head_w..self.layout.head_w + h];
        w.iter().zip(hidden).map(|(a, b)| a * b).sum::<f64>() + self.params[self.layout.head_b]
    }

    /// Forward values and, when `grad` is given, the backward pass.
    fn forward_backward(
        &self,
        prompt: &str,
        completion: &str,
        weights: Option<&LossWeights>,
        grad: Option<&mut [f64]>,
    ) -> Result<SequenceScores> {
        let (tokens, start) = self.tokenizer.encode_pair(prompt, completion)?;
        let trace = self.run(tokens);
        let n = trace.tokens.len();
        let last = n - 1;
        let (v, h) = (self.layout.vocab, self.layout.hidden);

        // Position t predicts tokens[t + 1]; completion tokens live at
        // [start, last) and the end marker at `last`.
        let mut token_logprobs = Vec::with_capacity(last - start);
        let mut eos_logprob = 0.0;
        let mut dlogits: Vec<(usize, Vec<f64>)> = Vec::new();
        for t in (start - 1)..last {
            let mut lp = self.logits(self.top(&trace, t));
            log_softmax(&mut lp);
            let target = trace.tokens[t + 1] as usize;
            let is_eos = t + 1 == last;
            if is_eos {
                eos_logprob = lp[target];
            } else {
                token_logprobs.push(lp[target]);
            }
            let w = match weights {
                Some(w) if is_eos => w.eos.unwrap_or(0.0),
                Some(w) => w.per_token,
                None => 0.0,
            };
            if w != 0.0 {
                // d log p_target / d z = onehot(target) - softmax(z)
                let mut dz: Vec<f64> = lp.iter().map(|l| -w * l.exp()).collect();
                dz[target] += w;
                dlogits.push((t, dz));
            }
        }
        let reward = self.reward_of(self.top(&trace, last));
        let scores = SequenceScores {
            token_logprobs,
            eos_logprob,
            reward,
        };

        let (Some(weights), Some(grad)) = (weights, grad) else {
            return Ok(scores);
        };
        let lay = &self.layout;
        let n_layers = lay.layers.len();

        // Gradient w.r.t. the top layer's hidden state at each position.
        let mut dtop = vec![0.0; n * h];
        for (t, dz) in &dlogits {
            let ht = self.top(&trace, *t);
            outer_add(&mut grad[lay.out_w..lay.out_w + v * h], dz, ht);
            for (g, d) in grad[lay.out_b..lay.out_b + v].iter_mut().zip(dz) {
                *g += d;
            }
            matvec_t_add(
                &mut dtop[t * h..(t + 1) * h],
                &self.params[lay.out_w..lay.out_w + v * h],
                dz,
            );
        }
        if weights.reward != 0.0 {
            let g = weights.reward;
            let hl = self.top(&trace, last);
            for (gw, x) in grad[lay.head_w..lay.head_w + h].iter_mut().zip(hl) {
                *gw += g * x;
            }
            grad[lay.head_b] += g;
            let w = &self.params[lay.head_w..lay.head_w + h];
            for (d, wi) in dtop[last * h..(last + 1) * h].iter_mut().zip(w) {
                *d += g * wi;
            }
        }

        // Backpropagation through time, top layer first.
        let mut dout = dtop;
        for l in (0..n_layers).rev() {
            let slots = lay.layers[l];
            let in_dim = slots.in_dim;
            let hs = &trace.hs[l];
            let mut dbelow = if l > 0 { vec![0.0; n * in_dim] } else { Vec::new() };
            let mut dnext = vec![0.0; h];
            let mut da = vec![0.0; h];
            let zeros = vec![0.0; h];
            for t in (0..n).rev() {
                let ht = &hs[t * h..(t + 1) * h];
                let mut any = false;
                for i in 0..h {
                    let dh = dout[t * h + i] + dnext[i];
                    da[i] = dh * (1.0 - ht[i] * ht[i]);
                    any |= da[i] != 0.0;
                }
                dnext.iter_mut().for_each(|x| *x = 0.0);
                if !any {
                    continue;
                }
                let x_in: &[f64] = if l == 0 {
                    self.embed(trace.tokens[t])
                } else {
                    &trace.hs[l - 1][t * in_dim..(t + 1) * in_dim]
                };
                let h_prev: &[f64] = if t > 0 { &hs[(t - 1) * h..t * h] } else { &zeros };
                outer_add(&mut grad[slots.w_in..slots.w_in + h * in_dim], &da, x_in);
                outer_add(&mut grad[slots.w_rec..slots.w_rec + h * h], &da, h_prev);
                for (g, d) in grad[slots.bias..slots.bias + h].iter_mut().zip(&da) {
                    *g += d;
                }
                let w_in = &self.params[slots.w_in..slots.w_in + h * in_dim];
                if l == 0 {
                    let o = lay.embed + trace.tokens[t] as usize * in_dim;
                    matvec_t_add(&mut grad[o..o + in_dim], w_in, &da);
                } else {
                    matvec_t_add(&mut dbelow[t * in_dim..(t + 1) * in_dim], w_in, &da);
                }
                matvec_t_add(&mut dnext, &self.params[slots.w_rec..slots.w_rec + h * h], &da);
            }
            dout = dbelow;
        }
        Ok(scores)
    }
}

impl PolicyHandle for TinyLm {
    fn tokenizer(&self) -> &Tokenizer {
        &self.tokenizer
    }

    fn scores(&self, prompt: &str, completion: &str) -> Result<SequenceScores> {
        self.forward_backward(prompt, completion, None, None)
    }

    fn next_token_logprobs(&self, prompt: &str, partial: &str) -> Result<Vec<f64>> {
        let (mut tokens, _) = self.tokenizer.encode_pair(prompt, partial)?;
        tokens.pop();
        let mut state = self.fresh_state();
        for &t in &tokens {
            self.step(&mut state, t);
        }
        let mut lp = self.logits(state.last().expect("at least one layer"));
        log_softmax(&mut lp);
        Ok(lp)
    }

    fn generate(&self, prompt: &str, params: &GenerationParams) -> Result<String> {
        let tk = &self.tokenizer;
        let mut state = self.fresh_state();
        self.step(&mut state, tk.eos());
        for t in tk.encode(prompt)? {
            self.step(&mut state, t);
        }
        self.step(&mut state, tk.sep());
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let mut out = Vec::new();
        for _ in 0..params.max_new_tokens {
            let mut lp = self.logits(state.last().expect("at least one layer"));
            let next = if params.temperature <= 0.0 {
                // First maximum wins ties.
                lp.iter()
                    .enumerate()
                    .fold(
                        (0, f64::NEG_INFINITY),
                        |best, (i, &z)| if z > best.1 { (i, z) } else { best },
                    )
                    .0
            } else {
                for z in lp.iter_mut() {
                    *z /= params.temperature;
                }
                log_softmax(&mut lp);
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                let mut pick = lp.len() - 1;
                for (i, l) in lp.iter().enumerate() {
                    acc += l.exp();
                    if u < acc {
                        pick = i;
                        break;
                    }
                }
                pick
            } as TokenId;
            if next == tk.eos() {
                break;
            }
            out.push(next);
            self.step(&mut state, next);
        }
        Ok(tk.decode(&out))
    }

    fn parameters(&self) -> Option<&[f64]> {
        Some(&self.params)
    }

    fn is_frozen(&self) -> bool {
        self.frozen
    }

    fn clone_frozen(&self) -> Box<dyn PolicyHandle> {
        Box::new(self.frozen())
    }
}

impl TrainablePolicy for TinyLm {
    fn num_parameters(&self) -> usize {
        self.params.len()
    }

    fn parameters_mut(&mut self) -> Result<&mut [f64]> {
        if self.frozen {
            return Err(Error::Frozen);
        }
        Ok(&mut self.params)
    }

    fn accumulate_grad(
        &self,
        prompt: &str,
        completion: &str,
        weights: &LossWeights,
        grad: &mut [f64],
    ) -> Result<SequenceScores> {
        if grad.len() != self.params.len() {
            return Err(Error::InvalidArgument(format!(
                "gradient buffer has {} entries, model has {}",
                grad.len(),
                self.params.len()
            )));
        }
        self.forward_backward(prompt, completion, Some(weights), Some(grad))
    }

    fn save(&self, path: &Path) -> Result<()> {
        save_checkpoint(path, &self.checkpoint())
    }
}
