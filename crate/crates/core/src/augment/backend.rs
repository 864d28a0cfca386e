//! Translation and generation backends, plus the deterministic mocks used by
//! tests and the bundled fixtures.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub trait TranslatorBackend: Send + Sync {
    fn translate(&self, text: &str, source_lang: &str, target_lang: &str) -> Result<String>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingParams {
    pub n: usize,
    pub temperature: f64,
    pub seed: u64,
}

impl Default for SamplingParams {
    fn default() -> Self {
        SamplingParams {
            n: 1,
            temperature: 0.7,
            seed: 0,
        }
    }
}

pub trait GeneratorBackend: Send + Sync {
    /// Returns exactly `params.n` completions.
    fn complete(&self, prompt: &str, params: &SamplingParams) -> Result<Vec<String>>;
}

/// 64-bit hash of a few strings, stable across builds and platforms.
pub(crate) fn stable_hash(parts: &[&str]) -> u64 {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p.as_bytes());
    }
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest is 32 bytes"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 4,
            base_delay: Duration::from_millis(200),
        }
    }
}

impl RetryPolicy {
    pub fn immediate(max_attempts: u32) -> Self {
        RetryPolicy {
            max_attempts,
            base_delay: Duration::ZERO,
        }
    }

    /// Runs `op`, retrying retryable failures with exponential backoff.
    pub fn run<T>(&self, mut op: impl FnMut() -> Result<T>) -> Result<T> {
        let mut attempt = 0;
        loop {
            attempt += 1;
            match op() {
                Err(e) if e.is_retryable() && attempt < self.max_attempts.max(1) => {
                    let delay = self.base_delay * 2u32.saturating_pow(attempt - 1);
                    log::warn!("attempt {attempt} failed ({e}); retrying in {delay:?}");
                    if !delay.is_zero() {
                        thread::sleep(delay);
                    }
                }
                other => return other,
            }
        }
    }
}

/// Maps `f` over `items` with at most `parallelism` worker threads. Results
/// come back in input order regardless of completion order.
pub fn map_ordered<T, R, F>(items: &[T], parallelism: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync,
{
    let workers = parallelism.clamp(1, items.len().max(1));
    if workers == 1 {
        return items.iter().enumerate().map(|(i, t)| f(i, t)).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(i, &items[i]);
                slots.lock().expect("result slots poisoned")[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .expect("result slots poisoned")
        .into_iter()
        .map(|r| r.expect("every slot is filled"))
        .collect()
}

pub struct IdentityTranslator;

impl TranslatorBackend for IdentityTranslator {
    fn translate(&self, text: &str, _source: &str, _target: &str) -> Result<String> {
        Ok(text.to_string())
    }
}

/// Reverses word order on the way into the pivot language and passes text
/// through unchanged on the way back, so a round trip reverses the words.
pub struct ReverseWordsTranslator {
    pub pivot: String,
}

impl TranslatorBackend for ReverseWordsTranslator {
    fn translate(&self, text: &str, _source: &str, target: &str) -> Result<String> {
        if target == self.pivot {
            Ok(text.split_whitespace().rev().collect::<Vec<_>>().join(" "))
        } else {
            Ok(text.to_string())
        }
    }
}

/// Small synonym table shared by the lexicon mocks.
const LEXICON: &[&[&str]] = &[
    &["if", "supposing", "suppose"],
    &["could", "were able to", "might"],
    &["choose", "pick", "select"],
    &["place", "spot", "destination"],
    &["travel", "go on a trip", "journey"],
    &["where", "to which place"],
    &["would", "will"],
    &["most", "above all", "the most"],
    &["like", "love", "want"],
    &["go", "head", "visit"],
    &["what", "which thing"],
    &["favorite", "favourite", "best-loved", "most cherished"],
    &["happy", "glad", "cheerful", "joyful"],
    &["sad", "down", "unhappy", "blue"],
    &["tired", "exhausted", "worn out", "drained"],
    &["today", "this day", "right now"],
    &["think", "believe", "feel"],
    &["remember", "recall", "still know"],
    &["happened", "took place", "occurred"],
    &["tell", "let me know", "share with"],
    &["about", "regarding", "concerning"],
    &["help", "support", "assist"],
    &["work", "job", "duties"],
    &["friend", "companion", "buddy"],
    &["day", "afternoon", "evening"],
    &["eat", "have", "try"],
    &["food", "dish", "meal"],
    &["weekend", "days off", "holiday"],
    &["do", "get up to", "spend time on"],
    &["want", "wish", "hope"],
    &["know", "understand", "see"],
    &["good", "nice", "great", "lovely"],
    &["bad", "awful", "rough", "terrible"],
    &["really", "truly", "honestly"],
    &["always", "forever", "every time"],
    &["with", "together with", "alongside"],
    &["you", "ya"],
    &["case", "incident", "matter"],
    &["lawyer", "attorney", "counsel"],
    &["city", "town", "metropolis"],
    &["truth", "real story", "facts"],
    &["why", "for what reason", "how come"],
    &["how", "in what way"],
];

fn synonyms(word: &str) -> Option<&'static [&'static str]> {
    let lower = word.to_lowercase();
    LEXICON.iter().copied().find(|row| row[0] == lower)
}

/// Back-translation stand-in: tags text on the way out, then swaps words for
/// synonyms on the way back. Choices are a pure function of
/// `(seed, text, pivot)`.
pub struct LexiconTranslator {
    pub seed: u64,
    pub source_lang: String,
}

impl LexiconTranslator {
    pub fn new(seed: u64) -> Self {
        LexiconTranslator {
            seed,
            source_lang: "en".into(),
        }
    }
}

impl TranslatorBackend for LexiconTranslator {
    fn translate(&self, text: &str, source: &str, target: &str) -> Result<String> {
        if target != self.source_lang {
            return Ok(format!("[{target}] {text}"));
        }
        let tag = format!("[{source}] ");
        let body = text.strip_prefix(&tag).unwrap_or(text);
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ stable_hash(&[body, source]));
        let words: Vec<String> = body
            .split_whitespace()
            .map(|w| {
                let core = w.trim_end_matches(|c: char| c.is_ascii_punctuation());
                let tail = &w[core.len()..];
                match synonyms(core) {
                    Some(row) if rng.gen_bool(0.6) => {
                        let pick = row[rng.gen_range(0..row.len())];
                        format!("{pick}{tail}")
                    }
                    _ => w.to_string(),
                }
            })
            .collect();
        Ok(words.join(" "))
    }
}

/// Behaviour of [`MockGenerator`].
#[derive(Debug, Clone, PartialEq)]
pub enum MockMode {
    /// Rewrites the input line with synonyms, framing and clause shuffling.
    Paraphrase,
    /// Echoes the input line verbatim.
    Duplicate,
    /// Returns the scripted outputs in rotation, ignoring the prompt.
    Scripted(Vec<String>),
}

/// Deterministic generator. The text it rewrites is the last non-empty line
/// of the prompt, minus any `Label: ` prefix.
pub struct MockGenerator {
    pub mode: MockMode,
    calls: AtomicUsize,
    fail_first: AtomicUsize,
}

const OPENERS: &[&str] = &[
    "Hey,",
    "Be honest with me:",
    "Just curious,",
    "Tell me something.",
    "I have been wondering,",
    "Quick question for you:",
    "Okay, here is one.",
    "Let me ask you this.",
    "So,",
    "Out of nowhere, but",
    "I keep thinking about it:",
    "Can I ask?",
];

const CLOSERS: &[&str] = &[
    "",
    "I really want to hear your answer.",
    "Take your time.",
    "Be honest.",
    "No pressure at all.",
    "Humor me.",
    "I am all ears.",
    "What do you say?",
    "Go on, tell me.",
];

const SOFTENERS: &[&str] = &[
    "I am right here with you.",
    "You can always lean on me.",
    "Whatever happens, I will stay by your side.",
    "Take a deep breath, we will figure it out together.",
    "You matter more than you know.",
];

impl MockGenerator {
    pub fn new(mode: MockMode) -> Self {
        MockGenerator {
            mode,
            calls: AtomicUsize::new(0),
            fail_first: AtomicUsize::new(0),
        }
    }

    /// Makes the first `n` calls fail with a retryable error.
    pub fn failing_first(self, n: usize) -> Self {
        self.fail_first.store(n, Ordering::SeqCst);
        self
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    fn input_line(prompt: &str) -> &str {
        let line = prompt.lines().rev().find(|l| !l.trim().is_empty()).unwrap_or("");
        match line.find(": ") {
            Some(i) if line[..i].chars().all(|c| c.is_alphanumeric() || c == ' ') => &line[i + 2..],
            _ => line,
        }
        .trim()
    }

    fn paraphrase(text: &str, rng: &mut ChaCha8Rng) -> String {
        let mut words: Vec<String> = text
            .split_whitespace()
            .map(|w| {
                let core = w.trim_end_matches(|c: char| c.is_ascii_punctuation());
                match synonyms(core) {
                    Some(row) => row[rng.gen_range(0..row.len())].to_string(),
                    None => core.to_string(),
                }
            })
            .filter(|w| !w.is_empty())
            .collect();
        // Move a random leading chunk to the end to vary word order.
        if words.len() > 4 && rng.gen_bool(0.5) {
            let cut = rng.gen_range(1..words.len() / 2);
            words.rotate_left(cut);
        }
        let mut out = String::new();
        out.push_str(OPENERS.choose(rng).expect("non-empty"));
        out.push(' ');
        out.push_str(&words.join(" "));
        let closer = CLOSERS.choose(rng).expect("non-empty");
        if rng.gen_bool(0.3) {
            out.push_str(". ");
            out.push_str(SOFTENERS.choose(rng).expect("non-empty"));
        } else if !closer.is_empty() {
            out.push_str("? ");
            out.push_str(closer);
        }
        out
    }
}

impl GeneratorBackend for MockGenerator {
    fn complete(&self, prompt: &str, params: &SamplingParams) -> Result<Vec<String>> {
        let call = self.calls.fetch_add(1, Ordering::SeqCst);
        if self
            .fail_first
            .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| n.checked_sub(1))
            .is_ok()
        {
            return Err(Error::Backend {
                record: None,
                message: "mock transient failure".into(),
                retryable: true,
            });
        }
        let line = Self::input_line(prompt);
        Ok(match &self.mode {
            MockMode::Duplicate => vec![line.to_string(); params.n],
            MockMode::Scripted(outputs) => (0..params.n)
                .map(|i| outputs[(call * params.n + i) % outputs.len().max(1)].clone())
                .collect(),
            MockMode::Paraphrase => {
                let mut rng = ChaCha8Rng::seed_from_u64(params.seed ^ stable_hash(&[prompt]));
                (0..params.n).map(|_| Self::paraphrase(line, &mut rng)).collect()
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn retry_recovers_from_transient_failures() {
        let gen = MockGenerator::new(MockMode::Duplicate).failing_first(2);
        let out = RetryPolicy::immediate(3)
            .run(|| gen.complete("Input: hello", &SamplingParams::default()))
            .unwrap();
        assert_eq!(out, vec!["hello"]);
        assert_eq!(gen.calls(), 3);
    }

    #[test]
    fn retry_gives_up() {
        let gen = MockGenerator::new(MockMode::Duplicate).failing_first(5);
        let err = RetryPolicy::immediate(2)
            .run(|| gen.complete("x", &SamplingParams::default()))
            .unwrap_err();
        assert!(err.is_retryable());
        assert_eq!(gen.calls(), 2);
    }

    #[test]
    fn ordered_map_keeps_input_order() {
        let items: Vec<u64> = (0..50).collect();
        let out = map_ordered(&items, 8, |_, &x| {
            thread::sleep(Duration::from_micros((50 - x) * 20));
            x * 2
        });
        assert_eq!(out, items.iter().map(|x| x * 2).collect::<Vec<_>>());
    }

    #[test]
    fn lexicon_translator_is_deterministic() {
        let t = LexiconTranslator::new(9);
        let out = t.translate("If you could choose a place", "en", "de").unwrap();
        let a = t.translate(&out, "de", "en").unwrap();
        let b = t.translate(&out, "de", "en").unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn paraphrase_mock_is_seeded() {
        let g = MockGenerator::new(MockMode::Paraphrase);
        let p = SamplingParams {
            n: 3,
            temperature: 1.0,
            seed: 4,
        };
        let a = g.complete("Input: where would you like to travel?", &p).unwrap();
        let b = g.complete("Input: where would you like to travel?", &p).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 3);
    }
}
