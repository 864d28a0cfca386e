//! Corpus expansion: back-translation round trips and self-instruct
//! bootstrapping, with a ROUGE-L redundancy filter.

mod backend;
mod filter;
mod template;

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

pub(crate) use backend::stable_hash;
pub use backend::{
    map_ordered, GeneratorBackend, IdentityTranslator, LexiconTranslator, MockGenerator, MockMode, RetryPolicy,
    ReverseWordsTranslator, SamplingParams, TranslatorBackend,
};
pub use filter::{rouge_l_filter, FilterOutcome, RougeFilter};
pub use template::{persona_block, render_prompt, render_text, PromptTemplate, DEFAULT_BODY};

use crate::corpus::{Origin, PersonaSet, QaPair};
use crate::error::{Error, Result};
use crate::metrics::{rouge_l, tokenize};

/// Which field of a seed record the generator rewrites.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentTarget {
    #[default]
    Prompt,
    Answer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentationConfig {
    pub rouge_threshold: f64,
    pub source_lang: String,
    pub pivot_lang: String,
    /// Pivots used when back-translation is iterated to a target size.
    pub pivot_chain: Vec<String>,
    pub expansion_factor: usize,
    pub max_rounds: usize,
    pub seed: u64,
    pub parallelism: usize,
    pub target: AugmentTarget,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        AugmentationConfig {
            rouge_threshold: 0.7,
            source_lang: "en".into(),
            pivot_lang: "de".into(),
            pivot_chain: vec!["de".into(), "fr".into(), "ja".into()],
            expansion_factor: 3,
            max_rounds: 5,
            seed: 0,
            parallelism: 4,
            target: AugmentTarget::Prompt,
        }
    }
}

impl AugmentationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.rouge_threshold) {
            return Err(Error::InvalidArgument(format!(
                "rouge_threshold {} outside [0,1]",
                self.rouge_threshold
            )));
        }
        if self.expansion_factor == 0 || self.max_rounds == 0 {
            return Err(Error::InvalidArgument(
                "expansion_factor and max_rounds must be positive".into(),
            ));
        }
        Ok(())
    }
}

fn attach_record(e: Error, record: &str) -> Error {
    match e {
        Error::Backend {
            record: None,
            message,
            retryable,
        } => Error::Backend {
            record: Some(record.to_string()),
            message,
            retryable,
        },
        other => other,
    }
}

/// Round-trips a record's prompt through a pivot language. The answer is
/// carried over unchanged.
pub struct BackTranslator<'a> {
    pub backend: &'a dyn TranslatorBackend,
    pub source_lang: String,
    pub retry: RetryPolicy,
}

impl<'a> BackTranslator<'a> {
    pub fn new(backend: &'a dyn TranslatorBackend) -> Self {
        BackTranslator {
            backend,
            source_lang: "en".into(),
            retry: RetryPolicy::default(),
        }
    }

    pub fn back_translate(&self, record: &QaPair, pivot: &str) -> Result<QaPair> {
        let src = self.source_lang.as_str();
        let there = self
            .retry
            .run(|| self.backend.translate(&record.prompt, src, pivot))
            .map_err(|e| attach_record(e, &record.id))?;
        let back = self
            .retry
            .run(|| self.backend.translate(&there, pivot, src))
            .map_err(|e| attach_record(e, &record.id))?;
        let back = back.trim();
        if back.is_empty() {
            return Err(Error::EmptyTranslation(record.id.clone()));
        }
        Ok(QaPair {
            id: format!("{}~bt-{pivot}", record.id),
            prompt: back.to_string(),
            answer: record.answer.clone(),
            persona_id: record.persona_id.clone(),
            task: record.task,
            origin: Origin::BackTranslation,
            seed_id: Some(record.group_id().to_string()),
        })
    }
}

pub fn back_translate(record: &QaPair, backend: &dyn TranslatorBackend, pivot: &str) -> Result<QaPair> {
    BackTranslator::new(backend).back_translate(record, pivot)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackTranslationOutcome {
    /// Seeds followed by the accepted back-translations.
    pub records: Vec<QaPair>,
    /// Share of round-trip outputs whose ROUGE-L against their source prompt
    /// exceeds the configured threshold.
    pub near_duplicate_fraction: f64,
    pub rejected_empty: usize,
    pub rounds: usize,
}

fn dedupe_key(r: &QaPair) -> (String, Option<String>) {
    (tokenize(&r.prompt).join(" "), r.persona_id.clone())
}

/// Iterates back-translation over the pivot chain until `target_total`
/// records exist (seeds included) or `config.max_rounds` rounds have run.
/// Exact duplicates (after normalization) are discarded.
pub fn expand_by_back_translation(
    seeds: &[QaPair],
    translator: &BackTranslator<'_>,
    config: &AugmentationConfig,
    target_total: usize,
) -> Result<BackTranslationOutcome> {
    config.validate()?;
    let pivots = if config.pivot_chain.is_empty() {
        vec![config.pivot_lang.clone()]
    } else {
        config.pivot_chain.clone()
    };
    let mut records: Vec<QaPair> = seeds.to_vec();
    let mut seen: HashSet<_> = records.iter().map(dedupe_key).collect();
    let mut per_group: BTreeMap<String, usize> = BTreeMap::new();
    let mut frontier: Vec<QaPair> = seeds.to_vec();
    let (mut produced, mut near_dup, mut rejected_empty, mut rounds) = (0usize, 0usize, 0usize, 0usize);

    while records.len() < target_total && !frontier.is_empty() && rounds < config.max_rounds {
        rounds += 1;
        let jobs: Vec<(&QaPair, &str)> = frontier
            .iter()
            .flat_map(|r| pivots.iter().map(move |p| (r, p.as_str())))
            .collect();
        let results = map_ordered(&jobs, config.parallelism, |_, (r, p)| translator.back_translate(r, p));
        let mut next = Vec::new();
        for ((source, _), res) in jobs.iter().zip(results) {
            let mut cand = match res {
                Ok(c) => c,
                Err(Error::EmptyTranslation(id)) => {
                    log::debug!("empty translation for {id}");
                    rejected_empty += 1;
                    continue;
                }
                Err(e) => return Err(e),
            };
            produced += 1;
            if rouge_l(&cand.prompt, &source.prompt) > config.rouge_threshold {
                near_dup += 1;
            }
            if records.len() >= target_total || !seen.insert(dedupe_key(&cand)) {
                continue;
            }
            let n = per_group.entry(cand.group_id().to_string()).or_default();
            *n += 1;
            cand.id = format!("{}~bt{}", cand.group_id(), n);
            next.push(cand.clone());
            records.push(cand);
        }
        frontier = next;
    }
    Ok(BackTranslationOutcome {
        records,
        near_duplicate_fraction: if produced == 0 {
            0.0
        } else {
            near_dup as f64 / produced as f64
        },
        rejected_empty,
        rounds,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelfInstructOutcome {
    pub records: Vec<QaPair>,
    pub rounds: usize,
    /// Set when no candidate survived the filter.
    pub warning: Option<String>,
}

fn target_text(r: &QaPair, target: AugmentTarget) -> &str {
    match target {
        AugmentTarget::Prompt => &r.prompt,
        AugmentTarget::Answer => &r.answer,
    }
}

/// One bootstrapping round: asks the generator for `quota[i]` completions
/// per seed and keeps the ones that pass the redundancy filter. Kept
/// candidates join the filter pool, so later seeds see earlier survivors.
#[allow(clippy::too_many_arguments)]
pub fn self_instruct_round(
    seeds: &[QaPair],
    quota: &[usize],
    round: usize,
    template: &PromptTemplate,
    backend: &dyn GeneratorBackend,
    config: &AugmentationConfig,
    personas: &PersonaSet,
    filter: &mut RougeFilter,
    retry: &RetryPolicy,
) -> Result<Vec<Vec<String>>> {
    let prompts: Vec<Option<String>> = seeds
        .iter()
        .zip(quota)
        .map(|(s, &q)| {
            if q == 0 {
                return Ok(None);
            }
            let persona = match (&s.persona_id, template.persona_slot()) {
                (Some(pid), true) => Some(personas.resolve(pid)?),
                _ => None,
            };
            render_text(template, target_text(s, config.target), persona).map(Some)
        })
        .collect::<Result<_>>()?;

    let jobs: Vec<(usize, &String)> = prompts
        .iter()
        .enumerate()
        .filter_map(|(i, p)| p.as_ref().map(|p| (i, p)))
        .collect();
    let completions = map_ordered(&jobs, config.parallelism, |_, (i, prompt)| {
        let params = SamplingParams {
            n: quota[*i],
            temperature: 0.7,
            seed: config.seed ^ stable_hash(&[&seeds[*i].id, &round.to_string()]),
        };
        retry
            .run(|| backend.complete(prompt, &params))
            .map_err(|e| attach_record(e, &seeds[*i].id))
    });

    let mut kept: Vec<Vec<String>> = vec![Vec::new(); seeds.len()];
    for ((i, _), res) in jobs.iter().zip(completions) {
        for text in res? {
            let text = text.trim();
            if kept[*i].len() >= quota[*i] || text.is_empty() {
                continue;
            }
            if filter.offer(text) {
                kept[*i].push(text.to_string());
            }
        }
    }
    Ok(kept)
}

/// Runs bootstrapping rounds until every seed has `expansion_factor`
/// survivors or `max_rounds` is reached.
pub fn self_instruct(
    seeds: &[QaPair],
    template: &PromptTemplate,
    backend: &dyn GeneratorBackend,
    config: &AugmentationConfig,
    personas: &PersonaSet,
    retry: &RetryPolicy,
) -> Result<SelfInstructOutcome> {
    config.validate()?;
    if seeds.is_empty() {
        return Err(Error::InvalidArgument("self-instruct needs at least one seed".into()));
    }
    let pool: Vec<&str> = seeds.iter().map(|s| target_text(s, config.target)).collect();
    let mut filter = RougeFilter::new(config.rouge_threshold, &pool);
    let mut accepted: Vec<Vec<String>> = vec![Vec::new(); seeds.len()];
    let mut rounds = 0;
    while rounds < config.max_rounds {
        let quota: Vec<usize> = accepted.iter().map(|a| config.expansion_factor - a.len()).collect();
        if quota.iter().all(|&q| q == 0) {
            break;
        }
        rounds += 1;
        let kept = self_instruct_round(
            seeds,
            &quota,
            rounds,
            template,
            backend,
            config,
            personas,
            &mut filter,
            retry,
        )?;
        for (acc, k) in accepted.iter_mut().zip(kept) {
            acc.extend(k);
        }
    }

    let mut records = Vec::new();
    for (seed, texts) in seeds.iter().zip(&accepted) {
        for (k, text) in texts.iter().enumerate() {
            let mut r = seed.clone();
            r.id = format!("{}~si{}", seed.id, k + 1);
            r.origin = Origin::SelfInstruct;
            r.seed_id = Some(seed.group_id().to_string());
            match config.target {
                AugmentTarget::Prompt => r.prompt = text.clone(),
                AugmentTarget::Answer => r.answer = text.clone(),
            }
            records.push(r);
        }
    }
    let warning = records
        .is_empty()
        .then(|| format!("no candidate survived the ROUGE-L filter after {rounds} rounds"));
    if let Some(w) = &warning {
        log::warn!("{w}");
    }
    Ok(SelfInstructOutcome {
        records,
        rounds,
        warning,
    })
}
