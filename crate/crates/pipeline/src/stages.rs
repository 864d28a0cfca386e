//! The work each stage does. Every function reads its inputs through
//! [`StageInputs`] and returns bytes; the runner stores them.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use persona_align::annotate::{
    build_pairs, judge_alignment, label_with_reward_model, reward_preference, score_with_judge, AggregatedScore,
    FinalScore, MockJudge, VoteLog, DEFAULT_JUDGE_TEMPLATE,
};
use persona_align::augment::{
    expand_by_back_translation, persona_block, self_instruct, BackTranslator, IdentityTranslator, LexiconTranslator,
    MockGenerator, MockMode, PromptTemplate, RetryPolicy, ReverseWordsTranslator, TranslatorBackend,
};
use persona_align::corpus::{
    load_records, parse_records, split_dataset, to_jsonl, AnnotationRecord, JsonlRecord, Loaded, Origin,
    PersonaProfile, PersonaSet, PreferencePair, QaPair, SeedGroup, Task,
};
use persona_align::metrics::{assemble_report, EvalItem, ItemResult};
use persona_align::model::{Checkpoint, GenerationParams, PolicyHandle, TinyLm, Tokenizer};
use persona_align::train::{train_dpo, train_rm, train_sft, DpoConfig, RmConfig, SftConfig, TrainAbort};
use serde::Serialize;
use serde_json::json;

use crate::error::{Context, PipelineError, Result};
use crate::runner::{Output, Product, StageInputs};
use crate::stage::Stage;
use crate::store::Workdir;

pub(crate) fn run(stage: Stage, inputs: &StageInputs<'_>, workdir: &Workdir) -> Result<Product> {
    match stage {
        Stage::Ingest => ingest(inputs),
        Stage::Augment => augment(inputs),
        Stage::Sft => sft(inputs, workdir),
        Stage::Annotate => annotate(inputs),
        Stage::Rm => rm(inputs, workdir),
        Stage::LabelRemainder => label_remainder(inputs),
        Stage::Pairs => pairs(inputs),
        Stage::Dpo => dpo(inputs, workdir),
        Stage::Eval => eval(inputs),
    }
}

fn jsonl<T: Serialize>(records: &[T]) -> Vec<u8> {
    to_jsonl(records).expect("records serialize").into_bytes()
}

fn pretty<T: Serialize>(value: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(value).expect("value serializes");
    s.push('\n');
    s.into_bytes()
}

fn read_file<T: JsonlRecord>(path: &Path) -> Result<Vec<Loaded<T>>> {
    load_records(path).context(|| format!("loading {}", path.display()))
}

fn records<T: JsonlRecord>(inputs: &StageInputs<'_>, from: Stage, name: &str) -> Result<Vec<T>> {
    let text = inputs.text(from, name)?;
    Ok(parse_records::<T>(&text)
        .context(|| format!("artifact {from}/{name}"))?
        .into_iter()
        .map(|l| l.record)
        .collect())
}

fn optional_input<'a>(inputs: &StageInputs<'a>, name: &str, key: &str) -> Result<()> {
    if inputs.has(Stage::Ingest, name) {
        Ok(())
    } else {
        Err(PipelineError::config(
            key,
            format!("stage {} needs this input file", inputs.stage),
        ))
    }
}

fn model(inputs: &StageInputs<'_>, from: Stage) -> Result<TinyLm> {
    let bytes = inputs.bytes(from, "checkpoint")?;
    Checkpoint::from_bytes(&bytes)
        .and_then(Checkpoint::into_model)
        .context(|| format!("checkpoint from stage {from}"))
}

fn personas(inputs: &StageInputs<'_>) -> Result<PersonaSet> {
    PersonaSet::new(records(inputs, Stage::Ingest, "personas")?).context(|| "persona set".into())
}

fn training_failed(stage: Stage, workdir: &Workdir, abort: TrainAbort) -> PipelineError {
    if let Ok(r) = workdir.put(&pretty(&abort.manifest), "json") {
        log::warn!("{stage}: run manifest of the aborted run kept at {}", r.file);
    }
    PipelineError::Core {
        context: format!("{stage} training aborted after {} steps", abort.manifest.steps),
        source: abort.error,
    }
}

fn check_encodable(tok: &Tokenizer, id: &str, field: &str, text: &str) -> Result<()> {
    tok.encode(text).map(|_| ()).map_err(|e| PipelineError::Core {
        context: format!("record {id}: field `{field}`"),
        source: e,
    })
}

fn ingest(inputs: &StageInputs<'_>) -> Result<Product> {
    let files = &inputs.files;
    let tok = Tokenizer::ascii();
    let personas: Vec<PersonaProfile> = read_file(&files["personas"])?.into_iter().map(|l| l.record).collect();
    let set = PersonaSet::new(personas.clone()).context(|| files["personas"].display().to_string())?;

    let mut ids = HashSet::new();
    let mut seeds = Vec::new();
    for (name, path) in files.iter().filter(|(k, _)| k.starts_with("seeds.")) {
        let loaded: Vec<Loaded<QaPair>> = read_file(path)?;
        set.check_refs(&loaded).context(|| path.display().to_string())?;
        for l in loaded {
            if !ids.insert(l.record.id.clone()) {
                return Err(PipelineError::config(
                    format!("inputs.{name}"),
                    format!(
                        "line {}: record id {} appears in more than one seed file",
                        l.line, l.record.id
                    ),
                ));
            }
            seeds.push(l.record);
        }
    }
    for r in &seeds {
        check_encodable(&tok, &r.id, "prompt", &r.prompt)?;
        check_encodable(&tok, &r.id, "answer", &r.answer)?;
    }

    let mut product = Product::default();
    product.stats.insert("personas".into(), json!(personas.len()));
    product.stats.insert("seeds".into(), json!(seeds.len()));
    product.outputs.push(Output::new("personas", "jsonl", jsonl(&personas)));
    product.outputs.push(Output::new("seeds", "jsonl", jsonl(&seeds)));

    for name in ["general", "annotated_variants"] {
        if let Some(path) = files.get(name) {
            let loaded: Vec<Loaded<QaPair>> = read_file(path)?;
            set.check_refs(&loaded).context(|| path.display().to_string())?;
            let recs: Vec<QaPair> = loaded.into_iter().map(|l| l.record).collect();
            for r in &recs {
                check_encodable(&tok, &r.id, "prompt", &r.prompt)?;
                check_encodable(&tok, &r.id, "answer", &r.answer)?;
            }
            if name == "annotated_variants" {
                SeedGroup::from_records(&recs).context(|| path.display().to_string())?;
            }
            product.stats.insert(name.into(), json!(recs.len()));
            product.outputs.push(Output::new(name, "jsonl", jsonl(&recs)));
        }
    }
    if let Some(path) = files.get("eval") {
        let items: Vec<EvalItem> = read_file(path)?.into_iter().map(|l| l.record).collect();
        for it in &items {
            if let Some(pid) = &it.persona_id {
                set.resolve(pid)
                    .context(|| format!("{}: eval item {}", path.display(), it.id))?;
            }
            check_encodable(&tok, &it.id, "prompt", &it.prompt)?;
        }
        product.stats.insert("eval".into(), json!(items.len()));
        product.outputs.push(Output::new("eval", "jsonl", jsonl(&items)));
    }
    Ok(product)
}

fn augment(inputs: &StageInputs<'_>) -> Result<Product> {
    let cfg = inputs.config;
    let seeds: Vec<QaPair> = records(inputs, Stage::Ingest, "seeds")?;
    let personas = personas(inputs)?;
    let aug = cfg.augmentation();

    let translator: Box<dyn TranslatorBackend> = match cfg.augment.translator {
        crate::config::TranslatorKind::Lexicon => Box::new(LexiconTranslator::new(cfg.seed)),
        crate::config::TranslatorKind::ReverseWords => Box::new(ReverseWordsTranslator {
            pivot: aug.pivot_lang.clone(),
        }),
        crate::config::TranslatorKind::Identity => Box::new(IdentityTranslator),
    };
    let casual: Vec<QaPair> = seeds.iter().filter(|s| s.task == Task::Casual).cloned().collect();
    let mut stats = serde_json::Map::new();
    let mut back_translated = Vec::new();
    if !casual.is_empty() {
        let bt = BackTranslator::new(translator.as_ref());
        let target = casual.len() * cfg.augment.back_translation_factor;
        let outcome = expand_by_back_translation(&casual, &bt, &aug, target).context(|| "back-translation".into())?;
        stats.insert("near_duplicate_fraction".into(), json!(outcome.near_duplicate_fraction));
        stats.insert("rejected_empty".into(), json!(outcome.rejected_empty));
        stats.insert("back_translation_rounds".into(), json!(outcome.rounds));
        back_translated = outcome
            .records
            .into_iter()
            .filter(|r| r.origin == Origin::BackTranslation)
            .collect();
    }

    let persona_seeds: Vec<QaPair> = seeds.iter().filter(|s| s.persona_id.is_some()).cloned().collect();
    let mut generated = Vec::new();
    if !persona_seeds.is_empty() {
        let template = PromptTemplate::with_persona(cfg.augment.instruction.clone())
            .requirement("Keep it to one or two sentences.");
        let generator = MockGenerator::new(MockMode::Paraphrase);
        let outcome = self_instruct(
            &persona_seeds,
            &template,
            &generator,
            &aug,
            &personas,
            &RetryPolicy::default(),
        )
        .context(|| "self-instruct".into())?;
        if let Some(w) = &outcome.warning {
            log::warn!("augment: {w}");
            stats.insert("warning".into(), json!(w));
        }
        stats.insert("self_instruct_rounds".into(), json!(outcome.rounds));
        generated = outcome.records;
    }

    stats.insert("seeds".into(), json!(seeds.len()));
    stats.insert("back_translated".into(), json!(back_translated.len()));
    stats.insert("self_instruct".into(), json!(generated.len()));
    let mut all = seeds;
    all.extend(back_translated);
    all.extend(generated);
    stats.insert("total".into(), json!(all.len()));
    Ok(Product {
        outputs: vec![Output::new("augmented", "jsonl", jsonl(&all))],
        stats,
        train: None,
    })
}

fn sft(inputs: &StageInputs<'_>, workdir: &Workdir) -> Result<Product> {
    let cfg = inputs.config;
    let mut datasets: Vec<Vec<QaPair>> = Vec::new();
    for (i, s) in cfg.stages.iter().enumerate() {
        datasets.push(match s.dataset.as_str() {
            "general" => {
                optional_input(inputs, "general", "inputs.general").map_err(|_| {
                    PipelineError::config(
                        format!("stages[{i}].dataset"),
                        "dataset `general` needs inputs.general".to_string(),
                    )
                })?;
                records(inputs, Stage::Ingest, "general")?
            }
            _ => records(inputs, Stage::Augment, "augmented")?,
        });
    }
    let refs: Vec<&[QaPair]> = datasets.iter().map(Vec::as_slice).collect();
    let mut policy = TinyLm::new(Tokenizer::ascii(), cfg.model, cfg.seed);
    let sft_cfg = SftConfig {
        stages: cfg.stages.clone(),
        batch_size: cfg.batch_size,
        seed: cfg.seed,
        optimizer: cfg.train.optimizer,
        grad_clip: cfg.train.grad_clip,
        max_steps: None,
        workers: cfg.train.workers,
    };
    let run = train_sft(&mut policy, &sft_cfg, &refs).map_err(|a| training_failed(Stage::Sft, workdir, a))?;
    let mut product = Product::default();
    product.stats.insert("steps".into(), json!(run.steps));
    product
        .stats
        .insert("final_loss".into(), json!(run.epoch_losses.last()));
    product
        .outputs
        .push(Output::new("checkpoint", "ckpt", checkpoint_bytes(&policy)?));
    product.outputs.push(Output::new("loss", "csv", run.loss_csv()));
    product.train = Some(run);
    Ok(product)
}

fn checkpoint_bytes(m: &TinyLm) -> Result<Vec<u8>> {
    m.checkpoint().to_bytes().context(|| "serializing checkpoint".into())
}

fn load_votes(inputs: &StageInputs<'_>) -> Result<VoteLog> {
    let path = &inputs.files["annotations"];
    let recs: Vec<AnnotationRecord> = read_file(path)?.into_iter().map(|l| l.record).collect();
    VoteLog::replay(recs).context(|| path.display().to_string())
}

fn annotate(inputs: &StageInputs<'_>) -> Result<Product> {
    let quorum = inputs.config.annotate.quorum;
    let log = load_votes(inputs)?;
    if inputs.has(Stage::Ingest, "annotated_variants") {
        let variants: Vec<QaPair> = records(inputs, Stage::Ingest, "annotated_variants")?;
        let known: HashSet<&str> = variants.iter().map(|v| v.id.as_str()).collect();
        if let Some(r) = log.records().iter().find(|r| !known.contains(r.item_id.as_str())) {
            return Err(PipelineError::config(
                "inputs.annotations",
                format!("vote for unknown item {}", r.item_id),
            ));
        }
    }
    let aggregated = log.aggregate_all(quorum);
    let split = aggregated.iter().filter(|a| a.final_score == FinalScore::Split).count();
    let mut product = Product::default();
    product.stats.insert("votes".into(), json!(log.records().len()));
    product.stats.insert("aggregated".into(), json!(aggregated.len()));
    product.stats.insert("split".into(), json!(split));
    product
        .outputs
        .push(Output::new("votes", "jsonl", jsonl(log.records())));
    product
        .outputs
        .push(Output::new("aggregated", "json", pretty(&aggregated)));
    Ok(product)
}

/// Items that still need votes, as JSONL for annotators.
pub(crate) fn annotation_tasks(inputs: &StageInputs<'_>, workdir: &Workdir) -> Result<(String, usize)> {
    optional_input(inputs, "annotated_variants", "inputs.annotated_variants")?;
    let variants: Vec<QaPair> = records(inputs, Stage::Ingest, "annotated_variants")?;
    let personas = personas(inputs)?;
    let quorum = inputs.config.annotate.quorum;
    let index = workdir.index()?;
    let log = match index.stages.get(&Stage::Annotate).and_then(|e| e.outputs.get("votes")) {
        Some(r) => {
            let text = workdir.read_string(r)?;
            let recs = parse_records::<AnnotationRecord>(&text).context(|| "recorded votes".into())?;
            VoteLog::replay(recs.into_iter().map(|l| l.record)).context(|| "recorded votes".into())?
        }
        None => VoteLog::new(),
    };
    let mut out = String::new();
    let mut count = 0;
    for v in &variants {
        let needs_votes = match log.aggregate(&v.id, quorum) {
            None => true,
            Some(a) => a.final_score == FinalScore::Split,
        };
        if !needs_votes {
            continue;
        }
        let summary = v
            .persona_id
            .as_deref()
            .and_then(|p| personas.get(p))
            .map(persona_block)
            .unwrap_or_default();
        let task = json!({
            "item_id": v.id,
            "prompt": v.prompt,
            "candidate": v.answer,
            "persona_id": v.persona_id,
            "persona_summary": summary,
            "votes": log.votes(&v.id),
        });
        out.push_str(&task.to_string());
        out.push('\n');
        count += 1;
    }
    Ok((out, count))
}

fn rm(inputs: &StageInputs<'_>, workdir: &Workdir) -> Result<Product> {
    let cfg = inputs.config;
    optional_input(inputs, "annotated_variants", "inputs.annotated_variants")?;
    let variants: Vec<QaPair> = records(inputs, Stage::Ingest, "annotated_variants")?;
    let groups = SeedGroup::from_records(&variants).context(|| "annotated variants".into())?;
    let aggregated: Vec<AggregatedScore> = serde_json::from_slice(&inputs.bytes(Stage::Annotate, "aggregated")?)
        .map_err(|e| PipelineError::Core {
            context: "annotate/aggregated".into(),
            source: e.into(),
        })?;
    let scores: HashMap<String, AggregatedScore> = aggregated.into_iter().map(|a| (a.item_id.clone(), a)).collect();
    let mut human = Vec::new();
    for g in &groups {
        human.extend(build_pairs(g, &scores, cfg.pair_policy).context(|| format!("seed group {}", g.seed_id))?);
    }
    if human.is_empty() {
        return Err(PipelineError::config(
            "inputs.annotations",
            "the annotations yield no preference pairs",
        ));
    }

    let mut reward_model = model(inputs, Stage::Sft)?;
    let rm_cfg = RmConfig {
        epochs: cfg.rm.epochs,
        lr: cfg.rm.lr.unwrap_or(cfg.lr),
        batch_size: cfg.rm.batch_size.unwrap_or(cfg.batch_size),
        seed: cfg.seed,
        optimizer: cfg.train.optimizer,
        grad_clip: cfg.train.grad_clip,
        max_steps: None,
        workers: cfg.train.workers,
    };
    let run = train_rm(&mut reward_model, &rm_cfg, &human).map_err(|a| training_failed(Stage::Rm, workdir, a))?;
    let mut ordered = 0usize;
    for p in &human {
        let rw = reward_model
            .scores(&p.prompt, &p.chosen)
            .context(|| p.id.clone())?
            .reward;
        let rl = reward_model
            .scores(&p.prompt, &p.rejected)
            .context(|| p.id.clone())?
            .reward;
        ordered += usize::from(rw > rl);
    }
    let mut product = Product::default();
    product.stats.insert("human_pairs".into(), json!(human.len()));
    product.stats.insert(
        "train_ordering_accuracy".into(),
        json!(ordered as f64 / human.len() as f64),
    );
    product
        .outputs
        .push(Output::new("checkpoint", "ckpt", checkpoint_bytes(&reward_model)?));
    product.outputs.push(Output::new("human_pairs", "jsonl", jsonl(&human)));
    product.outputs.push(Output::new("loss", "csv", run.loss_csv()));
    product.train = Some(run);
    Ok(product)
}

fn label_remainder(inputs: &StageInputs<'_>) -> Result<Product> {
    let cfg = inputs.config;
    let augmented: Vec<QaPair> = records(inputs, Stage::Augment, "augmented")?;
    // Back-translated records rewrite the prompt, so they cannot share a
    // group with their seed.
    let same_prompt: Vec<QaPair> = augmented
        .into_iter()
        .filter(|r| r.origin != Origin::BackTranslation && r.persona_id.is_some())
        .collect();
    let groups: Vec<SeedGroup> = SeedGroup::from_records(&same_prompt)
        .context(|| "augmented groups".into())?
        .into_iter()
        .filter(|g| g.variants.len() >= 2)
        .collect();
    let reward_model = model(inputs, Stage::Rm)?;
    let outcome = label_with_reward_model(&groups, &reward_model, cfg.label.margin, cfg.pair_policy)
        .context(|| "reward-model labelling".into())?;
    let mut product = Product::default();
    product.stats.insert("groups".into(), json!(groups.len()));
    product.stats.insert("machine_pairs".into(), json!(outcome.pairs.len()));
    product
        .stats
        .insert("routed_to_humans".into(), json!(outcome.routed_to_humans.len()));
    product
        .outputs
        .push(Output::new("machine_pairs", "jsonl", jsonl(&outcome.pairs)));
    product
        .outputs
        .push(Output::new("routed", "jsonl", jsonl(&outcome.routed_to_humans)));
    Ok(product)
}

fn pairs(inputs: &StageInputs<'_>) -> Result<Product> {
    let cfg = inputs.config;
    let mut all: Vec<PreferencePair> = records(inputs, Stage::Rm, "human_pairs")?;
    let human = all.len();
    all.extend(records::<PreferencePair>(
        inputs,
        Stage::LabelRemainder,
        "machine_pairs",
    )?);
    let target = (all.len() as f64 * cfg.pairs.test_fraction).round() as usize;
    // Whole seed groups go to one side; take the largest reachable test size
    // not above the target.
    let split = (0..=target)
        .rev()
        .find_map(|n| split_dataset(&all, n, cfg.seed).ok())
        .expect("an empty test side is always reachable");
    let test_ids: HashSet<&str> = split.test.iter().map(String::as_str).collect();
    let (test, train): (Vec<PreferencePair>, Vec<PreferencePair>) =
        all.iter().cloned().partition(|p| test_ids.contains(p.id.as_str()));
    let mut product = Product::default();
    product.stats.insert("human_pairs".into(), json!(human));
    product.stats.insert("machine_pairs".into(), json!(all.len() - human));
    product.stats.insert("train".into(), json!(train.len()));
    product.stats.insert("test".into(), json!(test.len()));
    product.outputs.push(Output::new("train", "jsonl", jsonl(&train)));
    product.outputs.push(Output::new("test", "jsonl", jsonl(&test)));
    product.outputs.push(Output::new("split", "json", pretty(&split)));
    Ok(product)
}

fn dpo(inputs: &StageInputs<'_>, workdir: &Workdir) -> Result<Product> {
    let cfg = inputs.config;
    let train: Vec<PreferencePair> = records(inputs, Stage::Pairs, "train")?;
    let mut policy = model(inputs, Stage::Sft)?;
    let reference = policy.frozen();
    let dpo_cfg = DpoConfig {
        beta: cfg.beta,
        lr: cfg.dpo.lr.unwrap_or(cfg.lr),
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        seed: cfg.seed,
        reference: inputs.hash(Stage::Sft, "checkpoint"),
        optimizer: cfg.train.optimizer,
        grad_clip: cfg.train.grad_clip,
        max_steps: cfg.dpo.max_steps,
        workers: cfg.train.workers,
    };
    let run = train_dpo(&mut policy, Some(&reference), &dpo_cfg, &train)
        .map_err(|a| training_failed(Stage::Dpo, workdir, a))?;
    let mut product = Product::default();
    product.stats.insert("steps".into(), json!(run.steps));
    product
        .stats
        .insert("final_mean_margin".into(), json!(run.final_mean_margin));
    product
        .outputs
        .push(Output::new("checkpoint", "ckpt", checkpoint_bytes(&policy)?));
    product.outputs.push(Output::new("loss", "csv", run.loss_csv()));
    product.train = Some(run);
    Ok(product)
}

fn eval(inputs: &StageInputs<'_>) -> Result<Product> {
    let cfg = inputs.config;
    optional_input(inputs, "eval", "inputs.eval")?;
    let items: Vec<EvalItem> = records(inputs, Stage::Ingest, "eval")?;
    let personas = personas(inputs)?;
    let policy = model(inputs, Stage::Dpo)?;
    let params = GenerationParams::greedy(cfg.eval.max_new_tokens);
    let mut results = Vec::with_capacity(items.len());
    for item in items {
        let prediction = policy
            .generate(&item.prompt, &params)
            .context(|| format!("eval item {}", item.id))?;
        results.push(ItemResult { item, prediction });
    }

    // Judge agreement on held-out pairs, each judged in its seed's persona.
    let test: Vec<PreferencePair> = records(inputs, Stage::Pairs, "test")?;
    let mut persona_of: BTreeMap<String, String> = BTreeMap::new();
    for name in ["seeds", "annotated_variants"] {
        if inputs.has(Stage::Ingest, name) {
            for r in records::<QaPair>(inputs, Stage::Ingest, name)? {
                if let Some(p) = r.persona_id.clone() {
                    persona_of.entry(r.group_id().to_string()).or_insert(p);
                }
            }
        }
    }
    let fallback = personas
        .iter()
        .next()
        .cloned()
        .ok_or_else(|| PipelineError::config("inputs.personas", "no personas"))?;
    let reward_model = model(inputs, Stage::Rm)?;
    let judge = MockJudge::Lexicon;
    let retry = RetryPolicy::immediate(3);
    let mut rm_prefs = Vec::new();
    let mut verdicts = Vec::new();
    for p in &test {
        let persona = persona_of
            .get(&p.seed_id)
            .and_then(|id| personas.get(id))
            .unwrap_or(&fallback);
        rm_prefs.push((
            p.id.clone(),
            reward_preference(&reward_model, p).context(|| p.id.clone())?,
        ));
        verdicts.push(score_with_judge(p, &judge, persona, DEFAULT_JUDGE_TEMPLATE, &retry).context(|| p.id.clone())?);
    }
    let alignment = if test.is_empty() {
        log::warn!("eval: no held-out pairs, alignment rate left empty");
        None
    } else {
        match judge_alignment(&rm_prefs, &verdicts) {
            Ok(a) => Some(a),
            Err(persona_align::Error::InvalidArgument(m)) => {
                log::warn!("eval: alignment rate left empty: {m}");
                None
            }
            Err(e) => return Err(e).context(|| "judge alignment".into()),
        }
    };

    let run_id = inputs.hash(Stage::Dpo, "manifest").unwrap_or_default();
    let report = assemble_report(&results, cfg.eval.grading, &personas, alignment, &run_id)
        .context(|| "assembling report".into())?;
    let predictions: Vec<_> = results
        .iter()
        .map(|r| json!({ "id": r.item.id, "prediction": r.prediction }))
        .collect();
    let mut product = Product::default();
    product.stats.insert("items".into(), json!(results.len()));
    product.stats.insert("judged_pairs".into(), json!(test.len()));
    product.outputs.push(Output::new("report", "json", pretty(&report)));
    product.outputs.push(Output::new(
        "report_table",
        "txt",
        report.render_table("tiny-rnn (dpo)", &personas),
    ));
    product
        .outputs
        .push(Output::new("predictions", "jsonl", jsonl(&predictions)));
    Ok(product)
}
