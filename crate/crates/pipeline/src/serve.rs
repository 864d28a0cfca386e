use std::sync::Arc;

use persona_align::augment::persona_block;
use persona_align::corpus::{parse_records, PersonaProfile, PersonaSet, QaPair};
use persona_align::metrics::EvalReport;
use persona_align::model::{Checkpoint, GenerationParams};
use persona_studio::{AnnotationItem, PolicyChat, Studio, StudioConfig, SystemClock};

use crate::error::{Context, PipelineError, Result};
use crate::runner::Pipeline;
use crate::stage::Stage;

/// Builds the studio service over a workdir: annotation items from the
/// ingested variants, chat from the newest checkpoint (dpo, else sft), and
/// the latest report. Votes are appended to `exports/studio_votes.jsonl`.
pub fn studio_from_workdir(pipeline: &Pipeline, mut config: StudioConfig) -> Result<Studio> {
    let text = |stage, name| -> Result<Option<String>> {
        Ok(pipeline
            .output(stage, name)?
            .map(|b| String::from_utf8_lossy(&b).into_owned()))
    };
    let personas_text = text(Stage::Ingest, "personas")?.ok_or(PipelineError::MissingPrerequisite {
        stage: Stage::Ingest,
        producer: Stage::Ingest,
        kind: Stage::Ingest.product(),
    })?;
    let personas: Vec<PersonaProfile> = parse_records(&personas_text)
        .context(|| "ingested personas".into())?
        .into_iter()
        .map(|l| l.record)
        .collect();
    let personas = PersonaSet::new(personas).context(|| "ingested personas".into())?;

    let mut items = Vec::new();
    if let Some(t) = text(Stage::Ingest, "annotated_variants")? {
        for l in parse_records::<QaPair>(&t).context(|| "ingested variants".into())? {
            let v = l.record;
            let persona_summary = v
                .persona_id
                .as_deref()
                .and_then(|p| personas.get(p))
                .map(persona_block)
                .unwrap_or_default();
            items.push(AnnotationItem {
                item_id: v.id,
                prompt: v.prompt,
                candidate: v.answer,
                persona_id: v.persona_id,
                persona_summary,
            });
        }
    }

    let mut chat = None;
    for stage in [Stage::Dpo, Stage::Sft] {
        if let Some(bytes) = pipeline.output(stage, "checkpoint")? {
            let model = Checkpoint::from_bytes(&bytes)
                .and_then(Checkpoint::into_model)
                .context(|| format!("{stage} checkpoint"))?;
            log::info!("serve: chatting with the {stage} checkpoint");
            chat = Some(Arc::new(PolicyChat::new(Box::new(model), GenerationParams::greedy(120))) as _);
            break;
        }
    }
    let report: Option<EvalReport> = match pipeline.output(Stage::Eval, "report")? {
        Some(b) => serde_json::from_slice(&b).ok(),
        None => None,
    };
    if config.vote_log.is_none() {
        config.vote_log = Some(pipeline.workdir.exports_dir()?.join("studio_votes.jsonl"));
    }
    Studio::new(config, personas, items, chat, report, Arc::new(SystemClock::new())).map_err(|e| PipelineError::Core {
        context: "starting studio".into(),
        source: e,
    })
}
