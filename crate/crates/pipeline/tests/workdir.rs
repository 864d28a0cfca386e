mod common;

use std::fs;

use common::quick_config;
use persona_pipeline::{doctor, Issue, Pipeline, PipelineError, Stage, Status};

fn manifests(p: &Pipeline) -> Vec<Vec<u8>> {
    let index = p.workdir.index().unwrap();
    Stage::ALL
        .iter()
        .map(|s| p.workdir.read(&index.stages[s].manifest).unwrap())
        .collect()
}

#[test]
fn rerun_hits_the_cache() {
    let dir = tempfile::tempdir().unwrap();
    let p = Pipeline::new(quick_config(), dir.path()).unwrap();
    let first = p.run_all().unwrap();
    assert!(first.iter().all(|o| !o.cache_hit));
    let second = p.run_all().unwrap();
    assert!(second.iter().all(|o| o.cache_hit));
    for (a, b) in first.iter().zip(&second) {
        assert_eq!(a.entry, b.entry);
    }
}

#[test]
fn same_seed_same_bytes_in_separate_workdirs() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let pa = Pipeline::new(quick_config(), a.path()).unwrap();
    let pb = Pipeline::new(quick_config(), b.path()).unwrap();
    pa.run_all().unwrap();
    pb.run_all().unwrap();
    assert_eq!(manifests(&pa), manifests(&pb));
    assert_eq!(
        pa.output(Stage::Eval, "report").unwrap(),
        pb.output(Stage::Eval, "report").unwrap()
    );
}

#[test]
fn report_has_every_metric() {
    let dir = tempfile::tempdir().unwrap();
    let p = Pipeline::new(quick_config(), dir.path()).unwrap();
    p.run_all().unwrap();
    let report: serde_json::Value = serde_json::from_slice(&p.output(Stage::Eval, "report").unwrap().unwrap()).unwrap();
    for key in ["accuracy", "macro_f1", "alignment_rate"] {
        let v = report[key]
            .as_f64()
            .unwrap_or_else(|| panic!("{key} missing: {report}"));
        assert!((0.0..=1.0).contains(&v));
    }
    assert_eq!(report["rouge_l_by_persona"].as_object().unwrap().len(), 4);
    let dpo = p.workdir.index().unwrap().stages[&Stage::Dpo].manifest.hash.clone();
    assert_eq!(report["run_manifest_id"], dpo.as_str());
}

#[test]
fn config_change_reruns_only_downstream_stages() {
    let dir = tempfile::tempdir().unwrap();
    Pipeline::new(quick_config(), dir.path()).unwrap().run_all().unwrap();
    let mut cfg = quick_config();
    cfg.beta = 0.2;
    let outcomes = Pipeline::new(cfg, dir.path()).unwrap().run_all().unwrap();
    let ran: Vec<Stage> = outcomes.iter().filter(|o| !o.cache_hit).map(|o| o.stage).collect();
    assert_eq!(ran, vec![Stage::Dpo, Stage::Eval]);

    let report = doctor(dir.path());
    assert!(report.is_healthy(), "{}", report.render());
}

#[test]
fn corrupted_checkpoint_is_flagged_and_repaired() {
    let dir = tempfile::tempdir().unwrap();
    let p = Pipeline::new(quick_config(), dir.path()).unwrap();
    for s in [Stage::Ingest, Stage::Augment, Stage::Sft] {
        p.run_stage(s).unwrap();
    }
    let ckpt = p.workdir.index().unwrap().stages[&Stage::Sft].outputs["checkpoint"].clone();
    let path = p.workdir.path_of(&ckpt);
    let mut bytes = fs::read(&path).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x01;
    fs::write(&path, bytes).unwrap();

    let report = doctor(dir.path());
    assert_eq!(*report.status(Stage::Sft), Status::Damaged);
    assert!(report.issues.iter().any(
        |i| matches!(i, Issue::Mismatch { stage: Stage::Sft, artifact, expected, .. } if artifact == "checkpoint" && *expected == ckpt.hash)
    ));

    // Downstream reads refuse the damaged file.
    p.run_stage(Stage::Annotate).unwrap();
    assert!(matches!(p.run_stage(Stage::Rm), Err(PipelineError::Corrupt { .. })));

    // Rerunning the stage rebuilds it.
    assert!(!p.run_stage(Stage::Sft).unwrap().cache_hit);
    assert!(doctor(dir.path()).is_healthy());
}

#[test]
fn held_lock_blocks_other_runs() {
    let dir = tempfile::tempdir().unwrap();
    let p = Pipeline::new(quick_config(), dir.path()).unwrap();
    let lock = p.workdir.lock().unwrap();
    let err = p.run_stage(Stage::Ingest).unwrap_err();
    assert!(matches!(err, PipelineError::Locked(_)));
    assert!(doctor(dir.path()).issues.contains(&Issue::LockPresent));
    drop(lock);
    p.run_stage(Stage::Ingest).unwrap();
}

#[test]
fn rebuilt_upstream_marks_downstream_stale() {
    let dir = tempfile::tempdir().unwrap();
    let p = Pipeline::new(quick_config(), dir.path()).unwrap();
    for s in [Stage::Ingest, Stage::Augment, Stage::Sft] {
        p.run_stage(s).unwrap();
    }
    let mut cfg = quick_config();
    cfg.augment.expansion_factor = 1;
    Pipeline::new(cfg, dir.path())
        .unwrap()
        .run_stage(Stage::Augment)
        .unwrap();
    let report = doctor(dir.path());
    assert!(report
        .issues
        .iter()
        .any(|i| matches!(i, Issue::Stale { stage: Stage::Sft, input } if input == "augment/augmented")));
}
