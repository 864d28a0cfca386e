mod common;

use std::fs;

use common::{palign, stderr, stdout, write_quick_config};
use persona_pipeline::{doctor, Stage, Status};

fn args<'a>(config: &'a str, workdir: &'a str, rest: &[&'a str]) -> Vec<&'a str> {
    let mut v = vec!["--config", config, "--workdir", workdir];
    v.extend_from_slice(rest);
    v
}

#[test]
fn dpo_before_sft_exits_with_missing_prerequisite() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_quick_config(dir.path());
    let (c, w) = (cfg.to_str().unwrap(), dir.path().join("work"));
    let w = w.to_str().unwrap();
    let out = palign(&args(c, w, &["train", "dpo"]));
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
    assert!(
        stderr(&out).contains("requires checkpoint from stage sft"),
        "{}",
        stderr(&out)
    );
}

#[test]
fn bad_config_exits_2_naming_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    let w = dir.path().join("work");
    fs::write(&cfg, "beta = -1.0\n").unwrap();
    let out = palign(&args(cfg.to_str().unwrap(), w.to_str().unwrap(), &["ingest"]));
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("beta"), "{}", stderr(&out));

    fs::write(&cfg, "[model]\nhidden_dim = \"wide\"\n").unwrap();
    let out = palign(&args(cfg.to_str().unwrap(), w.to_str().unwrap(), &["ingest"]));
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("model.hidden_dim"), "{}", stderr(&out));

    fs::write(&cfg, "seed = 1\n").unwrap();
    let out = palign(&args(cfg.to_str().unwrap(), w.to_str().unwrap(), &["ingest"]));
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("inputs.personas"), "{}", stderr(&out));
}

#[test]
fn overrides_are_validated() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_quick_config(dir.path());
    let w = dir.path().join("work");
    let out = palign(&args(
        cfg.to_str().unwrap(),
        w.to_str().unwrap(),
        &["--rouge-threshold", "1.5", "ingest"],
    ));
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("rouge_threshold"), "{}", stderr(&out));
}

#[test]
fn staged_commands_then_doctor() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_quick_config(dir.path());
    let work = dir.path().join("work");
    let (c, w) = (cfg.to_str().unwrap(), work.to_str().unwrap());

    let report = doctor(&work);
    assert!(Stage::ALL.iter().all(|s| *report.status(*s) == Status::Pending));
    assert!(!work.exists(), "doctor must not create the workdir");

    for step in [&["ingest"][..], &["augment"], &["train", "sft"]] {
        let out = palign(&args(c, w, step));
        assert!(out.status.success(), "{step:?}: {}", stderr(&out));
    }
    let report = doctor(&work);
    assert_eq!(*report.status(Stage::Sft), Status::Done);
    assert_eq!(report.status(Stage::Rm).to_string(), "blocked on annotations");
    assert!(report.is_healthy(), "{}", report.render());

    let out = palign(&args(c, w, &["train", "rm"]));
    assert_eq!(out.status.code(), Some(3));
    assert!(
        stderr(&out).contains("requires annotations from stage annotate"),
        "{}",
        stderr(&out)
    );

    let export = dir.path().join("tasks.jsonl");
    let out = palign(&args(c, w, &["annotate", "export", "--out", export.to_str().unwrap()]));
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(fs::read_to_string(&export).unwrap().lines().count(), 48);

    let votes = common::fixtures().join("annotations.jsonl");
    for step in [
        &["annotate", "import", votes.to_str().unwrap()][..],
        &["train", "rm"],
        &["pairs"],
        &["train", "dpo"],
        &["eval"],
    ] {
        let out = palign(&args(c, w, step));
        assert!(out.status.success(), "{step:?}: {}", stderr(&out));
    }
    let out = palign(&args(c, w, &["eval"]));
    assert!(stdout(&out).contains("eval             cached"), "{}", stdout(&out));
    assert!(stdout(&out).contains("ROUGE-L"), "{}", stdout(&out));

    // Every split item was escalated, so nothing is left to annotate.
    let out = palign(&args(c, w, &["annotate", "export", "--out", export.to_str().unwrap()]));
    assert!(stdout(&out).starts_with("0 task(s)"), "{}", stdout(&out));

    let out = palign(&args(c, w, &["doctor", "--json"]));
    assert!(out.status.success());
    let json: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(json["issues"].as_array().unwrap().is_empty(), "{json}");
    assert!(json["stages"]
        .as_array()
        .unwrap()
        .iter()
        .all(|s| s["status"]["state"] == "done"));
}
