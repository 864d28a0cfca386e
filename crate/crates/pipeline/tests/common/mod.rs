#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use persona_pipeline::PipelineConfig;

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .canonicalize()
        .expect("fixtures dir")
}

/// The bundled config, scaled down so a full run takes a second or two.
pub fn quick_config_text() -> String {
    let text = fs::read_to_string(fixtures().join("palign.toml")).expect("bundled config");
    let mut cfg: toml::Table = text.parse().expect("bundled config parses");
    cfg["model"] = toml::Value::Table(
        [("embed_dim", 8), ("hidden_dim", 16), ("layers", 1)]
            .into_iter()
            .map(|(k, v)| (k.to_string(), toml::Value::Integer(v)))
            .collect(),
    );
    let stages = cfg["stages"].as_array_mut().expect("stages");
    for s in stages {
        s["epochs"] = toml::Value::Integer(1);
    }
    cfg["dpo"]["max_steps"] = toml::Value::Integer(5);
    cfg["eval"]["max_new_tokens"] = toml::Value::Integer(24);
    let inputs = cfg["inputs"].as_table_mut().expect("inputs");
    for (_, v) in inputs.iter_mut() {
        match v {
            toml::Value::String(s) => *s = fixtures().join(&*s).display().to_string(),
            toml::Value::Array(a) => {
                for s in a {
                    *s = toml::Value::String(fixtures().join(s.as_str().expect("path")).display().to_string());
                }
            }
            _ => {}
        }
    }
    toml::to_string(&cfg).expect("config serializes")
}

pub fn quick_config() -> PipelineConfig {
    PipelineConfig::from_toml_str(&quick_config_text()).expect("quick config is valid")
}

/// Writes the quick config into `dir` and returns its path.
pub fn write_quick_config(dir: &Path) -> PathBuf {
    let path = dir.join("palign.toml");
    fs::write(&path, quick_config_text()).expect("write config");
    path
}

pub fn palign(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_palign"))
        .args(args)
        .output()
        .expect("palign runs")
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}
