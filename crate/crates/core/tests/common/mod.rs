#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Deserialize;

use planscript::bench::{load_samples, BenchmarkSample};
use planscript::config::{BackendMode, FileConfig, Overrides, Settings};
use planscript::gateway::{
    Backend, BackendSpec, Gateway, GatewayError, ModelRequest, ModelResponse, Role,
};
use planscript::task::TaskKind;

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

/// Strict fixture-replay settings for one suite directory.
pub fn replay_settings(suite: &str) -> Settings {
    let dir = fixtures().join(suite);
    let config = dir.join("config.json");
    let file = if config.exists() {
        FileConfig::load(&config).expect("suite config loads")
    } else {
        FileConfig::default()
    };
    let overrides = Overrides {
        backend: Some(BackendMode::Fixture),
        fixtures: Some(dir),
        strict: true,
        ..Overrides::default()
    };
    Settings::resolve(file, &overrides)
}

pub fn suite_samples(suite: &str) -> Vec<BenchmarkSample> {
    load_samples(fixtures().join(suite).join("samples.jsonl")).expect("samples load")
}

pub fn read_fixture(rel: &str) -> String {
    std::fs::read_to_string(fixtures().join(rel)).expect("fixture file readable")
}

#[derive(Debug, Deserialize)]
pub struct CorpusEntry {
    pub id: String,
    pub row: String,
    pub task: TaskKind,
    pub question: String,
    pub script: String,
    pub verdict: String,
    pub rules: Vec<String>,
}

pub fn corpus() -> Vec<CorpusEntry> {
    serde_json::from_str(&read_fixture("corpus/corpus.json")).expect("corpus parses")
}

/// Answers every request: VQA says "yes", the detector finds nothing, the
/// captioner and LLM return fixed text.
pub struct Universal;

impl Backend for Universal {
    fn name(&self) -> &str {
        "universal"
    }

    fn call(&self, request: &ModelRequest) -> Result<ModelResponse, GatewayError> {
        Ok(match request.role {
            Role::Detector => ModelResponse::detections(Vec::new()),
            Role::Vqa => ModelResponse::answer("yes"),
            Role::Caption => ModelResponse::text("a photo"),
            Role::Llm => ModelResponse::text(""),
        })
    }
}

pub fn universal_gateway() -> Gateway {
    let mut gw = Gateway::new();
    for role in Role::ALL {
        gw.add_backend(
            BackendSpec::fixture(role, "universal", 0),
            Arc::new(Universal),
        );
    }
    gw
}
