//! Regenerates replay fixtures from a scene description.
//!
//! Usage: `cargo run --example author_fixtures -- <dir>...`
//!
//! Each `<dir>` holds a `scene.json` (images, objects, per-object answers
//! and one planned script per sample) and optionally a `config.json`. The
//! tool answers every model call from the scene, runs each sample through
//! all four ablation configurations while recording, then writes
//! `samples.jsonl` and one `<backend>.jsonl` per configured backend and
//! checks that a strict replay succeeds.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Deserialize;

use planscript::bench::{run_ablation, run_bench, BenchmarkSample, ABLATION_CONFIGS};
use planscript::config::{BackendMode, FileConfig, Overrides, Settings};
use planscript::gateway::{
    normalize_answer, normalize_query, Backend, BackendSpec, FixtureStore, Gateway, GatewayError,
    ModelRequest, ModelResponse, RawDetection, RecordingBackend, Role,
};
use planscript::task::TaskKind;
use planscript::value::ImageRef;

#[derive(Debug, Deserialize)]
struct Scene {
    images: BTreeMap<String, SceneImage>,
    samples: Vec<SceneSample>,
}

#[derive(Debug, Deserialize)]
struct SceneImage {
    width: u32,
    height: u32,
    #[serde(default)]
    caption: String,
    #[serde(default)]
    objects: Vec<SceneObject>,
    /// Whole-image answers keyed by question.
    #[serde(default)]
    answers: BTreeMap<String, String>,
    /// Per-backend answer overrides, applied to any region of this image.
    #[serde(default)]
    overrides: BTreeMap<String, BTreeMap<String, String>>,
}

#[derive(Debug, Deserialize)]
struct SceneObject {
    label: String,
    #[serde(rename = "box")]
    bbox: [f64; 4],
    #[serde(default = "default_score")]
    score: f64,
    #[serde(default)]
    answers: BTreeMap<String, String>,
    /// Detector backends that see this object; empty means all of them.
    #[serde(default)]
    only: Vec<String>,
}

fn default_score() -> f64 {
    0.9
}

#[derive(Debug, Deserialize)]
struct SceneSample {
    id: String,
    #[serde(default = "default_task")]
    task: TaskKind,
    images: Vec<String>,
    question: String,
    ground_truth: String,
    #[serde(default)]
    choices: Vec<String>,
    /// Raw LLM completion for the planning prompt.
    program: String,
    /// Raw LLM reply to the caption-consistency prompt.
    #[serde(default)]
    verdict: Option<String>,
    /// Scores for each choice given the caption.
    #[serde(default)]
    caption_scores: Option<Vec<u32>>,
}

fn default_task() -> TaskKind {
    TaskKind::Gqa
}

fn key(q: &str) -> String {
    normalize_query(q).trim_end_matches(['?', '.']).to_string()
}

fn lookup(map: &BTreeMap<String, String>, question: &str) -> Option<String> {
    map.iter()
        .find(|(q, _)| key(q) == key(question))
        .map(|(_, a)| a.clone())
}

fn area(r: [f64; 4]) -> f64 {
    (r[2] - r[0]) * (r[3] - r[1])
}

fn intersection(a: [f64; 4], b: [f64; 4]) -> f64 {
    let w = (a[2].min(b[2]) - a[0].max(b[0])).max(0.0);
    let h = (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
    w * h
}

fn iou(a: [f64; 4], b: [f64; 4]) -> f64 {
    let inter = intersection(a, b);
    inter / (area(a) + area(b) - inter)
}

/// Fraction of `object` that lies inside `region`.
fn containment(object: [f64; 4], region: [f64; 4]) -> f64 {
    intersection(object, region) / area(object)
}

/// A pretend model backend that reads its answers off the scene.
struct SceneBackend {
    name: String,
    /// Position among backends of the same role; later ones see jittered boxes.
    rank: usize,
    scene: Arc<Scene>,
}

impl SceneBackend {
    fn root(&self, image: &str) -> Option<&SceneImage> {
        let id = image.split('@').next().unwrap_or(image);
        self.scene.images.get(id)
    }

    fn sample_for(&self, text: &str) -> Option<&SceneSample> {
        let text = normalize_query(text);
        self.scene
            .samples
            .iter()
            .filter(|s| text.contains(&key(&s.question)))
            .max_by_key(|s| s.question.len())
    }

    fn detect(&self, req: &ModelRequest) -> ModelResponse {
        let Some(img) = self.root(&req.image) else {
            return ModelResponse::detections(Vec::new());
        };
        let (ox, oy, region) = match req.region {
            Some([x1, y1, x2, y2]) => (
                x1 as f64,
                y1 as f64,
                [x1 as f64, y1 as f64, x2 as f64, y2 as f64],
            ),
            None => (0.0, 0.0, [0.0, 0.0, img.width as f64, img.height as f64]),
        };
        let query = normalize_query(&req.query);
        let jitter = 3.0 * self.rank as f64;
        let boxes = img
            .objects
            .iter()
            .filter(|o| o.only.is_empty() || o.only.contains(&self.name))
            .filter(|o| {
                let label = o.label.to_lowercase();
                query == label || query == format!("{label}s") || query == format!("{label}es")
            })
            .filter(|o| {
                // center inside the searched region
                let cx = (o.bbox[0] + o.bbox[2]) / 2.0;
                let cy = (o.bbox[1] + o.bbox[3]) / 2.0;
                cx >= region[0] && cx < region[2] && cy >= region[1] && cy < region[3]
            })
            .map(|o| RawDetection {
                bbox: [
                    (o.bbox[0] - ox + jitter).max(0.0),
                    (o.bbox[1] - oy + jitter).max(0.0),
                    o.bbox[2] - ox + jitter,
                    o.bbox[3] - oy + jitter,
                ],
                score: o.score,
                label: Some(req.query.clone()),
            })
            .collect();
        ModelResponse::detections(boxes)
    }

    fn answer(&self, req: &ModelRequest) -> ModelResponse {
        let question = &req.query;
        let from_scene = self.root(&req.image).and_then(|img| {
            if let Some(a) = img
                .overrides
                .get(&self.name)
                .and_then(|m| lookup(m, question))
            {
                return Some(a);
            }
            let object = req.region.and_then(|[x1, y1, x2, y2]| {
                let region = [x1 as f64, y1 as f64, x2 as f64, y2 as f64];
                // the object mostly inside the region that best fills it
                img.objects
                    .iter()
                    .filter(|o| containment(o.bbox, region) > 0.5)
                    .map(|o| (iou(o.bbox, region), o))
                    .max_by(|a, b| a.0.total_cmp(&b.0))
                    .map(|(_, o)| o)
            });
            object
                .and_then(|o| lookup(&o.answers, question))
                .or_else(|| lookup(&img.answers, question))
        });
        let answer = from_scene
            .or_else(|| self.sample_for(question).map(|s| s.ground_truth.clone()))
            .unwrap_or_else(|| "no".to_string());
        ModelResponse::answer(answer)
    }

    fn complete(&self, prompt: &str) -> Result<ModelResponse, GatewayError> {
        let unknown = |what: &str| GatewayError::Unavailable {
            backend: self.name.clone(),
            reason: format!("scene has no {what} for this prompt"),
        };
        if prompt.trim_end().ends_with("Program:") {
            let tail = prompt.rsplit("Question: ").next().unwrap_or("");
            let sample = self.sample_for(tail).ok_or_else(|| unknown("program"))?;
            return Ok(ModelResponse::text(sample.program.clone()));
        }
        if let Some(rest) = prompt.strip_prefix("Image caption: ") {
            let question_line = rest
                .lines()
                .find_map(|l| l.strip_prefix("Question: "))
                .unwrap_or("");
            let sample = self
                .sample_for(question_line)
                .ok_or_else(|| unknown("question"))?;
            if prompt.contains("Choices:") {
                let n = sample.choices.len();
                let scores = sample.caption_scores.clone().unwrap_or_else(|| vec![50; n]);
                return Ok(ModelResponse::text(score_lines(&scores)));
            }
            let program_answer = prompt
                .lines()
                .find_map(|l| l.strip_prefix("Answer from the program: "))
                .unwrap_or("");
            let reply = sample
                .verdict
                .clone()
                .unwrap_or_else(|| format!("1. No\n2. \"\"\n3. {program_answer}"));
            return Ok(ModelResponse::text(reply));
        }
        if let Some(rest) = prompt.strip_prefix("Answer from visual question answering: ") {
            let (answer, _) = rest.split_once('\n').unwrap_or((rest, ""));
            let sample = self.sample_for(prompt).ok_or_else(|| unknown("choices"))?;
            let scores: Vec<u32> = sample
                .choices
                .iter()
                .map(|c| {
                    let (c, a) = (normalize_answer(c), normalize_answer(answer));
                    if c == a || c.contains(&a) || a.contains(&c) {
                        90
                    } else {
                        10
                    }
                })
                .collect();
            return Ok(ModelResponse::text(score_lines(&scores)));
        }
        Err(unknown("reply"))
    }
}

fn score_lines(scores: &[u32]) -> String {
    scores
        .iter()
        .enumerate()
        .map(|(i, s)| format!("{i}: {s}"))
        .collect::<Vec<_>>()
        .join("\n")
}

impl Backend for SceneBackend {
    fn name(&self) -> &str {
        &self.name
    }

    fn call(&self, req: &ModelRequest) -> Result<ModelResponse, GatewayError> {
        match req.role {
            Role::Detector => Ok(self.detect(req)),
            Role::Vqa => Ok(self.answer(req)),
            Role::Caption => Ok(ModelResponse::text(
                self.root(&req.image)
                    .map(|i| i.caption.clone())
                    .unwrap_or_default(),
            )),
            Role::Llm => self.complete(&req.query),
        }
    }
}

fn author(dir: &Path) -> Result<(), String> {
    let scene_path = dir.join("scene.json");
    let text = std::fs::read_to_string(&scene_path)
        .map_err(|e| format!("{}: {e}", scene_path.display()))?;
    let scene: Arc<Scene> = Arc::new(
        serde_json::from_str(&text).map_err(|e| format!("{}: {e}", scene_path.display()))?,
    );

    let config_path = dir.join("config.json");
    let file = if config_path.exists() {
        FileConfig::load(&config_path).map_err(|e| e.to_string())?
    } else {
        FileConfig::default()
    };
    let overrides = Overrides {
        fixtures: Some(dir.to_path_buf()),
        ..Overrides::default()
    };
    let settings = Settings::resolve(file, &overrides);

    let samples: Vec<BenchmarkSample> = scene
        .samples
        .iter()
        .map(|s| {
            let images = s
                .images
                .iter()
                .map(|id| {
                    let img = scene
                        .images
                        .get(id)
                        .ok_or_else(|| format!("{}: unknown image {id}", s.id))?;
                    Ok(ImageRef::new(id.clone(), img.width, img.height))
                })
                .collect::<Result<Vec<_>, String>>()?;
            Ok(BenchmarkSample {
                id: s.id.clone(),
                task: s.task,
                images,
                question: s.question.clone(),
                ground_truth: s.ground_truth.clone(),
                choices: s.choices.clone(),
            })
        })
        .collect::<Result<_, String>>()?;

    let mut stores: Vec<(String, Arc<FixtureStore>)> = Vec::new();
    let mut recording: Vec<(BackendSpec, Arc<dyn Backend>)> = Vec::new();
    let mut ranks: BTreeMap<Role, usize> = BTreeMap::new();
    let mut specs = settings.backends.clone();
    specs.sort_by_key(|s| (s.role, s.priority));
    for spec in specs {
        let rank = ranks.entry(spec.role).or_default();
        let store = Arc::new(FixtureStore::in_memory());
        let live = Arc::new(SceneBackend {
            name: spec.name.clone(),
            rank: *rank,
            scene: scene.clone(),
        });
        *rank += 1;
        let backend = RecordingBackend::new(store.clone(), live).map_err(|e| e.to_string())?;
        stores.push((spec.name.clone(), store));
        recording.push((spec, Arc::new(backend)));
    }

    let repo = settings.repository().map_err(|e| e.to_string())?;
    for (name, ssparser, verifier, ensemble) in ABLATION_CONFIGS {
        let s = Settings {
            ssparser,
            verifier,
            use_ensemble: ensemble,
            strict: true,
            ..settings.clone()
        };
        let mut gateway = Gateway::new().with_ensemble(s.ensemble, ensemble);
        for (spec, backend) in &recording {
            gateway.add_backend(spec.clone(), backend.clone());
        }
        run_bench(&samples, &s, &repo, &gateway).map_err(|e| format!("recording {name}: {e}"))?;
    }

    for (name, store) in &stores {
        let path = settings.fixtures.join(format!("{name}.jsonl"));
        std::fs::write(&path, store.to_jsonl()).map_err(|e| format!("{}: {e}", path.display()))?;
    }
    let lines: Vec<String> = samples
        .iter()
        .map(|s| serde_json::to_string(s).expect("samples serialize"))
        .collect();
    std::fs::write(dir.join("samples.jsonl"), lines.join("\n") + "\n")
        .map_err(|e| e.to_string())?;

    let replay = Settings {
        backend: Some(BackendMode::Fixture),
        strict: true,
        ..settings
    };
    let report = run_bench(
        &samples,
        &replay,
        &repo,
        &replay.build_gateway().map_err(|e| e.to_string())?,
    )
    .map_err(|e| format!("replay: {e}"))?;
    let ablation = run_ablation(&samples, &replay, &repo).map_err(|e| format!("replay: {e}"))?;
    println!("{}", dir.display());
    for r in report.samples.iter().filter(|r| !r.correct) {
        println!(
            "  wrong: {} answered {:?}, expected {}",
            r.id, r.answer, r.ground_truth
        );
    }
    print!("{}", report.summary());
    print!("{}", ablation.summary());
    Ok(())
}

fn main() {
    let dirs: Vec<PathBuf> = std::env::args().skip(1).map(PathBuf::from).collect();
    if dirs.is_empty() {
        eprintln!("usage: author_fixtures <dir>...");
        std::process::exit(2);
    }
    for dir in dirs {
        if let Err(e) = author(&dir) {
            eprintln!("error: {e}");
            std::process::exit(1);
        }
    }
}
