//! Benchmark replay: run the pipeline over a JSONL sample file and score
//! answers by exact match after normalization.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, Settings};
use crate::executor::ExecStatus;
use crate::gateway::{network_calls, normalize_answer, Gateway};
use crate::pipeline::{answer_query, PipelineOptions, Query, StageTimings};
use crate::planner::TaskRepository;
use crate::ssparser::Verdict;
use crate::task::TaskKind;
use crate::value::ImageRef;
use crate::verifier::Confidence;

pub const RUN_REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchmarkSample {
    pub id: String,
    pub task: TaskKind,
    pub images: Vec<ImageRef>,
    pub question: String,
    pub ground_truth: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub choices: Vec<String>,
}

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("{path} line {line}: {message}")]
    Sample {
        path: String,
        line: usize,
        message: String,
    },
    #[error("sample {id}: {message}")]
    Aborted { id: String, message: String },
    #[error(transparent)]
    Config(#[from] ConfigError),
}

pub fn load_samples(path: impl AsRef<Path>) -> Result<Vec<BenchmarkSample>, BenchError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| BenchError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let mut samples = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |message: String| BenchError::Sample {
            path: path.display().to_string(),
            line: i + 1,
            message,
        };
        let sample: BenchmarkSample = serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
        if sample.ground_truth.trim().is_empty() {
            return Err(bad("ground_truth is empty".into()));
        }
        samples.push(sample);
    }
    Ok(samples)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleResult {
    pub id: String,
    pub task: TaskKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<String>,
    pub ground_truth: String,
    pub correct: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub status: Option<ExecStatus>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verdict: Option<Verdict>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub repairs: Vec<String>,
    #[serde(default)]
    pub overwritten: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<Confidence>,
    pub timings: StageTimings,
    /// Why the sample was not scored (lenient mode only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skipped: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunFlags {
    pub ssparser: bool,
    pub verifier: bool,
    pub ensemble: bool,
    pub parallel: bool,
}

impl RunFlags {
    fn from_settings(s: &Settings) -> Self {
        Self {
            ssparser: s.ssparser,
            verifier: s.verifier,
            ensemble: s.use_ensemble,
            parallel: s.parallel,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRow {
    pub stage: String,
    pub total_ms: f64,
    pub mean_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub flags: RunFlags,
    /// Scored samples; skipped ones are counted separately.
    pub total: usize,
    pub correct: usize,
    pub skipped: usize,
    /// `correct / total`; `null` when nothing was scored.
    pub accuracy: Option<f64>,
    pub network_calls: u64,
    pub samples: Vec<SampleResult>,
    pub stage_timings: Vec<StageRow>,
}

impl RunReport {
    /// Copy with every timing zeroed, for comparing runs.
    pub fn without_timings(&self) -> RunReport {
        let mut r = self.clone();
        for s in &mut r.samples {
            s.timings = StageTimings::default();
        }
        for row in &mut r.stage_timings {
            row.total_ms = 0.0;
            row.mean_ms = 0.0;
        }
        r
    }

    pub fn accuracy_display(&self) -> String {
        self.accuracy
            .map_or_else(|| "n/a".to_string(), |a| format!("{a:.3}"))
    }

    pub fn summary(&self) -> String {
        let mut out = String::new();
        let f = self.flags;
        let _ = writeln!(
            out,
            "flags: ssparser={} verifier={} ensemble={} parallel={}",
            f.ssparser, f.verifier, f.ensemble, f.parallel
        );
        let _ = writeln!(
            out,
            "samples: {}  scored: {}  skipped: {}  network calls: {}",
            self.samples.len(),
            self.total,
            self.skipped,
            self.network_calls
        );
        let _ = writeln!(
            out,
            "accuracy: {} ({}/{})",
            self.accuracy_display(),
            self.correct,
            self.total
        );
        let _ = writeln!(out, "{:<10}{:>12}{:>12}", "stage", "total_ms", "mean_ms");
        for row in &self.stage_timings {
            let _ = writeln!(
                out,
                "{:<10}{:>12.3}{:>12.3}",
                row.stage, row.total_ms, row.mean_ms
            );
        }
        out
    }
}

pub fn answers_match(answer: &str, ground_truth: &str) -> bool {
    normalize_answer(answer) == normalize_answer(ground_truth)
}

fn run_sample(
    sample: &BenchmarkSample,
    settings: &Settings,
    repo: &TaskRepository,
    gateway: &Gateway,
) -> Result<SampleResult, String> {
    let opts = PipelineOptions {
        task: sample.task,
        trace: false,
        ..PipelineOptions::from_settings(settings)
    };
    let query = Query {
        question: sample.question.clone(),
        images: sample.images.clone(),
        choices: sample.choices.clone(),
    };
    let out = answer_query(&query, &opts, repo, gateway).map_err(|e| e.to_string())?;
    Ok(SampleResult {
        id: sample.id.clone(),
        task: sample.task,
        correct: answers_match(&out.answer, &sample.ground_truth),
        answer: Some(out.answer),
        ground_truth: sample.ground_truth.clone(),
        status: Some(out.execution.status),
        verdict: out.repair.as_ref().map(|r| r.verdict),
        repairs: out
            .repair
            .map(|r| r.repairs.into_iter().map(|x| x.rule_id).collect())
            .unwrap_or_default(),
        overwritten: out.verification.as_ref().is_some_and(|v| v.overwritten)
            || out
                .choices
                .as_ref()
                .is_some_and(|c| c.selection.overwritten),
        confidence: out.verification.map(|v| v.confidence),
        timings: out.timings,
        skipped: None,
    })
}

/// Runs every sample with up to `settings.jobs` workers. Results keep the
/// sample order. In strict mode the first failure aborts the run; otherwise
/// failed samples are skipped and counted.
pub fn run_bench(
    samples: &[BenchmarkSample],
    settings: &Settings,
    repo: &TaskRepository,
    gateway: &Gateway,
) -> Result<RunReport, BenchError> {
    let calls_before = network_calls();
    let slots: Mutex<Vec<Option<Result<SampleResult, String>>>> =
        Mutex::new(vec![None; samples.len()]);
    let next = AtomicUsize::new(0);
    let abort = AtomicBool::new(false);
    let workers = settings.jobs.clamp(1, samples.len().max(1));
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                if abort.load(Ordering::SeqCst) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(sample) = samples.get(i) else { break };
                let result = run_sample(sample, settings, repo, gateway);
                if result.is_err() && settings.strict {
                    abort.store(true, Ordering::SeqCst);
                }
                slots.lock().unwrap_or_else(|e| e.into_inner())[i] = Some(result);
            });
        }
    });
    let slots = slots.into_inner().unwrap_or_else(|e| e.into_inner());

    let mut results = Vec::with_capacity(samples.len());
    for (sample, slot) in samples.iter().zip(slots) {
        match slot {
            Some(Ok(r)) => results.push(r),
            Some(Err(message)) if settings.strict => {
                return Err(BenchError::Aborted {
                    id: sample.id.clone(),
                    message,
                })
            }
            Some(Err(message)) => results.push(SampleResult {
                id: sample.id.clone(),
                task: sample.task,
                answer: None,
                ground_truth: sample.ground_truth.clone(),
                correct: false,
                status: None,
                verdict: None,
                repairs: Vec::new(),
                overwritten: false,
                confidence: None,
                timings: StageTimings::default(),
                skipped: Some(message),
            }),
            // unclaimed slots only follow a strict-mode failure, which returned above
            None => {}
        }
    }

    let scored: Vec<&SampleResult> = results.iter().filter(|r| r.skipped.is_none()).collect();
    let total = scored.len();
    let correct = scored.iter().filter(|r| r.correct).count();
    let mut sums = [0.0; 6];
    for r in &scored {
        for (sum, v) in sums.iter_mut().zip(r.timings.values()) {
            *sum += v;
        }
    }
    let stage_timings = StageTimings::STAGES
        .iter()
        .zip(sums)
        .map(|(stage, total_ms)| StageRow {
            stage: stage.to_string(),
            total_ms,
            mean_ms: if total == 0 {
                0.0
            } else {
                total_ms / total as f64
            },
        })
        .collect();
    Ok(RunReport {
        schema_version: RUN_REPORT_SCHEMA_VERSION,
        flags: RunFlags::from_settings(settings),
        total,
        correct,
        skipped: results.len() - total,
        accuracy: (total > 0).then(|| correct as f64 / total as f64),
        network_calls: network_calls() - calls_before,
        samples: results,
        stage_timings,
    })
}

/// The four incremental configurations of the ablation matrix:
/// (name, ssparser, verifier, ensemble).
pub const ABLATION_CONFIGS: [(&str, bool, bool, bool); 4] = [
    ("baseline", false, false, false),
    ("+verifier", false, true, false),
    ("+ssparser", true, true, false),
    ("all", true, true, true),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub name: String,
    pub ssparser: bool,
    pub verifier: bool,
    pub ensemble: bool,
    pub total: usize,
    pub correct: usize,
    pub skipped: usize,
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub schema_version: u32,
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn summary(&self) -> String {
        let mut out = format!(
            "{:<12}{:>10}{:>10}{:>10}{:>10}\n",
            "config", "ssparser", "verifier", "ensemble", "accuracy"
        );
        for r in &self.rows {
            let acc = r
                .accuracy
                .map_or_else(|| "n/a".to_string(), |a| format!("{a:.3}"));
            let _ = writeln!(
                out,
                "{:<12}{:>10}{:>10}{:>10}{:>10}",
                r.name, r.ssparser, r.verifier, r.ensemble, acc
            );
        }
        out
    }
}

/// Runs the benchmark once per ablation configuration, each with its own
/// gateway so the ensemble switch takes effect.
pub fn run_ablation(
    samples: &[BenchmarkSample],
    settings: &Settings,
    repo: &TaskRepository,
) -> Result<AblationReport, BenchError> {
    let mut rows = Vec::with_capacity(ABLATION_CONFIGS.len());
    for (name, ssparser, verifier, ensemble) in ABLATION_CONFIGS {
        let s = Settings {
            ssparser,
            verifier,
            use_ensemble: ensemble,
            ..settings.clone()
        };
        let gateway = s.build_gateway()?;
        let report = run_bench(samples, &s, repo, &gateway)?;
        rows.push(AblationRow {
            name: name.to_string(),
            ssparser,
            verifier,
            ensemble,
            total: report.total,
            correct: report.correct,
            skipped: report.skipped,
            accuracy: report.accuracy,
        });
    }
    Ok(AblationReport {
        schema_version: RUN_REPORT_SCHEMA_VERSION,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_run_has_no_accuracy() {
        let settings = Settings::default();
        let report = run_bench(&[], &settings, TaskRepository::builtin(), &Gateway::new()).unwrap();
        assert_eq!(report.accuracy, None);
        assert_eq!(report.accuracy_display(), "n/a");
        assert!(report.summary().contains("accuracy: n/a (0/0)"));
    }

    #[test]
    fn scoring_normalizes() {
        assert!(answers_match(" Yes.", "yes"));
        assert!(answers_match("Wood", "wood"));
        assert!(!answers_match("carpet", "rug"));
    }

    #[test]
    fn lenient_skips_and_strict_aborts() {
        let samples = vec![BenchmarkSample {
            id: "s1".into(),
            task: TaskKind::Gqa,
            images: vec![ImageRef::new("img", 10, 10)],
            question: "q?".into(),
            ground_truth: "yes".into(),
            choices: vec![],
        }];
        let gw = Settings::default().build_gateway().unwrap();
        let mut settings = Settings::default();
        let report = run_bench(&samples, &settings, TaskRepository::builtin(), &gw).unwrap();
        assert_eq!((report.total, report.skipped), (0, 1));
        assert!(report.samples[0]
            .skipped
            .as_deref()
            .unwrap()
            .contains("no recorded response"));
        settings.strict = true;
        assert!(matches!(
            run_bench(&samples, &settings, TaskRepository::builtin(), &gw),
            Err(BenchError::Aborted { .. })
        ));
    }

    #[test]
    fn sample_parsing() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.jsonl");
        std::fs::write(
            &path,
            "{\"id\":\"a\",\"task\":\"gqa\",\"images\":[{\"id\":\"i\",\"width\":4,\"height\":4}],\"question\":\"q\",\"ground_truth\":\"no\"}\n\n",
        )
        .unwrap();
        assert_eq!(load_samples(&path).unwrap().len(), 1);
        std::fs::write(
            &path,
            "{\"id\":\"a\",\"task\":\"gqa\",\"images\":[],\"question\":\"q\",\"ground_truth\":\" \"}\n",
        )
        .unwrap();
        assert!(matches!(
            load_samples(&path),
            Err(BenchError::Sample { line: 1, .. })
        ));
    }
}
