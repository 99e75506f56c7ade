//! K-shot prompt assembly and script generation.
//!
//! A [`TaskRepository`] holds, per task kind, a reasoning header and an
//! ordered list of (question, script) examples. The prompt is the header
//! followed by each example and then the query:
//!
//! ```text
//! <header>
//!
//! Question: <example question>
//! Program:
//! <example script>
//!
//! Question: <query>
//! Program:
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{Gateway, GatewayError};
use crate::ssparser::{validate_text, ModuleRegistry, Verdict};
use crate::task::TaskKind;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub question: String,
    pub script: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TaskEntry {
    pub cot_header: String,
    pub examples: Vec<Example>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RepoError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("{path} line {line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error(
        "{task} example {index} ({question:?}) does not validate cleanly: {verdict:?} {rules:?}"
    )]
    Inconsistent {
        task: TaskKind,
        index: usize,
        question: String,
        verdict: Verdict,
        rules: Vec<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PlanError {
    #[error("no examples for task kind {0}")]
    UnknownTaskKind(String),
    #[error("LLM returned no instruction lines")]
    EmptyCompletion,
    #[error(transparent)]
    Backend(#[from] GatewayError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlanRequest {
    pub question: String,
    pub task: TaskKind,
    /// LLM backend to ask; the default one when `None`.
    pub llm: Option<String>,
}

impl PlanRequest {
    pub fn new(question: impl Into<String>, task: TaskKind) -> Self {
        Self {
            question: question.into(),
            task,
            llm: None,
        }
    }
}

/// Immutable after construction; every stored example validates cleanly
/// against its own question.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskRepository {
    tasks: BTreeMap<TaskKind, TaskEntry>,
}

macro_rules! bundled_task {
    ($dir:literal) => {
        (
            include_str!(concat!("../assets/tasks/", $dir, "/header.txt")),
            include_str!(concat!("../assets/tasks/", $dir, "/examples.jsonl")),
        )
    };
}

fn parse_examples(text: &str, path: &str) -> Result<Vec<Example>, RepoError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| RepoError::Parse {
                path: path.to_string(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

impl TaskRepository {
    /// Builds a repository and runs the self-consistency check.
    pub fn new(tasks: BTreeMap<TaskKind, TaskEntry>) -> Result<Self, RepoError> {
        let repo = Self { tasks };
        repo.check()?;
        Ok(repo)
    }

    /// The example sets shipped with the crate.
    pub fn builtin() -> &'static TaskRepository {
        static REPO: OnceLock<TaskRepository> = OnceLock::new();
        REPO.get_or_init(|| {
            let sources = [
                (TaskKind::Gqa, bundled_task!("gqa")),
                (TaskKind::Nlvr2, bundled_task!("nlvr2")),
                (TaskKind::Vqav2, bundled_task!("vqav2")),
                (TaskKind::Mme, bundled_task!("mme")),
                (TaskKind::Video, bundled_task!("video")),
            ];
            let mut tasks = BTreeMap::new();
            for (kind, (header, examples)) in sources {
                let examples =
                    parse_examples(examples, kind.as_str()).expect("bundled examples parse");
                tasks.insert(
                    kind,
                    TaskEntry {
                        cot_header: header.trim_end().to_string(),
                        examples,
                    },
                );
            }
            TaskRepository::new(tasks).expect("bundled examples validate")
        })
    }

    /// Loads `<dir>/<task>/header.txt` and `<dir>/<task>/examples.jsonl` for
    /// every task directory present. A missing `examples.jsonl` means no
    /// examples.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self, RepoError> {
        let dir = dir.as_ref();
        let io = |path: &Path, e: std::io::Error| RepoError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        };
        let mut tasks = BTreeMap::new();
        for kind in TaskKind::ALL {
            let task_dir = dir.join(kind.as_str());
            if !task_dir.is_dir() {
                continue;
            }
            let header_path = task_dir.join("header.txt");
            let header = fs::read_to_string(&header_path).map_err(|e| io(&header_path, e))?;
            let examples_path = task_dir.join("examples.jsonl");
            let examples = if examples_path.exists() {
                let text = fs::read_to_string(&examples_path).map_err(|e| io(&examples_path, e))?;
                parse_examples(&text, &examples_path.display().to_string())?
            } else {
                Vec::new()
            };
            tasks.insert(
                kind,
                TaskEntry {
                    cot_header: header.trim_end().to_string(),
                    examples,
                },
            );
        }
        Self::new(tasks)
    }

    fn check(&self) -> Result<(), RepoError> {
        for (kind, entry) in &self.tasks {
            let registry = ModuleRegistry::for_task(*kind);
            for (index, ex) in entry.examples.iter().enumerate() {
                let outcome = validate_text(&ex.script, &ex.question, &registry, *kind);
                if outcome.verdict != Verdict::CleanPass {
                    return Err(RepoError::Inconsistent {
                        task: *kind,
                        index,
                        question: ex.question.clone(),
                        verdict: outcome.verdict,
                        rules: outcome.rule_ids().into_iter().map(String::from).collect(),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn get(&self, kind: TaskKind) -> Option<&TaskEntry> {
        self.tasks.get(&kind)
    }

    pub fn kinds(&self) -> impl Iterator<Item = TaskKind> + '_ {
        self.tasks.keys().copied()
    }
}

/// Deterministic K-shot prompt for `req`.
pub fn build_prompt(req: &PlanRequest, repo: &TaskRepository) -> Result<String, PlanError> {
    let entry = repo
        .get(req.task)
        .ok_or_else(|| PlanError::UnknownTaskKind(req.task.to_string()))?;
    let mut prompt = String::new();
    if !entry.cot_header.is_empty() {
        prompt.push_str(&entry.cot_header);
        prompt.push_str("\n\n");
    }
    for ex in &entry.examples {
        prompt.push_str("Question: ");
        prompt.push_str(ex.question.trim());
        prompt.push_str("\nProgram:\n");
        prompt.push_str(ex.script.trim_end());
        prompt.push_str("\n\n");
    }
    prompt.push_str("Question: ");
    prompt.push_str(req.question.trim());
    prompt.push_str("\nProgram:");
    Ok(prompt)
}

fn instruction_shaped(line: &str) -> bool {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"^\s*[A-Z][A-Z0-9_]*\s*=\s*[A-Z][A-Z0-9_]*\s*\(").expect("valid regex")
    })
    .is_match(line)
}

/// Cuts an LLM completion down to the script: everything from the first to
/// the last instruction-shaped line, trailing whitespace removed.
pub fn extract_script(completion: &str) -> Option<String> {
    let lines: Vec<&str> = completion.lines().collect();
    let first = lines.iter().position(|l| instruction_shaped(l))?;
    let last = lines.iter().rposition(|l| instruction_shaped(l))?;
    Some(
        lines[first..=last]
            .iter()
            .map(|l| l.trim_end())
            .collect::<Vec<_>>()
            .join("\n"),
    )
}

/// Asks the LLM for a script and strips narration around it.
pub fn generate_script(
    req: &PlanRequest,
    repo: &TaskRepository,
    gateway: &Gateway,
) -> Result<String, PlanError> {
    let prompt = build_prompt(req, repo)?;
    let completion = gateway.complete_with(&prompt, req.llm.as_deref())?;
    extract_script(&completion).ok_or(PlanError::EmptyCompletion)
}
