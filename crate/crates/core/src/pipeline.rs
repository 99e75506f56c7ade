//! End-to-end answering of one question: plan, validate/repair, execute,
//! verify.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::Settings;
use crate::executor::{execute, ExecContext, ExecError, ExecutionResult};
use crate::gateway::{Gateway, GatewayError};
use crate::planner::{generate_script, PlanError, PlanRequest, TaskRepository};
use crate::script::{parse_script, render_script, Script};
use crate::ssparser::{make_fallback, validate_text, ModuleRegistry, RepairReport};
use crate::task::TaskKind;
use crate::value::{Env, ImageRef};
use crate::verifier::{self, AnswerDistribution, CaptionVerdict, Selection};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PipelineOptions {
    pub task: TaskKind,
    pub ssparser: bool,
    pub verifier: bool,
    /// Run the caption half of verification alongside planning and execution.
    pub parallel: bool,
    pub trace: bool,
    /// Missing fixtures in the verifier abort instead of degrading.
    pub strict: bool,
}

impl PipelineOptions {
    pub fn new(task: TaskKind) -> Self {
        Self {
            task,
            ssparser: true,
            verifier: true,
            parallel: false,
            trace: true,
            strict: false,
        }
    }

    pub fn from_settings(settings: &Settings) -> Self {
        Self {
            task: settings.task,
            ssparser: settings.ssparser,
            verifier: settings.verifier,
            parallel: settings.parallel,
            trace: true,
            strict: settings.strict,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Query {
    pub question: String,
    pub images: Vec<ImageRef>,
    /// Answer choices for multiple-choice (video) questions.
    pub choices: Vec<String>,
}

impl Query {
    pub fn new(question: impl Into<String>, images: Vec<ImageRef>) -> Self {
        Self {
            question: question.into(),
            images,
            choices: Vec::new(),
        }
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{0}")]
    Input(String),
    #[error(transparent)]
    Plan(PlanError),
    #[error(transparent)]
    Exec(#[from] ExecError),
    #[error("verifier: {0}")]
    Verifier(GatewayError),
}

impl PipelineError {
    /// The gateway error underneath, if any.
    pub fn gateway_error(&self) -> Option<&GatewayError> {
        match self {
            PipelineError::Plan(PlanError::Backend(e)) | PipelineError::Verifier(e) => Some(e),
            PipelineError::Exec(ExecError::Gateway(e)) => Some(e),
            _ => None,
        }
    }

    pub fn is_fixture_miss(&self) -> bool {
        self.gateway_error()
            .is_some_and(GatewayError::is_fixture_miss)
    }
}

/// Wall time per stage in milliseconds. `caption_ms` overlaps the other
/// stages in parallel mode.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub plan_ms: f64,
    pub parse_ms: f64,
    pub execute_ms: f64,
    pub caption_ms: f64,
    pub verify_ms: f64,
    pub total_ms: f64,
}

impl StageTimings {
    pub const STAGES: [&'static str; 6] =
        ["plan", "parse", "execute", "caption", "verify", "total"];

    pub fn values(&self) -> [f64; 6] {
        [
            self.plan_ms,
            self.parse_ms,
            self.execute_ms,
            self.caption_ms,
            self.verify_ms,
            self.total_ms,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChoiceFusion {
    pub vqa: AnswerDistribution,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub caption: Option<AnswerDistribution>,
    pub selection: Selection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineOutput {
    pub answer: String,
    /// Script text as extracted from the LLM completion.
    pub planned: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan_note: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub repair: Option<RepairReport>,
    /// Script actually executed.
    pub script: String,
    pub execution: ExecutionResult,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verification: Option<CaptionVerdict>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub choices: Option<ChoiceFusion>,
    pub timings: StageTimings,
}

fn ms_since(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1000.0
}

pub fn seed_env(task: TaskKind, images: &[ImageRef]) -> Result<Env, PipelineError> {
    match (task.is_paired(), images) {
        (true, [left, right]) => Ok(Env::with_pair(left.clone(), right.clone())),
        (false, [image]) => Ok(Env::with_image(image.clone())),
        (paired, _) => Err(PipelineError::Input(format!(
            "{task} takes {} image(s), got {}",
            if paired { 2 } else { 1 },
            images.len()
        ))),
    }
}

fn uses_caption_check(task: TaskKind) -> bool {
    matches!(task, TaskKind::Gqa | TaskKind::Vqav2 | TaskKind::Mme)
}

/// Work that only needs the image: the caption and, for multiple-choice
/// questions, the caption branch's choice distribution.
struct CaptionBranch {
    caption: Result<String, GatewayError>,
    distribution: Option<Result<AnswerDistribution, GatewayError>>,
    ms: f64,
}

fn caption_branch(image: &ImageRef, query: &Query, gateway: &Gateway) -> CaptionBranch {
    let started = Instant::now();
    let caption = verifier::caption_stage(image, gateway);
    let distribution = match (&caption, query.choices.is_empty()) {
        (Ok(c), false) => Some(verifier::score_choices(
            gateway,
            &format!("Image caption: {c}"),
            &query.question,
            &query.choices,
        )),
        _ => None,
    };
    CaptionBranch {
        caption,
        distribution,
        ms: ms_since(started),
    }
}

struct Executed {
    planned: String,
    plan_note: Option<String>,
    repair: Option<RepairReport>,
    script: Script,
    execution: ExecutionResult,
    plan_ms: f64,
    parse_ms: f64,
    execute_ms: f64,
}

fn plan_and_execute(
    query: &Query,
    env: &Env,
    opts: &PipelineOptions,
    repo: &TaskRepository,
    gateway: &Gateway,
) -> Result<Executed, PipelineError> {
    let started = Instant::now();
    let (planned, mut plan_note) =
        match generate_script(&PlanRequest::new(&query.question, opts.task), repo, gateway) {
            Ok(text) => (text, None),
            Err(PlanError::EmptyCompletion) => {
                (String::new(), Some(PlanError::EmptyCompletion.to_string()))
            }
            Err(err) => return Err(PipelineError::Plan(err)),
        };
    let plan_ms = ms_since(started);

    let started = Instant::now();
    let (script, repair) = if opts.ssparser {
        let outcome = validate_text(
            &planned,
            &query.question,
            &ModuleRegistry::for_task(opts.task),
            opts.task,
        );
        let report = outcome.report();
        (outcome.script, Some(report))
    } else {
        match parse_script(&planned) {
            Ok(script) => (script, None),
            Err(err) => {
                plan_note = Some(format!("unparseable script, using fallback: {err}"));
                (make_fallback(&query.question, opts.task), None)
            }
        }
    };
    let parse_ms = ms_since(started);

    let started = Instant::now();
    let ctx = ExecContext::new(&query.question, opts.task).with_trace(opts.trace);
    let execution = execute(&script, env, gateway, &ctx)?;
    Ok(Executed {
        planned,
        plan_note,
        repair,
        script,
        execution,
        plan_ms,
        parse_ms,
        execute_ms: ms_since(started),
    })
}

/// Maps the executor answer onto the choices and, when the caption branch
/// produced a distribution, lets it override per [`verifier::select_fuse`].
fn fuse_choices(
    query: &Query,
    exec_answer: &str,
    caption: Option<AnswerDistribution>,
    gateway: &Gateway,
) -> Result<ChoiceFusion, GatewayError> {
    let vqa = verifier::score_choices(
        gateway,
        &format!("Answer from visual question answering: {exec_answer}"),
        &query.question,
        &query.choices,
    )?;
    let selection = match &caption {
        Some(q) => verifier::select_fuse(&vqa, q).map_err(|e| GatewayError::InvalidResponse {
            backend: "llm".into(),
            reason: e.to_string(),
        })?,
        None => Selection {
            chosen_index: vqa.argmax().map_or(0, |(i, _)| i),
            overwritten: false,
        },
    };
    Ok(ChoiceFusion {
        vqa,
        caption,
        selection,
    })
}

/// Runs the whole pipeline for one query.
pub fn answer_query(
    query: &Query,
    opts: &PipelineOptions,
    repo: &TaskRepository,
    gateway: &Gateway,
) -> Result<PipelineOutput, PipelineError> {
    let started = Instant::now();
    let env = seed_env(opts.task, &query.images)?;
    let image = env
        .image()
        .cloned()
        .ok_or_else(|| PipelineError::Input("no IMAGE bound".into()))?;
    let wants_caption =
        opts.verifier && (uses_caption_check(opts.task) || !query.choices.is_empty());

    let (executed, branch) = if wants_caption && opts.parallel {
        std::thread::scope(|s| {
            let handle = s.spawn(|| caption_branch(&image, query, gateway));
            let executed = plan_and_execute(query, &env, opts, repo, gateway);
            let branch = handle.join().expect("caption branch panicked");
            (executed, Some(branch))
        })
    } else {
        let executed = plan_and_execute(query, &env, opts, repo, gateway);
        let branch = match &executed {
            Ok(_) if wants_caption => Some(caption_branch(&image, query, gateway)),
            _ => None,
        };
        (executed, branch)
    };
    let executed = executed?;
    let caption_ms = branch.as_ref().map_or(0.0, |b| b.ms);
    let exec_answer = executed.execution.final_answer.clone();

    // Backend failures degrade to the executor answer, except missing
    // fixtures in strict mode.
    let degrade = |err: GatewayError| -> Result<String, PipelineError> {
        if opts.strict && err.is_fixture_miss() {
            Err(PipelineError::Verifier(err))
        } else {
            Ok(err.to_string())
        }
    };

    let verify_started = Instant::now();
    let mut answer = exec_answer.clone();
    let mut verification = None;
    let mut choices = None;
    if !query.choices.is_empty() {
        let caption_dist = match branch.map(|b| (b.caption, b.distribution)) {
            Some((Err(err), _)) | Some((Ok(_), Some(Err(err)))) => {
                degrade(err)?;
                None
            }
            Some((Ok(_), Some(Ok(d)))) => Some(d),
            _ => None,
        };
        match fuse_choices(query, &exec_answer, caption_dist, gateway) {
            Ok(fusion) => {
                answer = query.choices[fusion.selection.chosen_index].clone();
                choices = Some(fusion);
            }
            Err(err) => {
                degrade(err)?;
            }
        }
    } else if let Some(branch) = branch {
        let verdict = match branch.caption {
            Ok(caption) => {
                match verifier::judge(&caption, &query.question, &exec_answer, gateway) {
                    Ok(v) => v,
                    Err(err) => {
                        CaptionVerdict::pass_through(caption, &exec_answer, Some(degrade(err)?))
                    }
                }
            }
            Err(err) => CaptionVerdict::pass_through("", &exec_answer, Some(degrade(err)?)),
        };
        answer = verdict.final_answer.clone();
        verification = Some(verdict);
    }
    let verify_ms = ms_since(verify_started);

    Ok(PipelineOutput {
        answer,
        planned: executed.planned,
        plan_note: executed.plan_note,
        repair: executed.repair,
        script: render_script(&executed.script),
        execution: executed.execution,
        verification,
        choices,
        timings: StageTimings {
            plan_ms: executed.plan_ms,
            parse_ms: executed.parse_ms,
            execute_ms: executed.execute_ms,
            caption_ms,
            verify_ms,
            total_ms: ms_since(started),
        },
    })
}
