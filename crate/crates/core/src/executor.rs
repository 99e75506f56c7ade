//! Step-by-step interpreter for validated scripts.
//!
//! Each instruction is dispatched to a handler that reads its arguments from
//! the [`Env`], may call the [`Gateway`], and binds its output variable. A
//! step failure triggers one retry with the two-line fallback script; a
//! second failure yields the answer `unknown`.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{self, coerce, ExprError};
use crate::gateway::{Gateway, GatewayError, Vote};
use crate::script::{ArgValue, Instruction, Script};
use crate::ssparser::make_fallback;
use crate::task::TaskKind;
use crate::value::{BBox, BoxError, Env, EnvError, ImageRef, Value};

pub const UNKNOWN_ANSWER: &str = "unknown";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StepCause {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("box array is empty")]
    EmptyBoxArray,
    #[error("index {index} out of bounds for length {len}")]
    IndexOutOfBounds { index: i64, len: usize },
    #[error("argument {arg}: expected {expected}, found {found}")]
    TypeMismatch {
        arg: String,
        expected: &'static str,
        found: &'static str,
    },
    #[error("missing argument {0}")]
    MissingArgument(String),
    #[error("variable {0} is not bound")]
    Unbound(String),
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error(transparent)]
    Box(#[from] BoxError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("no handler for module {0}")]
    UnknownModule(String),
    #[error("script does not end with RESULT")]
    MissingResult,
}

/// Failure of one instruction. `line` is the instruction's source line, or
/// the line after the last instruction for end-of-script errors.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("line {line}: {cause}")]
pub struct RuntimeStepError {
    pub line: usize,
    pub cause: StepCause,
}

/// Errors that abort execution instead of falling back: missing fixtures and
/// unconfigured roles are setup problems, not script problems.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExecError {
    #[error(transparent)]
    Gateway(GatewayError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceInput {
    pub key: String,
    /// Variable the argument referenced, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub var: Option<String>,
    pub value: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub line_index: usize,
    pub module_name: String,
    pub output_var: String,
    pub inputs: Vec<TraceInput>,
    pub output: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub votes: Vec<Vote>,
    pub ms: f64,
    /// 0 for the script itself, 1 for the runtime fallback.
    #[serde(default)]
    pub attempt: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecStatus {
    Ok,
    RuntimeFallbackUsed,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionResult {
    pub final_answer: String,
    pub trace: Vec<TraceEvent>,
    pub status: ExecStatus,
    /// Step errors in the order they happened.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub errors: Vec<String>,
}

/// What the fallback needs to know, plus the trace switch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExecContext {
    pub question: String,
    pub task: TaskKind,
    pub trace: bool,
}

impl ExecContext {
    pub fn new(question: impl Into<String>, task: TaskKind) -> Self {
        Self {
            question: question.into(),
            task,
            trace: true,
        }
    }

    pub fn with_trace(mut self, on: bool) -> Self {
        self.trace = on;
        self
    }
}

fn is_fatal(err: &GatewayError) -> bool {
    matches!(
        err,
        GatewayError::FixtureMiss { .. }
            | GatewayError::NotConfigured(_)
            | GatewayError::Fixture(_)
    )
}

/// Runs `script` against a copy of `env`, with at most one fallback retry.
pub fn execute(
    script: &Script,
    env: &Env,
    gateway: &Gateway,
    ctx: &ExecContext,
) -> Result<ExecutionResult, ExecError> {
    let mut trace = Vec::new();
    let mut errors = Vec::new();
    match run_attempt(script, env.clone(), gateway, ctx.trace, 0, &mut trace)? {
        Ok(answer) => {
            return Ok(ExecutionResult {
                final_answer: answer,
                trace,
                status: ExecStatus::Ok,
                errors,
            })
        }
        Err(err) => errors.push(err.to_string()),
    }
    let fallback = make_fallback(&ctx.question, ctx.task);
    let (final_answer, status) =
        match run_attempt(&fallback, env.clone(), gateway, ctx.trace, 1, &mut trace)? {
            Ok(answer) => (answer, ExecStatus::RuntimeFallbackUsed),
            Err(err) => {
                errors.push(err.to_string());
                (UNKNOWN_ANSWER.to_string(), ExecStatus::Error)
            }
        };
    Ok(ExecutionResult {
        final_answer,
        trace,
        status,
        errors,
    })
}

type Attempt = Result<Result<String, RuntimeStepError>, ExecError>;

fn run_attempt(
    script: &Script,
    mut env: Env,
    gateway: &Gateway,
    tracing: bool,
    attempt: u8,
    trace: &mut Vec<TraceEvent>,
) -> Attempt {
    let mut last: Option<(&Instruction, Value)> = None;
    for instr in &script.instructions {
        let started = Instant::now();
        let mut step = Step {
            env: &env,
            gateway,
            instr,
            inputs: Vec::new(),
            votes: Vec::new(),
        };
        let outcome = step.run();
        let (inputs, votes) = (step.inputs, step.votes);
        let ms = started.elapsed().as_secs_f64() * 1000.0;
        let outcome = outcome.and_then(|value| {
            env.bind(instr.output_var.clone(), value.clone())?;
            Ok(value)
        });
        if tracing {
            trace.push(TraceEvent {
                line_index: instr.line_index,
                module_name: instr.module_name.clone(),
                output_var: instr.output_var.clone(),
                inputs,
                output: outcome
                    .as_ref()
                    .map(ToString::to_string)
                    .unwrap_or_default(),
                votes,
                ms,
                attempt,
                error: outcome.as_ref().err().map(ToString::to_string),
            });
        }
        match outcome {
            Ok(value) => last = Some((instr, value)),
            Err(StepCause::Gateway(err)) if is_fatal(&err) => return Err(ExecError::Gateway(err)),
            Err(cause) => {
                return Ok(Err(RuntimeStepError {
                    line: instr.line_index,
                    cause,
                }))
            }
        }
    }
    match last {
        Some((instr, Value::Text(answer))) if instr.module_name == "RESULT" => Ok(Ok(answer)),
        _ => Ok(Err(RuntimeStepError {
            line: script.instructions.last().map_or(0, |i| i.line_index + 1),
            cause: StepCause::MissingResult,
        })),
    }
}

struct Step<'a> {
    env: &'a Env,
    gateway: &'a Gateway,
    instr: &'a Instruction,
    inputs: Vec<TraceInput>,
    votes: Vec<Vote>,
}

impl Step<'_> {
    fn run(&mut self) -> Result<Value, StepCause> {
        match self.instr.module_name.as_str() {
            "LOC" => self.loc(),
            "CROP" => self.crop(),
            name @ ("CROP_LEFTOF" | "CROP_RIGHTOF" | "CROP_ABOVE" | "CROP_BELOW") => {
                self.directional_crop(name)
            }
            "VQA" => self.vqa(),
            "COUNT" => self.count(),
            "GET" => self.get(),
            "EVAL" => self.eval(),
            "RESULT" => self.result(),
            other => Err(StepCause::UnknownModule(other.to_string())),
        }
    }

    fn arg(&mut self, key: &str) -> Result<Value, StepCause> {
        let raw = self
            .instr
            .arg(key)
            .ok_or_else(|| StepCause::MissingArgument(key.to_string()))?;
        let (var, value) = match raw {
            ArgValue::VarRef(name) => (
                Some(name.clone()),
                self.env
                    .get(name)
                    .cloned()
                    .ok_or_else(|| StepCause::Unbound(name.clone()))?,
            ),
            ArgValue::StringLiteral(s) => (None, Value::Text(s.clone())),
            ArgValue::NumberLiteral(n) => (None, Value::Number(*n)),
            ArgValue::BoolLiteral(b) => (None, Value::Boolean(*b)),
        };
        self.inputs.push(TraceInput {
            key: key.to_string(),
            var,
            value: value.to_string(),
        });
        Ok(value)
    }

    fn opt_flag(&mut self, key: &str) -> Result<bool, StepCause> {
        if self.instr.arg(key).is_none() {
            return Ok(false);
        }
        match self.arg(key)? {
            Value::Boolean(b) => Ok(b),
            other => Err(mismatch(key, "boolean", &other)),
        }
    }

    fn image(&mut self, key: &str) -> Result<ImageRef, StepCause> {
        match self.arg(key)? {
            Value::Image(img) => Ok(img),
            other => Err(mismatch(key, "image", &other)),
        }
    }

    fn text(&mut self, key: &str) -> Result<String, StepCause> {
        match self.arg(key)? {
            Value::Text(t) => Ok(t),
            other => Err(mismatch(key, "text", &other)),
        }
    }

    /// A single box: the box itself, or the first element of a box array.
    fn first_box(&mut self, key: &str) -> Result<BBox, StepCause> {
        match self.arg(key)? {
            Value::Box(b) => Ok(b),
            Value::BoxArray(boxes) => boxes.first().copied().ok_or(StepCause::EmptyBoxArray),
            other => Err(mismatch(key, "box", &other)),
        }
    }

    fn loc(&mut self) -> Result<Value, StepCause> {
        let image = self.image("image")?;
        let object = self.text("object")?;
        let plural = self.opt_flag("plural")?;
        let detected = self.gateway.detect(&image, &object)?;
        self.votes = detected.votes;
        let mut boxes = detected.boxes;
        boxes.sort_by(|a, b| b.score.total_cmp(&a.score));
        if plural {
            boxes = match boxes.first() {
                Some(best) => vec![image.whole_box(best.score)],
                None => Vec::new(),
            };
        }
        Ok(Value::BoxArray(boxes))
    }

    fn crop(&mut self) -> Result<Value, StepCause> {
        let image = self.image("image")?;
        if self.opt_flag("each")? {
            let boxes = match self.arg("box")? {
                Value::BoxArray(boxes) => boxes,
                Value::Box(b) => vec![b],
                other => return Err(mismatch("box", "box array", &other)),
            };
            let crops = boxes
                .iter()
                .map(|b| image.crop(b.x1, b.y1, b.x2, b.y2))
                .collect::<Result<Vec<_>, _>>()?;
            return Ok(Value::ImageArray(crops));
        }
        let b = self.first_box("box")?;
        Ok(Value::Image(image.crop(b.x1, b.y1, b.x2, b.y2)?))
    }

    /// Region on one side of the box's center line, spanning the full image
    /// in the other direction.
    fn directional_crop(&mut self, module: &str) -> Result<Value, StepCause> {
        let image = self.image("image")?;
        let b = self.first_box("box")?;
        let (w, h) = (image.width as f64, image.height as f64);
        let (cx, cy) = ((b.x1 + b.x2) / 2.0, (b.y1 + b.y2) / 2.0);
        let [x1, y1, x2, y2] = match module {
            "CROP_LEFTOF" => [0.0, 0.0, cx, h],
            "CROP_RIGHTOF" => [cx, 0.0, w, h],
            "CROP_ABOVE" => [0.0, 0.0, w, cy],
            _ => [0.0, cy, w, h],
        };
        Ok(Value::Image(image.crop(x1, y1, x2, y2)?))
    }

    fn vqa(&mut self) -> Result<Value, StepCause> {
        let image = self.image("image")?;
        let question = self.text("question")?;
        let outcome = self.gateway.answer(&image, &question)?;
        self.votes = outcome.votes;
        Ok(Value::Text(outcome.answer))
    }

    fn count(&mut self) -> Result<Value, StepCause> {
        match self.arg("box")? {
            Value::BoxArray(boxes) => Ok(Value::Number(boxes.len() as i64)),
            Value::ImageArray(images) => Ok(Value::Number(images.len() as i64)),
            Value::Box(_) => Ok(Value::Number(1)),
            other => Err(mismatch("box", "box array", &other)),
        }
    }

    fn get(&mut self) -> Result<Value, StepCause> {
        let array = self.arg("array")?;
        let index = match self.arg("index")? {
            Value::Number(n) => n,
            other => return Err(mismatch("index", "number", &other)),
        };
        let pick = |len: usize| {
            usize::try_from(index)
                .ok()
                .filter(|i| *i < len)
                .ok_or(StepCause::IndexOutOfBounds { index, len })
        };
        match array {
            Value::BoxArray(boxes) => Ok(Value::Box(boxes[pick(boxes.len())?])),
            Value::ImageArray(mut images) => {
                let i = pick(images.len())?;
                Ok(Value::Image(images.swap_remove(i)))
            }
            other => Err(mismatch("array", "array", &other)),
        }
    }

    fn eval(&mut self) -> Result<Value, StepCause> {
        let template = self.text("expr")?;
        for name in expr::placeholders(&template) {
            if let Some(value) = self.env.get(&name) {
                self.inputs.push(TraceInput {
                    key: format!("{{{name}}}"),
                    var: Some(name.clone()),
                    value: value.to_string(),
                });
            }
        }
        let env = self.env;
        let substituted =
            expr::substitute_with(&template, |name| env.get(name).map(Value::template_form))?;
        let rewritten = expr::rewrite_yes_no(&substituted);
        let parsed = expr::parse_expr(&rewritten)?;
        Ok(expr::eval_expr(&parsed)?.into_value())
    }

    fn result(&mut self) -> Result<Value, StepCause> {
        let value = self.arg("var")?;
        let display = match &value {
            Value::Text(t) => coerce(t).display(),
            other => other.answer_form(),
        };
        Ok(Value::Text(display))
    }
}

fn mismatch(arg: &str, expected: &'static str, found: &Value) -> StepCause {
    StepCause::TypeMismatch {
        arg: arg.to_string(),
        expected,
        found: found.kind_name(),
    }
}
