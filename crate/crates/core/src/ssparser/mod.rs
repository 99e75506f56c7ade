//! Syntax-semantics parser: validates a planning script by abstract dry-run
//! and either passes it, repairs it in place, or replaces it with the direct
//! VQA fallback.
//!
//! The dry-run never calls a model. Every variable holds a shape-level
//! placeholder ([`DryValue`]) so argument kinds and liveness can be checked
//! line by line. Hard errors end the walk with [`Verdict::Fallback`]; soft
//! errors (quoted yes/no comparisons, plural LOC objects, quantified
//! LOC→CROP→VQA chains) are rewritten and reported as [`RepairRecord`]s with
//! stable rule ids from [`rules`].

mod quantifier;
mod registry;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::expr::{self, BinOp, Expr};
use crate::lexicon::{self, Lexicon, WordClass, WordClassOracle};
use crate::script::{parse_script, render_script, ArgValue, Instruction, Script};
use crate::task::TaskKind;

pub use quantifier::{rewrite_quantifier_block, RewriteUnsupported};
pub use registry::{ArgKind, ModuleRegistry, ModuleSignature, OutputKind, DIRECTIONAL_CROPS};

/// Stable rule identifiers reported in [`RepairRecord::rule_id`].
pub mod rules {
    pub const MALFORMED_LINE: &str = "parse.malformed_line";
    pub const BAD_ARGUMENTS: &str = "parse.bad_arguments";
    pub const REASSIGNMENT: &str = "parse.reassignment";
    pub const MISSING_RESULT: &str = "parse.missing_result";
    pub const UNKNOWN_MODULE: &str = "parse.unknown_module";
    pub const UNBOUND_VARIABLE: &str = "parse.unbound_variable";
    pub const EVAL_SYNTAX: &str = "eval.syntax_fallback";
    pub const YES_TO_TRUE: &str = "eval.yes_to_true";
    pub const NO_TO_FALSE: &str = "eval.no_to_false";
    pub const LOC_NON_NOUN: &str = "loc.non_noun_fallback";
    pub const LOC_NOT_IN_QUESTION: &str = "loc.object_not_in_question";
    pub const LOC_PLURAL_OBJECT: &str = "loc.plural_object";
    pub const LOC_PLURAL_IN_QUESTION: &str = "loc.plural_in_question";
    pub const LOC_QUANTIFIER_REWRITE: &str = "loc.quantifier_rewrite";
    pub const LOC_QUANTIFIER_UNSUPPORTED: &str = "loc.quantifier_unsupported";
    pub const DRYRUN_TYPE_ERROR: &str = "dryrun.type_error";
}

/// Words that make a question range over every instance of an object.
pub const QUANTIFIERS: [&str; 4] = ["all", "every", "both", "each"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    CleanPass,
    Repaired,
    Fallback,
}

impl Verdict {
    /// Process exit code for the `validate` command.
    pub fn exit_code(self) -> i32 {
        match self {
            Verdict::CleanPass => 0,
            Verdict::Repaired => 1,
            Verdict::Fallback => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepairRecord {
    #[serde(rename = "line")]
    pub line_index: usize,
    #[serde(rename = "rule")]
    pub rule_id: String,
    pub before: String,
    pub after: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RepairOutcome {
    pub verdict: Verdict,
    pub script: Script,
    pub repairs: Vec<RepairRecord>,
}

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// JSON form of a [`RepairOutcome`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepairReport {
    pub schema_version: u32,
    pub verdict: Verdict,
    pub repairs: Vec<RepairRecord>,
    pub fallback_used: bool,
    pub script: String,
}

impl RepairOutcome {
    pub fn fallback_used(&self) -> bool {
        self.verdict == Verdict::Fallback
    }

    pub fn rule_ids(&self) -> Vec<&str> {
        self.repairs.iter().map(|r| r.rule_id.as_str()).collect()
    }

    pub fn report(&self) -> RepairReport {
        RepairReport {
            schema_version: REPORT_SCHEMA_VERSION,
            verdict: self.verdict,
            repairs: self.repairs.clone(),
            fallback_used: self.fallback_used(),
            script: render_script(&self.script),
        }
    }
}

/// Shape-level placeholder held by a variable during the dry-run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DryValue {
    Image,
    Box,
    BoxArray,
    ImageArray,
    Text,
    Number,
    Boolean,
    Unknown,
}

impl DryValue {
    /// Text spliced into EVAL templates: VQA answers become `'0'`, detections
    /// the whole-frame token.
    fn template_form(self) -> &'static str {
        match self {
            DryValue::Text | DryValue::Number | DryValue::Unknown => "0",
            DryValue::Boolean => "True",
            DryValue::Box | DryValue::BoxArray => "[[0,0,100,100]]",
            DryValue::Image | DryValue::ImageArray => "IMAGE",
        }
    }
}

/// Placeholder environment for the dry-run.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DryEnv {
    vars: BTreeMap<String, DryValue>,
}

impl DryEnv {
    pub fn seeded(task: TaskKind) -> Self {
        let vars = task
            .seed_vars()
            .iter()
            .map(|name| (name.to_string(), DryValue::Image))
            .collect();
        Self { vars }
    }

    pub fn get(&self, name: &str) -> Option<DryValue> {
        self.vars.get(name).copied()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.vars.contains_key(name)
    }

    pub fn set(&mut self, name: impl Into<String>, value: DryValue) {
        self.vars.insert(name.into(), value);
    }
}

/// Per-call state of one validation.
#[derive(Debug, Clone)]
pub struct RepairContext {
    pub num_box_arrays: usize,
    pub num_image_arrays: usize,
    pub dry_env: DryEnv,
    pub question_tokens: Vec<String>,
}

impl RepairContext {
    pub fn new(question: &str, task: TaskKind) -> Self {
        Self {
            num_box_arrays: 0,
            num_image_arrays: 0,
            dry_env: DryEnv::seeded(task),
            question_tokens: lexicon::tokenize(question),
        }
    }

    pub fn has_quantifier(&self) -> bool {
        self.question_tokens
            .iter()
            .any(|t| QUANTIFIERS.contains(&t.as_str()))
    }
}

/// Array-form LOC outputs produced by the quantifier rewrite.
pub fn is_box_array_name(name: &str) -> bool {
    name.strip_prefix("BOX_ARRAY_")
        .is_some_and(|n| !n.is_empty() && n.bytes().all(|b| b.is_ascii_digit()))
}

/// Two-line direct VQA script used whenever repair is impossible.
pub fn make_fallback(question: &str, task: TaskKind) -> Script {
    let vqa_question = if task.is_paired() {
        as_yes_no_question(question)
    } else {
        question.to_string()
    };
    Script::from_instructions(vec![
        Instruction::new("ANSWER0", "VQA")
            .with_arg("image", ArgValue::VarRef("IMAGE".into()))
            .with_arg("question", ArgValue::StringLiteral(vqa_question)),
        Instruction::new("FINAL_ANSWER", "RESULT")
            .with_arg("var", ArgValue::VarRef("ANSWER0".into())),
    ])
    .renumbered()
}

/// "There are two dogs." becomes "Is it true that there are two dogs?".
fn as_yes_no_question(statement: &str) -> String {
    let body = statement
        .trim()
        .trim_end_matches(['.', '!', '?'])
        .trim_end();
    if body.is_empty() {
        return String::new();
    }
    let mut chars = body.chars();
    let first = chars.next().unwrap();
    let lowered: String = first.to_lowercase().chain(chars).collect();
    format!("Is it true that {lowered}?")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LocCheck {
    Ok,
    AddPlural { rule_id: &'static str },
    Fallback { rule_id: &'static str },
}

/// Semantic checks on one LOC call: noun object, bound image, object named
/// in the question, plural handling.
pub fn check_loc(
    instr: &Instruction,
    question_tokens: &[String],
    dry_env: &DryEnv,
    oracle: &dyn WordClassOracle,
) -> LocCheck {
    let object = instr.arg("object").and_then(ArgValue::as_str).unwrap_or("");
    let last = lexicon::tokenize(object).pop().unwrap_or_default();
    if last.is_empty() || oracle.word_class(&last) != WordClass::Noun {
        return LocCheck::Fallback {
            rule_id: rules::LOC_NON_NOUN,
        };
    }
    let image = instr.arg("image").and_then(ArgValue::as_var);
    match image.and_then(|name| dry_env.get(name)) {
        Some(DryValue::Image) => {}
        Some(_) => {
            return LocCheck::Fallback {
                rule_id: rules::DRYRUN_TYPE_ERROR,
            }
        }
        None => {
            return LocCheck::Fallback {
                rule_id: rules::UNBOUND_VARIABLE,
            }
        }
    }
    let plural = lexicon::pluralize(&last);
    let in_question = |w: &str| question_tokens.iter().any(|t| t == w);
    if !in_question(&last) && !in_question(&plural) {
        return LocCheck::Fallback {
            rule_id: rules::LOC_NOT_IN_QUESTION,
        };
    }
    if instr.arg("plural").and_then(ArgValue::as_bool) == Some(true)
        || is_box_array_name(&instr.output_var)
    {
        return LocCheck::Ok;
    }
    if lexicon::is_plural(&last, oracle) {
        LocCheck::AddPlural {
            rule_id: rules::LOC_PLURAL_OBJECT,
        }
    } else if in_question(&plural) {
        LocCheck::AddPlural {
            rule_id: rules::LOC_PLURAL_IN_QUESTION,
        }
    } else {
        LocCheck::Ok
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EvalCheck {
    Ok {
        /// Expression template after the yes/no rewrite, when it changed.
        rewritten: Option<String>,
        yes_rewritten: bool,
        no_rewritten: bool,
        output: DryValue,
    },
    Fallback {
        rule_id: &'static str,
    },
}

/// Substitutes placeholders from the dry environment, applies the yes/no
/// rewrite and checks the expression parses.
pub fn check_eval(instr: &Instruction, dry_env: &DryEnv) -> EvalCheck {
    let Some(template) = instr.arg("expr").and_then(ArgValue::as_str) else {
        return EvalCheck::Fallback {
            rule_id: rules::BAD_ARGUMENTS,
        };
    };
    let (rewritten, report) = expr::rewrite_yes_no_report(template);
    let substituted = match expr::substitute_with(&rewritten, |name| {
        dry_env.get(name).map(|v| v.template_form().to_string())
    }) {
        Ok(text) => text,
        Err(_) => {
            return EvalCheck::Fallback {
                rule_id: rules::UNBOUND_VARIABLE,
            }
        }
    };
    match expr::parse_expr(&substituted) {
        Ok(parsed) => EvalCheck::Ok {
            rewritten: (rewritten != template).then_some(rewritten),
            yes_rewritten: report.yes,
            no_rewritten: report.no,
            output: expr_output_kind(&parsed),
        },
        Err(_) => EvalCheck::Fallback {
            rule_id: rules::EVAL_SYNTAX,
        },
    }
}

fn expr_output_kind(expr: &Expr) -> DryValue {
    match expr {
        Expr::Bool(_) | Expr::Not(_) => DryValue::Boolean,
        Expr::Number(_) | Expr::Neg(_) => DryValue::Number,
        Expr::Binary(op, _, _) => match op {
            BinOp::Add | BinOp::Sub | BinOp::Mul => DryValue::Number,
            _ => DryValue::Boolean,
        },
        Expr::Text(_) | Expr::Var(_) => DryValue::Unknown,
    }
}

struct HardError {
    line_index: usize,
    rule_id: &'static str,
    before: String,
}

/// Parses `text` and validates it; malformed text falls back.
pub fn validate_text(
    text: &str,
    question: &str,
    registry: &ModuleRegistry,
    task: TaskKind,
) -> RepairOutcome {
    match parse_script(text) {
        Ok(script) => validate_and_repair(&script, question, registry, task),
        Err(err) => {
            let before = text.lines().nth(err.line_index).unwrap_or("").to_string();
            fallback_outcome(
                question,
                task,
                HardError {
                    line_index: err.line_index,
                    rule_id: rules::MALFORMED_LINE,
                    before,
                },
            )
        }
    }
}

/// Validates with the bundled noun lexicon.
pub fn validate_and_repair(
    script: &Script,
    question: &str,
    registry: &ModuleRegistry,
    task: TaskKind,
) -> RepairOutcome {
    validate_and_repair_with(script, question, registry, task, Lexicon::bundled())
}

pub fn validate_and_repair_with(
    script: &Script,
    question: &str,
    registry: &ModuleRegistry,
    task: TaskKind,
    oracle: &dyn WordClassOracle,
) -> RepairOutcome {
    let mut ctx = RepairContext::new(question, task);
    match walk(script, registry, &mut ctx, oracle) {
        Ok((_lines, repairs)) if repairs.is_empty() => RepairOutcome {
            verdict: Verdict::CleanPass,
            script: script.clone(),
            repairs,
        },
        Ok((lines, repairs)) => RepairOutcome {
            verdict: Verdict::Repaired,
            script: Script::from_instructions(lines).renumbered(),
            repairs,
        },
        Err(hard) => fallback_outcome(question, task, hard),
    }
}

fn fallback_outcome(question: &str, task: TaskKind, hard: HardError) -> RepairOutcome {
    let script = make_fallback(question, task);
    RepairOutcome {
        verdict: Verdict::Fallback,
        repairs: vec![RepairRecord {
            line_index: hard.line_index,
            rule_id: hard.rule_id.to_string(),
            before: hard.before,
            after: render_script(&script),
        }],
        script,
    }
}

type WalkResult = Result<(Vec<Instruction>, Vec<RepairRecord>), HardError>;

fn walk(
    script: &Script,
    registry: &ModuleRegistry,
    ctx: &mut RepairContext,
    oracle: &dyn WordClassOracle,
) -> WalkResult {
    let mut lines = script.instructions.clone();
    let mut repairs = Vec::new();
    let mut i = 0;
    while i < lines.len() {
        check_line(&mut lines, i, registry, ctx, oracle, &mut repairs)?;
        i += 1;
    }
    match lines.last() {
        Some(last) if last.module_name == "RESULT" => Ok((lines, repairs)),
        last => Err(HardError {
            line_index: last.map(|l| l.line_index).unwrap_or(0),
            rule_id: rules::MISSING_RESULT,
            before: last.map(|l| l.to_string()).unwrap_or_default(),
        }),
    }
}

fn check_line(
    lines: &mut Vec<Instruction>,
    i: usize,
    registry: &ModuleRegistry,
    ctx: &mut RepairContext,
    oracle: &dyn WordClassOracle,
    repairs: &mut Vec<RepairRecord>,
) -> Result<(), HardError> {
    let instr = lines[i].clone();
    let hard = |rule_id: &'static str| HardError {
        line_index: instr.line_index,
        rule_id,
        before: instr.to_string(),
    };

    let Some(signature) = registry.get(&instr.module_name) else {
        return Err(hard(rules::UNKNOWN_MODULE));
    };
    check_signature(&instr, signature).map_err(|_| hard(rules::BAD_ARGUMENTS))?;
    if ctx.dry_env.contains(&instr.output_var) {
        return Err(hard(rules::REASSIGNMENT));
    }
    let arg_type = |key: &str| -> Result<Option<DryValue>, HardError> {
        match instr.arg(key).and_then(ArgValue::as_var) {
            None => Ok(None),
            Some(name) => ctx
                .dry_env
                .get(name)
                .map(Some)
                .ok_or_else(|| hard(rules::UNBOUND_VARIABLE)),
        }
    };
    let expect = |got: Option<DryValue>, allowed: &[DryValue]| -> Result<(), HardError> {
        match got {
            Some(v) if allowed.contains(&v) || v == DryValue::Unknown => Ok(()),
            _ => Err(hard(rules::DRYRUN_TYPE_ERROR)),
        }
    };

    let output = match instr.module_name.as_str() {
        "LOC" => {
            let verdict = check_loc(&instr, &ctx.question_tokens, &ctx.dry_env, oracle);
            let plural_rule = match verdict {
                LocCheck::Fallback { rule_id } => return Err(hard(rule_id)),
                LocCheck::AddPlural { rule_id } => Some(rule_id),
                LocCheck::Ok => None,
            };
            if ctx.has_quantifier() && !is_box_array_name(&instr.output_var) {
                let (rewritten, records) = quantifier::rewrite_block(lines, i, ctx)
                    .map_err(|_| hard(rules::LOC_QUANTIFIER_UNSUPPORTED))?;
                *lines = rewritten;
                repairs.extend(records);
                ctx.dry_env
                    .set(lines[i].output_var.clone(), DryValue::BoxArray);
                return Ok(());
            }
            if let Some(rule_id) = plural_rule {
                let mut fixed = instr.clone();
                fixed.set_arg("plural", ArgValue::BoolLiteral(true));
                repairs.push(RepairRecord {
                    line_index: instr.line_index,
                    rule_id: rule_id.to_string(),
                    before: instr.to_string(),
                    after: fixed.to_string(),
                });
                lines[i] = fixed;
            }
            DryValue::BoxArray
        }
        "EVAL" => match check_eval(&instr, &ctx.dry_env) {
            EvalCheck::Fallback { rule_id } => return Err(hard(rule_id)),
            EvalCheck::Ok {
                rewritten,
                yes_rewritten,
                no_rewritten,
                output,
            } => {
                if let Some(expr_text) = rewritten {
                    let mut fixed = instr.clone();
                    fixed.set_arg("expr", ArgValue::StringLiteral(expr_text));
                    for (fired, rule_id) in [
                        (yes_rewritten, rules::YES_TO_TRUE),
                        (no_rewritten, rules::NO_TO_FALSE),
                    ] {
                        if fired {
                            repairs.push(RepairRecord {
                                line_index: instr.line_index,
                                rule_id: rule_id.to_string(),
                                before: instr.to_string(),
                                after: fixed.to_string(),
                            });
                        }
                    }
                    lines[i] = fixed;
                }
                output
            }
        },
        "VQA" => {
            expect(arg_type("image")?, &[DryValue::Image])?;
            DryValue::Text
        }
        "CROP" => {
            expect(arg_type("image")?, &[DryValue::Image])?;
            if instr.arg("each").and_then(ArgValue::as_bool) == Some(true) {
                expect(arg_type("box")?, &[DryValue::BoxArray])?;
                DryValue::ImageArray
            } else {
                expect(arg_type("box")?, &[DryValue::Box, DryValue::BoxArray])?;
                DryValue::Image
            }
        }
        name if DIRECTIONAL_CROPS.contains(&name) => {
            expect(arg_type("image")?, &[DryValue::Image])?;
            expect(arg_type("box")?, &[DryValue::Box, DryValue::BoxArray])?;
            DryValue::Image
        }
        "COUNT" => {
            expect(arg_type("box")?, &[DryValue::BoxArray])?;
            DryValue::Number
        }
        "GET" => {
            if instr
                .arg("index")
                .and_then(ArgValue::as_number)
                .is_some_and(|n| n < 0)
            {
                return Err(hard(rules::DRYRUN_TYPE_ERROR));
            }
            match arg_type("array")? {
                Some(DryValue::BoxArray) => DryValue::Box,
                Some(DryValue::ImageArray) => DryValue::Image,
                Some(DryValue::Unknown) => DryValue::Unknown,
                _ => return Err(hard(rules::DRYRUN_TYPE_ERROR)),
            }
        }
        "RESULT" => arg_type("var")?.unwrap_or(DryValue::Unknown),
        _ => {
            // registered but without a dedicated shape rule: check liveness only
            for (_, name) in instr.var_refs() {
                if !ctx.dry_env.contains(name) {
                    return Err(hard(rules::UNBOUND_VARIABLE));
                }
            }
            match signature.output {
                OutputKind::Image => DryValue::Image,
                OutputKind::Box => DryValue::Box,
                OutputKind::BoxArray => DryValue::BoxArray,
                OutputKind::ImageArray => DryValue::ImageArray,
                OutputKind::Text => DryValue::Text,
                OutputKind::Number => DryValue::Number,
                OutputKind::Boolean => DryValue::Boolean,
                OutputKind::Dynamic => DryValue::Unknown,
            }
        }
    };
    ctx.dry_env.set(instr.output_var.clone(), output);
    Ok(())
}

fn check_signature(instr: &Instruction, signature: &ModuleSignature) -> Result<(), ()> {
    for (key, _) in &signature.required {
        if instr.arg(key).is_none() {
            return Err(());
        }
    }
    for (key, value) in &instr.args {
        let kind = signature.arg_kind(key).ok_or(())?;
        let ok = match kind {
            ArgKind::Var => matches!(value, ArgValue::VarRef(_)),
            ArgKind::Str => matches!(value, ArgValue::StringLiteral(_)),
            ArgKind::Bool => matches!(value, ArgValue::BoolLiteral(_)),
            ArgKind::Num => matches!(value, ArgValue::NumberLiteral(_)),
        };
        if !ok {
            return Err(());
        }
    }
    Ok(())
}
