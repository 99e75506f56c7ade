//! EVAL mini-language: template substitution, value coercion, a closed
//! expression grammar and its evaluator.
//!
//! There is no host evaluation facility here. Every string atom is coerced
//! before an operator sees it: digit strings become numbers and `yes`/`no`
//! become booleans, so `yes == True` holds.

mod eval;
mod parser;

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::value::{Env, Value};

pub use eval::{eval_expr, eval_expr_with};
pub use parser::parse_expr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BinOp {
    Or,
    And,
    Eq,
    Ne,
    Lt,
    Gt,
    Le,
    Ge,
    In,
    Add,
    Sub,
    Mul,
}

impl BinOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinOp::Or => "or",
            BinOp::And => "and",
            BinOp::Eq => "==",
            BinOp::Ne => "!=",
            BinOp::Lt => "<",
            BinOp::Gt => ">",
            BinOp::Le => "<=",
            BinOp::Ge => ">=",
            BinOp::In => "in",
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
        }
    }

    pub fn is_comparison(self) -> bool {
        matches!(
            self,
            BinOp::Eq | BinOp::Ne | BinOp::Lt | BinOp::Gt | BinOp::Le | BinOp::Ge
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Expr {
    Number(i64),
    Bool(bool),
    /// Quoted string or run of bare words, stored before coercion.
    Text(String),
    /// Unsubstituted `{NAME}` placeholder.
    Var(String),
    Not(Box<Expr>),
    Neg(Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
}

impl Expr {
    pub fn binary(op: BinOp, lhs: Expr, rhs: Expr) -> Expr {
        Expr::Binary(op, Box::new(lhs), Box::new(rhs))
    }

    pub fn text(s: impl Into<String>) -> Expr {
        Expr::Text(s.into())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum CoercedValue {
    Number(i64),
    Boolean(bool),
    Text(String),
}

impl CoercedValue {
    pub fn into_value(self) -> Value {
        match self {
            CoercedValue::Number(n) => Value::Number(n),
            CoercedValue::Boolean(b) => Value::Boolean(b),
            CoercedValue::Text(t) => Value::Text(t),
        }
    }

    /// Answer display: `yes`/`no`, decimal, or verbatim text.
    pub fn display(&self) -> String {
        match self {
            CoercedValue::Number(n) => n.to_string(),
            CoercedValue::Boolean(true) => "yes".to_string(),
            CoercedValue::Boolean(false) => "no".to_string(),
            CoercedValue::Text(t) => t.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExprError {
    #[error("unbound variable {{{0}}}")]
    UnboundVariable(String),
    #[error("syntax error at offset {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("type mismatch: {0}")]
    TypeMismatch(String),
    #[error("integer overflow in {0}")]
    Overflow(&'static str),
}

/// Digit strings (optional leading minus) become numbers, `yes`/`no` become
/// booleans (case-insensitive, trimmed); anything else is left as text.
pub fn coerce(raw: &str) -> CoercedValue {
    let trimmed = raw.trim();
    let digits = trimmed.strip_prefix('-').unwrap_or(trimmed);
    if !digits.is_empty() && digits.bytes().all(|b| b.is_ascii_digit()) {
        if let Ok(n) = trimmed.parse::<i64>() {
            return CoercedValue::Number(n);
        }
    }
    if trimmed.eq_ignore_ascii_case("yes") {
        return CoercedValue::Boolean(true);
    }
    if trimmed.eq_ignore_ascii_case("no") {
        return CoercedValue::Boolean(false);
    }
    CoercedValue::Text(raw.to_string())
}

fn placeholder_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{([A-Z][A-Z0-9_]*)\}").unwrap())
}

/// Replaces every `{NAME}` with `lookup(NAME)`.
pub fn substitute_with<F>(template: &str, mut lookup: F) -> Result<String, ExprError>
where
    F: FnMut(&str) -> Option<String>,
{
    let mut out = String::with_capacity(template.len());
    let mut last = 0;
    for caps in placeholder_re().captures_iter(template) {
        let whole = caps.get(0).unwrap();
        let name = &caps[1];
        let replacement =
            lookup(name).ok_or_else(|| ExprError::UnboundVariable(name.to_string()))?;
        out.push_str(&template[last..whole.start()]);
        out.push_str(&replacement);
        last = whole.end();
    }
    out.push_str(&template[last..]);
    Ok(out)
}

/// Splices bound values into `{NAME}` placeholders: text verbatim, numbers in
/// decimal, booleans as `True`/`False`.
pub fn substitute(template: &str, env: &Env) -> Result<String, ExprError> {
    substitute_with(template, |name| env.get(name).map(Value::template_form))
}

/// Names referenced by `{NAME}` placeholders, in order of appearance.
pub fn placeholders(template: &str) -> Vec<String> {
    placeholder_re()
        .captures_iter(template)
        .map(|c| c[1].to_string())
        .collect()
}

fn yes_no_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r#"(?i)(==|!=)\s*(?:'(yes|no)'|"(yes|no)")"#).unwrap())
}

/// Which quoted comparisons a [`rewrite_yes_no`] call replaced.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct YesNoRewrite {
    pub yes: bool,
    pub no: bool,
}

/// `== 'yes'` becomes `== True` and `== 'no'` becomes `== False`; `!=` alike.
pub fn rewrite_yes_no(expr_text: &str) -> String {
    rewrite_yes_no_report(expr_text).0
}

pub fn rewrite_yes_no_report(expr_text: &str) -> (String, YesNoRewrite) {
    let mut report = YesNoRewrite::default();
    let out = yes_no_re().replace_all(expr_text, |caps: &regex::Captures<'_>| {
        let word = caps
            .get(2)
            .or_else(|| caps.get(3))
            .map(|m| m.as_str().to_ascii_lowercase())
            .unwrap_or_default();
        let literal = if word == "yes" {
            report.yes = true;
            "True"
        } else {
            report.no = true;
            "False"
        };
        format!("{} {}", &caps[1], literal)
    });
    (out.into_owned(), report)
}
