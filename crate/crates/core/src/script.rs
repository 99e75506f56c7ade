//! Planning-script IR and the line grammar `OUT=MODULE(key=value,...)`.
//!
//! Values are single- or double-quoted strings, bare uppercase identifiers
//! (variable references), `True`/`False`, or decimal integers. Lines whose
//! first non-blank character is `#` are comments. Parsing never interprets
//! anything: module existence and variable liveness are checked elsewhere.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("malformed script line {line_index}: {reason}")]
pub struct MalformedLine {
    pub line_index: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum ArgValue {
    StringLiteral(String),
    VarRef(String),
    NumberLiteral(i64),
    BoolLiteral(bool),
}

impl ArgValue {
    pub fn as_var(&self) -> Option<&str> {
        match self {
            ArgValue::VarRef(name) => Some(name),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            ArgValue::StringLiteral(text) => Some(text),
            _ => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            ArgValue::BoolLiteral(b) => Some(*b),
            _ => None,
        }
    }

    pub fn as_number(&self) -> Option<i64> {
        match self {
            ArgValue::NumberLiteral(n) => Some(*n),
            _ => None,
        }
    }
}

impl fmt::Display for ArgValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ArgValue::StringLiteral(text) => f.write_str(&quote(text)),
            ArgValue::VarRef(name) => f.write_str(name),
            ArgValue::NumberLiteral(n) => write!(f, "{n}"),
            ArgValue::BoolLiteral(true) => f.write_str("True"),
            ArgValue::BoolLiteral(false) => f.write_str("False"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instruction {
    /// Index of the source line this instruction came from (0-based, counting
    /// blank and comment lines).
    pub line_index: usize,
    pub output_var: String,
    pub module_name: String,
    pub args: Vec<(String, ArgValue)>,
}

impl Instruction {
    pub fn new(output_var: impl Into<String>, module_name: impl Into<String>) -> Self {
        Self {
            line_index: 0,
            output_var: output_var.into(),
            module_name: module_name.into(),
            args: Vec::new(),
        }
    }

    pub fn with_arg(mut self, key: impl Into<String>, value: ArgValue) -> Self {
        self.set_arg(key, value);
        self
    }

    pub fn arg(&self, key: &str) -> Option<&ArgValue> {
        self.args.iter().find(|(k, _)| k == key).map(|(_, v)| v)
    }

    /// Replaces the value of `key` in place, or appends it.
    pub fn set_arg(&mut self, key: impl Into<String>, value: ArgValue) {
        let key = key.into();
        match self.args.iter_mut().find(|(k, _)| *k == key) {
            Some(slot) => slot.1 = value,
            None => self.args.push((key, value)),
        }
    }

    pub fn remove_arg(&mut self, key: &str) -> Option<ArgValue> {
        let pos = self.args.iter().position(|(k, _)| k == key)?;
        Some(self.args.remove(pos).1)
    }

    /// Variables this instruction reads through `VarRef` arguments.
    pub fn var_refs(&self) -> impl Iterator<Item = (&str, &str)> {
        self.args
            .iter()
            .filter_map(|(k, v)| v.as_var().map(|name| (k.as_str(), name)))
    }

    /// Equality ignoring `line_index`.
    pub fn same_shape(&self, other: &Instruction) -> bool {
        self.output_var == other.output_var
            && self.module_name == other.module_name
            && self.args == other.args
    }
}

impl fmt::Display for Instruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}={}(", self.output_var, self.module_name)?;
        for (i, (key, value)) in self.args.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{key}={value}")?;
        }
        f.write_str(")")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Script {
    pub instructions: Vec<Instruction>,
    pub source_text: String,
}

impl Script {
    /// Builds a script whose source text is the canonical rendering.
    pub fn from_instructions(instructions: Vec<Instruction>) -> Self {
        let mut script = Script {
            instructions,
            source_text: String::new(),
        };
        script.source_text = render_script(&script);
        script
    }

    /// Renumbers `line_index` to match the canonical rendering.
    pub fn renumbered(mut self) -> Self {
        for (i, instr) in self.instructions.iter_mut().enumerate() {
            instr.line_index = i;
        }
        self
    }

    pub fn len(&self) -> usize {
        self.instructions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instructions.is_empty()
    }

    /// Instruction-wise equality ignoring line positions and source text.
    pub fn same_shape(&self, other: &Script) -> bool {
        self.instructions.len() == other.instructions.len()
            && self
                .instructions
                .iter()
                .zip(&other.instructions)
                .all(|(a, b)| a.same_shape(b))
    }
}

pub fn is_var_name(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some('A'..='Z'))
        && chars.all(|c| c.is_ascii_uppercase() || c.is_ascii_digit() || c == '_')
}

fn is_key_name(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Parses one instruction line.
pub fn parse_step(line: &str, line_index: usize) -> Result<Instruction, MalformedLine> {
    let fail = |reason: &str| MalformedLine {
        line_index,
        reason: reason.to_string(),
    };
    let line = line.trim();
    if line.is_empty() {
        return Err(fail("empty line"));
    }
    let (lhs, rhs) = line.split_once('=').ok_or_else(|| fail("missing '='"))?;
    let output_var = lhs.trim();
    if !is_var_name(output_var) {
        return Err(fail("output variable must match [A-Z][A-Z0-9_]*"));
    }
    let rhs = rhs.trim();
    let open = rhs
        .find('(')
        .ok_or_else(|| fail("missing '(' of module call"))?;
    let module_name = rhs[..open].trim();
    if module_name.is_empty() {
        return Err(fail("empty module name"));
    }
    if !is_var_name(module_name) {
        return Err(fail("module name must be uppercase ASCII"));
    }
    let body = &rhs[open + 1..];
    let (args_text, rest) = split_call_body(body).map_err(&fail)?;
    if !rest.trim().is_empty() {
        return Err(fail("trailing text after ')'"));
    }

    let mut args: Vec<(String, ArgValue)> = Vec::new();
    for piece in split_top_level(args_text).map_err(&fail)? {
        let piece = piece.trim();
        if piece.is_empty() {
            if args_text.trim().is_empty() {
                continue;
            }
            return Err(fail("empty argument"));
        }
        let (key, value) = piece
            .split_once('=')
            .ok_or_else(|| fail("argument without '='"))?;
        let key = key.trim();
        if !is_key_name(key) {
            return Err(fail("invalid argument name"));
        }
        if args.iter().any(|(k, _)| k == key) {
            return Err(fail("duplicate argument name"));
        }
        let value = parse_value(value.trim()).map_err(&fail)?;
        args.push((key.to_string(), value));
    }

    Ok(Instruction {
        line_index,
        output_var: output_var.to_string(),
        module_name: module_name.to_string(),
        args,
    })
}

/// Splits the text after `(` into the argument list and whatever follows the
/// matching `)`, honoring quotes.
fn split_call_body(body: &str) -> Result<(&str, &str), &'static str> {
    let mut quote: Option<char> = None;
    let mut escaped = false;
    for (i, c) in body.char_indices() {
        if let Some(q) = quote {
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == q {
                quote = None;
            }
            continue;
        }
        match c {
            '\'' | '"' => quote = Some(c),
            '(' => return Err("nested parentheses outside a string"),
            ')' => return Ok((&body[..i], &body[i + 1..])),
            _ => {}
        }
    }
    if quote.is_some() {
        Err("unbalanced quotes")
    } else {
        Err("missing ')'")
    }
}

fn split_top_level(args: &str) -> Result<Vec<&str>, &'static str> {
    let mut pieces = Vec::new();
    let mut start = 0;
    let mut quote: Option<char> = None;
    let mut escaped = false;
    for (i, c) in args.char_indices() {
        if let Some(q) = quote {
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == q {
                quote = None;
            }
            continue;
        }
        match c {
            '\'' | '"' => quote = Some(c),
            ',' => {
                pieces.push(&args[start..i]);
                start = i + 1;
            }
            _ => {}
        }
    }
    if quote.is_some() {
        return Err("unbalanced quotes");
    }
    pieces.push(&args[start..]);
    Ok(pieces)
}

fn parse_value(text: &str) -> Result<ArgValue, &'static str> {
    let mut chars = text.chars();
    match chars.next() {
        None => Err("missing argument value"),
        Some(q @ ('\'' | '"')) => {
            let mut out = String::new();
            let mut escaped = false;
            let mut closed_at = None;
            for (i, c) in text.char_indices().skip(1) {
                if escaped {
                    out.push(c);
                    escaped = false;
                } else if c == '\\' {
                    escaped = true;
                } else if c == q {
                    closed_at = Some(i);
                    break;
                } else {
                    out.push(c);
                }
            }
            match closed_at {
                Some(end) if end + 1 == text.len() => Ok(ArgValue::StringLiteral(out)),
                Some(_) => Err("text after closing quote"),
                None => Err("unbalanced quotes"),
            }
        }
        Some(_) => {
            if text == "True" {
                Ok(ArgValue::BoolLiteral(true))
            } else if text == "False" {
                Ok(ArgValue::BoolLiteral(false))
            } else if is_var_name(text) {
                Ok(ArgValue::VarRef(text.to_string()))
            } else if let Some(n) = parse_integer(text) {
                Ok(ArgValue::NumberLiteral(n))
            } else {
                Err("unrecognized argument value")
            }
        }
    }
}

fn parse_integer(text: &str) -> Option<i64> {
    let digits = text.strip_prefix('-').unwrap_or(text);
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    text.parse().ok()
}

/// Parses a whole script. Blank and `#` lines are skipped; the first bad line
/// aborts with its 0-based position.
pub fn parse_script(text: &str) -> Result<Script, MalformedLine> {
    let mut instructions = Vec::new();
    for (line_index, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        instructions.push(parse_step(trimmed, line_index)?);
    }
    Ok(Script {
        instructions,
        source_text: text.to_string(),
    })
}

/// Canonical surface form: one instruction per line, no spaces, LF separated.
pub fn render_script(script: &Script) -> String {
    script
        .instructions
        .iter()
        .map(Instruction::to_string)
        .collect::<Vec<_>>()
        .join("\n")
}

/// Single quotes unless the content contains `'` and no `"`; backslash
/// escapes cover whatever remains.
fn quote(text: &str) -> String {
    let q = if text.contains('\'') && !text.contains('"') {
        '"'
    } else {
        '\''
    };
    let mut out = String::with_capacity(text.len() + 2);
    out.push(q);
    for c in text.chars() {
        if c == q || c == '\\' {
            out.push('\\');
        }
        out.push(c);
    }
    out.push(q);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_loc_line() {
        let instr = parse_step("BOX0=LOC(image=IMAGE,object='grass')", 0).unwrap();
        assert_eq!(instr.output_var, "BOX0");
        assert_eq!(instr.module_name, "LOC");
        assert_eq!(
            instr.args,
            vec![
                ("image".to_string(), ArgValue::VarRef("IMAGE".into())),
                (
                    "object".to_string(),
                    ArgValue::StringLiteral("grass".into())
                ),
            ]
        );
    }

    #[test]
    fn parses_result_line() {
        let instr = parse_step("FINAL_ANSWER=RESULT(var=ANSWER0)", 3).unwrap();
        assert_eq!(instr.line_index, 3);
        assert_eq!(instr.module_name, "RESULT");
        assert_eq!(instr.arg("var"), Some(&ArgValue::VarRef("ANSWER0".into())));
    }

    #[test]
    fn tolerates_whitespace() {
        let a = parse_step("  BOX0 = LOC ( image = IMAGE , object = 'grass' )  ", 0).unwrap();
        let b = parse_step("BOX0=LOC(image=IMAGE,object='grass')", 0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_grammar_violations() {
        for bad in [
            "ANSWER0 LOC image",
            "ANSWER0=LOC image",
            "ANSWER0=(image=IMAGE)",
            "ANSWER0=LOC(object='grass)",
            "ANSWER0=LOC(image=IMAGE",
            "answer0=LOC(image=IMAGE)",
            "ANSWER0=loc(image=IMAGE)",
            "ANSWER0=LOC(image=IMAGE,image=IMAGE)",
            "ANSWER0=LOC(image=IMAGE) extra",
            "ANSWER0=LOC(image=image)",
            "ANSWER0=LOC(image=IMAGE,)",
        ] {
            assert!(parse_step(bad, 0).is_err(), "{bad} should be malformed");
        }
    }

    #[test]
    fn literal_kinds() {
        let instr = parse_step(
            "X=GET(array=BOX_ARRAY_0,index=-2,plural=True,flag=False,q=\"it's\")",
            0,
        )
        .unwrap();
        assert_eq!(instr.arg("index"), Some(&ArgValue::NumberLiteral(-2)));
        assert_eq!(instr.arg("plural"), Some(&ArgValue::BoolLiteral(true)));
        assert_eq!(instr.arg("flag"), Some(&ArgValue::BoolLiteral(false)));
        assert_eq!(
            instr.arg("q"),
            Some(&ArgValue::StringLiteral("it's".into()))
        );
    }

    #[test]
    fn commas_and_parens_inside_strings() {
        let instr = parse_step("A=EVAL(expr=\"({X} == 'a,b') and True\")", 0).unwrap();
        assert_eq!(
            instr.arg("expr").unwrap().as_str(),
            Some("({X} == 'a,b') and True")
        );
    }

    #[test]
    fn script_positions_and_comments() {
        let text =
            "# plan\nBOX0=LOC(image=IMAGE,object='grass')\n\nFINAL_ANSWER=RESULT(var=BOX0)\r\n";
        let script = parse_script(text).unwrap();
        assert_eq!(script.len(), 2);
        assert_eq!(script.instructions[0].line_index, 1);
        assert_eq!(script.instructions[1].line_index, 3);

        let err = parse_script("A=VQA(image=IMAGE,question='q')\nbroken line\n").unwrap_err();
        assert_eq!(err.line_index, 1);
        assert!(parse_script("").unwrap().is_empty());
    }

    #[test]
    fn renders_plural_flag() {
        let instr = Instruction::new("BOX0", "LOC")
            .with_arg("image", ArgValue::VarRef("IMAGE".into()))
            .with_arg("object", ArgValue::StringLiteral("person".into()))
            .with_arg("plural", ArgValue::BoolLiteral(true));
        assert_eq!(
            instr.to_string(),
            "BOX0=LOC(image=IMAGE,object='person',plural=True)"
        );
        assert_eq!(render_script(&Script::from_instructions(vec![])), "");
    }

    #[test]
    fn canonical_text_is_byte_stable() {
        let text = "BOX0=LOC(image=IMAGE,object='grass')\nANSWER1=EVAL(expr=\"{ANSWER0} == 'yes'\")\nFINAL_ANSWER=RESULT(var=ANSWER1)";
        assert_eq!(render_script(&parse_script(text).unwrap()), text);
    }
}
