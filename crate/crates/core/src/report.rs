//! Trace files and their text/HTML renderings.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::executor::{ExecStatus, TraceEvent};
use crate::pipeline::{PipelineOutput, StageTimings};
use crate::ssparser::RepairReport;
use crate::task::TaskKind;
use crate::verifier::CaptionVerdict;

pub const TRACE_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("trace is not valid JSON: {0}")]
    Parse(String),
    #[error("trace schema version {found} is not supported (expected {TRACE_SCHEMA_VERSION})")]
    Schema { found: u32 },
}

/// Everything `run --trace` writes about one query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceFile {
    pub schema_version: u32,
    #[serde(default)]
    pub question: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<TaskKind>,
    #[serde(default)]
    pub answer: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub repair: Option<RepairReport>,
    #[serde(default)]
    pub script: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub status: Option<ExecStatus>,
    #[serde(default)]
    pub steps: Vec<TraceEvent>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verification: Option<CaptionVerdict>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timings: Option<StageTimings>,
}

impl TraceFile {
    pub fn from_output(question: &str, task: TaskKind, out: &PipelineOutput) -> Self {
        Self {
            schema_version: TRACE_SCHEMA_VERSION,
            question: question.to_string(),
            task: Some(task),
            answer: out.answer.clone(),
            repair: out.repair.clone(),
            script: out.script.clone(),
            status: Some(out.execution.status),
            steps: out.execution.trace.clone(),
            verification: out.verification.clone(),
            timings: Some(out.timings),
        }
    }

    /// Parses a trace file. Blank input is an empty trace.
    pub fn parse(text: &str) -> Result<Option<Self>, ReportError> {
        if text.trim().is_empty() {
            return Ok(None);
        }
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| ReportError::Parse(e.to_string()))?;
        let found = value
            .get("schema_version")
            .and_then(serde_json::Value::as_u64);
        if found != Some(TRACE_SCHEMA_VERSION as u64) {
            return Err(ReportError::Schema {
                found: found.unwrap_or(0) as u32,
            });
        }
        serde_json::from_value(value)
            .map(Some)
            .map_err(|e| ReportError::Parse(e.to_string()))
    }

    fn is_empty(&self) -> bool {
        self.steps.is_empty() && self.repair.as_ref().is_none_or(|r| r.repairs.is_empty())
    }
}

pub fn render_text(trace: &TraceFile) -> String {
    if trace.is_empty() {
        return String::new();
    }
    let mut out = String::new();
    if !trace.question.is_empty() {
        let _ = writeln!(out, "question: {}", trace.question);
    }
    let _ = writeln!(out, "answer: {}", trace.answer);
    if let Some(status) = trace.status {
        let _ = writeln!(
            out,
            "status: {}",
            serde_json::to_value(status)
                .unwrap_or_default()
                .as_str()
                .unwrap_or("")
        );
    }
    if let Some(repair) = trace.repair.as_ref().filter(|r| !r.repairs.is_empty()) {
        let _ = writeln!(out, "\nrepairs ({}):", verdict_name(repair));
        for r in &repair.repairs {
            let _ = writeln!(out, "  line {}  {}", r.line_index, r.rule_id);
            if !r.before.is_empty() {
                let _ = writeln!(out, "    - {}", r.before);
            }
            for line in r.after.lines() {
                let _ = writeln!(out, "    + {line}");
            }
        }
    }
    if !trace.steps.is_empty() {
        let _ = writeln!(out, "\nsteps:");
    }
    for step in &trace.steps {
        let retry = if step.attempt > 0 { "  [fallback]" } else { "" };
        let _ = writeln!(
            out,
            "  #{} {} -> {}{}",
            step.line_index, step.module_name, step.output_var, retry
        );
        for input in &step.inputs {
            match &input.var {
                Some(var) => {
                    let _ = writeln!(out, "      {} = {}: {}", input.key, var, input.value);
                }
                None => {
                    let _ = writeln!(out, "      {} = {}", input.key, input.value);
                }
            }
        }
        match &step.error {
            Some(err) => {
                let _ = writeln!(out, "      error: {err}");
            }
            None => {
                let _ = writeln!(out, "      => {}", step.output);
            }
        }
        if !step.votes.is_empty() {
            let _ = writeln!(out, "      votes:");
            for vote in &step.votes {
                let _ = writeln!(out, "        {}: {}", vote.backend, vote.output);
            }
        }
    }
    if let Some(v) = &trace.verification {
        let _ = writeln!(out, "\nverification:");
        let _ = writeln!(out, "  caption: {}", v.caption);
        let _ = writeln!(
            out,
            "  clues: {}  caption answer: {}  final: {}  overwritten: {}  confidence: {}",
            if v.has_clues { "yes" } else { "no" },
            v.caption_answer.as_deref().unwrap_or("-"),
            v.final_answer,
            v.overwritten,
            serde_json::to_value(v.confidence)
                .unwrap_or_default()
                .as_str()
                .unwrap_or("")
        );
    }
    out
}

fn verdict_name(repair: &RepairReport) -> String {
    serde_json::to_value(repair.verdict)
        .ok()
        .and_then(|v| v.as_str().map(String::from))
        .unwrap_or_default()
}

fn esc(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            c => out.push(c),
        }
    }
    out
}

const STYLE: &str = "body{font-family:sans-serif;margin:2em}table{border-collapse:collapse}\
td,th{border:1px solid #ccc;padding:4px 8px;vertical-align:top;text-align:left}\
pre{margin:0}del{background:#fdd}ins{background:#dfd;text-decoration:none}.err{color:#b00}";

pub fn render_html(trace: &TraceFile) -> String {
    if trace.is_empty() {
        return String::new();
    }
    let mut out = String::new();
    let _ = write!(
        out,
        "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>Execution trace</title><style>{STYLE}</style></head><body>\n"
    );
    if !trace.question.is_empty() {
        let _ = writeln!(out, "<h1>{}</h1>", esc(&trace.question));
    }
    let _ = writeln!(
        out,
        "<p>Answer: <strong>{}</strong></p>",
        esc(&trace.answer)
    );
    if let Some(repair) = trace.repair.as_ref().filter(|r| !r.repairs.is_empty()) {
        let _ = writeln!(
            out,
            "<h2>Repairs ({})</h2>\n<table><tr><th>line</th><th>rule</th><th>change</th></tr>",
            esc(&verdict_name(repair))
        );
        for r in &repair.repairs {
            let before = if r.before.is_empty() {
                String::new()
            } else {
                format!("<del>{}</del><br>", esc(&r.before))
            };
            let _ = writeln!(
                out,
                "<tr><td>{}</td><td>{}</td><td><pre>{}<ins>{}</ins></pre></td></tr>",
                r.line_index,
                esc(&r.rule_id),
                before,
                esc(&r.after)
            );
        }
        out.push_str("</table>\n");
    }
    if !trace.steps.is_empty() {
        out.push_str("<h2>Steps</h2>\n<table><tr><th>line</th><th>module</th><th>inputs</th><th>output</th></tr>\n");
        for step in &trace.steps {
            let inputs: Vec<String> = step
                .inputs
                .iter()
                .map(|i| match &i.var {
                    Some(var) => format!("{} = {}: {}", esc(&i.key), esc(var), esc(&i.value)),
                    None => format!("{} = {}", esc(&i.key), esc(&i.value)),
                })
                .collect();
            let mut output = match &step.error {
                Some(err) => format!("<span class=\"err\">{}</span>", esc(err)),
                None => format!("{} = {}", esc(&step.output_var), esc(&step.output)),
            };
            if !step.votes.is_empty() {
                let _ = write!(
                    output,
                    "<details><summary>{} votes</summary><ul>",
                    step.votes.len()
                );
                for v in &step.votes {
                    let _ = write!(output, "<li>{}: {}</li>", esc(&v.backend), esc(&v.output));
                }
                output.push_str("</ul></details>");
            }
            let _ = writeln!(
                out,
                "<tr><td>{}</td><td>{}</td><td>{}</td><td>{}</td></tr>",
                step.line_index,
                esc(&step.module_name),
                inputs.join("<br>"),
                output
            );
        }
        out.push_str("</table>\n");
    }
    if let Some(v) = &trace.verification {
        let _ = writeln!(
            out,
            "<h2>Verification</h2>\n<p>Caption: {}</p>\n<p>Final: {} (overwritten: {})</p>",
            esc(&v.caption),
            esc(&v.final_answer),
            v.overwritten
        );
    }
    out.push_str("</body></html>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blank_and_empty_traces_render_nothing() {
        assert!(TraceFile::parse("  \n").unwrap().is_none());
        let t = TraceFile::parse(r#"{"schema_version":1,"steps":[]}"#)
            .unwrap()
            .unwrap();
        assert_eq!(render_text(&t), "");
        assert_eq!(render_html(&t), "");
    }

    #[test]
    fn schema_checks() {
        assert!(matches!(
            TraceFile::parse(r#"{"steps":[]}"#),
            Err(ReportError::Schema { found: 0 })
        ));
        assert!(matches!(
            TraceFile::parse(r#"{"schema_version":9}"#),
            Err(ReportError::Schema { found: 9 })
        ));
        assert!(matches!(TraceFile::parse("{"), Err(ReportError::Parse(_))));
    }

    #[test]
    fn html_escapes() {
        assert_eq!(
            esc("<a href='x'>&</a>"),
            "&lt;a href=&#39;x&#39;&gt;&amp;&lt;/a&gt;"
        );
    }
}
