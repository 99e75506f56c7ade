//! Post-execution answer checks.
//!
//! For image questions the answer is compared with what an image caption
//! implies: an LLM is asked, in one prompt, whether the caption holds clues,
//! which answer is best, and what the final answer is. For multiple-choice
//! video questions two choice distributions are fused with [`select_fuse`].

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{normalize_answer, Gateway, GatewayError};
use crate::value::ImageRef;

const VERIFIER_PROMPT: &str = include_str!("../assets/verifier_prompt.txt");
const CHOICE_PROMPT: &str = include_str!("../assets/choice_prompt.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Confidence {
    High,
    Normal,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionVerdict {
    pub caption: String,
    pub has_clues: bool,
    pub caption_answer: Option<String>,
    pub executor_answer: String,
    pub final_answer: String,
    pub confidence: Confidence,
    /// The caption-derived answer replaced the executor's.
    pub overwritten: bool,
    /// Why the check was skipped, when a backend failed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub degraded: Option<String>,
}

impl CaptionVerdict {
    /// Verdict that keeps the executor answer unchanged.
    pub fn pass_through(
        caption: impl Into<String>,
        executor_answer: &str,
        reason: Option<String>,
    ) -> Self {
        Self {
            caption: caption.into(),
            has_clues: false,
            caption_answer: None,
            executor_answer: executor_answer.to_string(),
            final_answer: executor_answer.to_string(),
            confidence: Confidence::Normal,
            overwritten: false,
            degraded: reason,
        }
    }
}

/// What could be read out of the LLM's reply.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedVerdict {
    pub has_clues: bool,
    pub caption_answer: Option<String>,
    pub final_answer: Option<String>,
}

fn numbered_line() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?i)^\s*\(?(?:q\s*)?(iii|ii|i|[123])\s*[.):]\s*(.*)$").expect("valid regex")
    })
}

fn yes_no() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)\b(yes|no)\b").expect("valid regex"))
}

fn quoted() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r#""([^"]+)"|“([^”]+)”|'([^']+)'"#).expect("valid regex"))
}

fn answer_prefix() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?i)^(?:the\s+)?(?:final\s+)?answer(?:\s+is)?\s*[:\-]?\s*")
            .expect("valid regex")
    })
}

fn quoted_answer(text: &str) -> Option<String> {
    let caps = quoted().captures(text)?;
    let inner = caps.get(1).or(caps.get(2)).or(caps.get(3))?.as_str();
    let answer = normalize_answer(inner);
    (!answer.is_empty()).then_some(answer)
}

/// A short answer from a line: quoted text wins; otherwise the line minus an
/// "the answer is" style prefix, if at most four words remain.
fn short_answer(text: &str) -> Option<String> {
    if let Some(q) = quoted_answer(text) {
        return Some(q);
    }
    let rest = answer_prefix().replace(text.trim(), "");
    let rest = rest.trim().trim_end_matches(['.', '!']).trim();
    if rest.is_empty() || rest.split_whitespace().count() > 4 {
        return None;
    }
    Some(normalize_answer(rest))
}

/// Tolerant parse of the verifier reply. Numbered replies map lines 1-3 to
/// the three questions; unnumbered replies of two or more lines use the
/// first yes/no token for the clue question and the last line for the final
/// answer. Anything else reads as "no clues".
pub fn parse_llm_verdict(raw: &str) -> ParsedVerdict {
    let lines: Vec<&str> = raw
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .collect();
    let mut numbered: [Option<&str>; 3] = [None; 3];
    for line in &lines {
        if let Some(caps) = numbered_line().captures(line) {
            let slot = match caps[1].to_ascii_lowercase().as_str() {
                "1" | "i" => 0,
                "2" | "ii" => 1,
                _ => 2,
            };
            if numbered[slot].is_none() {
                numbered[slot] = Some(caps.get(2).map_or("", |m| m.as_str()));
            }
        }
    }
    let first_yes_no = |text: &str| {
        yes_no()
            .captures(text)
            .map(|c| c[1].eq_ignore_ascii_case("yes"))
    };

    let (clue_line, best_line, final_line) = if numbered.iter().any(Option::is_some) {
        (numbered[0], numbered[1], numbered[2])
    } else if lines.len() >= 2 {
        (Some(lines[0]), None, lines.last().copied())
    } else {
        (None, None, None)
    };
    let has_clues = clue_line.and_then(first_yes_no).unwrap_or(false);
    let final_answer = final_line.and_then(short_answer);
    let caption_answer = if has_clues {
        best_line
            .and_then(quoted_answer)
            .or_else(|| final_answer.clone())
    } else {
        None
    };
    ParsedVerdict {
        has_clues,
        caption_answer,
        final_answer,
    }
}

/// Applies the overwrite rule to a parsed reply.
pub fn decide(caption: &str, parsed: &ParsedVerdict, executor_answer: &str) -> CaptionVerdict {
    let caption_answer = match (&parsed.caption_answer, parsed.has_clues) {
        (Some(answer), true) => answer.clone(),
        _ => return CaptionVerdict::pass_through(caption, executor_answer, None),
    };
    let agree = normalize_answer(executor_answer) == caption_answer;
    let verdict = CaptionVerdict {
        caption: caption.to_string(),
        has_clues: true,
        caption_answer: Some(caption_answer.clone()),
        executor_answer: executor_answer.to_string(),
        final_answer: if agree {
            executor_answer.to_string()
        } else {
            caption_answer
        },
        confidence: if agree {
            Confidence::High
        } else {
            Confidence::Normal
        },
        overwritten: !agree,
        degraded: None,
    };
    debug_assert!(verdict.has_clues || verdict.final_answer == executor_answer);
    verdict
}

pub fn verifier_prompt(caption: &str, question: &str, executor_answer: &str) -> String {
    VERIFIER_PROMPT
        .trim_end()
        .replace("{caption}", caption.trim())
        .replace("{question}", question.trim())
        .replace("{answer}", executor_answer.trim())
}

/// First half of the check; independent of the executor answer, so it can
/// run alongside planning and execution.
pub fn caption_stage(image: &ImageRef, gateway: &Gateway) -> Result<String, GatewayError> {
    gateway.caption(image)
}

/// Second half: one LLM call comparing the caption with the answer.
pub fn judge(
    caption: &str,
    question: &str,
    executor_answer: &str,
    gateway: &Gateway,
) -> Result<CaptionVerdict, GatewayError> {
    let raw = gateway.complete(&verifier_prompt(caption, question, executor_answer))?;
    Ok(decide(caption, &parse_llm_verdict(&raw), executor_answer))
}

/// Full caption check. Backend failures keep the executor answer.
pub fn verify_with_caption(
    image: &ImageRef,
    question: &str,
    executor_answer: &str,
    gateway: &Gateway,
) -> CaptionVerdict {
    let caption = match caption_stage(image, gateway) {
        Ok(c) => c,
        Err(err) => {
            return CaptionVerdict::pass_through("", executor_answer, Some(err.to_string()))
        }
    };
    judge(&caption, question, executor_answer, gateway).unwrap_or_else(|err| {
        CaptionVerdict::pass_through(caption, executor_answer, Some(err.to_string()))
    })
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FuseError {
    #[error("distributions differ in length: {vqa} vs {caption}")]
    LengthMismatch { vqa: usize, caption: usize },
    #[error("distribution is empty")]
    Empty,
    #[error("probability {0} is not a finite value in [0, 1]")]
    BadProbability(f64),
}

/// Probability per answer choice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerDistribution {
    probs: Vec<f64>,
}

impl AnswerDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self, FuseError> {
        if let Some(bad) = probs
            .iter()
            .find(|p| !p.is_finite() || !(0.0..=1.0).contains(*p))
        {
            return Err(FuseError::BadProbability(*bad));
        }
        Ok(Self { probs })
    }

    /// Scales non-negative scores to sum to one; all-zero scores become
    /// uniform.
    pub fn from_scores(scores: &[f64]) -> Result<Self, FuseError> {
        if scores.is_empty() {
            return Err(FuseError::Empty);
        }
        if let Some(bad) = scores.iter().find(|s| !s.is_finite() || **s < 0.0) {
            return Err(FuseError::BadProbability(*bad));
        }
        let total: f64 = scores.iter().sum();
        let probs = if total > 0.0 {
            scores.iter().map(|s| s / total).collect()
        } else {
            vec![1.0 / scores.len() as f64; scores.len()]
        };
        Self::new(probs)
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Index and value of the maximum; the lowest index wins ties.
    pub fn argmax(&self) -> Option<(usize, f64)> {
        self.probs
            .iter()
            .copied()
            .enumerate()
            .fold(None, |best, (i, p)| match best {
                Some((_, bp)) if bp >= p => best,
                _ => Some((i, p)),
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Selection {
    pub chosen_index: usize,
    pub overwritten: bool,
}

/// The caption branch overrides the VQA branch only when its top probability
/// is strictly larger.
pub fn select_fuse(
    vqa: &AnswerDistribution,
    caption: &AnswerDistribution,
) -> Result<Selection, FuseError> {
    if vqa.len() != caption.len() {
        return Err(FuseError::LengthMismatch {
            vqa: vqa.len(),
            caption: caption.len(),
        });
    }
    let (p_idx, p_max) = vqa.argmax().ok_or(FuseError::Empty)?;
    let (q_idx, q_max) = caption.argmax().ok_or(FuseError::Empty)?;
    Ok(if q_max > p_max {
        Selection {
            chosen_index: q_idx,
            overwritten: true,
        }
    } else {
        Selection {
            chosen_index: p_idx,
            overwritten: false,
        }
    })
}

pub fn choice_prompt(context: &str, question: &str, choices: &[String]) -> String {
    let listed: Vec<String> = choices
        .iter()
        .enumerate()
        .map(|(i, c)| format!("{i}. {c}"))
        .collect();
    CHOICE_PROMPT
        .trim_end()
        .replace("{context}", context.trim())
        .replace("{question}", question.trim())
        .replace("{choices}", &listed.join("\n"))
}

/// Reads `<index>: <score>` lines; choices without a line score zero.
pub fn parse_choice_scores(raw: &str, n: usize) -> Vec<f64> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE
        .get_or_init(|| Regex::new(r"^\s*(\d+)\s*[:.)\-]\s*(\d+(?:\.\d+)?)").expect("valid regex"));
    let mut scores = vec![0.0; n];
    for line in raw.lines() {
        if let Some(caps) = re.captures(line) {
            if let (Ok(i), Ok(s)) = (caps[1].parse::<usize>(), caps[2].parse::<f64>()) {
                if i < n {
                    scores[i] = s.min(100.0);
                }
            }
        }
    }
    scores
}

/// Asks the LLM to rate every choice given `context` and normalizes the
/// ratings into a distribution.
pub fn score_choices(
    gateway: &Gateway,
    context: &str,
    question: &str,
    choices: &[String],
) -> Result<AnswerDistribution, GatewayError> {
    let raw = gateway.complete(&choice_prompt(context, question, choices))?;
    AnswerDistribution::from_scores(&parse_choice_scores(&raw, choices.len())).map_err(|e| {
        GatewayError::InvalidResponse {
            backend: "llm".to_string(),
            reason: e.to_string(),
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parsed(has_clues: bool, caption: Option<&str>, fin: Option<&str>) -> ParsedVerdict {
        ParsedVerdict {
            has_clues,
            caption_answer: caption.map(String::from),
            final_answer: fin.map(String::from),
        }
    }

    #[test]
    fn reply_parsing() {
        // (reply, expected) pairs written by hand
        let cases: Vec<(&str, ParsedVerdict)> = vec![
            ("1. Yes, the caption mentions a boy and a girl.\n2. The caption answer \"no\" is best.\n3. The answer is no", parsed(true, Some("no"), Some("no"))),
            ("1. Yes\n3. The answer is no", parsed(true, Some("no"), Some("no"))),
            ("1. No, the caption says nothing about colour.\n2. The program's answer.\n3. red", parsed(false, None, Some("red"))),
            ("3. The answer is no", parsed(false, None, Some("no"))),
            ("lorem ipsum dolor", parsed(false, None, None)),
            ("", parsed(false, None, None)),
            ("(i) yes\n(ii) 'two'\n(iii) two", parsed(true, Some("two"), Some("two"))),
            ("Yes, the caption mentions two dogs.\nFinal answer: 2.", parsed(true, Some("2"), Some("2"))),
            ("yes", parsed(false, None, None)),
            ("1) YES\n2) \"Wooden\" is best\n3) The final answer is: wood", parsed(true, Some("wooden"), Some("wood"))),
        ];
        for (raw, want) in cases {
            assert_eq!(parse_llm_verdict(raw), want, "{raw:?}");
        }
    }

    #[test]
    fn overwrite_rules() {
        let caption = "A boy and a girl are playing with a ball.";
        let clues = parsed(true, Some("no"), Some("no"));
        let v = decide(caption, &clues, "yes");
        assert_eq!(
            (v.final_answer.as_str(), v.overwritten, v.confidence),
            ("no", true, Confidence::Normal)
        );
        let v = decide(caption, &clues, "no");
        assert_eq!(
            (v.final_answer.as_str(), v.overwritten, v.confidence),
            ("no", false, Confidence::High)
        );
        let v = decide(caption, &parsed(false, None, Some("no")), "yes");
        assert_eq!(
            (v.final_answer.as_str(), v.overwritten, v.confidence),
            ("yes", false, Confidence::Normal)
        );
    }

    #[test]
    fn prompt_fills_template() {
        let p = verifier_prompt("a cat", "Is there a dog?", "yes");
        assert!(p.starts_with(
            "Image caption: a cat\nQuestion: Is there a dog?\nAnswer from the program: yes\n"
        ));
        assert!(!p.contains('{'));
    }

    #[test]
    fn fuse_examples() {
        let d = |v: &[f64]| AnswerDistribution::new(v.to_vec()).unwrap();
        assert_eq!(
            select_fuse(&d(&[0.2; 5]), &d(&[0.05, 0.9, 0.02, 0.02, 0.01])).unwrap(),
            Selection {
                chosen_index: 1,
                overwritten: true
            }
        );
        assert_eq!(
            select_fuse(
                &d(&[0.6, 0.1, 0.1, 0.1, 0.1]),
                &d(&[0.5, 0.2, 0.1, 0.1, 0.1])
            )
            .unwrap(),
            Selection {
                chosen_index: 0,
                overwritten: false
            }
        );
        assert_eq!(
            select_fuse(&d(&[0.1, 0.5, 0.4]), &d(&[0.5, 0.1, 0.4])).unwrap(),
            Selection {
                chosen_index: 1,
                overwritten: false
            }
        );
        assert!(matches!(
            select_fuse(&d(&[0.5, 0.5]), &d(&[1.0])),
            Err(FuseError::LengthMismatch { vqa: 2, caption: 1 })
        ));
        assert!(AnswerDistribution::new(vec![f64::NAN]).is_err());
    }

    #[test]
    fn choice_scores() {
        let raw = "0: 10\n1: 70\n2 - 20\nnote: ignore\n7: 99";
        assert_eq!(parse_choice_scores(raw, 3), vec![10.0, 70.0, 20.0]);
        let d = AnswerDistribution::from_scores(&[0.0, 0.0]).unwrap();
        assert_eq!(d.probs(), &[0.5, 0.5]);
        let p = choice_prompt("Caption: x", "Why?", &["a".into(), "b".into()]);
        assert!(p.contains("Choices:\n0. a\n1. b\n"));
    }
}
