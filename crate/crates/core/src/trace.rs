//! Completion text `<think>\n{script}\n</think>\n{output}` and the
//! parse-and-execute consistency check.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::edit::{execute, parse_script, render_script, EditScript, ScriptError};
use crate::seq::{detokenize, tokenize, AlphabetKind, SeqError, TokenSequence};

pub const THINK_OPEN: &str = "<think>";
pub const THINK_CLOSE: &str = "</think>";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceFlags {
    /// The completion had no `<think>` block at all.
    pub no_trace: bool,
    /// More think blocks followed the first; they were dropped from the output.
    pub extra_think_blocks: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trajectory {
    pub script: EditScript,
    pub output: TokenSequence,
    pub raw_text: Option<String>,
    pub flags: TraceFlags,
}

impl Trajectory {
    pub fn new(script: EditScript, output: TokenSequence) -> Self {
        Trajectory { script, output, raw_text: None, flags: TraceFlags::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TraceError {
    #[error("malformed trace: {0}")]
    MalformedTrace(String),
    #[error("trace script: {0}")]
    Script(#[from] ScriptError),
    #[error("output tokenization: {0}")]
    OutputTokenization(#[from] SeqError),
}

pub fn render_completion(script: &EditScript, output: &TokenSequence) -> String {
    let mut s = String::from(THINK_OPEN);
    s.push('\n');
    if !script.is_empty() {
        s.push_str(&render_script(script));
        s.push('\n');
    }
    s.push_str(THINK_CLOSE);
    s.push('\n');
    s.push_str(&detokenize(output));
    s
}

/// Removes every complete `<think>…</think>` block. Reports whether any was found.
fn strip_think_blocks(text: &str) -> (String, bool) {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    let mut found = false;
    while let Some(open) = rest.find(THINK_OPEN) {
        let after = &rest[open + THINK_OPEN.len()..];
        match after.find(THINK_CLOSE) {
            Some(close) => {
                found = true;
                out.push_str(&rest[..open]);
                rest = &after[close + THINK_CLOSE.len()..];
            }
            None => break,
        }
    }
    out.push_str(rest);
    (out, found)
}

/// Parses a model completion.
///
/// Text before the first `<think>` is ignored. The first think block is the
/// script; everything after its closing tag, with any further think blocks
/// removed and surrounding whitespace trimmed, is the output.
pub fn parse_completion(text: &str, kind: AlphabetKind) -> Result<Trajectory, TraceError> {
    let mut flags = TraceFlags::default();
    let (script, tail) = match text.find(THINK_OPEN) {
        None => {
            flags.no_trace = true;
            (EditScript::default(), text)
        }
        Some(open) => {
            let body_start = open + THINK_OPEN.len();
            let close = text[body_start..]
                .find(THINK_CLOSE)
                .ok_or_else(|| TraceError::MalformedTrace("unclosed <think> tag".to_string()))?;
            let body = &text[body_start..body_start + close];
            if body.contains(THINK_OPEN) {
                return Err(TraceError::MalformedTrace("nested <think> tag".to_string()));
            }
            let script = parse_script(body, kind)?;
            (script, &text[body_start + close + THINK_CLOSE.len()..])
        }
    };
    let (tail, extra) = strip_think_blocks(tail);
    flags.extra_think_blocks = extra;
    let output = tokenize(kind, tail.trim())?;
    Ok(Trajectory { script, output, raw_text: Some(text.to_string()), flags })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Failure {
    /// Failing script step, when the failure is tied to one.
    pub step: Option<usize>,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub parsable: bool,
    pub executable: bool,
    pub reproduces_output: bool,
    pub first_failure: Option<Failure>,
}

impl ConsistencyReport {
    pub fn consistent(&self) -> bool {
        self.parsable && self.executable && self.reproduces_output
    }

    fn unparsable(reason: String) -> Self {
        ConsistencyReport {
            parsable: false,
            executable: false,
            reproduces_output: false,
            first_failure: Some(Failure { step: None, reason }),
        }
    }
}

/// Strict-mode check that `traj.script` run on `src` yields `traj.output`.
///
/// A completion without a think block is reported as unparsable.
pub fn verify_consistency(src: &TokenSequence, traj: &Trajectory) -> ConsistencyReport {
    if traj.flags.no_trace {
        return ConsistencyReport::unparsable("completion has no <think> block".to_string());
    }
    if src.kind != traj.output.kind {
        return ConsistencyReport::unparsable(format!(
            "output alphabet {} does not match source alphabet {}",
            traj.output.kind, src.kind
        ));
    }
    match execute(src, &traj.script) {
        Err(e) => ConsistencyReport {
            parsable: true,
            executable: false,
            reproduces_output: false,
            first_failure: Some(Failure { step: Some(e.step), reason: e.source.to_string() }),
        },
        Ok(out) if out.tokens == traj.output.tokens => {
            ConsistencyReport { parsable: true, executable: true, reproduces_output: true, first_failure: None }
        }
        Ok(out) => ConsistencyReport {
            parsable: true,
            executable: true,
            reproduces_output: false,
            first_failure: Some(Failure {
                step: None,
                reason: format!(
                    "script yields {:?} but completion claims {:?}",
                    detokenize(&out),
                    detokenize(&traj.output)
                ),
            }),
        },
    }
}

/// Parse then verify. Total: every failure becomes a report state.
pub fn check_completion(
    src: &TokenSequence,
    text: &str,
    kind: AlphabetKind,
) -> (ConsistencyReport, Option<Trajectory>) {
    match parse_completion(text, kind) {
        Ok(traj) => (verify_consistency(src, &traj), Some(traj)),
        Err(e) => (ConsistencyReport::unparsable(e.to_string()), None),
    }
}
