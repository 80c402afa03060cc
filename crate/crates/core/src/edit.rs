//! Atomic edits, the line-oriented script grammar and the sequential executor.
//!
//! Grammar (one op per line, ASCII, single spaces shown but any run of
//! whitespace separates fields):
//!
//! ```text
//! INSERT <tok> at position <p>
//! DELETE <tok> at position <p>
//! DELETE at position <p>
//! REPLACE <old> with <new> at position <p>
//! ```
//!
//! Positions are 0-based token indices into the sequence *as it stands
//! before that line executes*. `INSERT` puts the token before `p`, so
//! `p = len` appends.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seq::{check_token, AlphabetKind, SeqError, TokenSequence};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum EditOp {
    Insert {
        position: usize,
        token: String,
    },
    /// `token` is the token expected at `position`; scripts may omit it.
    Delete {
        position: usize,
        token: Option<String>,
    },
    Replace {
        position: usize,
        old: String,
        new: String,
    },
}

impl EditOp {
    pub fn insert(position: usize, token: impl Into<String>) -> Self {
        EditOp::Insert { position, token: token.into() }
    }

    pub fn delete(position: usize, token: impl Into<String>) -> Self {
        EditOp::Delete { position, token: Some(token.into()) }
    }

    pub fn replace(position: usize, old: impl Into<String>, new: impl Into<String>) -> Self {
        EditOp::Replace { position, old: old.into(), new: new.into() }
    }

    pub fn position(&self) -> usize {
        match self {
            EditOp::Insert { position, .. } | EditOp::Delete { position, .. } | EditOp::Replace { position, .. } => {
                *position
            }
        }
    }

    pub fn is_insert(&self) -> bool {
        matches!(self, EditOp::Insert { .. })
    }

    pub fn is_delete(&self) -> bool {
        matches!(self, EditOp::Delete { .. })
    }

    fn tokens(&self) -> impl Iterator<Item = &str> {
        let (a, b) = match self {
            EditOp::Insert { token, .. } => (Some(token.as_str()), None),
            EditOp::Delete { token, .. } => (token.as_deref(), None),
            EditOp::Replace { old, new, .. } => (Some(old.as_str()), Some(new.as_str())),
        };
        a.into_iter().chain(b)
    }
}

impl fmt::Display for EditOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EditOp::Insert { position, token } => write!(f, "INSERT {token} at position {position}"),
            EditOp::Delete { position, token: Some(t) } => {
                write!(f, "DELETE {t} at position {position}")
            }
            EditOp::Delete { position, token: None } => write!(f, "DELETE at position {position}"),
            EditOp::Replace { position, old, new } => {
                write!(f, "REPLACE {old} with {new} at position {position}")
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EditScript {
    pub ops: Vec<EditOp>,
}

impl EditScript {
    pub fn new(ops: Vec<EditOp>) -> Self {
        EditScript { ops }
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn insertions(&self) -> usize {
        self.ops.iter().filter(|o| o.is_insert()).count()
    }

    pub fn deletions(&self) -> usize {
        self.ops.iter().filter(|o| o.is_delete()).count()
    }
}

impl fmt::Display for EditScript {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&render_script(self))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EditError {
    #[error("{op} is out of range for a sequence of length {len}")]
    PositionOutOfRange { op: EditOp, len: usize },
    #[error("token mismatch at position {position}: expected {expected:?}, found {found:?}")]
    TokenMismatch { position: usize, expected: String, found: String },
    #[error(transparent)]
    InvalidToken(#[from] SeqError),
}

/// An [`EditError`] tagged with the 0-based index of the failing op.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("step {step}: {source}")]
pub struct ExecError {
    pub step: usize,
    #[source]
    pub source: EditError,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExecMode {
    /// Expected-token mismatches are errors.
    #[default]
    Strict,
    /// Expected-token mismatches are recorded and the op is applied anyway.
    Lenient,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MismatchWarning {
    pub step: usize,
    pub position: usize,
    pub expected: String,
    pub found: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Execution {
    pub output: TokenSequence,
    /// Intermediate sequences `x_0 .. x_N` when requested.
    pub trace: Option<Vec<TokenSequence>>,
    pub warnings: Vec<MismatchWarning>,
}

fn check_expected(
    tokens: &[String],
    position: usize,
    expected: &str,
    mode: ExecMode,
) -> Result<Option<(String, String)>, EditError> {
    let found = &tokens[position];
    if found == expected {
        return Ok(None);
    }
    match mode {
        ExecMode::Strict => {
            Err(EditError::TokenMismatch { position, expected: expected.to_string(), found: found.clone() })
        }
        ExecMode::Lenient => Ok(Some((expected.to_string(), found.clone()))),
    }
}

/// Applies one op in place. Returns `(expected, found)` when lenient mode let a mismatch through.
pub(crate) fn apply_in_place(
    kind: AlphabetKind,
    tokens: &mut Vec<String>,
    op: &EditOp,
    mode: ExecMode,
) -> Result<Option<(String, String)>, EditError> {
    for t in op.tokens() {
        check_token(kind, t)?;
    }
    let len = tokens.len();
    let out_of_range = || EditError::PositionOutOfRange { op: op.clone(), len };
    match op {
        EditOp::Insert { position, token } => {
            if *position > len {
                return Err(out_of_range());
            }
            tokens.insert(*position, token.clone());
            Ok(None)
        }
        EditOp::Delete { position, token } => {
            if *position >= len {
                return Err(out_of_range());
            }
            let warn = match token {
                Some(t) => check_expected(tokens, *position, t, mode)?,
                None => None,
            };
            tokens.remove(*position);
            Ok(warn)
        }
        EditOp::Replace { position, old, new } => {
            if *position >= len {
                return Err(out_of_range());
            }
            let warn = check_expected(tokens, *position, old, mode)?;
            tokens[*position] = new.clone();
            Ok(warn)
        }
    }
}

/// Applies a single op in strict mode.
pub fn apply_op(seq: &TokenSequence, op: &EditOp) -> Result<TokenSequence, EditError> {
    let mut tokens = seq.tokens.clone();
    apply_in_place(seq.kind, &mut tokens, op, ExecMode::Strict)?;
    Ok(TokenSequence::new(seq.kind, tokens))
}

/// Folds the script over `src` in strict mode.
pub fn execute(src: &TokenSequence, script: &EditScript) -> Result<TokenSequence, ExecError> {
    execute_with(src, script, ExecMode::Strict, false).map(|e| e.output)
}

pub fn execute_with(
    src: &TokenSequence,
    script: &EditScript,
    mode: ExecMode,
    keep_trace: bool,
) -> Result<Execution, ExecError> {
    let mut tokens = src.tokens.clone();
    let mut trace = keep_trace.then(|| vec![src.clone()]);
    let mut warnings = Vec::new();
    for (step, op) in script.ops.iter().enumerate() {
        let warn = apply_in_place(src.kind, &mut tokens, op, mode).map_err(|source| ExecError { step, source })?;
        if let Some((expected, found)) = warn {
            warnings.push(MismatchWarning { step, position: op.position(), expected, found });
        }
        if let Some(tr) = trace.as_mut() {
            tr.push(TokenSequence::new(src.kind, tokens.clone()));
        }
    }
    Ok(Execution { output: TokenSequence::new(src.kind, tokens), trace, warnings })
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScriptError {
    #[error("line {line}: {reason}")]
    Syntax { line: usize, reason: String },
}

impl ScriptError {
    pub fn line(&self) -> usize {
        match self {
            ScriptError::Syntax { line, .. } => *line,
        }
    }
}

fn parse_position(field: &str) -> Result<usize, String> {
    if field.is_empty() || !field.bytes().all(|b| b.is_ascii_digit()) {
        return Err(format!("position {field:?} is not a non-negative integer"));
    }
    if field.len() > 1 && field.starts_with('0') {
        return Err(format!("position {field:?} has a leading zero"));
    }
    field.parse().map_err(|_| format!("position {field:?} is too large"))
}

fn expect_tail(fields: &[&str]) -> Result<usize, String> {
    match fields {
        ["at", "position", p] => parse_position(p),
        _ => Err("expected `at position <p>`".to_string()),
    }
}

fn parse_line(fields: &[&str], kind: AlphabetKind) -> Result<EditOp, String> {
    let check = |t: &str| check_token(kind, t).map_err(|e| e.to_string());
    let op = match fields {
        ["INSERT", tok, rest @ ..] if *tok != "at" => {
            check(tok)?;
            EditOp::Insert { position: expect_tail(rest)?, token: tok.to_string() }
        }
        ["DELETE", "at", "position", p] => EditOp::Delete { position: parse_position(p)?, token: None },
        ["DELETE", tok, rest @ ..] => {
            check(tok)?;
            EditOp::Delete { position: expect_tail(rest)?, token: Some(tok.to_string()) }
        }
        ["REPLACE", old, "with", new, rest @ ..] => {
            check(old)?;
            check(new)?;
            EditOp::Replace { position: expect_tail(rest)?, old: old.to_string(), new: new.to_string() }
        }
        ["REPLACE", ..] => return Err("expected `REPLACE <old> with <new> at position <p>`".into()),
        [kw, ..] if matches!(*kw, "INSERT" | "DELETE") => {
            return Err(format!("malformed {kw} line"));
        }
        [kw, ..] => return Err(format!("unknown operation {kw:?}")),
        [] => unreachable!("blank lines are skipped"),
    };
    Ok(op)
}

/// Parses one op per non-blank line. Line numbers in errors are 1-based.
pub fn parse_script(text: &str, kind: AlphabetKind) -> Result<EditScript, ScriptError> {
    let mut ops = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        let op = parse_line(&fields, kind).map_err(|reason| ScriptError::Syntax { line: idx + 1, reason })?;
        ops.push(op);
    }
    Ok(EditScript { ops })
}

/// Canonical text: one op per line, `\n` separated, no trailing newline.
pub fn render_script(script: &EditScript) -> String {
    let lines: Vec<String> = script.ops.iter().map(|op| op.to_string()).collect();
    lines.join("\n")
}
