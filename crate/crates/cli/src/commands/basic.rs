//! `align`, `exec` and `verify`.

use std::io::Write;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use edittraj_core::edit::MismatchWarning;
use edittraj_core::{
    check_completion, detokenize, execute_with, levenshtein_distance, parse_script, render_script,
    shortest_edit_script, tokenize, EditScript, ExecMode,
};
use serde::Serialize;

use super::pick_format;
use crate::io::{open_output, read_to_string, write_json};
use crate::{Alphabet, Format, Global};

#[derive(Debug, Args, Serialize)]
pub struct AlignArgs {
    #[arg(long, value_enum, default_value = "protein")]
    pub alphabet: Alphabet,
    pub src: String,
    pub tgt: String,
}

#[derive(Serialize)]
struct AlignOut {
    src: String,
    tgt: String,
    distance: usize,
    script: EditScript,
    script_text: String,
}

pub fn align(g: &Global, a: &AlignArgs) -> Result<()> {
    let fmt = pick_format(g.format, Format::Text, &[Format::Text, Format::Json], "align")?;
    let src = tokenize(a.alphabet.into(), &a.src).context("source")?;
    let tgt = tokenize(a.alphabet.into(), &a.tgt).context("target")?;
    let script = shortest_edit_script(&src, &tgt)?;
    let distance = levenshtein_distance(&src.tokens, &tgt.tokens);
    let mut out = open_output(None)?;
    match fmt {
        Format::Json => write_json(
            &mut out,
            &AlignOut { src: a.src.clone(), tgt: a.tgt.clone(), distance, script_text: render_script(&script), script },
        )?,
        _ => {
            for op in &script.ops {
                writeln!(out, "{op}")?;
            }
            writeln!(out, "distance: {distance}")?;
            out.flush()?;
        }
    }
    Ok(())
}

#[derive(Debug, Args, Serialize)]
pub struct ExecArgs {
    #[arg(long, value_enum, default_value = "protein")]
    pub alphabet: Alphabet,
    /// Sequence the script runs on.
    pub src: String,
    /// Script file, one op per line (`-` for stdin).
    pub script: PathBuf,
    /// Record expected-token mismatches instead of failing on them.
    #[arg(long)]
    pub lenient: bool,
    /// Also print every intermediate sequence.
    #[arg(long)]
    pub trace: bool,
}

#[derive(Serialize)]
struct Warning {
    step: usize,
    position: usize,
    expected: String,
    found: String,
}

impl From<&MismatchWarning> for Warning {
    fn from(w: &MismatchWarning) -> Self {
        Warning { step: w.step, position: w.position, expected: w.expected.clone(), found: w.found.clone() }
    }
}

#[derive(Serialize)]
struct ExecOut {
    output: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    trace: Option<Vec<String>>,
    warnings: Vec<Warning>,
}

pub fn exec(g: &Global, a: &ExecArgs) -> Result<()> {
    let fmt = pick_format(g.format, Format::Text, &[Format::Text, Format::Json], "exec")?;
    let kind = a.alphabet.into();
    let src = tokenize(kind, &a.src).context("source")?;
    let text = read_to_string(&a.script)?;
    let script = parse_script(&text, kind).with_context(|| format!("parsing {}", a.script.display()))?;
    let mode = if a.lenient { ExecMode::Lenient } else { ExecMode::Strict };
    let run = execute_with(&src, &script, mode, a.trace)?;
    let report = ExecOut {
        output: detokenize(&run.output),
        trace: run.trace.map(|t| t.iter().map(detokenize).collect()),
        warnings: run.warnings.iter().map(Warning::from).collect(),
    };
    for w in &report.warnings {
        eprintln!(
            "edittraj: warning: step {}: expected {:?} at position {}, found {:?}",
            w.step, w.expected, w.position, w.found
        );
    }
    let mut out = open_output(None)?;
    match fmt {
        Format::Json => write_json(&mut out, &report)?,
        _ => {
            if let Some(tr) = &report.trace {
                for (i, s) in tr.iter().enumerate() {
                    writeln!(out, "x{i}\t{s}")?;
                }
            } else {
                writeln!(out, "{}", report.output)?;
            }
            out.flush()?;
        }
    }
    Ok(())
}

#[derive(Debug, Args, Serialize)]
pub struct VerifyArgs {
    #[arg(long, value_enum, default_value = "protein")]
    pub alphabet: Alphabet,
    pub src: String,
    /// Completion file `<think>…</think>` followed by the output (`-` for stdin).
    pub completion: PathBuf,
}

pub fn verify(g: &Global, a: &VerifyArgs) -> Result<()> {
    let fmt = pick_format(g.format, Format::Json, &[Format::Text, Format::Json], "verify")?;
    let kind = a.alphabet.into();
    let src = tokenize(kind, &a.src).context("source")?;
    let text = read_to_string(&a.completion)?;
    let (report, _) = check_completion(&src, &text, kind);
    let mut out = open_output(None)?;
    match fmt {
        Format::Text => {
            if report.consistent() {
                writeln!(out, "consistent")?;
            } else {
                let f = report.first_failure.as_ref();
                let step = f.and_then(|f| f.step).map(|s| format!(" at step {s}")).unwrap_or_default();
                writeln!(out, "inconsistent{step}: {}", f.map(|f| f.reason.as_str()).unwrap_or("unknown"))?;
            }
            out.flush()?;
        }
        _ => write_json(&mut out, &report)?,
    }
    Ok(())
}
