//! `editflow` and `oracle-serve`.

use std::io::{self, BufReader};
use std::net::TcpListener;
use std::path::PathBuf;
use std::sync::Arc;
use std::thread;

use anyhow::{Context, Result};
use clap::Args;
use edittraj_core::dataset::rng_for;
use edittraj_core::flow::{heads_from_oracle, simulate_budgeted, SamplerConfig, SamplerRun, ToyHead};
use edittraj_core::oracle::{serve as serve_lines, ToyOracle};
use edittraj_core::{detokenize, render_script, tokenize};
use rayon::prelude::*;
use serde::Serialize;

use super::pick_format;
use crate::io::{open_output, write_lines};
use crate::oracle::{open_endpoint, Endpoint};
use crate::{input_err, Alphabet, Format, Global};

#[derive(Debug, Args, Serialize)]
pub struct EditflowArgs {
    #[arg(long, value_enum, default_value = "protein")]
    pub alphabet: Alphabet,
    /// Starting sequence.
    pub seq: String,
    /// Rate heads: toy:zero, toy:sub0, toy:uniform:<r>[,<d>,<s>], stdio:<cmd> or tcp:<addr>.
    #[arg(long, default_value = "toy:zero")]
    pub head: String,
    #[arg(long, default_value_t = 10)]
    pub steps: usize,
    /// Maximum number of sampled edits.
    #[arg(long, default_value_t = 5)]
    pub budget: usize,
    /// Length cap; the starting length plus the budget by default.
    #[arg(long)]
    pub cap: Option<usize>,
    /// Independent runs; run `r` draws from stream `r` of the seed.
    #[arg(long, default_value_t = 1)]
    pub runs: usize,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Serialize)]
struct RunRow {
    run: usize,
    src: String,
    #[serde(rename = "final")]
    final_seq: String,
    trace: String,
    edits_used: usize,
    truncated_tokens: usize,
    insertions_disabled: bool,
    steps_run: usize,
    budget_exhausted: bool,
}

impl RunRow {
    fn new(run: usize, src: &str, r: SamplerRun) -> Self {
        RunRow {
            run,
            src: src.to_string(),
            final_seq: detokenize(&r.final_seq),
            trace: render_script(&r.script),
            edits_used: r.edits_used,
            truncated_tokens: r.truncated_tokens,
            insertions_disabled: r.insertions_disabled,
            steps_run: r.steps_run,
            budget_exhausted: r.budget_exhausted,
        }
    }
}

pub fn editflow(g: &Global, a: &EditflowArgs) -> Result<()> {
    let fmt = pick_format(g.format, Format::Jsonl, &[Format::Jsonl, Format::Text], "editflow")?;
    let seq0 = tokenize(a.alphabet.into(), &a.seq).context("starting sequence")?;
    let cfg = SamplerConfig { steps: a.steps, budget: a.budget, length_cap: a.cap.unwrap_or(seq0.len() + a.budget) };
    let rows: Vec<RunRow> = match Endpoint::parse(&a.head)? {
        Endpoint::Toy(name) => {
            let head: ToyHead = name.parse().map_err(input_err)?;
            (0..a.runs)
                .into_par_iter()
                .map(|r| {
                    let mut rng = rng_for(g.seed, r as u64);
                    let run = simulate_budgeted(&seq0, |s, _| Ok(head.heads(s)), cfg, &mut rng)?;
                    Ok(RunRow::new(r, &a.seq, run))
                })
                .collect::<Result<_>>()?
        }
        ep => {
            // External heads are queried in run order so transcripts replay.
            let h = open_endpoint(&ep, g)?;
            let mut rows = Vec::with_capacity(a.runs);
            for r in 0..a.runs {
                let mut rng = rng_for(g.seed, r as u64);
                let run = simulate_budgeted(&seq0, |s, t| heads_from_oracle(&h, s, t), cfg, &mut rng)
                    .with_context(|| format!("run {r}"))?;
                rows.push(RunRow::new(r, &a.seq, run));
            }
            rows
        }
    };
    let mut out = open_output(a.output.as_ref())?;
    match fmt {
        Format::Text => {
            use std::io::Write;
            for r in &rows {
                writeln!(out, "# run {} ({} edits)", r.run, r.edits_used)?;
                if !r.trace.is_empty() {
                    writeln!(out, "{}", r.trace)?;
                }
                writeln!(out, "{}", r.final_seq)?;
            }
            out.flush()?;
            Ok(())
        }
        _ => write_lines(&mut out, &rows),
    }
}

#[derive(Debug, Args, Serialize)]
pub struct ServeArgs {
    /// Listen on this TCP address instead of stdin/stdout.
    #[arg(long)]
    pub listen: Option<String>,
}

pub fn serve(g: &Global, a: &ServeArgs) -> Result<()> {
    let toy: ToyOracle = match Endpoint::parse(&g.oracle)? {
        Endpoint::Toy(name) => name.parse().map_err(input_err)?,
        _ => return Err(input_err("oracle-serve only serves toy oracles")),
    };
    match &a.listen {
        None => {
            serve_lines(&toy, io::stdin().lock(), io::stdout().lock())?;
            Ok(())
        }
        Some(addr) => {
            let listener = TcpListener::bind(addr).with_context(|| format!("binding {addr}"))?;
            eprintln!("edittraj: listening on {}", listener.local_addr()?);
            let toy = Arc::new(toy);
            for stream in listener.incoming() {
                let stream = stream?;
                let toy = Arc::clone(&toy);
                thread::spawn(move || {
                    let Ok(reader) = stream.try_clone() else { return };
                    if let Err(e) = serve_lines(toy.as_ref(), BufReader::new(reader), stream) {
                        eprintln!("edittraj: connection ended: {e}");
                    }
                });
            }
            Ok(())
        }
    }
}
