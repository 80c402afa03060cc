//! `sft-build`, `augment` and `perturb`: dataset files from CSV pools.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use edittraj_core::dataset::{
    augment_with_pseudolabels, build_beneficial_pairs, dedup_and_leakage_check, pairs_to_sft, perturb as perturb_seq,
    read_labeled_csv, read_sequence_csv, rng_for, AugmentConfig, BuildFailure, EditKind, LabeledSequence,
    LeakageReport, SftBuild, SftRecord, ALL_EDIT_KINDS, DEFAULT_ATTEMPT_FACTOR,
};
use edittraj_core::{detokenize, render_script, Alphabet as Vocab, AlphabetKind, TokenSequence};
use rand::RngCore;
use serde::Serialize;

use super::pick_format;
use crate::io::{is_blank, open_output, read_to_string, write_json, write_lines};
use crate::{input_err, oracle, Alphabet, Format, Global};

const DEFAULT_INSTRUCTION: &str = "Improve the sequence.";

fn read_pool(path: &Path, kind: AlphabetKind) -> Result<Vec<LabeledSequence>> {
    let text = read_to_string(path)?;
    if is_blank(&text) {
        return Ok(Vec::new());
    }
    read_labeled_csv(text.as_bytes(), kind).with_context(|| format!("reading {}", path.display()))
}

fn read_sequences(path: &Path, kind: AlphabetKind) -> Result<Vec<TokenSequence>> {
    let text = read_to_string(path)?;
    if is_blank(&text) {
        return Ok(Vec::new());
    }
    read_sequence_csv(text.as_bytes(), kind).with_context(|| format!("reading {}", path.display()))
}

fn records(build: &SftBuild) -> Vec<SftRecord> {
    build.examples.iter().map(SftRecord::from_example).collect()
}

fn write_report<T: Serialize>(path: Option<&PathBuf>, report: &T) -> Result<()> {
    match path {
        Some(p) => write_json(&mut open_output(Some(p))?, report),
        None => {
            eprintln!("edittraj: report {}", serde_json::to_string(report)?);
            Ok(())
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct SftBuildArgs {
    #[arg(long, value_enum, default_value = "protein")]
    pub alphabet: Alphabet,
    /// Labelled pool: CSV with `sequence`, `label` and optional `id` columns.
    #[arg(long)]
    pub input: PathBuf,
    /// JSONL destination (stdout when omitted).
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// `id` of the anchor row; the first row by default.
    #[arg(long)]
    pub anchor: Option<String>,
    #[arg(long, default_value = DEFAULT_INSTRUCTION)]
    pub instruction: String,
    /// Held-out CSV (`sequence` column) checked for overlap with the built data.
    #[arg(long)]
    pub eval: Option<PathBuf>,
    /// Compare canonical forms from the oracle in the leakage check.
    #[arg(long, requires = "eval")]
    pub canonicalize: bool,
    /// Build report destination (stderr when omitted).
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Serialize)]
struct SftBuildReport {
    rows: usize,
    anchor: Option<String>,
    pairs: usize,
    examples: usize,
    failures: Vec<BuildFailure>,
    #[serde(skip_serializing_if = "Option::is_none")]
    leakage: Option<LeakageReport>,
}

pub fn sft_build(g: &Global, a: &SftBuildArgs) -> Result<()> {
    pick_format(g.format, Format::Jsonl, &[Format::Jsonl], "sft-build")?;
    let kind = a.alphabet.into();
    let pool = read_pool(&a.input, kind)?;
    let anchor = match &a.anchor {
        Some(id) => Some(
            pool.iter()
                .find(|r| &r.meta == id)
                .ok_or_else(|| input_err(format!("no row with id {id:?} in {}", a.input.display())))?,
        ),
        None => pool.first(),
    };
    let build = match anchor {
        Some(anchor) => pairs_to_sft(&build_beneficial_pairs(anchor, &pool)?, &a.instruction),
        None => SftBuild::default(),
    };
    let recs = records(&build);
    write_lines(&mut open_output(a.output.as_ref())?, &recs)?;

    let leakage = match &a.eval {
        Some(path) => {
            let eval = read_sequences(path, kind)?;
            let mut train: Vec<TokenSequence> = Vec::new();
            for ex in &build.examples {
                train.push(ex.src.clone());
                train.push(ex.completion.output.clone());
            }
            let canon = if a.canonicalize { Some(oracle::open(g)?) } else { None };
            let report = dedup_and_leakage_check(&train, &eval, canon.as_ref())?;
            if !report.is_clean() {
                eprintln!("edittraj: warning: {} eval sequences also occur in the built data", report.eval_hits.len());
            }
            Some(report)
        }
        None => None,
    };
    let report = SftBuildReport {
        rows: pool.len(),
        anchor: anchor.map(|r| r.meta.clone()),
        pairs: build.examples.len() + build.failures.len(),
        examples: build.examples.len(),
        failures: build.failures.clone(),
        leakage,
    };
    write_report(a.report.as_ref(), &report)
}

#[derive(Debug, Args, Serialize)]
pub struct AugmentArgs {
    #[arg(long, value_enum, default_value = "protein")]
    pub alphabet: Alphabet,
    /// Anchors: CSV with `sequence`, `label` and optional `id` columns.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Kept candidates per anchor.
    #[arg(long, default_value_t = 8)]
    pub n: usize,
    #[arg(long, default_value_t = 1)]
    pub k_min: usize,
    #[arg(long, default_value_t = 3)]
    pub k_max: usize,
    /// Oracle calls allowed per kept candidate before giving up.
    #[arg(long, default_value_t = DEFAULT_ATTEMPT_FACTOR)]
    pub attempt_factor: usize,
    #[arg(long, default_value = DEFAULT_INSTRUCTION)]
    pub instruction: String,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Serialize)]
struct AnchorReport {
    anchor: String,
    kept: usize,
    attempts: usize,
    duplicates_skipped: usize,
    failures: Vec<BuildFailure>,
}

pub fn augment(g: &Global, a: &AugmentArgs) -> Result<()> {
    pick_format(g.format, Format::Jsonl, &[Format::Jsonl], "augment")?;
    let kind = a.alphabet.into();
    let anchors = read_pool(&a.input, kind)?;
    let vocab = Vocab::for_kind(kind).sampling_tokens();
    let cfg = AugmentConfig { k_min: a.k_min, k_max: a.k_max, attempt_factor: a.attempt_factor };
    let handle = if anchors.is_empty() || a.n == 0 { None } else { Some(oracle::open(g)?) };
    let mut recs = Vec::new();
    let mut reports = Vec::new();
    // Anchors run in order so oracle transcripts are reproducible.
    for (i, anchor) in anchors.iter().enumerate() {
        let Some(h) = handle.as_ref() else { break };
        let mut rng = rng_for(g.seed, i as u64);
        let aug = augment_with_pseudolabels(anchor, a.n, &vocab, cfg, h, &mut rng)
            .with_context(|| format!("anchor {}", anchor.meta))?;
        let build = pairs_to_sft(&aug.pairs, &a.instruction);
        recs.extend(records(&build));
        reports.push(AnchorReport {
            anchor: anchor.meta.clone(),
            kept: build.examples.len(),
            attempts: aug.attempts,
            duplicates_skipped: aug.duplicates_skipped,
            failures: build.failures,
        });
    }
    write_lines(&mut open_output(a.output.as_ref())?, &recs)?;
    write_report(a.report.as_ref(), &reports)
}

#[derive(Debug, Args, Serialize)]
pub struct PerturbArgs {
    #[arg(long, value_enum, default_value = "protein")]
    pub alphabet: Alphabet,
    /// Sources: CSV with a `sequence` column.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Perturbations per source.
    #[arg(long, default_value_t = 8)]
    pub n: usize,
    #[arg(long, default_value_t = 1)]
    pub k_min: usize,
    #[arg(long, default_value_t = 3)]
    pub k_max: usize,
    /// Substitutions only, keeping the length fixed.
    #[arg(long)]
    pub replace_only: bool,
}

#[derive(Serialize)]
struct PerturbRow {
    source: usize,
    index: usize,
    src: String,
    trace: String,
    output: String,
}

pub fn perturb(g: &Global, a: &PerturbArgs) -> Result<()> {
    pick_format(g.format, Format::Jsonl, &[Format::Jsonl], "perturb")?;
    let kind = a.alphabet.into();
    let sources = read_sequences(&a.input, kind)?;
    let vocab = Vocab::for_kind(kind).sampling_tokens();
    let kinds: &[EditKind] = if a.replace_only { &[EditKind::Replace] } else { &ALL_EDIT_KINDS };
    let mut rows = Vec::new();
    for (j, src) in sources.iter().enumerate() {
        // Each source gets its own seed so adding rows never shifts earlier output.
        let seed = rng_for(g.seed, j as u64).next_u64();
        let src_text = detokenize(src);
        for p in perturb_seq(src, a.n, a.k_min, a.k_max, &vocab, kinds, seed).with_context(|| format!("source {j}"))? {
            rows.push(PerturbRow {
                source: j,
                index: p.index,
                src: src_text.clone(),
                trace: render_script(&p.script),
                output: detokenize(&p.output),
            });
        }
    }
    write_lines(&mut open_output(a.output.as_ref())?, &rows)
}
