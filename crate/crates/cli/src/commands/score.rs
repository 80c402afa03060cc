//! `reward`, `eval` and `rl-math`.

use std::collections::{BTreeMap, HashSet};
use std::io::Write;
use std::path::PathBuf;
use std::sync::Arc;

use anyhow::{Context, Result};
use clap::Args;
use edittraj_core::dataset::SftRecord;
use edittraj_core::metrics::{
    aggregate_csv, evaluate_instance, find_task, mol_aggregate, protein_eval, Direction, InstanceResult,
    InstructionSpec, Property, ProteinEvalReport,
};
use edittraj_core::oracle::{all_capabilities, PoisonedOracle};
use edittraj_core::policy::{objective, Algorithm, ObjectiveReport, RolloutGroup, SurrogateConfig, PRESET_NAMES};
use edittraj_core::reward::{molecule_reward_text, protein_reward_text, RewardBreakdown, RewardPreset};
use edittraj_core::{check_completion, tokenize, AlphabetKind, OracleHandle, TokenSequence};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::pick_format;
use crate::io::{open_output, read_jsonl, read_to_string, write_json, write_lines};
use crate::{input_err, oracle, Alphabet, Format, Global};

fn load_reward_preset(path: Option<&PathBuf>) -> Result<RewardPreset> {
    match path {
        Some(p) => {
            Ok(RewardPreset::from_toml(&read_to_string(p)?).with_context(|| format!("loading {}", p.display()))?)
        }
        None => Ok(RewardPreset::builtin()),
    }
}

/// A named task or explicit `{property: ±1}` targets.
fn instruction(
    row: usize,
    task: Option<&str>,
    targets: Option<&BTreeMap<Property, Direction>>,
) -> Result<InstructionSpec> {
    match (task, targets) {
        (_, Some(t)) if !t.is_empty() => {
            Ok(InstructionSpec { task_name: task.unwrap_or("custom").to_string(), targets: t.clone() })
        }
        (Some(name), _) => find_task(name).ok_or_else(|| input_err(format!("row {row}: unknown task {name:?}"))),
        _ => Err(input_err(format!("row {row}: molecule rows need `task` or non-empty `targets`"))),
    }
}

#[derive(Debug, Args, Serialize)]
pub struct RewardArgs {
    #[arg(long, value_enum, default_value = "protein")]
    pub alphabet: Alphabet,
    /// Rollouts JSONL: `{src, completion, task?, targets?}` per line.
    #[arg(long)]
    pub input: PathBuf,
    /// Reward preset TOML; the shipped default when omitted.
    #[arg(long)]
    pub preset: Option<PathBuf>,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RolloutRow {
    src: String,
    completion: String,
    #[serde(default)]
    task: Option<String>,
    #[serde(default)]
    targets: Option<BTreeMap<Property, Direction>>,
}

pub fn reward(g: &Global, a: &RewardArgs) -> Result<()> {
    pick_format(g.format, Format::Jsonl, &[Format::Jsonl], "reward")?;
    let preset = load_reward_preset(a.preset.as_ref())?;
    let rows: Vec<RolloutRow> = read_jsonl(&a.input)?;
    let kind: AlphabetKind = a.alphabet.into();
    // Parse everything before contacting the oracle.
    let mut parsed = Vec::with_capacity(rows.len());
    for (i, r) in rows.iter().enumerate() {
        let line = i + 1;
        let src = tokenize(kind, &r.src).with_context(|| format!("line {line}: source"))?;
        let instr = match kind {
            AlphabetKind::Smiles => Some(instruction(line, r.task.as_deref(), r.targets.as_ref())?),
            AlphabetKind::Protein => None,
        };
        parsed.push((src, instr));
    }
    // Gated rows are scored against a backend that fails on contact, and the
    // real oracle is only opened once some row passes the gate.
    let poisoned = OracleHandle::new(Arc::new(PoisonedOracle::default()), all_capabilities(), oracle::timeout(g));
    let mut live: Option<OracleHandle> = None;
    let mut out: Vec<RewardBreakdown> = Vec::with_capacity(rows.len());
    for (i, (r, (src, instr))) in rows.iter().zip(&parsed).enumerate() {
        let h = if check_completion(src, &r.completion, kind).0.consistent() {
            if live.is_none() {
                live = Some(oracle::open(g)?);
            }
            live.as_ref().expect("just opened")
        } else {
            &poisoned
        };
        let b = match instr {
            None => protein_reward_text(src, &r.completion, &preset.protein, h),
            Some(instr) => molecule_reward_text(src, &r.completion, instr, &preset.molecule, h),
        }
        .with_context(|| format!("line {}", i + 1))?;
        out.push(b);
    }
    write_lines(&mut open_output(a.output.as_ref())?, &out)
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long, value_enum, default_value = "protein")]
    pub alphabet: Alphabet,
    /// Protein: `{src, output}` lines. Molecule: `{src, output, task}` (or `targets`).
    #[arg(long)]
    pub input: PathBuf,
    /// Protein only: SFT JSONL whose outputs count as training positives for novelty.
    #[arg(long)]
    pub train: Option<PathBuf>,
    /// Molecule only: reward preset supplying the thresholds.
    #[arg(long)]
    pub preset: Option<PathBuf>,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct EvalRow {
    src: String,
    output: String,
    #[serde(default)]
    task: Option<String>,
    #[serde(default)]
    targets: Option<BTreeMap<Property, Direction>>,
}

#[derive(Serialize)]
struct ProteinGroup {
    src: String,
    #[serde(flatten)]
    report: ProteinEvalReport,
}

pub fn eval(g: &Global, a: &EvalArgs) -> Result<()> {
    let rows: Vec<EvalRow> = read_jsonl(&a.input)?;
    match a.alphabet {
        Alphabet::Protein => eval_protein(g, a, &rows),
        Alphabet::Smiles => eval_molecule(g, a, &rows),
    }
}

fn eval_protein(g: &Global, a: &EvalArgs, rows: &[EvalRow]) -> Result<()> {
    let fmt = pick_format(g.format, Format::Json, &[Format::Json, Format::Jsonl, Format::Csv], "eval")?;
    let positives: HashSet<String> = match &a.train {
        Some(p) => read_jsonl::<SftRecord>(p)?.into_iter().map(|r| r.output).collect(),
        None => HashSet::new(),
    };
    // Candidates grouped by source, sources in order of first appearance.
    let mut order: Vec<String> = Vec::new();
    let mut groups: BTreeMap<String, Vec<TokenSequence>> = BTreeMap::new();
    for (i, r) in rows.iter().enumerate() {
        let out = tokenize(AlphabetKind::Protein, &r.output).with_context(|| format!("line {}: output", i + 1))?;
        if !groups.contains_key(&r.src) {
            tokenize(AlphabetKind::Protein, &r.src).with_context(|| format!("line {}: source", i + 1))?;
            order.push(r.src.clone());
        }
        groups.entry(r.src.clone()).or_default().push(out);
    }
    let handle: Option<OracleHandle> = if rows.is_empty() { None } else { Some(oracle::open(g)?) };
    let mut reports = Vec::new();
    for src in &order {
        let h = handle.as_ref().expect("opened for non-empty input");
        let seq = tokenize(AlphabetKind::Protein, src)?;
        let report = protein_eval(&seq, &groups[src], &positives, h).with_context(|| format!("source {src}"))?;
        reports.push(ProteinGroup { src: src.clone(), report });
    }
    let mut out = open_output(a.output.as_ref())?;
    match fmt {
        Format::Jsonl => write_lines(&mut out, &reports)?,
        Format::Csv => {
            let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
            writeln!(out, "src,n,success,unique,novel,success_rate,uniqueness,novelty")?;
            for r in &reports {
                let m = &r.report;
                writeln!(
                    out,
                    "{},{},{},{},{},{:.6},{},{}",
                    r.src,
                    m.n,
                    m.success,
                    m.unique,
                    m.novel,
                    m.success_rate,
                    opt(m.uniqueness),
                    opt(m.novelty)
                )?;
            }
            out.flush()?;
        }
        _ => write_json(&mut out, &reports)?,
    }
    Ok(())
}

fn eval_molecule(g: &Global, a: &EvalArgs, rows: &[EvalRow]) -> Result<()> {
    let fmt = pick_format(g.format, Format::Csv, &[Format::Json, Format::Jsonl, Format::Csv], "eval")?;
    let thresholds = load_reward_preset(a.preset.as_ref())?.molecule.thresholds;
    let mut parsed = Vec::with_capacity(rows.len());
    for (i, r) in rows.iter().enumerate() {
        let line = i + 1;
        let src = tokenize(AlphabetKind::Smiles, &r.src).with_context(|| format!("line {line}: source"))?;
        let out = tokenize(AlphabetKind::Smiles, &r.output).with_context(|| format!("line {line}: output"))?;
        parsed.push((src, out, instruction(line, r.task.as_deref(), r.targets.as_ref())?));
    }
    let handle: Option<OracleHandle> = if rows.is_empty() { None } else { Some(oracle::open(g)?) };
    let mut instances: Vec<InstanceResult> = Vec::with_capacity(rows.len());
    for (i, (src, out, instr)) in parsed.iter().enumerate() {
        let h = handle.as_ref().expect("opened for non-empty input");
        let sp = h.mol_properties(src).with_context(|| format!("line {}", i + 1))?;
        let op = h.mol_properties(out).with_context(|| format!("line {}", i + 1))?;
        instances.push(evaluate_instance(&sp, &op, instr, &thresholds));
    }
    let mut w = open_output(a.output.as_ref())?;
    match fmt {
        Format::Jsonl => write_lines(&mut w, &instances)?,
        Format::Json => write_json(&mut w, &mol_aggregate(&instances))?,
        _ => {
            w.write_all(aggregate_csv(&mol_aggregate(&instances)).as_bytes())?;
            w.flush()?;
        }
    }
    Ok(())
}

#[derive(Debug, Args, Serialize)]
pub struct RlMathArgs {
    /// Rollout groups JSONL: `{id?, rollouts: [{reward, logprobs, old_logprobs, ref_logprobs?}]}`.
    #[arg(long)]
    pub input: PathBuf,
    /// Algorithm; picks the matching shipped preset unless `--preset` or `--config` is given.
    #[arg(long)]
    pub algo: Option<String>,
    /// Shipped preset name.
    #[arg(long, conflicts_with = "config")]
    pub preset: Option<String>,
    /// Preset TOML file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Serialize)]
struct GroupReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    id: Option<String>,
    #[serde(flatten)]
    report: ObjectiveReport,
}

fn resolve_config(a: &RlMathArgs) -> Result<SurrogateConfig> {
    let algo: Option<Algorithm> = a.algo.as_deref().map(str::parse).transpose().map_err(input_err)?;
    let cfg = match (&a.preset, &a.config) {
        (Some(name), _) => SurrogateConfig::preset(name)
            .map_err(|e| input_err(format!("{e}; shipped presets: {}", PRESET_NAMES.join(", "))))?,
        (None, Some(p)) => {
            SurrogateConfig::from_toml(&read_to_string(p)?).with_context(|| format!("loading {}", p.display()))?
        }
        (None, None) => SurrogateConfig::preset(&format!("{}-paper", algo.unwrap_or(Algorithm::Grpo)))?,
    };
    match algo {
        Some(x) if x != cfg.algorithm => {
            Err(input_err(format!("--algo {x} conflicts with the {} preset", cfg.algorithm)))
        }
        _ => Ok(cfg),
    }
}

pub fn rl_math(g: &Global, a: &RlMathArgs) -> Result<()> {
    pick_format(g.format, Format::Jsonl, &[Format::Jsonl], "rl-math")?;
    let cfg = resolve_config(a)?;
    eprintln!("edittraj: surrogate {}", serde_json::to_string(&cfg)?);
    let groups: Vec<RolloutGroup> = read_jsonl(&a.input)?;
    let reports: Vec<GroupReport> = groups
        .par_iter()
        .enumerate()
        .map(|(i, grp)| {
            let report =
                objective(grp, &cfg).with_context(|| format!("group {}", grp.id.clone().unwrap_or(i.to_string())))?;
            Ok(GroupReport { id: grp.id.clone(), report })
        })
        .collect::<Result<_>>()?;
    write_lines(&mut open_output(a.output.as_ref())?, &reports)
}
