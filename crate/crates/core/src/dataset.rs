//! Dataset construction: beneficial-pair filtering, conversion to supervised
//! trajectories, random-edit augmentation with pseudo-labels, the random
//! perturbation baseline and train/eval leakage checks.
//!
//! Randomness comes from [`rng_for`], one ChaCha8 stream per `(seed, item)`,
//! so parallel builders produce the same bytes regardless of thread count.

use std::collections::HashSet;
use std::io::{BufRead, Read, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::align::{shortest_edit_script, AlignError};
use crate::edit::{execute, EditOp, EditScript};
use crate::oracle::{OracleError, OracleHandle};
use crate::seq::{detokenize, tokenize, AlphabetKind, SeqError, TokenSequence};
use crate::trace::{parse_completion, render_completion, verify_consistency, TraceError, Trajectory};

pub const SCHEMA_VERSION: u32 = 1;

/// Pseudo-label sampling gives up after this many attempts per requested example.
pub const DEFAULT_ATTEMPT_FACTOR: usize = 50;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("row {row}: {source}")]
    BadSequence { row: usize, source: SeqError },
    #[error("row {row}: label {label:?} is not a finite number")]
    BadLabel { row: usize, label: String },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("csv is missing the {0:?} column")]
    MissingColumn(&'static str),
    #[error("pool member {index} is {found}, anchor is {expected}")]
    AlphabetMismatch { index: usize, expected: AlphabetKind, found: AlphabetKind },
    #[error("no sampleable tokens")]
    EmptySamplingSet,
    #[error("need 1 <= k_min <= k_max, got {k_min}..{k_max}")]
    BadEditRange { k_min: usize, k_max: usize },
    #[error("kept {kept} improved samples after {attempts} attempts")]
    AttemptCapExceeded { kept: usize, attempts: usize },
    #[error("oracle failed after {attempts} attempts: {source}")]
    Oracle { attempts: usize, source: OracleError },
    #[error("line {line}: {reason}")]
    BadRecord { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Deterministic generator for item `stream` of a run seeded with `seed`.
pub fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSequence {
    pub seq: TokenSequence,
    pub label: f64,
    pub meta: String,
}

/// Reads `sequence,label` CSV (optional `id` column). Rows are numbered from 1.
pub fn read_labeled_csv<R: Read>(reader: R, kind: AlphabetKind) -> Result<Vec<LabeledSequence>, DatasetError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &'static str| headers.iter().position(|h| h == name);
    let seq_col = col("sequence").ok_or(DatasetError::MissingColumn("sequence"))?;
    let label_col = col("label").ok_or(DatasetError::MissingColumn("label"))?;
    let id_col = col("id");
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 1;
        let raw = rec.get(seq_col).unwrap_or_default();
        let seq = tokenize(kind, raw).map_err(|source| DatasetError::BadSequence { row, source })?;
        let label_text = rec.get(label_col).unwrap_or_default();
        let label: f64 = label_text
            .parse()
            .ok()
            .filter(|l: &f64| l.is_finite())
            .ok_or_else(|| DatasetError::BadLabel { row, label: label_text.to_string() })?;
        let meta = id_col.and_then(|c| rec.get(c)).map_or_else(|| format!("row{row}"), str::to_string);
        out.push(LabeledSequence { seq, label, meta });
    }
    Ok(out)
}

/// Reads the `sequence` column of a CSV, ignoring any other columns.
pub fn read_sequence_csv<R: Read>(reader: R, kind: AlphabetKind) -> Result<Vec<TokenSequence>, DatasetError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let seq_col = rdr.headers()?.iter().position(|h| h == "sequence").ok_or(DatasetError::MissingColumn("sequence"))?;
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let raw = rec.get(seq_col).unwrap_or_default();
        out.push(tokenize(kind, raw).map_err(|source| DatasetError::BadSequence { row: i + 1, source })?);
    }
    Ok(out)
}

/// `(anchor, x)` for every pool member labelled strictly above the anchor, in pool order.
pub fn build_beneficial_pairs(
    anchor: &LabeledSequence,
    pool: &[LabeledSequence],
) -> Result<Vec<(TokenSequence, TokenSequence)>, DatasetError> {
    if let Some((index, m)) = pool.iter().enumerate().find(|(_, m)| m.seq.kind != anchor.seq.kind) {
        return Err(DatasetError::AlphabetMismatch { index, expected: anchor.seq.kind, found: m.seq.kind });
    }
    Ok(pool.iter().filter(|m| m.label > anchor.label).map(|m| (anchor.seq.clone(), m.seq.clone())).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SftExample {
    pub src: TokenSequence,
    pub instruction: String,
    pub completion: Trajectory,
}

/// One line of a dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftRecord {
    pub schema_version: u32,
    pub src: String,
    pub instruction: String,
    /// Rendered script, one op per line.
    pub trace: String,
    pub output: String,
}

impl SftRecord {
    pub fn from_example(ex: &SftExample) -> Self {
        SftRecord {
            schema_version: SCHEMA_VERSION,
            src: detokenize(&ex.src),
            instruction: ex.instruction.clone(),
            trace: crate::edit::render_script(&ex.completion.script),
            output: detokenize(&ex.completion.output),
        }
    }

    /// The training target text.
    pub fn completion_text(&self, kind: AlphabetKind) -> Result<String, TraceError> {
        let ex = self.to_example(kind)?;
        Ok(render_completion(&ex.completion.script, &ex.completion.output))
    }

    pub fn to_example(&self, kind: AlphabetKind) -> Result<SftExample, TraceError> {
        let src = tokenize(kind, &self.src)?;
        let text = format!("<think>\n{}\n</think>\n{}", self.trace, self.output);
        let mut completion = parse_completion(&text, kind)?;
        completion.raw_text = None;
        Ok(SftExample { src, instruction: self.instruction.clone(), completion })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildFailure {
    pub index: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SftBuild {
    pub examples: Vec<SftExample>,
    pub failures: Vec<BuildFailure>,
}

fn pair_to_example(src: &TokenSequence, tgt: &TokenSequence, instruction: &str) -> Result<SftExample, String> {
    let script = shortest_edit_script(src, tgt).map_err(|e: AlignError| e.to_string())?;
    let completion = Trajectory::new(script, tgt.clone());
    let report = verify_consistency(src, &completion);
    if !report.consistent() {
        return Err(format!("built trajectory failed verification: {:?}", report.first_failure));
    }
    Ok(SftExample { src: src.clone(), instruction: instruction.to_string(), completion })
}

/// Shortest-edit-script trajectories for each pair, in input order.
pub fn pairs_to_sft(pairs: &[(TokenSequence, TokenSequence)], instruction: &str) -> SftBuild {
    let results: Vec<Result<SftExample, String>> =
        pairs.par_iter().map(|(s, t)| pair_to_example(s, t, instruction)).collect();
    let mut build = SftBuild::default();
    for (index, r) in results.into_iter().enumerate() {
        match r {
            Ok(ex) => build.examples.push(ex),
            Err(reason) => build.failures.push(BuildFailure { index, reason }),
        }
    }
    build
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EditKind {
    Insert,
    Delete,
    Replace,
}

pub const ALL_EDIT_KINDS: [EditKind; 3] = [EditKind::Insert, EditKind::Delete, EditKind::Replace];

/// Draws `k ~ U{k_min..=k_max}` edits; each picks a kind uniformly among those
/// valid at the current length, then a uniform position and token. Replace
/// may redraw the token already there.
pub fn sample_random_edits<R: Rng + ?Sized>(
    src: &TokenSequence,
    k_min: usize,
    k_max: usize,
    vocab: &[String],
    rng: &mut R,
) -> Result<(EditScript, TokenSequence), DatasetError> {
    sample_random_edits_with(src, k_min, k_max, vocab, &ALL_EDIT_KINDS, rng)
}

/// As [`sample_random_edits`], restricted to `kinds`. When no allowed kind
/// fits the current sequence (deleting from an empty one) the script ends early.
pub fn sample_random_edits_with<R: Rng + ?Sized>(
    src: &TokenSequence,
    k_min: usize,
    k_max: usize,
    vocab: &[String],
    kinds: &[EditKind],
    rng: &mut R,
) -> Result<(EditScript, TokenSequence), DatasetError> {
    if vocab.is_empty() || kinds.is_empty() {
        return Err(DatasetError::EmptySamplingSet);
    }
    if !(1 <= k_min && k_min <= k_max) {
        return Err(DatasetError::BadEditRange { k_min, k_max });
    }
    let k = rng.gen_range(k_min..=k_max);
    let mut tokens = src.tokens.clone();
    let mut ops = Vec::with_capacity(k);
    for _ in 0..k {
        let len = tokens.len();
        let valid: Vec<EditKind> = kinds.iter().copied().filter(|kind| *kind == EditKind::Insert || len > 0).collect();
        let Some(&kind) = valid.choose(rng) else { break };
        let op = match kind {
            EditKind::Insert => {
                let pos = rng.gen_range(0..=len);
                EditOp::insert(pos, vocab.choose(rng).expect("non-empty").clone())
            }
            EditKind::Delete => {
                let pos = rng.gen_range(0..len);
                EditOp::delete(pos, tokens[pos].clone())
            }
            EditKind::Replace => {
                let pos = rng.gen_range(0..len);
                EditOp::replace(pos, tokens[pos].clone(), vocab.choose(rng).expect("non-empty").clone())
            }
        };
        crate::edit::apply_in_place(src.kind, &mut tokens, &op, crate::edit::ExecMode::Strict)
            .map_err(|e| DatasetError::BadSequence { row: 0, source: edit_token_error(e) })?;
        ops.push(op);
    }
    Ok((EditScript::new(ops), TokenSequence::new(src.kind, tokens)))
}

fn edit_token_error(e: crate::edit::EditError) -> SeqError {
    match e {
        crate::edit::EditError::InvalidToken(s) => s,
        other => unreachable!("sampler produced an out-of-range op: {other}"),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub k_min: usize,
    pub k_max: usize,
    pub attempt_factor: usize,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig { k_min: 1, k_max: 3, attempt_factor: DEFAULT_ATTEMPT_FACTOR }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Augmented {
    pub pairs: Vec<(TokenSequence, TokenSequence)>,
    pub scores: Vec<f64>,
    pub attempts: usize,
    pub duplicates_skipped: usize,
}

/// Random edits of the anchor kept when the oracle scores them strictly above
/// `anchor.label`. Exact-string duplicates are skipped. Candidates are drawn
/// from `rng` in order and scored in batches, so the result depends only on
/// the seed and the oracle.
pub fn augment_with_pseudolabels<R: Rng + ?Sized>(
    anchor: &LabeledSequence,
    n: usize,
    vocab: &[String],
    cfg: AugmentConfig,
    oracle: &OracleHandle,
    rng: &mut R,
) -> Result<Augmented, DatasetError> {
    let mut out = Augmented { pairs: Vec::new(), scores: Vec::new(), attempts: 0, duplicates_skipped: 0 };
    if n == 0 {
        return Ok(out);
    }
    let cap = n.saturating_mul(cfg.attempt_factor.max(1));
    let mut seen: HashSet<String> = HashSet::new();
    while out.pairs.len() < n {
        if out.attempts >= cap {
            return Err(DatasetError::AttemptCapExceeded { kept: out.pairs.len(), attempts: out.attempts });
        }
        let batch = (n - out.pairs.len()).min(cap - out.attempts);
        let mut cands = Vec::with_capacity(batch);
        for _ in 0..batch {
            cands.push(sample_random_edits(&anchor.seq, cfg.k_min, cfg.k_max, vocab, rng)?.1);
        }
        let scores =
            oracle.fitness_many(&cands).map_err(|source| DatasetError::Oracle { attempts: out.attempts, source })?;
        out.attempts += batch;
        for (cand, score) in cands.into_iter().zip(scores) {
            if out.pairs.len() == n || score <= anchor.label {
                continue;
            }
            if !seen.insert(detokenize(&cand)) {
                out.duplicates_skipped += 1;
                continue;
            }
            out.pairs.push((anchor.seq.clone(), cand));
            out.scores.push(score);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Perturbation {
    pub index: usize,
    pub script: EditScript,
    pub output: TokenSequence,
}

/// `n` independent random perturbations of `src`; candidate `i` uses stream `i`.
pub fn perturb(
    src: &TokenSequence,
    n: usize,
    k_min: usize,
    k_max: usize,
    vocab: &[String],
    kinds: &[EditKind],
    seed: u64,
) -> Result<Vec<Perturbation>, DatasetError> {
    (0..n)
        .into_par_iter()
        .map(|index| {
            let mut rng = rng_for(seed, index as u64);
            let (script, output) = sample_random_edits_with(src, k_min, k_max, vocab, kinds, &mut rng)?;
            Ok(Perturbation { index, script, output })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LeakageReport {
    /// Eval indices whose (canonical) string also occurs in train.
    pub eval_hits: Vec<usize>,
    /// Eval items repeating an earlier eval item.
    pub eval_duplicates: Vec<usize>,
}

impl LeakageReport {
    pub fn is_clean(&self) -> bool {
        self.eval_hits.is_empty()
    }
}

/// Exact-string overlap, after canonicalization through the oracle when given.
pub fn dedup_and_leakage_check(
    train: &[TokenSequence],
    eval: &[TokenSequence],
    canonicalizer: Option<&OracleHandle>,
) -> Result<LeakageReport, OracleError> {
    let key = |s: &TokenSequence| -> Result<String, OracleError> {
        match canonicalizer {
            Some(o) => Ok(detokenize(&o.canonicalize(s)?)),
            None => Ok(detokenize(s)),
        }
    };
    let train_keys: HashSet<String> = train.iter().map(key).collect::<Result<_, _>>()?;
    let mut report = LeakageReport::default();
    let mut seen = HashSet::new();
    for (i, s) in eval.iter().enumerate() {
        let k = key(s)?;
        if train_keys.contains(&k) {
            report.eval_hits.push(i);
        }
        if !seen.insert(k) {
            report.eval_duplicates.push(i);
        }
    }
    Ok(report)
}

/// One JSON object per line.
pub fn write_jsonl<W: Write, T: Serialize>(mut w: W, items: &[T]) -> Result<(), DatasetError> {
    for item in items {
        serde_json::to_writer(&mut w, item).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads JSON lines, skipping blank ones. Line numbers in errors start at 1.
pub fn read_jsonl<R: BufRead, T: for<'de> Deserialize<'de>>(r: R) -> Result<Vec<T>, DatasetError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|e| DatasetError::BadRecord { line: i + 1, reason: e.to_string() })?,
        );
    }
    Ok(out)
}

/// Replays a stored script, for checking dataset files.
pub fn replay_record(rec: &SftRecord, kind: AlphabetKind) -> Result<bool, TraceError> {
    let ex = rec.to_example(kind)?;
    Ok(execute(&ex.src, &ex.completion.script).is_ok_and(|o| o == ex.completion.output))
}
