//! Edit Flows machinery without the network: blank-augmented alignment,
//! the `kappa(t) = t^p` mixture path, remaining-edit targets, the Monte-Carlo
//! loss and the first-order budgeted sampler.
//!
//! Rates and token distributions come from the caller through
//! [`EditFlowHeads`]. Insertion slot `i` inserts before current token `i`;
//! slot `L` appends, the same convention as `INSERT ... at position i`.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::align::{align, AlignError, AlignmentStep};
use crate::edit::{EditOp, EditScript};
use crate::oracle::{OracleError, OracleHandle};
use crate::seq::{detokenize, Alphabet, AlphabetKind, TokenSequence};

/// Largest first-order trigger probability per step.
pub const MAX_STEP_PROB: f64 = 0.9;

/// A position in blank-augmented space; `None` is the blank.
pub type Slot = Option<String>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FlowError {
    #[error(transparent)]
    Align(#[from] AlignError),
    #[error("aligned sequences differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("loss weight is singular at t = 1")]
    ScheduleSingularity,
    #[error("t = {0} lies outside [0, 1]")]
    TimeOutOfRange(f64),
    #[error("heads: {0}")]
    BadHeads(String),
    #[error("heads cover {heads} positions but the sequence has {seq}")]
    HeadLengthMismatch { heads: usize, seq: usize },
    #[error("sampler config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignedPair {
    pub kind: AlphabetKind,
    pub z0: Vec<Slot>,
    pub z1: Vec<Slot>,
}

/// Drops blanks.
pub fn strip(kind: AlphabetKind, z: &[Slot]) -> TokenSequence {
    TokenSequence::new(kind, z.iter().flatten().cloned().collect())
}

/// Levenshtein alignment with blanks opposite every insertion and deletion.
pub fn align_with_blanks(x0: &TokenSequence, x1: &TokenSequence) -> Result<AlignedPair, FlowError> {
    let steps = align(x0, x1)?;
    let mut z0 = Vec::with_capacity(steps.len());
    let mut z1 = Vec::with_capacity(steps.len());
    for step in steps {
        match step {
            AlignmentStep::Match { src, tgt } | AlignmentStep::Substitute { src, tgt } => {
                z0.push(Some(x0.tokens[src].clone()));
                z1.push(Some(x1.tokens[tgt].clone()));
            }
            AlignmentStep::Delete { src } => {
                z0.push(Some(x0.tokens[src].clone()));
                z1.push(None);
            }
            AlignmentStep::Insert { tgt } => {
                z0.push(None);
                z1.push(Some(x1.tokens[tgt].clone()));
            }
        }
    }
    Ok(AlignedPair { kind: x0.kind, z0, z1 })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KappaSchedule {
    pub power: f64,
}

impl Default for KappaSchedule {
    fn default() -> Self {
        KappaSchedule { power: 3.0 }
    }
}

impl KappaSchedule {
    pub fn new(power: f64) -> Result<Self, FlowError> {
        if power > 0.0 && power.is_finite() {
            Ok(KappaSchedule { power })
        } else {
            Err(FlowError::BadConfig(format!("kappa power must be positive, got {power}")))
        }
    }

    pub fn kappa(&self, t: f64) -> f64 {
        t.powf(self.power)
    }

    pub fn kappa_dot(&self, t: f64) -> f64 {
        self.power * t.powf(self.power - 1.0)
    }

    /// `kappa_dot / (1 - kappa)`.
    pub fn loss_weight(&self, t: f64) -> Result<f64, FlowError> {
        check_time(t)?;
        if t >= 1.0 {
            return Err(FlowError::ScheduleSingularity);
        }
        Ok(self.kappa_dot(t) / (1.0 - self.kappa(t)))
    }
}

fn check_time(t: f64) -> Result<(), FlowError> {
    if (0.0..=1.0).contains(&t) {
        Ok(())
    } else {
        Err(FlowError::TimeOutOfRange(t))
    }
}

/// Takes each aligned position from `z1` with probability `kappa(t)`.
pub fn sample_zt<R: Rng + ?Sized>(
    pair: &AlignedPair,
    t: f64,
    sched: &KappaSchedule,
    rng: &mut R,
) -> Result<(Vec<Slot>, TokenSequence), FlowError> {
    check_time(t)?;
    let k = sched.kappa(t);
    let zt: Vec<Slot> =
        pair.z0.iter().zip(&pair.z1).map(|(a, b)| if rng.gen::<f64>() < k { b.clone() } else { a.clone() }).collect();
    let xt = strip(pair.kind, &zt);
    Ok((zt, xt))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", content = "token", rename_all = "lowercase")]
pub enum FlowOp {
    Insert(String),
    Delete,
    Substitute(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RemainingEdit {
    /// Index into the aligned sequences.
    pub aligned: usize,
    /// Insertion slot for inserts, token index in `strip(z_t)` otherwise.
    pub current: usize,
    pub op: FlowOp,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RemainingEdits {
    pub edits: Vec<RemainingEdit>,
}

impl RemainingEdits {
    pub fn is_empty(&self) -> bool {
        self.edits.is_empty()
    }

    pub fn len(&self) -> usize {
        self.edits.len()
    }

    /// Executable script on `strip(z_t)` that yields `strip(z_1)`.
    pub fn to_script(&self, current: &TokenSequence) -> EditScript {
        let edits: Vec<(usize, FlowOp)> = self.edits.iter().map(|e| (e.current, e.op.clone())).collect();
        EditScript::new(sequential_ops(&current.tokens, &edits))
    }
}

/// Edits still separating `z_t` from `z_1`, keyed by aligned and current position.
pub fn remaining_edits(zt: &[Slot], z1: &[Slot]) -> Result<RemainingEdits, FlowError> {
    if zt.len() != z1.len() {
        return Err(FlowError::LengthMismatch(zt.len(), z1.len()));
    }
    let mut edits = Vec::new();
    let mut current = 0usize;
    for (aligned, (a, b)) in zt.iter().zip(z1).enumerate() {
        let op = match (a, b) {
            (None, Some(v)) => Some(FlowOp::Insert(v.clone())),
            (Some(_), None) => Some(FlowOp::Delete),
            (Some(x), Some(v)) if x != v => Some(FlowOp::Substitute(v.clone())),
            _ => None,
        };
        if let Some(op) = op {
            edits.push(RemainingEdit { aligned, current, op });
        }
        if a.is_some() {
            current += 1;
        }
    }
    Ok(RemainingEdits { edits })
}

/// Converts simultaneous edits, sorted left to right with inserts at slot `i`
/// before the delete or substitute at `i`, into sequential ops.
fn sequential_ops(tokens: &[String], edits: &[(usize, FlowOp)]) -> Vec<EditOp> {
    let mut offset: isize = 0;
    let mut ops = Vec::with_capacity(edits.len());
    for (pos, op) in edits {
        let at = (*pos as isize + offset) as usize;
        match op {
            FlowOp::Insert(v) => {
                ops.push(EditOp::insert(at, v.clone()));
                offset += 1;
            }
            FlowOp::Delete => {
                ops.push(EditOp::delete(at, tokens[*pos].clone()));
                offset -= 1;
            }
            FlowOp::Substitute(v) => ops.push(EditOp::replace(at, tokens[*pos].clone(), v.clone())),
        }
    }
    ops
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PositionRole {
    Token,
    Bos,
    Pad,
}

/// Per-position rates and token distributions for a sequence of length `L`.
/// Insertion arrays have `L + 1` slots; the others have `L`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditFlowHeads {
    pub vocab: Vec<String>,
    pub ins_rate: Vec<f64>,
    pub del_rate: Vec<f64>,
    pub sub_rate: Vec<f64>,
    pub q_ins: Vec<Vec<f64>>,
    pub q_sub: Vec<Vec<f64>>,
}

impl EditFlowHeads {
    /// Number of current tokens the heads cover.
    pub fn len(&self) -> usize {
        self.del_rate.len()
    }

    pub fn is_empty(&self) -> bool {
        self.del_rate.is_empty()
    }

    /// All-zero rates with uniform distributions.
    pub fn zeros(vocab: Vec<String>, len: usize) -> Self {
        let u = vec![1.0 / vocab.len().max(1) as f64; vocab.len()];
        EditFlowHeads {
            ins_rate: vec![0.0; len + 1],
            del_rate: vec![0.0; len],
            sub_rate: vec![0.0; len],
            q_ins: vec![u.clone(); len + 1],
            q_sub: vec![u; len],
            vocab,
        }
    }

    pub fn validate(&self) -> Result<(), FlowError> {
        let bad = |m: String| Err(FlowError::BadHeads(m));
        let l = self.len();
        if self.vocab.is_empty() {
            return bad("empty vocabulary".into());
        }
        if self.sub_rate.len() != l || self.ins_rate.len() != l + 1 {
            return bad(format!(
                "expected {} insertion and {l} substitution rates, got {} and {}",
                l + 1,
                self.ins_rate.len(),
                self.sub_rate.len()
            ));
        }
        if self.q_ins.len() != l + 1 || self.q_sub.len() != l {
            return bad("distribution rows do not match rate arrays".into());
        }
        for (name, rates) in [("ins", &self.ins_rate), ("del", &self.del_rate), ("sub", &self.sub_rate)] {
            if let Some(i) = rates.iter().position(|r| !(r.is_finite() && *r >= 0.0)) {
                return bad(format!("{name} rate at {i} is {}", rates[i]));
            }
        }
        for (name, rows) in [("q_ins", &self.q_ins), ("q_sub", &self.q_sub)] {
            for (i, row) in rows.iter().enumerate() {
                if row.len() != self.vocab.len() {
                    return bad(format!(
                        "{name}[{i}] has {} entries for a vocabulary of {}",
                        row.len(),
                        self.vocab.len()
                    ));
                }
                if row.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
                    return bad(format!("{name}[{i}] has a negative or non-finite entry"));
                }
                let s: f64 = row.iter().sum();
                if (s - 1.0).abs() > 1e-9 {
                    return bad(format!("{name}[{i}] sums to {s}"));
                }
            }
        }
        Ok(())
    }

    /// Zeroes every rate at PAD positions and deletion/substitution at BOS.
    /// Insertion slot `i` follows the role of token `i` (slot `L` is left alone).
    pub fn enforce_mask(&mut self, roles: &[PositionRole]) -> Result<(), FlowError> {
        if roles.len() != self.len() {
            return Err(FlowError::HeadLengthMismatch { heads: self.len(), seq: roles.len() });
        }
        for (i, role) in roles.iter().enumerate() {
            match role {
                PositionRole::Token => {}
                PositionRole::Bos => {
                    self.del_rate[i] = 0.0;
                    self.sub_rate[i] = 0.0;
                }
                PositionRole::Pad => {
                    self.ins_rate[i] = 0.0;
                    self.del_rate[i] = 0.0;
                    self.sub_rate[i] = 0.0;
                }
            }
        }
        Ok(())
    }

    pub fn disable_insertions(&mut self) {
        self.ins_rate.iter_mut().for_each(|r| *r = 0.0);
    }

    fn token_prob(&self, row: &[f64], token: &str) -> f64 {
        self.vocab.iter().position(|v| v == token).map_or(0.0, |i| row[i])
    }

    /// Model intensity `r_theta` of one edit at a current position.
    pub fn intensity(&self, current: usize, op: &FlowOp) -> f64 {
        match op {
            FlowOp::Insert(v) => self.ins_rate[current] * self.token_prob(&self.q_ins[current], v),
            FlowOp::Delete => self.del_rate[current],
            FlowOp::Substitute(v) => self.sub_rate[current] * self.token_prob(&self.q_sub[current], v),
        }
    }

    pub fn total_rate(&self) -> f64 {
        self.ins_rate.iter().chain(&self.del_rate).chain(&self.sub_rate).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    /// `+inf` when a required edit has zero intensity.
    pub loss: f64,
    pub infinite: bool,
    pub rate_sum: f64,
    pub log_intensity_sum: f64,
    pub weight: f64,
}

/// `sum(all rates) - kappa_dot/(1-kappa) * sum(log r_theta(edit))` over the remaining edits.
pub fn editflow_loss(
    heads: &EditFlowHeads,
    remaining: &RemainingEdits,
    t: f64,
    sched: &KappaSchedule,
) -> Result<LossReport, FlowError> {
    heads.validate()?;
    let weight = sched.loss_weight(t)?;
    for e in &remaining.edits {
        let limit = if matches!(e.op, FlowOp::Insert(_)) { heads.len() + 1 } else { heads.len() };
        if e.current >= limit {
            return Err(FlowError::HeadLengthMismatch { heads: heads.len(), seq: e.current });
        }
    }
    let rate_sum = heads.total_rate();
    let log_intensity_sum: f64 = remaining.edits.iter().map(|e| heads.intensity(e.current, &e.op).ln()).sum();
    let infinite = log_intensity_sum == f64::NEG_INFINITY;
    let loss = if infinite { f64::INFINITY } else { rate_sum - weight * log_intensity_sum };
    Ok(LossReport { loss, infinite, rate_sum, log_intensity_sum, weight })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampledEdit {
    /// Insertion slot for inserts, token index otherwise, in the pre-step sequence.
    pub position: usize,
    pub op: FlowOp,
}

fn draw_token<R: Rng + ?Sized>(vocab: &[String], row: &[f64], rng: &mut R) -> String {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (tok, p) in vocab.iter().zip(row) {
        acc += p;
        if u < acc {
            return tok.clone();
        }
    }
    // rounding slack: last token with positive mass
    vocab.iter().zip(row).rev().find(|(_, p)| **p > 0.0).map(|(t, _)| t.clone()).unwrap_or_else(|| vocab[0].clone())
}

/// Draws one step's edits, left to right (insert at slot `i` before the
/// delete/substitute at `i`). Draw order is fixed so runs are reproducible.
pub fn sample_step_edits<R: Rng + ?Sized>(heads: &EditFlowHeads, dt: f64, rng: &mut R) -> Vec<SampledEdit> {
    let l = heads.len();
    let mut out = Vec::new();
    for i in 0..=l {
        let p_ins = (heads.ins_rate[i] * dt).clamp(0.0, MAX_STEP_PROB);
        if rng.gen::<f64>() < p_ins {
            out.push(SampledEdit { position: i, op: FlowOp::Insert(draw_token(&heads.vocab, &heads.q_ins[i], rng)) });
        }
        if i == l {
            break;
        }
        let (del, sub) = (heads.del_rate[i], heads.sub_rate[i]);
        let p_ds = ((del + sub) * dt).clamp(0.0, MAX_STEP_PROB);
        if rng.gen::<f64>() < p_ds {
            let op = if rng.gen::<f64>() < del / (del + sub) {
                FlowOp::Delete
            } else {
                FlowOp::Substitute(draw_token(&heads.vocab, &heads.q_sub[i], rng))
            };
            out.push(SampledEdit { position: i, op });
        }
    }
    out
}

/// Applies simultaneous edits right to left, so each one still refers to
/// its original position.
pub fn apply_simultaneous(seq: &TokenSequence, edits: &[SampledEdit]) -> TokenSequence {
    let mut tokens = seq.tokens.clone();
    for e in edits.iter().rev() {
        match &e.op {
            FlowOp::Insert(v) => tokens.insert(e.position, v.clone()),
            FlowOp::Delete => {
                tokens.remove(e.position);
            }
            FlowOp::Substitute(v) => tokens[e.position] = v.clone(),
        }
    }
    TokenSequence::new(seq.kind, tokens)
}

/// One first-order step: sample, then apply simultaneously.
pub fn simulate_step<R: Rng + ?Sized>(
    seq: &TokenSequence,
    heads: &EditFlowHeads,
    dt: f64,
    rng: &mut R,
) -> Result<(TokenSequence, Vec<SampledEdit>), FlowError> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(FlowError::BadConfig(format!("dt must be positive, got {dt}")));
    }
    check_heads(heads, seq)?;
    let edits = sample_step_edits(heads, dt, rng);
    Ok((apply_simultaneous(seq, &edits), edits))
}

fn check_heads(heads: &EditFlowHeads, seq: &TokenSequence) -> Result<(), FlowError> {
    heads.validate()?;
    if heads.len() != seq.len() {
        return Err(FlowError::HeadLengthMismatch { heads: heads.len(), seq: seq.len() });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub steps: usize,
    pub budget: usize,
    pub length_cap: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerRun {
    pub final_seq: TokenSequence,
    /// Every executed op in order, including truncation deletes.
    pub script: EditScript,
    /// Sampled edits executed; never more than the budget.
    pub edits_used: usize,
    /// Tokens removed by the length cap.
    pub truncated_tokens: usize,
    pub insertions_disabled: bool,
    pub steps_run: usize,
    pub budget_exhausted: bool,
}

/// Runs `steps` first-order steps of size `1/steps`, stopping once `budget`
/// sampled edits have executed. A step that would overshoot keeps only its
/// leftmost edits. A step that pushes the length past `length_cap` is
/// followed by truncation to the cap, after which insertions are disabled.
pub fn simulate_budgeted<R, F>(
    seq0: &TokenSequence,
    mut head_fn: F,
    cfg: SamplerConfig,
    rng: &mut R,
) -> Result<SamplerRun, FlowError>
where
    R: Rng + ?Sized,
    F: FnMut(&TokenSequence, f64) -> Result<EditFlowHeads, FlowError>,
{
    if cfg.steps == 0 || cfg.budget == 0 {
        return Err(FlowError::BadConfig("steps and budget must be at least 1".into()));
    }
    if cfg.length_cap < seq0.len() {
        return Err(FlowError::BadConfig(format!(
            "length cap {} is below the initial length {}",
            cfg.length_cap,
            seq0.len()
        )));
    }
    let dt = 1.0 / cfg.steps as f64;
    let mut seq = seq0.clone();
    let mut ops = Vec::new();
    let mut used = 0usize;
    let mut truncated = 0usize;
    let mut no_insert = false;
    let mut steps_run = 0usize;
    for k in 0..cfg.steps {
        if used >= cfg.budget {
            break;
        }
        let t = k as f64 * dt;
        let mut heads = head_fn(&seq, t)?;
        check_heads(&heads, &seq)?;
        if no_insert {
            heads.disable_insertions();
        }
        let mut edits = sample_step_edits(&heads, dt, rng);
        edits.truncate(cfg.budget - used);
        steps_run += 1;
        if edits.is_empty() {
            continue;
        }
        let seq_edits: Vec<(usize, FlowOp)> = edits.iter().map(|e| (e.position, e.op.clone())).collect();
        ops.extend(sequential_ops(&seq.tokens, &seq_edits));
        seq = apply_simultaneous(&seq, &edits);
        used += edits.len();
        if seq.len() > cfg.length_cap {
            for _ in cfg.length_cap..seq.len() {
                let tok = seq.tokens.pop().expect("longer than cap");
                ops.push(EditOp::delete(seq.len(), tok));
                truncated += 1;
            }
            no_insert = true;
        }
    }
    Ok(SamplerRun {
        final_seq: seq,
        script: EditScript::new(ops),
        edits_used: used,
        truncated_tokens: truncated,
        insertions_disabled: no_insert,
        steps_run,
        budget_exhausted: used >= cfg.budget,
    })
}

/// Built-in heads for testing the sampler without a model.
#[derive(Debug, Clone, PartialEq)]
pub enum ToyHead {
    /// All rates zero.
    Zero,
    /// Large substitution rate at position 0 only, always proposing the first vocabulary token.
    Sub0,
    /// The same insertion, deletion and substitution rate everywhere, uniform tokens.
    Uniform { ins: f64, del: f64, sub: f64 },
}

impl std::str::FromStr for ToyHead {
    type Err = String;

    /// `zero`, `sub0`, `uniform:<rate>` or `uniform:<ins>,<del>,<sub>`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.split_once(':') {
            None if s == "zero" => Ok(ToyHead::Zero),
            None if s == "sub0" => Ok(ToyHead::Sub0),
            Some(("uniform", rates)) => {
                let v: Vec<f64> = rates
                    .split(',')
                    .map(|x| x.trim().parse::<f64>().map_err(|_| format!("bad rate {x:?}")))
                    .collect::<Result<_, _>>()?;
                if v.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
                    return Err("rates must be finite and non-negative".into());
                }
                match v[..] {
                    [r] => Ok(ToyHead::Uniform { ins: r, del: r, sub: r }),
                    [ins, del, sub] => Ok(ToyHead::Uniform { ins, del, sub }),
                    _ => Err("uniform takes one rate or three".into()),
                }
            }
            _ => Err(format!("unknown toy head {s:?}")),
        }
    }
}

/// Rate used by [`ToyHead::Sub0`]; with any `dt` it saturates the step clamp.
pub const SUB0_RATE: f64 = 1e6;

impl ToyHead {
    pub fn heads(&self, seq: &TokenSequence) -> EditFlowHeads {
        let vocab = Alphabet::for_kind(seq.kind).sampling_tokens();
        let mut h = EditFlowHeads::zeros(vocab, seq.len());
        match *self {
            ToyHead::Zero => {}
            ToyHead::Sub0 => {
                if !h.is_empty() {
                    h.sub_rate[0] = SUB0_RATE;
                    let mut row = vec![0.0; h.vocab.len()];
                    row[0] = 1.0;
                    h.q_sub[0] = row;
                }
            }
            ToyHead::Uniform { ins, del, sub } => {
                h.ins_rate.iter_mut().for_each(|r| *r = ins);
                h.del_rate.iter_mut().for_each(|r| *r = del);
                h.sub_rate.iter_mut().for_each(|r| *r = sub);
            }
        }
        h
    }
}

/// Fetches heads through the `editflow_heads` oracle op.
pub fn heads_from_oracle(oracle: &OracleHandle, seq: &TokenSequence, t: f64) -> Result<EditFlowHeads, FlowError> {
    let key = match seq.kind {
        AlphabetKind::Protein => "sequence",
        AlphabetKind::Smiles => "smiles",
    };
    let v = oracle.call("editflow_heads", serde_json::json!({ key: detokenize(seq), "t": t }))?;
    serde_json::from_value(v).map_err(|e| FlowError::BadHeads(format!("oracle returned malformed heads: {e}")))
}
