//! Rewards for edit-trajectory completions, gated by parse-and-execute
//! consistency.
//!
//! A completion whose script does not reproduce its claimed output gets the
//! configured `inconsistent_reward` (0 by default) and the oracle is never
//! contacted for it.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::align::levenshtein_distance;
use crate::metrics::{mol_shift, mol_success, InstructionSpec, ThresholdSet};
use crate::oracle::{tanimoto, LengthMismatch, OracleError, OracleHandle};
use crate::seq::{AlphabetKind, TokenSequence};
use crate::trace::{check_completion, verify_consistency, ConsistencyReport, Trajectory};

const DEFAULT_PRESET: &str = include_str!("../../../presets/reward-default.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProteinRewardSpec {
    pub d_min: usize,
    pub d_max: usize,
    #[serde(default)]
    pub inconsistent_reward: f64,
}

impl Default for ProteinRewardSpec {
    fn default() -> Self {
        ProteinRewardSpec { d_min: 1, d_max: 3, inconsistent_reward: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MolRewardSpec {
    pub s_half: f64,
    pub s_full: f64,
    /// Added once per drifting non-target property.
    pub stability_penalty: f64,
    #[serde(default)]
    pub inconsistent_reward: f64,
    /// Strict success cutoffs, reused as stability margins.
    pub thresholds: ThresholdSet,
}

impl Default for MolRewardSpec {
    fn default() -> Self {
        MolRewardSpec {
            s_half: 0.4,
            s_full: 0.6,
            stability_penalty: -0.25,
            inconsistent_reward: 0.0,
            thresholds: ThresholdSet::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardPreset {
    pub version: u32,
    pub protein: ProteinRewardSpec,
    pub molecule: MolRewardSpec,
}

impl RewardPreset {
    pub fn from_toml(text: &str) -> Result<Self, RewardError> {
        let p: RewardPreset = toml::from_str(text).map_err(|e| RewardError::BadConfig(e.to_string()))?;
        p.validate()?;
        Ok(p)
    }

    /// The shipped `reward-default` preset.
    pub fn builtin() -> Self {
        Self::from_toml(DEFAULT_PRESET).expect("shipped reward preset is valid")
    }

    pub fn validate(&self) -> Result<(), RewardError> {
        let bad = |m: &str| Err(RewardError::BadConfig(m.to_string()));
        if self.version != 1 {
            return bad("unsupported preset version");
        }
        let p = &self.protein;
        if !(1 <= p.d_min && p.d_min <= p.d_max) {
            return bad("need 1 <= d_min <= d_max");
        }
        let m = &self.molecule;
        if !(0.0 <= m.s_half && m.s_half <= m.s_full && m.s_full <= 1.0) {
            return bad("need 0 <= s_half <= s_full <= 1");
        }
        if !(m.stability_penalty <= 0.0 && m.stability_penalty.is_finite()) {
            return bad("stability_penalty must be finite and <= 0");
        }
        if !m.thresholds.all_positive() {
            return bad("thresholds must be positive");
        }
        if !(p.inconsistent_reward.is_finite() && m.inconsistent_reward.is_finite()) {
            return bad("inconsistent_reward must be finite");
        }
        Ok(())
    }
}

impl Default for RewardPreset {
    fn default() -> Self {
        Self::builtin()
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RewardError {
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error("source molecule is invalid according to the oracle")]
    InvalidSource,
    #[error("expected a {expected} source, got {found}")]
    WrongAlphabet { expected: AlphabetKind, found: AlphabetKind },
    #[error(transparent)]
    Fingerprint(#[from] LengthMismatch),
    #[error("bad reward config: {0}")]
    BadConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RewardKind {
    Protein,
    Molecule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub kind: RewardKind,
    pub total: f64,
    /// Named terms; `consistency_gate` is always present (1 passed, 0 failed).
    pub components: BTreeMap<String, f64>,
    /// Executed script length; `None` when the gate failed.
    pub d: Option<usize>,
    /// The script is longer than the edit distance between source and output.
    pub redundant: bool,
    pub consistency: ConsistencyReport,
}

impl RewardBreakdown {
    fn gated(kind: RewardKind, consistency: ConsistencyReport, inconsistent_reward: f64) -> Self {
        let components = BTreeMap::from([
            ("consistency_gate".to_string(), 0.0),
            ("inconsistent_reward".to_string(), inconsistent_reward),
        ]);
        RewardBreakdown { kind, total: inconsistent_reward, components, d: None, redundant: false, consistency }
    }

    pub fn gate_passed(&self) -> bool {
        self.component("consistency_gate") == 1.0
    }

    pub fn component(&self, name: &str) -> f64 {
        self.components.get(name).copied().unwrap_or(0.0)
    }

    /// Rebuilds `total` from `components`.
    pub fn recompute(&self) -> f64 {
        if !self.gate_passed() {
            return self.component("inconsistent_reward");
        }
        match self.kind {
            RewardKind::Protein => self.component("edit_indicator") + self.component("improvement_indicator"),
            RewardKind::Molecule => {
                self.component("validity") * self.component("prop") * self.component("sim") + self.component("stable")
            }
        }
    }
}

fn indicator(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

fn require(kind: AlphabetKind, src: &TokenSequence) -> Result<(), RewardError> {
    if src.kind == kind {
        Ok(())
    } else {
        Err(RewardError::WrongAlphabet { expected: kind, found: src.kind })
    }
}

fn passed(kind: RewardKind, src: &TokenSequence, traj: &Trajectory, consistency: ConsistencyReport) -> RewardBreakdown {
    let d = traj.script.len();
    RewardBreakdown {
        kind,
        total: 0.0,
        components: BTreeMap::from([("consistency_gate".to_string(), 1.0)]),
        d: Some(d),
        redundant: d > levenshtein_distance(&src.tokens, &traj.output.tokens),
        consistency,
    }
}

/// `1[d_min <= d <= d_max] + 1[f(out) > f(src)]` with `d` the script length.
pub fn protein_reward(
    src: &TokenSequence,
    traj: &Trajectory,
    spec: &ProteinRewardSpec,
    oracle: &OracleHandle,
) -> Result<RewardBreakdown, RewardError> {
    require(AlphabetKind::Protein, src)?;
    let consistency = verify_consistency(src, traj);
    if !consistency.consistent() {
        return Ok(RewardBreakdown::gated(RewardKind::Protein, consistency, spec.inconsistent_reward));
    }
    let mut b = passed(RewardKind::Protein, src, traj, consistency);
    let d = traj.script.len();
    let scores = oracle.fitness_many(&[src.clone(), traj.output.clone()])?;
    b.components.insert("edit_indicator".into(), indicator(spec.d_min <= d && d <= spec.d_max));
    b.components.insert("improvement_indicator".into(), indicator(scores[1] > scores[0]));
    b.total = b.recompute();
    Ok(b)
}

/// Scores raw completion text; unparsable text fails the gate.
pub fn protein_reward_text(
    src: &TokenSequence,
    text: &str,
    spec: &ProteinRewardSpec,
    oracle: &OracleHandle,
) -> Result<RewardBreakdown, RewardError> {
    require(AlphabetKind::Protein, src)?;
    match check_completion(src, text, AlphabetKind::Protein) {
        (_, Some(traj)) => protein_reward(src, &traj, spec, oracle),
        (report, None) => Ok(RewardBreakdown::gated(RewardKind::Protein, report, spec.inconsistent_reward)),
    }
}

/// `R_prop`: 1 when every target clears its threshold, 0.5 when every target
/// only moves the right way, else 0.
pub fn prop_level(strict: bool, loose: bool) -> f64 {
    if strict {
        1.0
    } else if loose {
        0.5
    } else {
        0.0
    }
}

/// `R_sim` from a Tanimoto similarity.
pub fn sim_level(similarity: f64, spec: &MolRewardSpec) -> f64 {
    if similarity >= spec.s_full {
        1.0
    } else if similarity >= spec.s_half {
        0.5
    } else {
        0.0
    }
}

/// `valid * R_prop * R_sim + R_stable`, with `R_stable = penalty * violations`.
pub fn molecule_total(valid: bool, prop: f64, sim: f64, violations: usize, spec: &MolRewardSpec) -> f64 {
    indicator(valid) * prop * sim + stability_term(violations, spec)
}

/// `penalty * violations`, as `+0.0` rather than `-0.0` when nothing drifted.
fn stability_term(violations: usize, spec: &MolRewardSpec) -> f64 {
    spec.stability_penalty * violations as f64 + 0.0
}

/// Molecule reward. Invalid outputs score 0: without properties there is no
/// drift to penalize.
pub fn molecule_reward(
    src: &TokenSequence,
    traj: &Trajectory,
    instruction: &InstructionSpec,
    spec: &MolRewardSpec,
    oracle: &OracleHandle,
) -> Result<RewardBreakdown, RewardError> {
    require(AlphabetKind::Smiles, src)?;
    let consistency = verify_consistency(src, traj);
    if !consistency.consistent() {
        return Ok(RewardBreakdown::gated(RewardKind::Molecule, consistency, spec.inconsistent_reward));
    }
    let mut b = passed(RewardKind::Molecule, src, traj, consistency);
    let src_props = oracle.mol_properties(src)?;
    if !src_props.valid {
        return Err(RewardError::InvalidSource);
    }
    let out_props = oracle.mol_properties(&traj.output)?;
    if !out_props.valid {
        for k in ["validity", "prop", "sim", "stable"] {
            b.components.insert(k.into(), 0.0);
        }
        b.total = b.recompute();
        return Ok(b);
    }
    let success = mol_success(&src_props, &out_props, instruction, &spec.thresholds);
    let violations =
        mol_shift(&src_props, &out_props, instruction, &spec.thresholds).expect("both molecules are valid").violations;
    let similarity = tanimoto(&oracle.fingerprint(src)?, &oracle.fingerprint(&traj.output)?)?;
    b.components.insert("validity".into(), 1.0);
    b.components.insert("prop".into(), prop_level(success.strict, success.loose));
    b.components.insert("sim".into(), sim_level(similarity, spec));
    b.components.insert("similarity".into(), similarity);
    b.components.insert("stable".into(), stability_term(violations, spec));
    b.total = b.recompute();
    Ok(b)
}

pub fn molecule_reward_text(
    src: &TokenSequence,
    text: &str,
    instruction: &InstructionSpec,
    spec: &MolRewardSpec,
    oracle: &OracleHandle,
) -> Result<RewardBreakdown, RewardError> {
    require(AlphabetKind::Smiles, src)?;
    match check_completion(src, text, AlphabetKind::Smiles) {
        (_, Some(traj)) => molecule_reward(src, &traj, instruction, spec, oracle),
        (report, None) => Ok(RewardBreakdown::gated(RewardKind::Molecule, report, spec.inconsistent_reward)),
    }
}
