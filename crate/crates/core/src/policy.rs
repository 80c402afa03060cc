//! Critic-free group-relative policy-optimization math over caller-supplied
//! token log-probabilities.
//!
//! Nothing here samples or differentiates. Each objective returns its scalar
//! value plus per-token coefficients `dJ/dlp_t`, so any autodiff stack can
//! rebuild the loss as `sum_t coeff_t * lp_t` (up to a constant).
//!
//! Normalization is the same for all three algorithms: mean over tokens within
//! a rollout, then mean over the rollouts of the group. Sums run in input
//! order, so results do not depend on how groups are scheduled.

use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Grpo,
    Gspo,
    Cispo,
}

impl FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "grpo" => Ok(Algorithm::Grpo),
            "gspo" => Ok(Algorithm::Gspo),
            "cispo" => Ok(Algorithm::Cispo),
            _ => Err(format!("unknown algorithm {s:?} (expected grpo, gspo or cispo)")),
        }
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Algorithm::Grpo => "grpo",
            Algorithm::Gspo => "gspo",
            Algorithm::Cispo => "cispo",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurrogateConfig {
    #[serde(default = "default_version")]
    pub version: u32,
    pub algorithm: Algorithm,
    /// Lower clip width: ratios are clipped below at `1 - eps_low`. Unused by CISPO.
    pub eps_low: f64,
    /// Upper clip width (GRPO, GSPO) or absolute weight cap (CISPO).
    pub eps_high: f64,
    pub beta_kl: f64,
    pub adv_epsilon: f64,
    /// Group size the preset was tuned for. Informational.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_generations: Option<usize>,
    /// Optimizer steps per generated batch. Informational.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps_per_generation: Option<usize>,
}

fn default_version() -> u32 {
    1
}

pub const PRESET_NAMES: [&str; 3] = ["grpo-paper", "gspo-paper", "cispo-paper"];

const GRPO_PRESET: &str = include_str!("../../../presets/grpo-paper.toml");
const GSPO_PRESET: &str = include_str!("../../../presets/gspo-paper.toml");
const CISPO_PRESET: &str = include_str!("../../../presets/cispo-paper.toml");

impl SurrogateConfig {
    pub fn from_toml(text: &str) -> Result<Self, PolicyError> {
        let cfg: SurrogateConfig = toml::from_str(text).map_err(|e| PolicyError::BadConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// One of [`PRESET_NAMES`].
    pub fn preset(name: &str) -> Result<Self, PolicyError> {
        let text = match name {
            "grpo-paper" => GRPO_PRESET,
            "gspo-paper" => GSPO_PRESET,
            "cispo-paper" => CISPO_PRESET,
            other => return Err(PolicyError::BadConfig(format!("unknown preset {other:?}"))),
        };
        Self::from_toml(text)
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        let bad = |m: &str| Err(PolicyError::BadConfig(m.to_string()));
        if self.version != 1 {
            return bad("unsupported preset version");
        }
        if !(self.eps_low > 0.0 && self.eps_low.is_finite()) {
            return bad("eps_low must be positive and finite");
        }
        if !(self.eps_high > 0.0 && self.eps_high.is_finite()) {
            return bad("eps_high must be positive and finite");
        }
        if !(self.beta_kl >= 0.0 && self.beta_kl.is_finite()) {
            return bad("beta_kl must be non-negative and finite");
        }
        if !(self.adv_epsilon > 0.0 && self.adv_epsilon.is_finite()) {
            return bad("adv_epsilon must be positive and finite");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PolicyError {
    #[error("group of {0} rollouts; advantages need at least 2")]
    DegenerateGroup(usize),
    #[error("rollout {rollout}: {what} has {found} entries, expected {expected}")]
    LengthMismatch { rollout: usize, what: &'static str, expected: usize, found: usize },
    #[error("rollout {0} has no tokens")]
    EmptyRollout(usize),
    #[error("rollout {rollout}: {what}[{token}] = {value} is not a finite log-probability")]
    InvalidLogProb { rollout: usize, what: &'static str, token: usize, value: f64 },
    #[error("reward {index} is not finite")]
    NonFiniteReward { index: usize },
    #[error("rollout {rollout}: importance ratio overflows (log-ratio {log_ratio})")]
    NonFiniteRatio { rollout: usize, log_ratio: f64 },
    #[error("beta_kl > 0 but rollout {0} has no reference log-probabilities")]
    MissingReference(usize),
    #[error("objective for {expected} called with a {found} config")]
    WrongAlgorithm { expected: Algorithm, found: Algorithm },
    #[error("bad config: {0}")]
    BadConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rollout {
    pub reward: f64,
    /// Token log-probabilities under the current policy.
    pub logprobs: Vec<f64>,
    /// Under the behaviour policy that sampled the rollout.
    pub old_logprobs: Vec<f64>,
    /// Under the frozen reference policy; required when `beta_kl > 0`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ref_logprobs: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutGroup {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub rollouts: Vec<Rollout>,
}

impl RolloutGroup {
    pub fn rewards(&self) -> Vec<f64> {
        self.rollouts.iter().map(|r| r.reward).collect()
    }

    fn validate(&self, need_ref: bool) -> Result<(), PolicyError> {
        if self.rollouts.len() < 2 {
            return Err(PolicyError::DegenerateGroup(self.rollouts.len()));
        }
        for (i, r) in self.rollouts.iter().enumerate() {
            let n = r.logprobs.len();
            if n == 0 {
                return Err(PolicyError::EmptyRollout(i));
            }
            let mut arrays = vec![("logprobs", &r.logprobs), ("old_logprobs", &r.old_logprobs)];
            match &r.ref_logprobs {
                Some(lp_ref) => arrays.push(("ref_logprobs", lp_ref)),
                None if need_ref => return Err(PolicyError::MissingReference(i)),
                None => {}
            }
            for (what, xs) in arrays {
                if xs.len() != n {
                    return Err(PolicyError::LengthMismatch { rollout: i, what, expected: n, found: xs.len() });
                }
                if let Some((token, &value)) = xs.iter().enumerate().find(|(_, v)| !(v.is_finite() && **v <= 0.0)) {
                    return Err(PolicyError::InvalidLogProb { rollout: i, what, token, value });
                }
            }
        }
        Ok(())
    }
}

/// `A_i = (r_i - mean) / (std + eps)` with the population standard deviation.
pub fn group_advantages(rewards: &[f64], adv_epsilon: f64) -> Result<Vec<f64>, PolicyError> {
    if rewards.len() < 2 {
        return Err(PolicyError::DegenerateGroup(rewards.len()));
    }
    if let Some(index) = rewards.iter().position(|r| !r.is_finite()) {
        return Err(PolicyError::NonFiniteReward { index });
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    let denom = var.sqrt() + adv_epsilon;
    Ok(rewards.iter().map(|r| (r - mean) / denom).collect())
}

/// Per-token `exp(d) - d - 1` with `d = lp_ref - lp`. Never negative.
pub fn kl_estimator(lp: f64, lp_ref: f64) -> f64 {
    let d = lp_ref - lp;
    // exp_m1 keeps precision for tiny gaps
    (d.exp_m1() - d).max(0.0)
}

/// Mean of [`kl_estimator`] over tokens.
pub fn kl_to_reference(lp: &[f64], lp_ref: &[f64]) -> Result<f64, PolicyError> {
    if lp.len() != lp_ref.len() {
        return Err(PolicyError::LengthMismatch {
            rollout: 0,
            what: "ref_logprobs",
            expected: lp.len(),
            found: lp_ref.len(),
        });
    }
    if lp.is_empty() {
        return Err(PolicyError::EmptyRollout(0));
    }
    Ok(lp.iter().zip(lp_ref).map(|(&a, &b)| kl_estimator(a, b)).sum::<f64>() / lp.len() as f64)
}

/// `d kl_estimator / d lp`.
fn kl_grad(lp: f64, lp_ref: f64) -> f64 {
    -(lp_ref - lp).exp_m1()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutTerms {
    pub advantage: f64,
    /// Token-mean surrogate of this rollout (sequence term for GSPO).
    pub surrogate: f64,
    /// Token-mean KL estimate; `None` without reference log-probs.
    pub kl: Option<f64>,
    /// Per-token ratios `exp(lp - lp_old)`.
    pub ratios: Vec<f64>,
    /// GSPO sequence ratio.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sequence_ratio: Option<f64>,
    /// CISPO detached weights `min(ratio, eps_high)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    /// Tokens (or, for GSPO, the whole sequence) where the clip was active.
    pub clipped: usize,
    /// `dJ/dlp_t` for each token of this rollout, with weights held fixed for CISPO.
    pub coefficients: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveReport {
    pub algorithm: Algorithm,
    pub surrogate: f64,
    /// Group-mean KL; `None` when no rollout carries reference log-probs.
    pub kl: Option<f64>,
    /// `surrogate - beta_kl * kl`, the quantity to maximize.
    pub objective: f64,
    /// CISPO only: `mean_i mean_t w * A * lp`, the loss carrier.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weighted_logprob: Option<f64>,
    pub rollouts: Vec<RolloutTerms>,
}

fn ratio(rollout: usize, log_ratio: f64) -> Result<f64, PolicyError> {
    let r = log_ratio.exp();
    if r.is_finite() {
        Ok(r)
    } else {
        Err(PolicyError::NonFiniteRatio { rollout, log_ratio })
    }
}

/// Token ratios, checked for overflow.
fn token_ratios(i: usize, r: &Rollout) -> Result<Vec<f64>, PolicyError> {
    r.logprobs.iter().zip(&r.old_logprobs).map(|(lp, old)| ratio(i, lp - old)).collect()
}

/// `min(x*A, clip(x, lo, hi)*A)`, the per-token (or per-sequence) surrogate.
pub fn surrogate_term(x: f64, a: f64, lo: f64, hi: f64) -> f64 {
    clipped_term(x, a, lo, hi).0
}

/// `min(x*A, clip(x)*A)` and whether the gradient flows through `x`.
fn clipped_term(x: f64, a: f64, lo: f64, hi: f64) -> (f64, bool) {
    let unclipped = x * a;
    let clipped = x.clamp(lo, hi) * a;
    if (lo..=hi).contains(&x) || unclipped < clipped {
        (unclipped, true)
    } else {
        (clipped, false)
    }
}

struct Ctx {
    cfg: SurrogateConfig,
    advantages: Vec<f64>,
    g: f64,
}

fn prepare(group: &RolloutGroup, cfg: &SurrogateConfig, expected: Algorithm) -> Result<Ctx, PolicyError> {
    if cfg.algorithm != expected {
        return Err(PolicyError::WrongAlgorithm { expected, found: cfg.algorithm });
    }
    cfg.validate()?;
    group.validate(cfg.beta_kl > 0.0)?;
    let advantages = group_advantages(&group.rewards(), cfg.adv_epsilon)?;
    Ok(Ctx { cfg: cfg.clone(), advantages, g: group.rollouts.len() as f64 })
}

/// Adds the KL part of the per-token coefficients and returns the rollout KL.
fn apply_kl(r: &Rollout, coeffs: &mut [f64], beta: f64, scale: f64) -> Option<f64> {
    let lp_ref = r.ref_logprobs.as_ref()?;
    for (c, (&lp, &lr)) in coeffs.iter_mut().zip(r.logprobs.iter().zip(lp_ref)) {
        *c -= beta * kl_grad(lp, lr) * scale;
    }
    Some(kl_to_reference(&r.logprobs, lp_ref).expect("validated lengths"))
}

fn finish(
    algorithm: Algorithm,
    ctx: &Ctx,
    rollouts: Vec<RolloutTerms>,
    weighted_logprob: Option<f64>,
) -> ObjectiveReport {
    let surrogate = rollouts.iter().map(|t| t.surrogate).sum::<f64>() / ctx.g;
    let kl = if rollouts.iter().all(|t| t.kl.is_some()) {
        Some(rollouts.iter().map(|t| t.kl.unwrap()).sum::<f64>() / ctx.g)
    } else {
        None
    };
    let objective = surrogate - ctx.cfg.beta_kl * kl.unwrap_or(0.0);
    ObjectiveReport { algorithm, surrogate, kl, objective, weighted_logprob, rollouts }
}

/// Token-level clipped surrogate:
/// `mean_i mean_t min(rho*A, clip(rho, 1-eps_low, 1+eps_high)*A) - beta*KL`.
pub fn grpo_objective(group: &RolloutGroup, cfg: &SurrogateConfig) -> Result<ObjectiveReport, PolicyError> {
    let ctx = prepare(group, cfg, Algorithm::Grpo)?;
    let (lo, hi) = (1.0 - cfg.eps_low, 1.0 + cfg.eps_high);
    let mut terms = Vec::with_capacity(group.rollouts.len());
    for (i, r) in group.rollouts.iter().enumerate() {
        let a = ctx.advantages[i];
        let n = r.logprobs.len() as f64;
        let scale = 1.0 / (ctx.g * n);
        let ratios = token_ratios(i, r)?;
        let mut sum = 0.0;
        let mut clipped = 0;
        let mut coefficients = Vec::with_capacity(ratios.len());
        for &rho in &ratios {
            let (v, live) = clipped_term(rho, a, lo, hi);
            sum += v;
            clipped += usize::from(!(lo..=hi).contains(&rho));
            coefficients.push(if live { rho * a * scale } else { 0.0 });
        }
        let kl = apply_kl(r, &mut coefficients, cfg.beta_kl, scale);
        terms.push(RolloutTerms {
            advantage: a,
            surrogate: sum / n,
            kl,
            ratios,
            sequence_ratio: None,
            weights: None,
            clipped,
            coefficients,
        });
    }
    Ok(finish(Algorithm::Grpo, &ctx, terms, None))
}

/// Sequence-level ratio `s_i = exp(mean_t (lp - lp_old))`, clipped into
/// `[1 - eps_low, 1 + eps_high]`.
pub fn gspo_objective(group: &RolloutGroup, cfg: &SurrogateConfig) -> Result<ObjectiveReport, PolicyError> {
    let ctx = prepare(group, cfg, Algorithm::Gspo)?;
    let (lo, hi) = (1.0 - cfg.eps_low, 1.0 + cfg.eps_high);
    let mut terms = Vec::with_capacity(group.rollouts.len());
    for (i, r) in group.rollouts.iter().enumerate() {
        let a = ctx.advantages[i];
        let n = r.logprobs.len() as f64;
        let scale = 1.0 / (ctx.g * n);
        let ratios = token_ratios(i, r)?;
        let log_s = r.logprobs.iter().zip(&r.old_logprobs).map(|(lp, old)| lp - old).sum::<f64>() / n;
        let s = ratio(i, log_s)?;
        let (v, live) = clipped_term(s, a, lo, hi);
        let g = if live { a * s / (ctx.g * n) } else { 0.0 };
        let mut coefficients = vec![g; ratios.len()];
        let kl = apply_kl(r, &mut coefficients, cfg.beta_kl, scale);
        terms.push(RolloutTerms {
            advantage: a,
            surrogate: v,
            kl,
            ratios,
            sequence_ratio: Some(s),
            weights: None,
            clipped: usize::from(!(lo..=hi).contains(&s)),
            coefficients,
        });
    }
    Ok(finish(Algorithm::Gspo, &ctx, terms, None))
}

/// Detached clipped importance weights `w = min(rho, eps_high)`.
///
/// The reported surrogate is `mean_i mean_t w*A`, which equals the mean
/// advantage on-policy like the other two objectives. The loss carrier
/// `mean_i mean_t w*A*lp` is reported separately; the coefficients are its
/// gradient with `w` held fixed.
pub fn cispo_objective(group: &RolloutGroup, cfg: &SurrogateConfig) -> Result<ObjectiveReport, PolicyError> {
    let ctx = prepare(group, cfg, Algorithm::Cispo)?;
    let mut terms = Vec::with_capacity(group.rollouts.len());
    let mut carrier = 0.0;
    for (i, r) in group.rollouts.iter().enumerate() {
        let a = ctx.advantages[i];
        let n = r.logprobs.len() as f64;
        let scale = 1.0 / (ctx.g * n);
        let ratios = token_ratios(i, r)?;
        let weights: Vec<f64> = ratios.iter().map(|&rho| rho.min(cfg.eps_high)).collect();
        let sum: f64 = weights.iter().map(|w| w * a).sum();
        carrier += weights.iter().zip(&r.logprobs).map(|(w, lp)| w * a * lp).sum::<f64>() * scale;
        let mut coefficients: Vec<f64> = weights.iter().map(|w| w * a * scale).collect();
        let kl = apply_kl(r, &mut coefficients, cfg.beta_kl, scale);
        terms.push(RolloutTerms {
            advantage: a,
            surrogate: sum / n,
            kl,
            clipped: ratios.iter().filter(|&&rho| rho > cfg.eps_high).count(),
            ratios,
            sequence_ratio: None,
            weights: Some(weights),
            coefficients,
        });
    }
    Ok(finish(Algorithm::Cispo, &ctx, terms, Some(carrier)))
}

/// Dispatches on `cfg.algorithm`.
pub fn objective(group: &RolloutGroup, cfg: &SurrogateConfig) -> Result<ObjectiveReport, PolicyError> {
    match cfg.algorithm {
        Algorithm::Grpo => grpo_objective(group, cfg),
        Algorithm::Gspo => gspo_objective(group, cfg),
        Algorithm::Cispo => cispo_objective(group, cfg),
    }
}
