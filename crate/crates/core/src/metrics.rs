//! Evaluation metrics: protein Success / Uniqueness / Novelty, molecule
//! validity, strict and loose success, off-target shift, task aggregation
//! and EMA smoothing for reward logs.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::oracle::{MolProps, OracleError, OracleHandle};
use crate::seq::{detokenize, TokenSequence};

pub use crate::oracle::Property;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Direction {
    Increase,
    Decrease,
}

impl Direction {
    pub fn sign(self) -> f64 {
        match self {
            Direction::Increase => 1.0,
            Direction::Decrease => -1.0,
        }
    }
}

impl Serialize for Direction {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_i8(self.sign() as i8)
    }
}

impl<'de> Deserialize<'de> for Direction {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        match i8::deserialize(d)? {
            1 => Ok(Direction::Increase),
            -1 => Ok(Direction::Decrease),
            other => Err(serde::de::Error::custom(format!("direction must be +1 or -1, got {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructionSpec {
    pub task_name: String,
    pub targets: BTreeMap<Property, Direction>,
}

impl InstructionSpec {
    pub fn new(task_name: impl Into<String>, targets: &[(Property, Direction)]) -> Self {
        InstructionSpec { task_name: task_name.into(), targets: targets.iter().copied().collect() }
    }

    pub fn non_targets(&self) -> impl Iterator<Item = Property> + '_ {
        Property::ALL.into_iter().filter(|p| !self.targets.contains_key(p))
    }
}

/// The fourteen single- and dual-objective molecule editing conditions.
///
/// Solubility is read off LogP (less soluble = higher LogP), permeability off
/// TPSA (higher permeability = lower TPSA) and drug-likeness off QED.
pub fn drugassist_tasks() -> Vec<InstructionSpec> {
    use Direction::{Decrease as Dn, Increase as Up};
    use Property::*;
    vec![
        InstructionSpec::new("Higher permeability", &[(Tpsa, Dn)]),
        InstructionSpec::new("Less like a drug", &[(Qed, Dn)]),
        InstructionSpec::new("Less soluble in water", &[(LogP, Up)]),
        InstructionSpec::new("Less soluble in water + more HBA", &[(LogP, Up), (Hba, Up)]),
        InstructionSpec::new("Less soluble in water + more HBD", &[(LogP, Up), (Hbd, Up)]),
        InstructionSpec::new("Lower permeability", &[(Tpsa, Up)]),
        InstructionSpec::new("More like a drug", &[(Qed, Up)]),
        InstructionSpec::new("More soluble in water", &[(LogP, Dn)]),
        InstructionSpec::new("More soluble in water + higher permeability", &[(LogP, Dn), (Tpsa, Dn)]),
        InstructionSpec::new("More soluble in water + lower permeability", &[(LogP, Dn), (Tpsa, Up)]),
        InstructionSpec::new("More soluble in water + more HBA", &[(LogP, Dn), (Hba, Up)]),
        InstructionSpec::new("More soluble in water + more HBD", &[(LogP, Dn), (Hbd, Up)]),
        InstructionSpec::new("With more HBA", &[(Hba, Up)]),
        InstructionSpec::new("With more HBD", &[(Hbd, Up)]),
    ]
}

/// Looks a task up by name, case-insensitively.
pub fn find_task(name: &str) -> Option<InstructionSpec> {
    drugassist_tasks().into_iter().find(|t| t.task_name.eq_ignore_ascii_case(name.trim()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSet {
    pub logp: f64,
    pub qed: f64,
    pub tpsa: f64,
    pub hba: f64,
    pub hbd: f64,
}

impl Default for ThresholdSet {
    fn default() -> Self {
        ThresholdSet { logp: 0.5, qed: 0.1, tpsa: 10.0, hba: 1.0, hbd: 1.0 }
    }
}

impl ThresholdSet {
    pub fn get(&self, p: Property) -> f64 {
        match p {
            Property::LogP => self.logp,
            Property::Qed => self.qed,
            Property::Tpsa => self.tpsa,
            Property::Hba => self.hba,
            Property::Hbd => self.hbd,
        }
    }

    pub fn all_positive(&self) -> bool {
        Property::ALL.iter().all(|&p| self.get(p) > 0.0 && self.get(p).is_finite())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("shift is undefined for an invalid molecule")]
    InvalidMoleculeInput,
    #[error("no candidates to evaluate")]
    NoCandidates,
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProteinEvalReport {
    pub n: usize,
    pub success: usize,
    pub unique: usize,
    pub novel: usize,
    pub success_rate: f64,
    /// `unique / success`; `None` when nothing improved.
    pub uniqueness: Option<f64>,
    /// `novel / unique`; `None` when nothing improved.
    pub novelty: Option<f64>,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Success / Uniqueness / Novelty from precomputed scores.
pub fn protein_eval_scores(
    src_score: f64,
    candidates: &[TokenSequence],
    scores: &[f64],
    train_positives: &HashSet<String>,
) -> Result<ProteinEvalReport, MetricsError> {
    if candidates.is_empty() {
        return Err(MetricsError::NoCandidates);
    }
    assert_eq!(candidates.len(), scores.len(), "one score per candidate");
    let improved: Vec<String> =
        candidates.iter().zip(scores).filter(|(_, &s)| s > src_score).map(|(c, _)| detokenize(c)).collect();
    let unique: BTreeSet<&String> = improved.iter().collect();
    let novel = unique.iter().filter(|s| !train_positives.contains(s.as_str())).count();
    let n = candidates.len();
    Ok(ProteinEvalReport {
        n,
        success: improved.len(),
        unique: unique.len(),
        novel,
        success_rate: improved.len() as f64 / n as f64,
        uniqueness: ratio(unique.len(), improved.len()),
        novelty: ratio(novel, unique.len()),
    })
}

pub fn protein_eval(
    src: &TokenSequence,
    candidates: &[TokenSequence],
    train_positives: &HashSet<String>,
    oracle: &OracleHandle,
) -> Result<ProteinEvalReport, MetricsError> {
    if candidates.is_empty() {
        return Err(MetricsError::NoCandidates);
    }
    let src_score = oracle.fitness(src)?;
    let scores = oracle.fitness_many(candidates)?;
    protein_eval_scores(src_score, candidates, &scores, train_positives)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MolSuccess {
    pub valid: bool,
    pub strict: bool,
    pub loose: bool,
}

/// Invalid source or output counts as failure on both criteria.
pub fn mol_success(src: &MolProps, out: &MolProps, instr: &InstructionSpec, thresholds: &ThresholdSet) -> MolSuccess {
    let (Some(s), Some(o)) = (src.values(), out.values()) else {
        return MolSuccess { valid: out.valid, strict: false, loose: false };
    };
    let gains: Vec<(Property, f64)> =
        instr.targets.iter().map(|(&p, &dir)| (p, dir.sign() * (o.get(p) - s.get(p)))).collect();
    MolSuccess {
        valid: true,
        strict: gains.iter().all(|&(p, g)| g >= thresholds.get(p)),
        loose: gains.iter().all(|&(_, g)| g > 0.0),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShiftResult {
    pub violations: usize,
    pub violated: BTreeSet<Property>,
}

/// Non-target properties whose change reaches their threshold.
pub fn mol_shift(
    src: &MolProps,
    out: &MolProps,
    instr: &InstructionSpec,
    thresholds: &ThresholdSet,
) -> Result<ShiftResult, MetricsError> {
    let (Some(s), Some(o)) = (src.values(), out.values()) else {
        return Err(MetricsError::InvalidMoleculeInput);
    };
    let violated: BTreeSet<Property> =
        instr.non_targets().filter(|&p| (o.get(p) - s.get(p)).abs() >= thresholds.get(p)).collect();
    Ok(ShiftResult { violations: violated.len(), violated })
}

/// Per-instance molecule outcome, the unit [`mol_aggregate`] consumes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceResult {
    pub task: String,
    pub valid: bool,
    pub strict: bool,
    pub loose: bool,
    /// Number of shift violations; present for valid outputs only.
    pub shift: Option<usize>,
}

pub fn evaluate_instance(
    src: &MolProps,
    out: &MolProps,
    instr: &InstructionSpec,
    thresholds: &ThresholdSet,
) -> InstanceResult {
    let s = mol_success(src, out, instr, thresholds);
    let shift = mol_shift(src, out, instr, thresholds).ok().map(|r| r.violations);
    InstanceResult { task: instr.task_name.clone(), valid: s.valid, strict: s.strict, loose: s.loose, shift }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskMetrics {
    pub n: usize,
    pub validity: f64,
    pub strict: f64,
    pub loose: f64,
    /// Over valid outputs; `None` when there are none.
    pub shift_rate: Option<f64>,
    pub shift_avg: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    /// Tasks in order of first appearance.
    pub tasks: Vec<(String, TaskMetrics)>,
    /// Unweighted mean of the per-task rates.
    pub overall: TaskMetrics,
}

fn task_metrics(items: &[&InstanceResult]) -> TaskMetrics {
    let n = items.len();
    let frac = |f: &dyn Fn(&InstanceResult) -> bool| items.iter().filter(|r| f(r)).count() as f64 / n as f64;
    let shifts: Vec<usize> = items.iter().filter(|r| r.valid).filter_map(|r| r.shift).collect();
    TaskMetrics {
        n,
        validity: frac(&|r| r.valid),
        strict: frac(&|r| r.valid && r.strict),
        loose: frac(&|r| r.valid && r.loose),
        shift_rate: ratio(shifts.iter().filter(|&&v| v > 0).count(), shifts.len()),
        shift_avg: (!shifts.is_empty()).then(|| shifts.iter().sum::<usize>() as f64 / shifts.len() as f64),
    }
}

/// Mean of the defined values, `None` if none are.
pub fn task_mean(values: &[Option<f64>]) -> Option<f64> {
    let defined: Vec<f64> = values.iter().flatten().copied().collect();
    (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64)
}

pub fn mol_aggregate(instances: &[InstanceResult]) -> AggregateReport {
    let mut order: Vec<String> = Vec::new();
    let mut groups: BTreeMap<&str, Vec<&InstanceResult>> = BTreeMap::new();
    for r in instances {
        if !groups.contains_key(r.task.as_str()) {
            order.push(r.task.clone());
        }
        groups.entry(r.task.as_str()).or_default().push(r);
    }
    let tasks: Vec<(String, TaskMetrics)> =
        order.iter().map(|t| (t.clone(), task_metrics(&groups[t.as_str()]))).collect();
    let col = |f: &dyn Fn(&TaskMetrics) -> Option<f64>| task_mean(&tasks.iter().map(|(_, m)| f(m)).collect::<Vec<_>>());
    let overall = TaskMetrics {
        n: instances.len(),
        validity: col(&|m| Some(m.validity)).unwrap_or(0.0),
        strict: col(&|m| Some(m.strict)).unwrap_or(0.0),
        loose: col(&|m| Some(m.loose)).unwrap_or(0.0),
        shift_rate: col(&|m| m.shift_rate),
        shift_avg: col(&|m| m.shift_avg),
    };
    AggregateReport { tasks, overall }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

/// CSV with one row per task plus an `Overall` row. Undefined cells are empty.
pub fn aggregate_csv(report: &AggregateReport) -> String {
    let mut out = String::from("task,n,valid,strict,loose,shift_rate,shift_avg\n");
    let rows = report.tasks.iter().map(|(t, m)| (t.as_str(), m)).chain([("Overall", &report.overall)]);
    for (task, m) in rows {
        let task = if task.contains(',') || task.contains('"') {
            format!("\"{}\"", task.replace('"', "\"\""))
        } else {
            task.to_string()
        };
        out.push_str(&format!(
            "{task},{},{:.6},{:.6},{:.6},{},{}\n",
            m.n,
            m.validity,
            m.strict,
            m.loose,
            fmt_opt(m.shift_rate),
            fmt_opt(m.shift_avg)
        ));
    }
    out
}

/// `y_0 = v_0`, `y_k = decay * y_{k-1} + (1 - decay) * v_k`.
pub fn ema(values: &[f64], decay: f64) -> Vec<f64> {
    assert!((0.0..1.0).contains(&decay), "decay must lie in [0, 1)");
    let mut out = Vec::with_capacity(values.len());
    let mut acc = None;
    for &v in values {
        let y = match acc {
            None => v,
            Some(prev) => decay * prev + (1.0 - decay) * v,
        };
        acc = Some(y);
        out.push(y);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::PropValues;
    use crate::seq::tokenize_protein;

    fn props(logp: f64, qed: f64, tpsa: f64, hba: u32, hbd: u32) -> MolProps {
        MolProps::valid(PropValues { logp, qed, tpsa, hba, hbd })
    }

    #[test]
    fn thresholds_default() {
        let t = ThresholdSet::default();
        assert_eq!((t.logp, t.qed, t.tpsa, t.hba, t.hbd), (0.5, 0.1, 10.0, 1.0, 1.0));
        assert!(t.all_positive());
    }

    #[test]
    fn success_examples() {
        let instr = InstructionSpec::new("Less soluble in water", &[(Property::LogP, Direction::Increase)]);
        let t = ThresholdSet::default();
        let src = props(1.0, 0.5, 40.0, 2, 1);
        let r = mol_success(&src, &props(1.6, 0.5, 40.0, 2, 1), &instr, &t);
        assert!(r.strict && r.loose);
        let r = mol_success(&src, &props(1.3, 0.5, 40.0, 2, 1), &instr, &t);
        assert!(r.loose && !r.strict);
        let r = mol_success(&src, &MolProps::invalid(), &instr, &t);
        assert_eq!(r, MolSuccess { valid: false, strict: false, loose: false });

        let dual = InstructionSpec::new(
            "dual",
            &[(Property::LogP, Direction::Increase), (Property::Hba, Direction::Increase)],
        );
        let r = mol_success(&src, &props(2.0, 0.5, 40.0, 2, 1), &dual, &t);
        assert!(!r.strict && !r.loose);
    }

    #[test]
    fn shift_examples() {
        let instr = InstructionSpec::new("logp", &[(Property::LogP, Direction::Increase)]);
        let t = ThresholdSet::default();
        let src = props(1.0, 0.5, 40.0, 2, 1);
        assert_eq!(mol_shift(&src, &src, &instr, &t).unwrap().violations, 0);
        let r = mol_shift(&src, &props(2.0, 0.5, 28.0, 2, 1), &instr, &t).unwrap();
        assert_eq!(r.violations, 1);
        assert!(r.violated.contains(&Property::Tpsa));
        let everything = InstructionSpec::new("all", &Property::ALL.map(|p| (p, Direction::Increase)));
        assert_eq!(mol_shift(&src, &props(9.0, 0.0, 0.0, 9, 9), &everything, &t).unwrap().violations, 0);
        assert_eq!(mol_shift(&src, &MolProps::invalid(), &instr, &t), Err(MetricsError::InvalidMoleculeInput));
    }

    fn inst(task: &str, valid: bool, strict: bool, shift: Option<usize>) -> InstanceResult {
        InstanceResult { task: task.into(), valid, strict, loose: strict, shift }
    }

    #[test]
    fn aggregate_examples() {
        let mut v: Vec<InstanceResult> = (0..9).map(|_| inst("a", true, true, Some(0))).collect();
        v.push(inst("a", false, false, None));
        let r = mol_aggregate(&v);
        assert!((r.tasks[0].1.validity - 0.9).abs() < 1e-12);
        assert!((r.tasks[0].1.strict - 0.9).abs() < 1e-12);
        assert_eq!(r.overall, r.tasks[0].1);

        let v = vec![inst("b", true, false, Some(0)), inst("b", true, false, Some(2)), inst("b", true, false, Some(1))];
        let m = &mol_aggregate(&v).tasks[0].1;
        assert!((m.shift_rate.unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert!((m.shift_avg.unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn csv_has_overall_row() {
        let v = vec![inst("x", true, true, Some(1)), inst("y, z", false, false, None)];
        let csv = aggregate_csv(&mol_aggregate(&v));
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 4);
        assert!(lines[2].starts_with("\"y, z\",1,0.000000"));
        assert!(lines[2].ends_with(",,"));
        assert!(lines[3].starts_with("Overall,2,0.500000,0.500000"));
    }

    #[test]
    fn protein_eval_undefined_ratios() {
        let src = tokenize_protein("GA").unwrap();
        let cands = vec![tokenize_protein("AA").unwrap(); 3];
        let oracle = OracleHandle::toy(Default::default());
        let r = protein_eval(&src, &cands, &HashSet::new(), &oracle).unwrap();
        assert_eq!((r.success, r.uniqueness, r.novelty), (0, None, None));

        let cands = vec![tokenize_protein("GG").unwrap(); 3];
        let r = protein_eval(&src, &cands, &HashSet::new(), &oracle).unwrap();
        assert_eq!((r.success, r.unique, r.novel), (3, 1, 1));
        let train: HashSet<String> = ["GG".to_string()].into();
        let r = protein_eval(&src, &cands, &train, &oracle).unwrap();
        assert_eq!((r.novel, r.novelty), (0, Some(0.0)));
        assert!(matches!(protein_eval(&src, &[], &train, &oracle), Err(MetricsError::NoCandidates)));
    }

    #[test]
    fn ema_examples() {
        assert_eq!(ema(&[2.0, 2.0, 2.0], 0.99), vec![2.0, 2.0, 2.0]);
        assert_eq!(ema(&[1.0, 5.0, -3.0], 0.0), vec![1.0, 5.0, -3.0]);
        let y = ema(&[0.0, 1.0], 0.99);
        assert_eq!(y[0], 0.0);
        assert!((y[1] - 0.01).abs() < 1e-15);
        assert!(ema(&[], 0.5).is_empty());
    }

    #[test]
    fn tasks_table() {
        let tasks = drugassist_tasks();
        assert_eq!(tasks.len(), 14);
        assert!(find_task("with more hba").is_some());
        assert_eq!(tasks.iter().filter(|t| t.targets.len() == 2).count(), 6);
    }
}
