//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.
//!
//! Every tolerance and corpus size is pinned in the constants below.

// `ensure!` negates its condition so that NaN fails.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::collections::{BTreeSet, HashMap, HashSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, ExitCode};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use edittraj_core::align::shortest_edit_script;
use edittraj_core::edit::{execute, parse_script, render_script, EditOp, EditScript};
use edittraj_core::flow::{
    align_with_blanks, editflow_loss, sample_step_edits, sample_zt, simulate_budgeted, EditFlowHeads, FlowOp,
    KappaSchedule, RemainingEdit, RemainingEdits, SamplerConfig, ToyHead,
};
use edittraj_core::metrics::{
    drugassist_tasks, evaluate_instance, find_task, mol_aggregate, protein_eval_scores, task_mean, InstanceResult,
    InstructionSpec, ThresholdSet,
};
use edittraj_core::oracle::{
    all_capabilities, MolProps, OracleBackend, OracleError, PoisonedOracle, PropValues, Property, TransportKind,
};
use edittraj_core::policy::{
    group_advantages, kl_estimator, objective, Algorithm, Rollout, RolloutGroup, SurrogateConfig,
};
use edittraj_core::reward::{molecule_reward_text, protein_reward_text, RewardPreset};
use edittraj_core::seq::{tokenize_smiles, AMINO_ACIDS};
use edittraj_core::trace::render_completion;
use edittraj_core::{AlphabetKind, OracleHandle, TokenSequence};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

const SEED: u64 = 42;

const C1_PAIRS: usize = 10_000;
const C1_MAX_LEN: usize = 12;
const C1_ALPHABET: [&str; 6] = ["A", "C", "D", "E", "F", "G"];
const C1_TIME_LIMIT: Duration = Duration::from_secs(60);

const C3_RANDOM_SCRIPTS: usize = 1_000;
const C3_MIN_MALFORMED: usize = 20;

const C4_CASES: usize = 500;

const C5_TOL: f64 = 1e-12;

const C6_ADV_TOL: f64 = 1e-6;
const C6_KL_PAIRS: usize = 100_000;
const C6_AGREE_TOL: f64 = 1e-12;

const C7_Q_QUARTER_TOL: f64 = 1e-9;
const C7_ZT_DRAWS: usize = 10_000;

const C8_FUZZ_RUNS: usize = 1_000;
const C8_CLAMP_TRIALS: usize = 100_000;
const C8_CLAMP_P: f64 = 0.9;
const C8_SIGMAS: f64 = 3.0;

const C9_INSTANCES: usize = 1_000;
/// Per-task validity of a reference supervised run, with its reported overall.
const C9_REF_VALID: [f64; 14] =
    [0.582, 0.816, 0.802, 0.714, 0.780, 0.820, 0.500, 0.788, 0.676, 0.800, 0.772, 0.836, 0.806, 0.812];
const C9_REF_VALID_OVERALL: f64 = 0.750;

const C10_RUNS: usize = 3;
const C10_THREADS: [usize; 2] = [1, 8];

type Outcome = Result<String, String>;
type Criterion = (&'static str, &'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn rng(stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(SEED);
    r.set_stream(stream);
    r
}

fn protein(tokens: Vec<String>) -> TokenSequence {
    TokenSequence::new(AlphabetKind::Protein, tokens)
}

fn p(s: &str) -> TokenSequence {
    protein(s.chars().map(|c| c.to_string()).collect())
}

fn random_seq(r: &mut impl Rng, alphabet: &[&str], max_len: usize) -> TokenSequence {
    let n = r.gen_range(0..=max_len);
    protein((0..n).map(|_| alphabet.choose(r).unwrap().to_string()).collect())
}

/// Plain recursive edit distance with a memo table.
fn brute_distance(a: &[String], b: &[String]) -> usize {
    fn go(a: &[String], b: &[String], i: usize, j: usize, memo: &mut HashMap<(usize, usize), usize>) -> usize {
        if i == a.len() {
            return b.len() - j;
        }
        if j == b.len() {
            return a.len() - i;
        }
        if let Some(&v) = memo.get(&(i, j)) {
            return v;
        }
        let v = if a[i] == b[j] {
            go(a, b, i + 1, j + 1, memo)
        } else {
            1 + go(a, b, i + 1, j, memo).min(go(a, b, i, j + 1, memo)).min(go(a, b, i + 1, j + 1, memo))
        };
        memo.insert((i, j), v);
        v
    }
    go(a, b, 0, 0, &mut HashMap::new())
}

fn c1() -> Outcome {
    let mut r = rng(1);
    let start = Instant::now();
    for k in 0..C1_PAIRS {
        let src = random_seq(&mut r, &C1_ALPHABET, C1_MAX_LEN);
        let tgt = random_seq(&mut r, &C1_ALPHABET, C1_MAX_LEN);
        let script = shortest_edit_script(&src, &tgt).map_err(|e| e.to_string())?;
        let out = execute(&src, &script).map_err(|e| format!("pair {k}: {e}"))?;
        ensure!(out == tgt, "pair {k}: {src} -> {out}, expected {tgt}");
        let d = brute_distance(&src.tokens, &tgt.tokens);
        ensure!(script.len() == d, "pair {k}: script length {} vs distance {d}", script.len());
    }
    let elapsed = start.elapsed();
    ensure!(elapsed < C1_TIME_LIMIT, "took {elapsed:?}");
    Ok(format!("{C1_PAIRS} pairs, 0 failures, {:.2}s single-threaded", elapsed.as_secs_f64()))
}

fn c2() -> Outcome {
    // [A,B,C,D] -> [B,C,D,E], spelled with residues A->A, B->C, C->D, D->E, E->F
    let (src, tgt) = (p("ACDE"), p("CDEF"));
    let script = shortest_edit_script(&src, &tgt).map_err(|e| e.to_string())?;
    let expected = EditScript::new(vec![EditOp::delete(0, "A"), EditOp::insert(3, "F")]);
    ensure!(script == expected, "got {:?}", render_script(&script));
    let out = execute(&src, &script).map_err(|e| e.to_string())?;
    ensure!(out == tgt, "executes to {out}");
    Ok("[DELETE A at 0, INSERT F at 3], executes to target".into())
}

fn random_op(r: &mut impl Rng) -> EditOp {
    let tok = |r: &mut ChaCha8Rng| AMINO_ACIDS.choose(r).unwrap().to_string();
    let mut rr = ChaCha8Rng::seed_from_u64(r.gen());
    let pos = r.gen_range(0..1_000_000usize);
    match r.gen_range(0..4) {
        0 => EditOp::insert(pos, tok(&mut rr)),
        1 => EditOp::Delete { position: pos, token: None },
        2 => EditOp::delete(pos, tok(&mut rr)),
        _ => EditOp::replace(pos, tok(&mut rr), tok(&mut rr)),
    }
}

const MALFORMED: [&str; 24] = [
    "INSERT A at position",
    "INSERT A position 3",
    "INSERT at position 3",
    "INSERT A at position -1",
    "INSERT A at position 1.5",
    "INSERT A at position 01",
    "INSERT A at position 3 extra",
    "INSERT Z at position 0",
    "INSERT AA at position 0",
    "insert A at position 0",
    "DELETE",
    "DELETE A",
    "DELETE A at 3",
    "DELETE A at position x",
    "DELETE at position",
    "REPLACE A with at position 0",
    "REPLACE A B at position 0",
    "REPLACE A with C",
    "REPLACE A with C at position 99999999999999999999999",
    "REPLACE A with B at position 0",
    "SWAP A with C at position 0",
    "MOVE A at position 1",
    "<think>",
    "INSERT A at position 2 # comment",
];

fn c3() -> Outcome {
    let mut r = rng(3);
    for k in 0..C3_RANDOM_SCRIPTS {
        let n = r.gen_range(0..8);
        let s = EditScript::new((0..n).map(|_| random_op(&mut r)).collect());
        let back = parse_script(&render_script(&s), AlphabetKind::Protein).map_err(|e| format!("script {k}: {e}"))?;
        ensure!(back == s, "script {k} does not round-trip");
    }
    let molecule_trace = "DELETE C at position 21\nREPLACE ) with 2 at position 31\nINSERT = at position 7\nDELETE c at position 11\nINSERT C at position 8";
    let parsed = parse_script(molecule_trace, AlphabetKind::Smiles).map_err(|e| e.to_string())?;
    ensure!(parsed.len() == 5, "molecule trace has {} ops", parsed.len());
    ensure!(render_script(&parsed) == molecule_trace, "molecule trace does not re-render verbatim");
    let reparsed = parse_script(&render_script(&parsed), AlphabetKind::Smiles).map_err(|e| e.to_string())?;
    ensure!(reparsed == parsed, "molecule trace does not round-trip");
    ensure!(MALFORMED.len() >= C3_MIN_MALFORMED, "corpus too small");
    for (k, bad) in MALFORMED.iter().enumerate() {
        // a valid prefix of k % 3 lines plus a blank line puts the bad line at a known number
        let prefix = "INSERT A at position 0\n".repeat(k % 3);
        let text = format!("{prefix}\n{bad}\nDELETE A at position 0\n");
        let line = k % 3 + 2;
        match parse_script(&text, AlphabetKind::Protein) {
            Ok(_) => return Err(format!("accepted {bad:?}")),
            Err(e) => ensure!(e.line() == line, "{bad:?}: reported line {}, expected {line}", e.line()),
        }
    }
    Ok(format!(
        "{C3_RANDOM_SCRIPTS} random scripts + molecule trace round-trip; {} malformed lines rejected at the right line",
        MALFORMED.len()
    ))
}

/// An inconsistent completion of one of four kinds.
fn inconsistent_completion(r: &mut impl Rng, src: &TokenSequence, kind: AlphabetKind) -> String {
    let letters: &[&str] = match kind {
        AlphabetKind::Protein => &AMINO_ACIDS,
        AlphabetKind::Smiles => &["C", "N", "O"],
    };
    let tgt = {
        let mut t = src.tokens.clone();
        t.push(letters.choose(r).unwrap().to_string());
        TokenSequence::new(kind, t)
    };
    let script = shortest_edit_script(src, &tgt).unwrap();
    match r.gen_range(0..4) {
        // claimed output disagrees with the script
        0 => {
            let mut wrong = tgt.tokens.clone();
            wrong.push(letters[0].to_string());
            render_completion(&script, &TokenSequence::new(kind, wrong))
        }
        // out-of-range op
        1 => format!("<think>\nDELETE at position {}\n</think>\n{}", src.len() + 5, src),
        // no think block
        2 => tgt.to_string(),
        // unparsable script line
        _ => format!("<think>\nFROB {}\n</think>\n{}", letters[0], tgt),
    }
}

fn c4() -> Outcome {
    let poisoned = Arc::new(PoisonedOracle::default());
    let h = OracleHandle::new(poisoned.clone(), all_capabilities(), Duration::from_secs(1));
    let preset = RewardPreset::builtin();
    let task = find_task("More like a drug").unwrap();
    let mut r = rng(4);
    for k in 0..C4_CASES {
        let b = if k % 2 == 0 {
            let src = random_seq(&mut r, &AMINO_ACIDS, 10);
            protein_reward_text(
                &src,
                &inconsistent_completion(&mut r, &src, AlphabetKind::Protein),
                &preset.protein,
                &h,
            )
        } else {
            let src = tokenize_smiles(["CCO", "c1ccccc1", "CC(=O)N", "CCN(C)C"].choose(&mut r).unwrap()).unwrap();
            molecule_reward_text(
                &src,
                &inconsistent_completion(&mut r, &src, AlphabetKind::Smiles),
                &task,
                &preset.molecule,
                &h,
            )
        }
        .map_err(|e| format!("case {k}: {e}"))?;
        ensure!(b.total == 0.0, "case {k}: total {}", b.total);
        ensure!(!b.gate_passed(), "case {k}: gate passed");
    }
    ensure!(poisoned.calls() == 0, "poisoned oracle contacted {} times", poisoned.calls());
    Ok(format!("{C4_CASES} inconsistent cases, all totals 0, 0 oracle calls"))
}

/// Answers `batch` fitness with `[src_score, out_score]` and molecule ops from tables.
#[derive(Default)]
struct TableOracle {
    fitness_pair: Option<(f64, f64)>,
    props: HashMap<String, Value>,
    fingerprints: HashMap<String, Vec<usize>>,
    calls: AtomicUsize,
}

const FP_BITS: usize = 64;

impl OracleBackend for TableOracle {
    fn call(&self, op: &str, payload: Value) -> Result<Value, OracleError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let key = || payload["smiles"].as_str().unwrap_or_default().to_string();
        let missing = |what: &str| OracleError::Refused(format!("no {what} for {payload}"));
        match op {
            "batch" => {
                let (s, o) = self.fitness_pair.ok_or_else(|| missing("fitness"))?;
                Ok(json!({ "results": [
                    { "ok": true, "result": { "score": s } },
                    { "ok": true, "result": { "score": o } },
                ]}))
            }
            "mol_props" => self.props.get(&key()).cloned().ok_or_else(|| missing("props")),
            "fingerprint" => {
                let on = self.fingerprints.get(&key()).ok_or_else(|| missing("fingerprint"))?;
                Ok(json!({ "n_bits": FP_BITS, "on_bits": on }))
            }
            other => Err(OracleError::Unsupported(other.into())),
        }
    }

    fn transport(&self) -> TransportKind {
        TransportKind::InProcessToy
    }
}

fn props_json(v: PropValues) -> Value {
    serde_json::to_value(MolProps::valid(v)).unwrap()
}

fn c5() -> Outcome {
    let preset = RewardPreset::builtin();
    // protein: d in 0..=5, improved in {0, 1}
    let src = p("ACDEFGHIKL");
    let mut cases = 0;
    for d in 0..=5usize {
        for improved in [false, true] {
            let mut out = src.tokens.clone();
            for t in out.iter_mut().take(d) {
                *t = "W".into();
            }
            let out = protein(out);
            let script = shortest_edit_script(&src, &out).unwrap();
            ensure!(script.len() == d, "fixture script has {} ops for d={d}", script.len());
            let mock = Arc::new(TableOracle {
                fitness_pair: Some((0.0, if improved { 1.0 } else { -1.0 })),
                ..Default::default()
            });
            let h = OracleHandle::new(mock, all_capabilities(), Duration::from_secs(1));
            let b = protein_reward_text(&src, &render_completion(&script, &out), &preset.protein, &h)
                .map_err(|e| e.to_string())?;
            let expected = f64::from(u8::from((1..=3).contains(&d))) + f64::from(u8::from(improved));
            ensure!(b.total == expected, "d={d} improved={improved}: {} vs {expected}", b.total);
            cases += 1;
        }
    }

    // molecule: validity x prop level x sim level x drift
    let task = find_task("Less soluble in water").unwrap(); // LogP up; QED, TPSA, HBA, HBD are off-target
    let base = PropValues { logp: 1.0, qed: 0.5, tpsa: 40.0, hba: 2, hbd: 1 };
    let src_smiles = "CCO";
    let src_bits: Vec<usize> = (0..10).collect();
    let logp_delta = [-0.1, 0.2, 0.6]; // below loose, loose only, strict
    let prop_value = [0.0, 0.5, 1.0];
    let shared_bits = [2usize, 5, 8]; // Tanimoto 0.2, 0.5, 0.8
    let sim_value = [0.0, 0.5, 1.0];
    let penalty = -0.25;
    let mut mol_cases = 0;
    for validity in ["inconsistent", "invalid", "valid"] {
        for (pi, &dl) in logp_delta.iter().enumerate() {
            for (si, &shared) in shared_bits.iter().enumerate() {
                for drift in 0..3usize {
                    let out_smiles = format!("C{}O", "C".repeat(1 + mol_cases));
                    let mut out = base;
                    out.logp += dl;
                    if drift >= 1 {
                        out.tpsa += 12.0;
                    }
                    if drift >= 2 {
                        out.hba += 1;
                    }
                    let mut mock = TableOracle::default();
                    mock.props.insert(src_smiles.into(), props_json(base));
                    mock.fingerprints.insert(src_smiles.into(), src_bits.clone());
                    mock.fingerprints.insert(out_smiles.clone(), (0..shared).collect());
                    let out_props = if validity == "invalid" {
                        serde_json::to_value(MolProps::invalid()).unwrap()
                    } else {
                        props_json(out)
                    };
                    mock.props.insert(out_smiles.clone(), out_props);
                    let mock = Arc::new(mock);
                    let h = OracleHandle::new(mock.clone(), all_capabilities(), Duration::from_secs(1));
                    let src = tokenize_smiles(src_smiles).unwrap();
                    let tgt = tokenize_smiles(&out_smiles).unwrap();
                    let script = shortest_edit_script(&src, &tgt).unwrap();
                    let text = if validity == "inconsistent" {
                        render_completion(&script, &tokenize_smiles(&format!("{out_smiles}N")).unwrap())
                    } else {
                        render_completion(&script, &tgt)
                    };
                    let b =
                        molecule_reward_text(&src, &text, &task, &preset.molecule, &h).map_err(|e| e.to_string())?;
                    let expected = match validity {
                        "valid" => prop_value[pi] * sim_value[si] + penalty * drift as f64,
                        _ => 0.0,
                    };
                    ensure!(
                        (b.total - expected).abs() <= C5_TOL,
                        "{validity} prop={pi} sim={si} drift={drift}: {} vs {expected}",
                        b.total
                    );
                    if validity == "inconsistent" {
                        ensure!(mock.calls.load(Ordering::SeqCst) == 0, "inconsistent case reached the oracle");
                    }
                    mol_cases += 1;
                }
            }
        }
    }
    ensure!(cases == 12 && mol_cases == 81, "grid sizes {cases}, {mol_cases}");
    Ok(format!("protein grid {cases}/12 exact; molecule grid {mol_cases}/81 within {C5_TOL:e}"))
}

fn rollout(reward: f64, lp: Vec<f64>, old: Vec<f64>) -> Rollout {
    Rollout { reward, ref_logprobs: Some(lp.clone()), logprobs: lp, old_logprobs: old }
}

fn c6() -> Outcome {
    let grpo = SurrogateConfig::preset("grpo-paper").map_err(|e| e.to_string())?;
    let adv = group_advantages(&[1.0, 0.0, 1.0, 0.0], grpo.adv_epsilon).map_err(|e| e.to_string())?;
    for (a, e) in adv.iter().zip([1.0, -1.0, 1.0, -1.0]) {
        ensure!((a - e).abs() <= C6_ADV_TOL, "advantages {adv:?}");
    }
    let (lo, hi) = (1.0 - grpo.eps_low, 1.0 + grpo.eps_high);
    let up = edittraj_core::policy::surrogate_term(1.5, 1.0, lo, hi);
    let down = edittraj_core::policy::surrogate_term(0.5, -1.0, lo, hi);
    ensure!(up == 1.2, "(1.5, 1, 0.2) -> {up:?}");
    ensure!(down == -0.8, "(0.5, -1, 0.2) -> {down:?}");

    let mut r = rng(6);
    for _ in 0..C6_KL_PAIRS {
        let lp: f64 = -r.gen_range(0.0..20.0);
        let lr: f64 = -r.gen_range(0.0..20.0);
        let k = kl_estimator(lp, lr);
        ensure!(k >= 0.0, "KL({lp}, {lr}) = {k}");
        ensure!(kl_estimator(lp, lp) == 0.0, "KL at equality {}", kl_estimator(lp, lp));
    }

    let mut worst: f64 = 0.0;
    for g in 0..50 {
        let n = r.gen_range(2..9);
        let rollouts: Vec<Rollout> = (0..n)
            .map(|_| {
                let len = r.gen_range(1..12);
                let lp: Vec<f64> = (0..len).map(|_| -r.gen_range(0.01..8.0)).collect();
                rollout(r.gen_range(-1.0..2.0), lp.clone(), lp)
            })
            .collect();
        let group = RolloutGroup { id: Some(format!("g{g}")), rollouts };
        let rewards = group.rewards();
        if rewards.iter().all(|x| *x == rewards[0]) {
            continue;
        }
        let adv = group_advantages(&rewards, grpo.adv_epsilon).unwrap();
        let mean_adv = adv.iter().sum::<f64>() / adv.len() as f64;
        let mut values = Vec::new();
        for (name, algo) in
            [("grpo-paper", Algorithm::Grpo), ("gspo-paper", Algorithm::Gspo), ("cispo-paper", Algorithm::Cispo)]
        {
            let mut cfg = SurrogateConfig::preset(name).unwrap();
            cfg.beta_kl = 0.0;
            ensure!(cfg.algorithm == algo, "preset {name}");
            let rep = objective(&group, &cfg).map_err(|e| e.to_string())?;
            values.push(rep.objective);
            worst = worst.max((rep.objective - mean_adv).abs());
        }
        for v in &values {
            ensure!((v - mean_adv).abs() <= C6_AGREE_TOL, "group {g}: {values:?} vs mean advantage {mean_adv}");
        }
    }
    Ok(format!(
        "advantages within {C6_ADV_TOL:e}; clips 1.2 / -0.8 exact; KL >= 0 on {C6_KL_PAIRS} pairs; on-policy agreement {worst:.1e} <= {C6_AGREE_TOL:e}"
    ))
}

fn c7() -> Outcome {
    let sched = KappaSchedule::new(3.0).map_err(|e| e.to_string())?;
    let loss = |q: f64| {
        let mut h = EditFlowHeads::zeros(vec!["A".into(), "C".into()], 1);
        h.sub_rate[0] = 2.0;
        h.q_sub[0] = vec![1.0 - q, q];
        let rem = RemainingEdits {
            edits: vec![RemainingEdit { aligned: 0, current: 0, op: FlowOp::Substitute("C".into()) }],
        };
        editflow_loss(&h, &rem, 0.5, &sched).map(|l| l.loss).map_err(|e| e.to_string())
    };
    let half = loss(0.5)?;
    ensure!(half == 2.0, "Q=0.5 gives {half:?}");
    let quarter = loss(0.25)?;
    let expect = 2.0 + 6.0 / 7.0 * 2f64.ln();
    ensure!((quarter - expect).abs() <= C7_Q_QUARTER_TOL, "Q=0.25 gives {quarter} vs {expect}");

    let mut r = rng(7);
    for k in 0..C7_ZT_DRAWS {
        let a = random_seq(&mut r, &C1_ALPHABET, 10);
        let b = random_seq(&mut r, &C1_ALPHABET, 10);
        let pair = align_with_blanks(&a, &b).map_err(|e| e.to_string())?;
        let (z0, x0) = sample_zt(&pair, 0.0, &sched, &mut r).map_err(|e| e.to_string())?;
        let (z1, x1) = sample_zt(&pair, 1.0, &sched, &mut r).map_err(|e| e.to_string())?;
        ensure!(z0 == pair.z0 && x0 == a, "draw {k}: t=0 is not the source");
        ensure!(z1 == pair.z1 && x1 == b, "draw {k}: t=1 is not the target");
    }
    Ok(format!(
        "loss 2.0 exact, 2+(6/7)ln2 within {C7_Q_QUARTER_TOL:e}; sample_zt endpoints exact over {C7_ZT_DRAWS} draws"
    ))
}

fn c8() -> Outcome {
    let mut r = rng(8);
    let mut truncations = 0;
    for k in 0..C8_FUZZ_RUNS {
        let seq0 = random_seq(&mut r, &C1_ALPHABET, 10);
        let head =
            ToyHead::Uniform { ins: r.gen_range(0.0..4.0), del: r.gen_range(0.0..2.0), sub: r.gen_range(0.0..2.0) };
        let cfg = SamplerConfig {
            steps: r.gen_range(1..20),
            budget: r.gen_range(1..12),
            length_cap: seq0.len() + r.gen_range(0..4),
        };
        let mut run_rng = ChaCha8Rng::seed_from_u64(r.gen());
        let run = simulate_budgeted(&seq0, |s, _| Ok(head.heads(s)), cfg, &mut run_rng).map_err(|e| e.to_string())?;
        ensure!(run.edits_used <= cfg.budget, "run {k}: {} edits over budget {}", run.edits_used, cfg.budget);
        ensure!(
            run.final_seq.len() <= cfg.length_cap,
            "run {k}: length {} over cap {}",
            run.final_seq.len(),
            cfg.length_cap
        );
        let replay = execute(&seq0, &run.script).map_err(|e| format!("run {k}: replay failed: {e}"))?;
        ensure!(replay == run.final_seq, "run {k}: replay {replay} vs {}", run.final_seq);
        truncations += usize::from(run.truncated_tokens > 0);
    }

    // one position, deletion rate 2 with dt 1: lambda * dt = 2 clamps to 0.9
    let mut h = EditFlowHeads::zeros(vec!["A".into()], 1);
    h.del_rate[0] = 2.0;
    let mut fired = 0usize;
    for _ in 0..C8_CLAMP_TRIALS {
        fired += usize::from(!sample_step_edits(&h, 1.0, &mut r).is_empty());
    }
    let rate = fired as f64 / C8_CLAMP_TRIALS as f64;
    let sigma = (C8_CLAMP_P * (1.0 - C8_CLAMP_P) / C8_CLAMP_TRIALS as f64).sqrt();
    ensure!((rate - C8_CLAMP_P).abs() <= C8_SIGMAS * sigma, "trigger rate {rate} vs 0.9 +- {}", C8_SIGMAS * sigma);
    Ok(format!(
        "{C8_FUZZ_RUNS} runs within budget and cap ({truncations} hit the cap), all replay; clamp rate {rate:.4} (0.9 +- {:.4})",
        C8_SIGMAS * sigma
    ))
}

fn random_props(r: &mut impl Rng) -> MolProps {
    if r.gen_bool(0.15) {
        return MolProps::invalid();
    }
    // coarse grids make exact threshold ties common
    MolProps::valid(PropValues {
        logp: f64::from(r.gen_range(-8..8)) * 0.25,
        qed: f64::from(r.gen_range(0..10)) * 0.05,
        tpsa: f64::from(r.gen_range(0..12)) * 5.0,
        hba: r.gen_range(0..6),
        hbd: r.gen_range(0..4),
    })
}

fn brute_instance(src: &MolProps, out: &MolProps, task: &InstructionSpec, thr: &ThresholdSet) -> InstanceResult {
    let (Some(s), Some(o)) = (src.values(), out.values()) else {
        return InstanceResult {
            task: task.task_name.clone(),
            valid: out.valid,
            strict: false,
            loose: false,
            shift: None,
        };
    };
    let mut strict = true;
    let mut loose = true;
    let mut shift = 0;
    for prop in Property::ALL {
        let delta = o.get(prop) - s.get(prop);
        match task.targets.get(&prop) {
            Some(dir) => {
                let gain = dir.sign() * delta;
                strict &= gain >= thr.get(prop);
                loose &= gain > 0.0;
            }
            None => shift += usize::from(delta.abs() >= thr.get(prop)),
        }
    }
    InstanceResult { task: task.task_name.clone(), valid: true, strict, loose, shift: Some(shift) }
}

fn c9() -> Outcome {
    let mut r = rng(9);
    let thr = ThresholdSet::default();
    let tasks = drugassist_tasks();

    // protein: Success / Uniqueness / Novelty
    for k in 0..C9_INSTANCES {
        let n = r.gen_range(1..12);
        let cands: Vec<TokenSequence> = (0..n).map(|_| random_seq(&mut r, &["A", "G"], 3)).collect();
        let scores: Vec<f64> = (0..n).map(|_| f64::from(r.gen_range(-2..3))).collect();
        let train: HashSet<String> =
            (0..r.gen_range(0..4)).map(|_| random_seq(&mut r, &["A", "G"], 3).to_string()).collect();
        let src_score = 0.0;
        let rep = protein_eval_scores(src_score, &cands, &scores, &train).map_err(|e| e.to_string())?;
        let improved: Vec<String> =
            cands.iter().zip(&scores).filter(|(_, s)| **s > src_score).map(|(c, _)| c.to_string()).collect();
        let mut uniq = improved.clone();
        uniq.sort();
        uniq.dedup();
        let novel = uniq.iter().filter(|u| !train.contains(*u)).count();
        ensure!(
            (rep.n, rep.success, rep.unique, rep.novel) == (n, improved.len(), uniq.len(), novel),
            "protein instance {k}: {rep:?}"
        );
        ensure!(rep.success_rate == improved.len() as f64 / n as f64, "protein instance {k}: success rate");
    }

    // molecule: per-instance outcomes, then aggregation
    let mut instances = Vec::with_capacity(C9_INSTANCES);
    for k in 0..C9_INSTANCES {
        let task = tasks.choose(&mut r).unwrap();
        let (s, o) = (random_props(&mut r), random_props(&mut r));
        let got = evaluate_instance(&s, &o, task, &thr);
        let want = brute_instance(&s, &o, task, &thr);
        ensure!(got == want, "molecule instance {k}: {got:?} vs {want:?}");
        ensure!(!got.strict || got.loose, "molecule instance {k}: strict without loose");
        instances.push(got);
    }
    let agg = mol_aggregate(&instances);
    let mut names: Vec<&str> = Vec::new();
    for i in &instances {
        if !names.contains(&i.task.as_str()) {
            names.push(&i.task);
        }
    }
    ensure!(agg.tasks.len() == names.len(), "task count");
    let mut valid_rates = Vec::new();
    for ((name, m), want) in agg.tasks.iter().zip(&names) {
        ensure!(name == want, "task order {name} vs {want}");
        let rows: Vec<&InstanceResult> = instances.iter().filter(|i| i.task == *name).collect();
        let n = rows.len() as f64;
        let valid = rows.iter().filter(|i| i.valid).count() as f64 / n;
        let strict = rows.iter().filter(|i| i.valid && i.strict).count() as f64 / n;
        let loose = rows.iter().filter(|i| i.valid && i.loose).count() as f64 / n;
        ensure!((m.validity, m.strict, m.loose) == (valid, strict, loose), "task {name}: {m:?}");
        let shifts: Vec<usize> = rows.iter().filter_map(|i| i.shift).collect();
        if !shifts.is_empty() {
            let rate = shifts.iter().filter(|s| **s > 0).count() as f64 / shifts.len() as f64;
            ensure!(m.shift_rate == Some(rate), "task {name}: shift rate");
        }
        valid_rates.push(Some(valid));
    }
    ensure!(Some(agg.overall.validity) == task_mean(&valid_rates), "overall validity");
    let set: BTreeSet<bool> = instances.iter().map(|i| i.strict).collect();
    ensure!(set.len() == 2, "corpus never exercised both strict outcomes");

    // reported overall is the task mean of the per-task values
    let overall = task_mean(&C9_REF_VALID.map(Some)).unwrap();
    let rounded = (overall * 1000.0).round() / 1000.0;
    ensure!(rounded == C9_REF_VALID_OVERALL, "recomputed {overall} rounds to {rounded}");
    Ok(format!(
        "{C9_INSTANCES} protein + {C9_INSTANCES} molecule instances match brute force; strict => loose; reference validity overall {overall:.5} -> {rounded:.3}"
    ))
}

fn fixture(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name).to_str().unwrap().to_string()
}

fn c10() -> Outcome {
    let commands: Vec<(&str, Vec<String>)> = vec![
        ("sft-build", vec!["sft-build".into(), "--input".into(), fixture("pool.csv")]),
        ("augment", vec!["augment".into(), "--input".into(), fixture("anchors.csv"), "--n".into(), "4".into()]),
        ("perturb", vec!["perturb".into(), "--input".into(), fixture("sources.csv"), "--n".into(), "16".into()]),
        (
            "editflow",
            ["editflow", "MKTAYIAKQR", "--head", "toy:uniform:0.7", "--runs", "32", "--budget", "6", "--cap", "12"]
                .map(String::from)
                .to_vec(),
        ),
    ];
    let mut summary = Vec::new();
    for (name, args) in commands {
        let mut reference: Option<Vec<u8>> = None;
        for threads in C10_THREADS {
            for run in 0..C10_RUNS {
                let out = Command::new(env!("CARGO_BIN_EXE_edittraj"))
                    .args(["--seed", &SEED.to_string(), "--threads", &threads.to_string()])
                    .args(&args)
                    .output()
                    .map_err(|e| e.to_string())?;
                ensure!(out.status.success(), "{name}: {}", String::from_utf8_lossy(&out.stderr));
                ensure!(!out.stdout.is_empty(), "{name}: empty output");
                match &reference {
                    None => reference = Some(out.stdout),
                    Some(r) => ensure!(*r == out.stdout, "{name}: run {run} with {threads} threads differs"),
                }
            }
        }
        summary.push(format!("{name} {}B", reference.map_or(0, |r| r.len())));
    }
    Ok(format!("byte-identical over {C10_RUNS} runs x threads {C10_THREADS:?} at seed {SEED}: {}", summary.join(", ")))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("C1", "aligner soundness and minimality", c1),
        ("C2", "index semantics fixture", c2),
        ("C3", "grammar round-trip and malformed corpus", c3),
        ("C4", "consistency gate with poisoned oracle", c4),
        ("C5", "reward formula grids", c5),
        ("C6", "policy-opt math", c6),
        ("C7", "edit flows loss and sample_zt endpoints", c7),
        ("C8", "sampler contracts and clamp frequency", c8),
        ("C9", "metrics equivalence and overall convention", c9),
        ("C10", "CLI determinism", c10),
    ];
    let mut failed = 0;
    for (id, name, f) in criteria {
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("PASS {id:>3} {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {id:>3} {name}: {why}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", 10 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
