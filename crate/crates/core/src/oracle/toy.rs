//! Deterministic in-process oracles.
//!
//! These are NON-CHEMICAL surrogates. They exist so every reward and metric
//! path can run hermetically; none of the numbers mean anything physically.
//!
//! * fitness (`glycine`): `count(G) - 0.1 * len`
//! * fitness (`count:<tok>`): occurrences of `<tok>`
//! * fitness (`constant:<v>`): always `v`
//! * molecule validity: parentheses nest and close, every ring label occurs an even number of times
//! * `hba`: tokens `N`, `O`, `n`, `o`
//! * `hbd`: bracket tokens containing `H`
//! * `logp`: `0.5 * #C - 0.3 * (#N + #O)`, aromatic atoms included
//! * `qed`: `(0.1 * #tokens) mod 1`
//! * `tpsa`: `20 * (#N + #O)`
//! * fingerprint: 2048 bits, FNV-1a of every token unigram and bigram
//! * canonicalize: ASCII uppercase

use std::collections::{BTreeMap, BTreeSet};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::Deserialize;
use serde_json::{json, Value};

use super::{
    Capability, Description, Fingerprint, MolProps, OracleBackend, OracleError, PropValues, TransportKind,
    DEFAULT_FINGERPRINT_BITS, PROTOCOL_VERSION,
};
use crate::seq::{tokenize_protein, tokenize_smiles, TokenSequence};

#[derive(Debug, Clone, PartialEq)]
pub enum ToyFitness {
    Glycine,
    TokenCount(String),
    Constant(f64),
}

impl ToyFitness {
    pub fn score(&self, seq: &TokenSequence) -> f64 {
        match self {
            ToyFitness::Glycine => {
                let g = seq.tokens.iter().filter(|t| t.as_str() == "G").count() as f64;
                g - 0.1 * seq.len() as f64
            }
            ToyFitness::TokenCount(tok) => seq.tokens.iter().filter(|t| *t == tok).count() as f64,
            ToyFitness::Constant(v) => *v,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyOracle {
    pub fitness: ToyFitness,
}

impl Default for ToyOracle {
    fn default() -> Self {
        ToyOracle { fitness: ToyFitness::Glycine }
    }
}

impl FromStr for ToyOracle {
    type Err = String;

    /// `glycine` (or `default`), `count:<tok>`, `constant:<value>`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let fitness = match s.split_once(':') {
            None if s == "glycine" || s == "default" => ToyFitness::Glycine,
            Some(("count", tok)) if !tok.is_empty() => ToyFitness::TokenCount(tok.to_string()),
            Some(("constant", v)) => {
                ToyFitness::Constant(v.parse().map_err(|_| format!("bad constant {v:?} in toy oracle"))?)
            }
            _ => return Err(format!("unknown toy oracle {s:?}")),
        };
        Ok(ToyOracle { fitness })
    }
}

impl ToyOracle {
    pub fn capabilities(&self) -> BTreeSet<Capability> {
        [
            Capability::Fitness,
            Capability::MolProps,
            Capability::Validity,
            Capability::Fingerprint,
            Capability::Canonicalize,
            Capability::Batch,
        ]
        .into_iter()
        .collect()
    }

    fn describe(&self) -> Description {
        Description {
            protocol: PROTOCOL_VERSION,
            capabilities: self.capabilities(),
            fingerprint: Some(json!({ "kind": "toy-fnv-bigram", "n_bits": DEFAULT_FINGERPRINT_BITS })),
            name: Some("toy".to_string()),
        }
    }
}

/// Ring-label and parenthesis balance, the toy notion of a valid molecule.
fn toy_valid(tokens: &[String]) -> bool {
    let mut depth = 0i64;
    let mut rings: BTreeMap<&str, usize> = BTreeMap::new();
    for t in tokens {
        match t.as_str() {
            "(" => depth += 1,
            ")" => {
                depth -= 1;
                if depth < 0 {
                    return false;
                }
            }
            s if s.starts_with('%') || s.bytes().all(|b| b.is_ascii_digit()) => {
                *rings.entry(s).or_default() += 1;
            }
            _ => {}
        }
    }
    depth == 0 && rings.values().all(|c| c % 2 == 0)
}

pub fn toy_mol_props(seq: &TokenSequence) -> MolProps {
    if seq.is_empty() || !toy_valid(&seq.tokens) {
        return MolProps::invalid();
    }
    let count = |set: &[&str]| seq.tokens.iter().filter(|t| set.contains(&t.as_str())).count();
    let n_c = count(&["C", "c"]) as f64;
    let n_no = count(&["N", "O", "n", "o"]);
    let hbd = seq.tokens.iter().filter(|t| t.starts_with('[') && t.contains('H')).count();
    MolProps::valid(PropValues {
        logp: 0.5 * n_c - 0.3 * n_no as f64,
        qed: (0.1 * seq.len() as f64).rem_euclid(1.0),
        tpsa: 20.0 * n_no as f64,
        hba: n_no as u32,
        hbd: hbd as u32,
    })
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

pub fn toy_fingerprint(seq: &TokenSequence) -> Fingerprint {
    let n = DEFAULT_FINGERPRINT_BITS;
    let mut fp = Fingerprint::zeros(n);
    for t in &seq.tokens {
        fp.set((fnv1a(t.as_bytes()) % n as u64) as usize);
    }
    for w in seq.tokens.windows(2) {
        let key = format!("{}\u{1f}{}", w[0], w[1]);
        fp.set((fnv1a(key.as_bytes()) % n as u64) as usize);
    }
    fp
}

#[derive(Deserialize)]
struct SeqPayload {
    #[serde(default)]
    sequence: Option<String>,
    #[serde(default)]
    smiles: Option<String>,
}

fn payload_seq(payload: Value) -> Result<TokenSequence, OracleError> {
    let p: SeqPayload =
        serde_json::from_value(payload).map_err(|e| OracleError::Refused(format!("bad payload: {e}")))?;
    match (p.sequence, p.smiles) {
        (Some(s), None) => tokenize_protein(&s).map_err(|e| OracleError::Refused(e.to_string())),
        (None, Some(s)) => tokenize_smiles(&s).map_err(|e| OracleError::Refused(e.to_string())),
        _ => Err(OracleError::Refused("payload needs exactly one of sequence or smiles".into())),
    }
}

/// Runs each request of a `batch` payload through `backend`.
pub(crate) fn dispatch_batch(backend: &dyn OracleBackend, payload: Value) -> Result<Value, OracleError> {
    let requests = payload
        .get("requests")
        .and_then(Value::as_array)
        .ok_or_else(|| OracleError::Refused("batch payload needs a requests array".into()))?;
    let mut results = Vec::with_capacity(requests.len());
    for r in requests {
        let op = r.get("op").and_then(Value::as_str).unwrap_or_default();
        if op == "batch" {
            return Err(OracleError::Refused("nested batch".into()));
        }
        let payload = r.get("payload").cloned().unwrap_or(Value::Null);
        results.push(match backend.call(op, payload) {
            Ok(v) => json!({ "ok": true, "result": v }),
            Err(e) => json!({ "ok": false, "error": e.to_string() }),
        });
    }
    Ok(json!({ "results": results }))
}

impl OracleBackend for ToyOracle {
    fn call(&self, op: &str, payload: Value) -> Result<Value, OracleError> {
        match op {
            "describe" => Ok(serde_json::to_value(self.describe()).expect("description serializes")),
            "fitness" => Ok(json!({ "score": self.fitness.score(&payload_seq(payload)?) })),
            "mol_props" => Ok(serde_json::to_value(toy_mol_props(&payload_seq(payload)?)).expect("props serialize")),
            "validity" => Ok(json!({ "valid": toy_mol_props(&payload_seq(payload)?).valid })),
            "fingerprint" => {
                Ok(serde_json::to_value(toy_fingerprint(&payload_seq(payload)?)).expect("fingerprint serializes"))
            }
            "canonicalize" => {
                let s = crate::seq::detokenize(&payload_seq(payload)?);
                Ok(json!({ "smiles": s.to_ascii_uppercase() }))
            }
            "batch" => dispatch_batch(self, payload),
            other => Err(OracleError::Refused(format!("unsupported op {other:?}"))),
        }
    }

    fn transport(&self) -> TransportKind {
        TransportKind::InProcessToy
    }
}

/// Fails every call and counts how often it was contacted.
#[derive(Debug, Default)]
pub struct PoisonedOracle {
    calls: AtomicUsize,
}

impl PoisonedOracle {
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl OracleBackend for PoisonedOracle {
    fn call(&self, op: &str, _payload: Value) -> Result<Value, OracleError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        Err(OracleError::Refused(format!("poisoned oracle contacted for {op}")))
    }

    fn transport(&self) -> TransportKind {
        TransportKind::InProcessToy
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{OracleHandle, Property};

    fn smi(s: &str) -> TokenSequence {
        tokenize_smiles(s).unwrap()
    }

    #[test]
    fn glycine_fitness() {
        let h = OracleHandle::toy(ToyOracle::default());
        let v = h.fitness(&tokenize_protein("GGA").unwrap()).unwrap();
        assert!((v - 1.7).abs() < 1e-12);
        assert_eq!(h.fitness(&tokenize_protein("").unwrap()).unwrap(), 0.0);
    }

    #[test]
    fn fitness_batch_matches_single_calls() {
        let h = OracleHandle::toy("count:A".parse().unwrap());
        let seqs: Vec<_> = ["AAK", "K", "AKA"].iter().map(|s| tokenize_protein(s).unwrap()).collect();
        assert_eq!(h.fitness_many(&seqs).unwrap(), vec![2.0, 0.0, 2.0]);
    }

    #[test]
    fn toy_molecule_props() {
        let p = toy_mol_props(&smi("CCO"));
        assert!(p.valid);
        assert_eq!(p.get(Property::Hba), Some(1.0));
        assert!((p.get(Property::LogP).unwrap() - 0.7).abs() < 1e-12);
        assert_eq!(p.get(Property::Tpsa), Some(20.0));
        assert!((p.get(Property::Qed).unwrap() - 0.3).abs() < 1e-12);
        assert!(!toy_mol_props(&smi("CC(")).valid);
        assert!(!toy_mol_props(&smi("C1CC")).valid);
        assert!(toy_mol_props(&smi("C1CC1")).valid);
        assert_eq!(toy_mol_props(&smi("N[C@@H](O)C")).get(Property::Hbd), Some(1.0));
    }

    #[test]
    fn parse_toy_names() {
        assert_eq!("glycine".parse::<ToyOracle>().unwrap(), ToyOracle::default());
        assert_eq!("constant:2.5".parse::<ToyOracle>().unwrap().fitness, ToyFitness::Constant(2.5));
        assert!("bogus".parse::<ToyOracle>().is_err());
    }

    #[test]
    fn canonicalize_uppercases() {
        let h = OracleHandle::toy(ToyOracle::default());
        assert_eq!(crate::seq::detokenize(&h.canonicalize(&smi("c1ccccc1")).unwrap()), "C1CCCCC1");
    }

    #[test]
    fn poisoned_counts_calls() {
        let p = PoisonedOracle::default();
        assert!(p.call("fitness", json!({})).is_err());
        assert_eq!(p.calls(), 1);
    }
}
