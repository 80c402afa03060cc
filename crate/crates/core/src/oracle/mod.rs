//! Client side of the property/fitness oracles.
//!
//! Every backend speaks the same request shape, `(op, payload) -> result`,
//! whether it is an in-process toy, a subprocess on stdio, a TCP peer or a
//! recorded transcript. [`OracleHandle`] layers typed calls on top.
//!
//! Wire protocol (version [`PROTOCOL_VERSION`]), one JSON object per line:
//!
//! ```text
//! -> {"id":7,"op":"fitness","payload":{"sequence":"MKV"}}
//! <- {"id":7,"ok":true,"result":{"score":-0.3}}
//! <- {"id":8,"ok":false,"error":"unsupported op"}
//! ```

mod client;
mod server;
mod toy;
mod transcript;

use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::seq::{detokenize, tokenize, AlphabetKind, TokenSequence};

pub use client::{JsonLinesClient, DEFAULT_IN_FLIGHT};
pub use server::{serve, Request, Response};
pub use toy::{toy_fingerprint, toy_mol_props, PoisonedOracle, ToyFitness, ToyOracle};
pub use transcript::{Recorder, Replayer, TranscriptEntry};

pub const PROTOCOL_VERSION: u32 = 1;
pub const DEFAULT_TIMEOUT_MS: u64 = 30_000;
pub const DEFAULT_FINGERPRINT_BITS: usize = 2048;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OracleError {
    #[error("oracle timed out after {ms} ms on {op}")]
    Timeout { op: String, ms: u64 },
    #[error("oracle protocol error: {0}")]
    Protocol(String),
    #[error("oracle refused: {0}")]
    Refused(String),
    #[error("oracle does not support {0}")]
    Unsupported(String),
    #[error("oracle transport closed")]
    TransportClosed,
    #[error("oracle I/O: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Capability {
    Fitness,
    MolProps,
    Validity,
    Fingerprint,
    Canonicalize,
    EditflowHeads,
    Batch,
}

impl Capability {
    pub fn op(self) -> &'static str {
        match self {
            Capability::Fitness => "fitness",
            Capability::MolProps => "mol_props",
            Capability::Validity => "validity",
            Capability::Fingerprint => "fingerprint",
            Capability::Canonicalize => "canonicalize",
            Capability::EditflowHeads => "editflow_heads",
            Capability::Batch => "batch",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransportKind {
    InProcessToy,
    SubprocessStdio,
    TcpSocket,
    Replay,
}

/// What a backend declares about itself in reply to `describe`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Description {
    pub protocol: u32,
    pub capabilities: BTreeSet<Capability>,
    /// Oracle-declared fingerprint metadata (e.g. Morgan radius and width).
    #[serde(default)]
    pub fingerprint: Option<Value>,
    #[serde(default)]
    pub name: Option<String>,
}

/// Anything that answers `(op, payload)` requests.
pub trait OracleBackend: Send + Sync {
    fn call(&self, op: &str, payload: Value) -> Result<Value, OracleError>;

    fn transport(&self) -> TransportKind;
}

/// The five proxy properties used for molecule instructions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Property {
    #[serde(rename = "logp", alias = "LogP")]
    LogP,
    #[serde(rename = "qed", alias = "QED")]
    Qed,
    #[serde(rename = "tpsa", alias = "TPSA")]
    Tpsa,
    #[serde(rename = "hba", alias = "HBA")]
    Hba,
    #[serde(rename = "hbd", alias = "HBD")]
    Hbd,
}

impl Property {
    pub const ALL: [Property; 5] = [Property::LogP, Property::Qed, Property::Tpsa, Property::Hba, Property::Hbd];
}

impl fmt::Display for Property {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Property::LogP => "LogP",
            Property::Qed => "QED",
            Property::Tpsa => "TPSA",
            Property::Hba => "HBA",
            Property::Hbd => "HBD",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PropValues {
    pub logp: f64,
    pub qed: f64,
    pub tpsa: f64,
    pub hba: u32,
    pub hbd: u32,
}

impl PropValues {
    pub fn get(&self, p: Property) -> f64 {
        match p {
            Property::LogP => self.logp,
            Property::Qed => self.qed,
            Property::Tpsa => self.tpsa,
            Property::Hba => f64::from(self.hba),
            Property::Hbd => f64::from(self.hbd),
        }
    }
}

/// Molecule properties. Numeric values exist only for valid molecules.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MolProps {
    pub valid: bool,
    #[serde(flatten)]
    values: Option<PropValues>,
}

impl MolProps {
    pub fn valid(values: PropValues) -> Self {
        MolProps { valid: true, values: Some(values) }
    }

    pub fn invalid() -> Self {
        MolProps { valid: false, values: None }
    }

    pub fn values(&self) -> Option<&PropValues> {
        if self.valid {
            self.values.as_ref()
        } else {
            None
        }
    }

    pub fn get(&self, p: Property) -> Option<f64> {
        self.values().map(|v| v.get(p))
    }
}

/// Fixed-length bitset.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Fingerprint {
    n_bits: usize,
    words: Vec<u64>,
}

#[derive(Serialize, Deserialize)]
struct FingerprintWire {
    n_bits: usize,
    on_bits: Vec<usize>,
}

impl Fingerprint {
    pub fn zeros(n_bits: usize) -> Self {
        Fingerprint { n_bits, words: vec![0; n_bits.div_ceil(64)] }
    }

    pub fn from_on_bits(n_bits: usize, on: &[usize]) -> Result<Self, OracleError> {
        let mut fp = Self::zeros(n_bits);
        for &b in on {
            if b >= n_bits {
                return Err(OracleError::Protocol(format!("bit {b} outside width {n_bits}")));
            }
            fp.set(b);
        }
        Ok(fp)
    }

    pub fn set(&mut self, bit: usize) {
        assert!(bit < self.n_bits, "bit {bit} outside width {}", self.n_bits);
        self.words[bit / 64] |= 1 << (bit % 64);
    }

    pub fn n_bits(&self) -> usize {
        self.n_bits
    }

    pub fn count_ones(&self) -> u32 {
        self.words.iter().map(|w| w.count_ones()).sum()
    }

    pub fn on_bits(&self) -> Vec<usize> {
        (0..self.n_bits).filter(|&b| self.words[b / 64] >> (b % 64) & 1 == 1).collect()
    }

    fn to_wire(&self) -> FingerprintWire {
        FingerprintWire { n_bits: self.n_bits, on_bits: self.on_bits() }
    }

    fn from_wire(w: FingerprintWire) -> Result<Self, OracleError> {
        Self::from_on_bits(w.n_bits, &w.on_bits)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("fingerprint lengths differ: {0} vs {1}")]
pub struct LengthMismatch(pub usize, pub usize);

/// `|a ∧ b| / |a ∨ b|`, with two empty fingerprints counted as identical (1.0).
pub fn tanimoto(a: &Fingerprint, b: &Fingerprint) -> Result<f64, LengthMismatch> {
    if a.n_bits != b.n_bits {
        return Err(LengthMismatch(a.n_bits, b.n_bits));
    }
    let (mut inter, mut union) = (0u32, 0u32);
    for (x, y) in a.words.iter().zip(&b.words) {
        inter += (x & y).count_ones();
        union += (x | y).count_ones();
    }
    if union == 0 {
        return Ok(1.0);
    }
    Ok(f64::from(inter) / f64::from(union))
}

fn decode<T: serde::de::DeserializeOwned>(op: &str, v: Value) -> Result<T, OracleError> {
    serde_json::from_value(v).map_err(|e| OracleError::Protocol(format!("bad {op} result: {e}")))
}

#[derive(Deserialize)]
struct ScoreResult {
    score: f64,
}

#[derive(Deserialize)]
struct ValidResult {
    valid: bool,
}

#[derive(Deserialize)]
struct SmilesResult {
    smiles: String,
}

#[derive(Deserialize)]
struct BatchItem {
    ok: bool,
    #[serde(default)]
    result: Option<Value>,
    #[serde(default)]
    error: Option<String>,
}

#[derive(Deserialize)]
struct BatchResult {
    results: Vec<BatchItem>,
}

fn sequence_payload(seq: &TokenSequence) -> Value {
    match seq.kind {
        AlphabetKind::Protein => json!({ "sequence": detokenize(seq) }),
        AlphabetKind::Smiles => json!({ "smiles": detokenize(seq) }),
    }
}

/// Shared, typed access to one oracle backend.
#[derive(Clone)]
pub struct OracleHandle {
    backend: Arc<dyn OracleBackend>,
    capabilities: BTreeSet<Capability>,
    timeout: Duration,
}

impl fmt::Debug for OracleHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OracleHandle")
            .field("transport", &self.backend.transport())
            .field("capabilities", &self.capabilities)
            .field("timeout", &self.timeout)
            .finish()
    }
}

impl OracleHandle {
    pub fn new(backend: Arc<dyn OracleBackend>, capabilities: BTreeSet<Capability>, timeout: Duration) -> Self {
        assert!(!timeout.is_zero(), "oracle timeout must be positive");
        OracleHandle { backend, capabilities, timeout }
    }

    /// Asks the backend to `describe` itself; backends that do not answer are assumed to support everything.
    pub fn connect(backend: Arc<dyn OracleBackend>, timeout: Duration) -> Result<Self, OracleError> {
        let caps = match backend.call("describe", json!({})) {
            Ok(v) => decode::<Description>("describe", v)?.capabilities,
            Err(OracleError::Refused(_)) => all_capabilities(),
            Err(e) => return Err(e),
        };
        Ok(Self::new(backend, caps, timeout))
    }

    pub fn toy(toy: ToyOracle) -> Self {
        let caps = toy.capabilities();
        Self::new(Arc::new(toy), caps, Duration::from_millis(DEFAULT_TIMEOUT_MS))
    }

    pub fn transport(&self) -> TransportKind {
        self.backend.transport()
    }

    pub fn capabilities(&self) -> &BTreeSet<Capability> {
        &self.capabilities
    }

    pub fn timeout(&self) -> Duration {
        self.timeout
    }

    pub fn backend(&self) -> Arc<dyn OracleBackend> {
        Arc::clone(&self.backend)
    }

    /// The same backend wrapped so every exchange is appended to `recorder`.
    pub fn recorded(&self, recorder: Arc<Recorder>) -> Self {
        let backend = Arc::new(transcript::Recording::new(Arc::clone(&self.backend), recorder));
        OracleHandle { backend, capabilities: self.capabilities.clone(), timeout: self.timeout }
    }

    pub fn supports(&self, cap: Capability) -> bool {
        self.capabilities.contains(&cap)
    }

    fn require(&self, cap: Capability) -> Result<(), OracleError> {
        if self.supports(cap) {
            Ok(())
        } else {
            Err(OracleError::Unsupported(cap.op().to_string()))
        }
    }

    pub fn call(&self, op: &str, payload: Value) -> Result<Value, OracleError> {
        self.backend.call(op, payload)
    }

    pub fn fitness(&self, seq: &TokenSequence) -> Result<f64, OracleError> {
        self.require(Capability::Fitness)?;
        let r: ScoreResult = decode("fitness", self.call("fitness", sequence_payload(seq))?)?;
        if !r.score.is_finite() {
            return Err(OracleError::Protocol(format!("non-finite fitness {}", r.score)));
        }
        Ok(r.score)
    }

    /// Scores many sequences, in one `batch` request when the backend allows it.
    pub fn fitness_many(&self, seqs: &[TokenSequence]) -> Result<Vec<f64>, OracleError> {
        self.require(Capability::Fitness)?;
        if !self.supports(Capability::Batch) || seqs.len() < 2 {
            return seqs.iter().map(|s| self.fitness(s)).collect();
        }
        let requests: Vec<Value> =
            seqs.iter().map(|s| json!({ "op": "fitness", "payload": sequence_payload(s) })).collect();
        let batch: BatchResult = decode("batch", self.call("batch", json!({ "requests": requests }))?)?;
        if batch.results.len() != seqs.len() {
            return Err(OracleError::Protocol(format!(
                "batch returned {} results for {} requests",
                batch.results.len(),
                seqs.len()
            )));
        }
        batch
            .results
            .into_iter()
            .map(|item| match (item.ok, item.result) {
                (true, Some(v)) => decode::<ScoreResult>("fitness", v).map(|r| r.score),
                _ => Err(OracleError::Refused(item.error.unwrap_or_default())),
            })
            .collect()
    }

    pub fn mol_properties(&self, seq: &TokenSequence) -> Result<MolProps, OracleError> {
        self.require(Capability::MolProps)?;
        let props: MolProps = decode("mol_props", self.call("mol_props", sequence_payload(seq))?)?;
        if props.valid && props.values.is_none() {
            return Err(OracleError::Protocol("valid molecule without property values".into()));
        }
        Ok(props)
    }

    pub fn validity(&self, seq: &TokenSequence) -> Result<bool, OracleError> {
        self.require(Capability::Validity)?;
        let r: ValidResult = decode("validity", self.call("validity", sequence_payload(seq))?)?;
        Ok(r.valid)
    }

    pub fn fingerprint(&self, seq: &TokenSequence) -> Result<Fingerprint, OracleError> {
        self.require(Capability::Fingerprint)?;
        let w: FingerprintWire = decode("fingerprint", self.call("fingerprint", sequence_payload(seq))?)?;
        Fingerprint::from_wire(w)
    }

    /// Canonical form of a molecule, re-tokenized.
    pub fn canonicalize(&self, seq: &TokenSequence) -> Result<TokenSequence, OracleError> {
        self.require(Capability::Canonicalize)?;
        let r: SmilesResult = decode("canonicalize", self.call("canonicalize", sequence_payload(seq))?)?;
        tokenize(seq.kind, &r.smiles)
            .map_err(|e| OracleError::Protocol(format!("canonical form does not tokenize: {e}")))
    }
}

pub fn all_capabilities() -> BTreeSet<Capability> {
    [
        Capability::Fitness,
        Capability::MolProps,
        Capability::Validity,
        Capability::Fingerprint,
        Capability::Canonicalize,
        Capability::EditflowHeads,
        Capability::Batch,
    ]
    .into_iter()
    .collect()
}

impl Serialize for Fingerprint {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_wire().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Fingerprint {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let w = FingerprintWire::deserialize(d)?;
        Fingerprint::from_wire(w).map_err(serde::de::Error::custom)
    }
}
