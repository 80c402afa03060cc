//! Recording and replaying oracle exchanges for hermetic runs.
//!
//! A transcript is JSON lines, one exchange per line:
//!
//! ```text
//! {"op":"fitness","payload":{"sequence":"MKV"},"ok":true,"result":{"score":-0.3}}
//! ```
//!
//! Request ids are not recorded; replay matches on `(op, payload)` and hands
//! out recorded entries in file order.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{OracleBackend, OracleError, TransportKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub op: String,
    pub payload: Value,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

pub struct Recorder {
    out: Mutex<Box<dyn Write + Send>>,
}

impl Recorder {
    pub fn new(out: Box<dyn Write + Send>) -> Self {
        Recorder { out: Mutex::new(out) }
    }

    pub fn create(path: &Path) -> std::io::Result<Self> {
        Ok(Self::new(Box::new(BufWriter::new(File::create(path)?))))
    }

    fn record(&self, entry: &TranscriptEntry) {
        let mut out = self.out.lock().unwrap();
        // a failed transcript write must not change the oracle answer
        let _ = serde_json::to_writer(&mut *out, entry);
        let _ = out.write_all(b"\n");
        let _ = out.flush();
    }
}

fn error_text(e: &OracleError) -> String {
    match e {
        OracleError::Refused(m) => m.clone(),
        other => other.to_string(),
    }
}

pub(super) struct Recording {
    inner: Arc<dyn OracleBackend>,
    recorder: Arc<Recorder>,
}

impl Recording {
    pub(super) fn new(inner: Arc<dyn OracleBackend>, recorder: Arc<Recorder>) -> Self {
        Recording { inner, recorder }
    }
}

impl OracleBackend for Recording {
    fn call(&self, op: &str, payload: Value) -> Result<Value, OracleError> {
        let r = self.inner.call(op, payload.clone());
        let entry = match &r {
            Ok(v) => TranscriptEntry { op: op.into(), payload, ok: true, result: Some(v.clone()), error: None },
            Err(e) => TranscriptEntry { op: op.into(), payload, ok: false, result: None, error: Some(error_text(e)) },
        };
        self.recorder.record(&entry);
        r
    }

    fn transport(&self) -> TransportKind {
        self.inner.transport()
    }
}

/// Serves answers from a transcript.
pub struct Replayer {
    entries: Mutex<Vec<(TranscriptEntry, bool)>>,
}

impl Replayer {
    pub fn new(entries: Vec<TranscriptEntry>) -> Self {
        Replayer { entries: Mutex::new(entries.into_iter().map(|e| (e, false)).collect()) }
    }

    pub fn load(path: &Path) -> Result<Self, OracleError> {
        let f = File::open(path).map_err(|e| OracleError::Io(format!("{}: {e}", path.display())))?;
        let mut entries = Vec::new();
        for (i, line) in BufReader::new(f).lines().enumerate() {
            let line = line.map_err(|e| OracleError::Io(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            entries.push(
                serde_json::from_str(&line)
                    .map_err(|e| OracleError::Protocol(format!("transcript line {}: {e}", i + 1)))?,
            );
        }
        Ok(Self::new(entries))
    }

    pub fn remaining(&self) -> usize {
        self.entries.lock().unwrap().iter().filter(|(_, used)| !used).count()
    }
}

impl OracleBackend for Replayer {
    fn call(&self, op: &str, payload: Value) -> Result<Value, OracleError> {
        let mut entries = self.entries.lock().unwrap();
        let matches = |e: &TranscriptEntry| e.op == op && e.payload == payload;
        let idx = entries
            .iter()
            .position(|(e, used)| !*used && matches(e))
            // repeated identical requests may reuse an earlier answer
            .or_else(|| entries.iter().position(|(e, _)| matches(e)));
        match idx.map(|i| &mut entries[i]) {
            Some((entry, used)) => {
                *used = true;
                if entry.ok {
                    entry.result.clone().ok_or_else(|| OracleError::Protocol("recorded success without result".into()))
                } else {
                    Err(OracleError::Refused(entry.error.clone().unwrap_or_default()))
                }
            }
            None => Err(OracleError::Protocol(format!("no recorded answer for {op} {payload}"))),
        }
    }

    fn transport(&self) -> TransportKind {
        TransportKind::Replay
    }
}
