//! Server half of the JSON-lines protocol, used by the CLI `oracle-serve`
//! command and by tests.

use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{OracleBackend, OracleError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub id: u64,
    pub op: String,
    #[serde(default)]
    pub payload: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub id: u64,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Response {
    pub fn from_result(id: u64, r: Result<Value, OracleError>) -> Self {
        match r {
            Ok(v) => Response { id, ok: true, result: Some(v), error: None },
            Err(e) => {
                let msg = match e {
                    OracleError::Refused(m) => m,
                    other => other.to_string(),
                };
                Response { id, ok: false, result: None, error: Some(msg) }
            }
        }
    }

    pub fn into_result(self) -> Result<Value, OracleError> {
        match (self.ok, self.result) {
            (true, Some(v)) => Ok(v),
            (true, None) => Err(OracleError::Protocol(format!("response {} has no result", self.id))),
            (false, _) => Err(OracleError::Refused(self.error.unwrap_or_default())),
        }
    }
}

/// Answers requests line by line until EOF. Malformed lines get an `ok:false`
/// reply with id 0.
pub fn serve<R: BufRead, W: Write>(backend: &dyn OracleBackend, reader: R, mut writer: W) -> io::Result<()> {
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let resp = match serde_json::from_str::<Request>(&line) {
            Ok(req) => Response::from_result(req.id, backend.call(&req.op, req.payload)),
            Err(e) => Response { id: 0, ok: false, result: None, error: Some(format!("malformed request: {e}")) },
        };
        serde_json::to_writer(&mut writer, &resp)?;
        writer.write_all(b"\n")?;
        writer.flush()?;
    }
    Ok(())
}
