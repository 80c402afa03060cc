//! Turning `--oracle` / `--head` strings into handles, with record and replay.

use std::sync::Arc;
use std::time::Duration;

use anyhow::{Context, Result};
use edittraj_core::oracle::{all_capabilities, JsonLinesClient, Recorder, Replayer, ToyOracle};
use edittraj_core::OracleHandle;

use crate::{input_err, Global};

/// A parsed `toy:<name>`, `stdio:<cmd>` or `tcp:<addr>` endpoint.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Endpoint {
    Toy(String),
    Stdio(String),
    Tcp(String),
}

impl Endpoint {
    pub fn parse(spec: &str) -> Result<Self> {
        let (scheme, rest) = spec.split_once(':').ok_or_else(|| {
            input_err(format!("endpoint {spec:?} must look like toy:<name>, stdio:<cmd> or tcp:<addr>"))
        })?;
        if rest.is_empty() {
            return Err(input_err(format!("endpoint {spec:?} has nothing after the scheme")));
        }
        match scheme {
            "toy" => Ok(Endpoint::Toy(rest.to_string())),
            "stdio" => Ok(Endpoint::Stdio(rest.to_string())),
            "tcp" => Ok(Endpoint::Tcp(rest.to_string())),
            other => Err(input_err(format!("unknown endpoint scheme {other:?}"))),
        }
    }
}

/// Connects to an external (stdio or tcp) endpoint.
pub fn connect_external(ep: &Endpoint, timeout: Duration) -> Result<OracleHandle> {
    let client = match ep {
        Endpoint::Stdio(cmd) => JsonLinesClient::spawn(cmd, timeout)?,
        Endpoint::Tcp(addr) => JsonLinesClient::connect_tcp(addr, timeout)?,
        Endpoint::Toy(_) => unreachable!("toy endpoints are in-process"),
    };
    Ok(OracleHandle::connect(Arc::new(client), timeout)?)
}

/// The run's oracle per the global flags. Replay never touches a live backend.
pub fn open(global: &Global) -> Result<OracleHandle> {
    open_endpoint(&Endpoint::parse(&global.oracle)?, global)
}

pub fn timeout(global: &Global) -> Duration {
    Duration::from_millis(global.oracle_timeout_ms.max(1))
}

/// Opens `ep`, honouring `--record` and `--replay`.
pub fn open_endpoint(ep: &Endpoint, global: &Global) -> Result<OracleHandle> {
    let timeout = timeout(global);
    if let Some(path) = &global.replay {
        let replayer = Replayer::load(path).with_context(|| format!("loading transcript {}", path.display()))?;
        return Ok(OracleHandle::new(Arc::new(replayer), all_capabilities(), timeout));
    }
    let handle = match ep.clone() {
        Endpoint::Toy(name) => {
            let toy: ToyOracle = name.parse().map_err(input_err)?;
            let caps = toy.capabilities();
            OracleHandle::new(Arc::new(toy), caps, timeout)
        }
        ep => connect_external(&ep, timeout)?,
    };
    match &global.record {
        Some(path) => {
            let rec = Recorder::create(path).with_context(|| format!("creating transcript {}", path.display()))?;
            Ok(handle.recorded(Arc::new(rec)))
        }
        None => Ok(handle),
    }
}
