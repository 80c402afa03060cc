//! JSON-lines client. Writes are serialized; a reader thread routes each
//! response to its waiting caller by id, so replies may arrive in any order.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::process::{Child, Command, Stdio};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{self, RecvTimeoutError, SyncSender};
use std::sync::{Arc, Condvar, Mutex};
use std::thread;
use std::time::Duration;

use serde_json::Value;

use super::server::{Request, Response};
use super::{OracleBackend, OracleError, TransportKind};

pub const DEFAULT_IN_FLIGHT: usize = 16;

type Pending = Arc<Mutex<HashMap<u64, SyncSender<Response>>>>;

struct Window {
    used: Mutex<usize>,
    freed: Condvar,
    max: usize,
}

impl Window {
    fn acquire(&self) {
        let mut used = self.used.lock().unwrap();
        while *used >= self.max {
            used = self.freed.wait(used).unwrap();
        }
        *used += 1;
    }

    fn release(&self) {
        *self.used.lock().unwrap() -= 1;
        self.freed.notify_one();
    }
}

pub struct JsonLinesClient {
    writer: Mutex<Box<dyn Write + Send>>,
    pending: Pending,
    closed: Arc<AtomicBool>,
    next_id: AtomicU64,
    timeout: Duration,
    window: Window,
    child: Option<Mutex<Child>>,
    kind: TransportKind,
}

impl JsonLinesClient {
    /// Builds a client over an arbitrary line-oriented stream pair.
    pub fn from_streams(
        reader: Box<dyn BufRead + Send>,
        writer: Box<dyn Write + Send>,
        kind: TransportKind,
        timeout: Duration,
        in_flight: usize,
    ) -> Self {
        assert!(!timeout.is_zero() && in_flight > 0);
        let pending: Pending = Arc::default();
        let closed = Arc::new(AtomicBool::new(false));
        spawn_reader(reader, Arc::clone(&pending), Arc::clone(&closed));
        JsonLinesClient {
            writer: Mutex::new(writer),
            pending,
            closed,
            next_id: AtomicU64::new(1),
            timeout,
            window: Window { used: Mutex::new(0), freed: Condvar::new(), max: in_flight },
            child: None,
            kind,
        }
    }

    /// Launches `sh -c <command>` and talks to it over stdin/stdout.
    pub fn spawn(command: &str, timeout: Duration) -> Result<Self, OracleError> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| OracleError::Io(format!("spawning {command:?}: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let mut client = Self::from_streams(
            Box::new(BufReader::new(stdout)),
            Box::new(stdin),
            TransportKind::SubprocessStdio,
            timeout,
            DEFAULT_IN_FLIGHT,
        );
        client.child = Some(Mutex::new(child));
        Ok(client)
    }

    pub fn connect_tcp(addr: &str, timeout: Duration) -> Result<Self, OracleError> {
        let stream = TcpStream::connect(addr).map_err(|e| OracleError::Io(format!("connecting {addr}: {e}")))?;
        let read = stream.try_clone().map_err(|e| OracleError::Io(e.to_string()))?;
        Ok(Self::from_streams(
            Box::new(BufReader::new(read)),
            Box::new(stream),
            TransportKind::TcpSocket,
            timeout,
            DEFAULT_IN_FLIGHT,
        ))
    }

    fn send(&self, line: &str) -> Result<(), OracleError> {
        let mut w = self.writer.lock().unwrap();
        w.write_all(line.as_bytes())
            .and_then(|_| w.write_all(b"\n"))
            .and_then(|_| w.flush())
            .map_err(|_| OracleError::TransportClosed)
    }
}

fn spawn_reader(mut reader: Box<dyn BufRead + Send>, pending: Pending, closed: Arc<AtomicBool>) {
    thread::spawn(move || {
        let mut line = String::new();
        loop {
            line.clear();
            match reader.read_line(&mut line) {
                Ok(0) | Err(_) => break,
                Ok(_) => {}
            }
            if line.trim().is_empty() {
                continue;
            }
            let Ok(resp) = serde_json::from_str::<Response>(&line) else {
                // unparsable line: nobody can be matched to it
                continue;
            };
            if let Some(tx) = pending.lock().unwrap().remove(&resp.id) {
                let _ = tx.send(resp);
            }
        }
        closed.store(true, Ordering::SeqCst);
        // dropping the senders wakes every waiter with Disconnected
        pending.lock().unwrap().clear();
    });
}

impl OracleBackend for JsonLinesClient {
    fn call(&self, op: &str, payload: Value) -> Result<Value, OracleError> {
        if self.closed.load(Ordering::SeqCst) {
            return Err(OracleError::TransportClosed);
        }
        self.window.acquire();
        let result = (|| {
            let id = self.next_id.fetch_add(1, Ordering::SeqCst);
            let (tx, rx) = mpsc::sync_channel(1);
            self.pending.lock().unwrap().insert(id, tx);
            let line = serde_json::to_string(&Request { id, op: op.to_string(), payload })
                .map_err(|e| OracleError::Protocol(e.to_string()))?;
            if let Err(e) = self.send(&line) {
                self.pending.lock().unwrap().remove(&id);
                return Err(e);
            }
            match rx.recv_timeout(self.timeout) {
                Ok(resp) => resp.into_result(),
                Err(RecvTimeoutError::Timeout) => {
                    self.pending.lock().unwrap().remove(&id);
                    Err(OracleError::Timeout { op: op.to_string(), ms: self.timeout.as_millis() as u64 })
                }
                Err(RecvTimeoutError::Disconnected) => Err(OracleError::TransportClosed),
            }
        })();
        self.window.release();
        result
    }

    fn transport(&self) -> TransportKind {
        self.kind
    }
}

impl Drop for JsonLinesClient {
    fn drop(&mut self) {
        if let Some(child) = &self.child {
            let mut child = child.lock().unwrap();
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}
