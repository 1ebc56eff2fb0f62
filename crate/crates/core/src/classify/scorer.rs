//! Adapter for external scoring processes.
//!
//! The peer speaks a newline-delimited JSON protocol. For every request
//! line `{"id": "...", "text": "..."}` it writes one reply line
//! `{"id": "...", "scores": {"nonmedical_use": f, "consumption": f,
//! "mention": f, "unrelated": f}}`. Replies may arrive in any order.
//! The peer is either a subprocess (stdin/stdout) or a TCP socket.

use std::collections::{HashMap, HashSet};
use std::io::{BufRead, BufReader, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::process::{Child, Command, Stdio};
use std::str::FromStr;
use std::sync::mpsc;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{Prediction, Scores};
use crate::{Error, Result};

/// Replies whose scores sum within this distance of 1 are renormalised;
/// anything further off is rejected.
pub const SUM_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScorerEndpoint {
    Command { program: String, args: Vec<String> },
    Tcp(String),
}

impl FromStr for ScorerEndpoint {
    type Err = Error;

    /// `tcp://host:port` or a whitespace-separated command line.
    fn from_str(s: &str) -> Result<Self> {
        if let Some(addr) = s.strip_prefix("tcp://") {
            return Ok(ScorerEndpoint::Tcp(addr.to_string()));
        }
        let mut parts = s.split_whitespace().map(String::from);
        let program = parts.next().ok_or_else(|| Error::Config("empty scorer command".into()))?;
        Ok(ScorerEndpoint::Command { program, args: parts.collect() })
    }
}

#[derive(Serialize)]
struct Request<'a> {
    id: &'a str,
    text: &'a str,
}

#[derive(Deserialize)]
struct Reply {
    id: String,
    scores: super::ScoresRepr,
}

#[derive(Debug, Clone)]
pub struct ExternalScorer {
    pub endpoint: ScorerEndpoint,
    pub timeout: Duration,
}

impl ExternalScorer {
    pub fn new(endpoint: ScorerEndpoint) -> Self {
        ExternalScorer { endpoint, timeout: Duration::from_secs(30) }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    /// Score one batch of `(post_id, text)` pairs. Output follows input order.
    pub fn score(&self, batch: &[(String, String)]) -> Result<Vec<Prediction>> {
        if batch.is_empty() {
            return Ok(Vec::new());
        }
        let mut seen = HashSet::new();
        for (id, _) in batch {
            if !seen.insert(id.as_str()) {
                return Err(Error::Contract(format!("duplicate id {id} in scorer batch")));
            }
        }
        let mut payload = Vec::new();
        for (id, text) in batch {
            serde_json::to_writer(&mut payload, &Request { id, text })?;
            payload.push(b'\n');
        }
        let ids: Vec<String> = batch.iter().map(|(id, _)| id.clone()).collect();
        match &self.endpoint {
            ScorerEndpoint::Command { program, args } => self.run_command(program, args, payload, ids),
            ScorerEndpoint::Tcp(addr) => self.run_tcp(addr, payload, ids),
        }
    }

    fn run_command(&self, program: &str, args: &[String], payload: Vec<u8>, ids: Vec<String>) -> Result<Vec<Prediction>> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::Scorer(format!("cannot start {program}: {e}")))?;
        let mut stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let writer = std::thread::spawn(move || {
            // A peer that exits early closes the pipe; the reader reports it.
            let _ = stdin.write_all(&payload);
        });
        let child = Arc::new(Mutex::new(child));
        let result = self.collect_with_deadline(BufReader::new(stdout), ids, Some(Arc::clone(&child)));
        {
            let mut c = child.lock().unwrap();
            let _ = c.kill();
            let _ = c.wait();
        }
        let _ = writer.join();
        result
    }

    fn run_tcp(&self, addr: &str, payload: Vec<u8>, ids: Vec<String>) -> Result<Vec<Prediction>> {
        let sock = addr
            .to_socket_addrs()
            .map_err(|e| Error::Scorer(format!("bad scorer address {addr}: {e}")))?
            .next()
            .ok_or_else(|| Error::Scorer(format!("scorer address {addr} did not resolve")))?;
        let mut stream = TcpStream::connect_timeout(&sock, self.timeout)
            .map_err(|e| Error::Scorer(format!("connect {addr}: {e}")))?;
        stream.set_read_timeout(Some(self.timeout)).ok();
        stream.set_write_timeout(Some(self.timeout)).ok();
        stream.write_all(&payload).map_err(|e| Error::Scorer(format!("send to {addr}: {e}")))?;
        let reader = BufReader::new(stream);
        self.collect_with_deadline(reader, ids, None)
    }

    fn collect_with_deadline<R: BufRead + Send + 'static>(
        &self,
        reader: R,
        ids: Vec<String>,
        child: Option<Arc<Mutex<Child>>>,
    ) -> Result<Vec<Prediction>> {
        let (tx, rx) = mpsc::channel();
        let expected = ids.clone();
        std::thread::spawn(move || {
            let _ = tx.send(read_replies(reader, &expected));
        });
        match rx.recv_timeout(self.timeout) {
            Ok(r) => r,
            Err(_) => {
                if let Some(c) = child {
                    let _ = c.lock().unwrap().kill();
                }
                Err(Error::Scorer(format!(
                    "timed out after {:.1}s waiting for {} replies",
                    self.timeout.as_secs_f64(),
                    ids.len()
                )))
            }
        }
    }
}

fn read_replies<R: BufRead>(reader: R, ids: &[String]) -> Result<Vec<Prediction>> {
    let wanted: HashSet<&str> = ids.iter().map(String::as_str).collect();
    let mut got: HashMap<String, Scores> = HashMap::new();
    for line in reader.lines() {
        let line = line.map_err(|e| Error::Scorer(format!("read: {e}")))?;
        if line.trim().is_empty() {
            continue;
        }
        let (id, scores) = parse_reply(&line)?;
        if !wanted.contains(id.as_str()) {
            return Err(Error::Scorer(format!("reply for unexpected id {id}")));
        }
        if got.insert(id.clone(), scores).is_some() {
            return Err(Error::Scorer(format!("duplicate reply for id {id}")));
        }
        if got.len() == ids.len() {
            break;
        }
    }
    ids.iter()
        .map(|id| {
            got.remove(id)
                .map(|s| Prediction::new(id.clone(), s))
                .ok_or_else(|| Error::Scorer(format!("scorer reply is missing id {id}")))
        })
        .collect()
}

/// Parse and validate one reply line.
pub fn parse_reply(line: &str) -> Result<(String, Scores)> {
    let reply: Reply = serde_json::from_str(line)
        .map_err(|e| Error::Scorer(format!("malformed reply line {line:?}: {e}")))?;
    let s = Scores::from(reply.scores);
    if s.0.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::Scorer(format!("malformed reply line {line:?}: scores must be finite and non-negative")));
    }
    let sum = s.sum();
    if (sum - 1.0).abs() > SUM_TOLERANCE {
        return Err(Error::Scorer(format!("scores for id {} sum to {sum}, outside tolerance", reply.id)));
    }
    Ok((reply.id, Scores(s.0.map(|v| v / sum))))
}
