//! Client for the masked-language-model scoring sidecar.
//!
//! Newline-delimited JSON over a child's stdio or a local TCP socket:
//!
//! ```text
//! → {"type":"hello","protocol":1}
//! ← {"type":"ready","model":"<name>","max_top_k":<int>}
//! → {"type":"score","id":<int>,"text":"<left> [SLOT] <right>","top_k":<int>}
//! ← {"type":"scores","id":<int>,"tokens":[["<tok>",<prob>],...]}
//! ← {"type":"error","id":<int>,"message":"..."}
//! ```
//!
//! Requests are pipelined and replies are matched by id, so the sidecar may
//! answer out of order.

use std::collections::HashMap;
use std::io::{self, BufRead, BufReader, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::process::{Child, Command, Stdio};

use serde::{Deserialize, Serialize};

use super::ScoreError;

pub const PROTOCOL_VERSION: u32 = 1;
/// Slot marker on the wire.
pub const WIRE_SLOT: &str = "[SLOT]";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Message {
    Hello { protocol: u32 },
    Ready { model: String, max_top_k: usize },
    Score { id: i64, text: String, top_k: usize },
    Scores { id: i64, tokens: Vec<(String, f64)> },
    Error { id: i64, message: String },
}

impl Message {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("protocol messages always serialize")
    }
}

/// One slot query.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotQuery {
    pub text: String,
    pub top_k: usize,
}

pub struct SidecarClient {
    reader: Box<dyn BufRead + Send>,
    writer: Box<dyn Write + Send>,
    child: Option<Child>,
    model: String,
    max_top_k: usize,
    next_id: i64,
}

impl std::fmt::Debug for SidecarClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SidecarClient")
            .field("model", &self.model)
            .field("max_top_k", &self.max_top_k)
            .finish_non_exhaustive()
    }
}

fn unavailable(e: io::Error) -> ScoreError {
    ScoreError::ScorerUnavailable(e.to_string())
}

impl SidecarClient {
    /// Performs the handshake over an arbitrary transport.
    pub fn handshake<R, W>(reader: R, writer: W) -> Result<Self, ScoreError>
    where
        R: BufRead + Send + 'static,
        W: Write + Send + 'static,
    {
        let mut client = Self {
            reader: Box::new(reader),
            writer: Box::new(writer),
            child: None,
            model: String::new(),
            max_top_k: 0,
            next_id: 0,
        };
        client.send(&Message::Hello {
            protocol: PROTOCOL_VERSION,
        })?;
        client.writer.flush().map_err(unavailable)?;
        match client.receive()? {
            Message::Ready { model, max_top_k } => {
                client.model = model;
                client.max_top_k = max_top_k;
                Ok(client)
            }
            other => Err(ScoreError::Protocol(format!("expected ready, got {}", other.to_line()))),
        }
    }

    pub fn connect_tcp<A: ToSocketAddrs>(addr: A) -> Result<Self, ScoreError> {
        let stream = TcpStream::connect(addr).map_err(unavailable)?;
        let reader = BufReader::new(stream.try_clone().map_err(unavailable)?);
        Self::handshake(reader, stream)
    }

    /// Spawns `program args…` and talks to it over stdin/stdout.
    pub fn spawn(program: &str, args: &[String]) -> Result<Self, ScoreError> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(unavailable)?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let mut client = Self::handshake(BufReader::new(stdout), stdin)?;
        client.child = Some(child);
        Ok(client)
    }

    pub fn model(&self) -> &str {
        &self.model
    }

    pub fn max_top_k(&self) -> usize {
        self.max_top_k
    }

    fn send(&mut self, msg: &Message) -> Result<(), ScoreError> {
        writeln!(self.writer, "{}", msg.to_line()).map_err(unavailable)
    }

    fn receive(&mut self) -> Result<Message, ScoreError> {
        let mut line = String::new();
        loop {
            line.clear();
            let n = self.reader.read_line(&mut line).map_err(unavailable)?;
            if n == 0 {
                return Err(ScoreError::ScorerUnavailable("sidecar closed the connection".into()));
            }
            if !line.trim().is_empty() {
                break;
            }
        }
        serde_json::from_str(line.trim()).map_err(|_| ScoreError::Protocol(line.trim_end().to_string()))
    }

    /// Sends every query before reading any reply, then returns the
    /// distributions in query order.
    pub fn score_batch(&mut self, queries: &[SlotQuery]) -> Result<Vec<Vec<(String, f64)>>, ScoreError> {
        let base = self.next_id;
        for (i, q) in queries.iter().enumerate() {
            let top_k = q.top_k.min(self.max_top_k.max(1));
            self.send(&Message::Score {
                id: base + i as i64,
                text: q.text.clone(),
                top_k,
            })?;
        }
        self.writer.flush().map_err(unavailable)?;
        self.next_id += queries.len() as i64;

        let mut replies: HashMap<i64, Vec<(String, f64)>> = HashMap::new();
        while replies.len() < queries.len() {
            match self.receive()? {
                Message::Scores { id, tokens } => {
                    let slot = id - base;
                    if slot < 0 || slot as usize >= queries.len() || replies.contains_key(&id) {
                        return Err(ScoreError::Protocol(format!("unexpected reply id {id}")));
                    }
                    validate_distribution(id, &tokens, queries[slot as usize].top_k)?;
                    replies.insert(id, tokens);
                }
                Message::Error { id, message } => return Err(ScoreError::Remote { id, message }),
                other => {
                    return Err(ScoreError::Protocol(format!("unexpected message {}", other.to_line())));
                }
            }
        }
        Ok((0..queries.len())
            .map(|i| replies.remove(&(base + i as i64)).unwrap())
            .collect())
    }
}

impl Drop for SidecarClient {
    fn drop(&mut self) {
        if let Some(mut child) = self.child.take() {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

/// Probabilities in (0, 1], at most `top_k` of them, summing to at most 1.
pub fn validate_distribution(id: i64, tokens: &[(String, f64)], top_k: usize) -> Result<(), ScoreError> {
    let bad = |why: &str| ScoreError::Protocol(format!("reply {id}: {why}"));
    if tokens.len() > top_k {
        return Err(bad("more tokens than requested"));
    }
    if tokens.iter().any(|(_, p)| !(p.is_finite() && *p > 0.0 && *p <= 1.0)) {
        return Err(bad("probability outside (0, 1]"));
    }
    if tokens.iter().map(|(_, p)| p).sum::<f64>() > 1.0 + 1e-6 {
        return Err(bad("probabilities sum above 1"));
    }
    Ok(())
}
