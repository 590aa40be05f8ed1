//! Append-only, hash-chained audit log.
//!
//! Each event's digest is SHA-256 over the canonical encoding of the previous
//! digest and the event's own fields. The first event links to 32 zero bytes.
//! On disk an event is one compact JSON line; verification re-renders every
//! parsed line and requires byte equality, so any single-byte change is caught
//! either by the parser, by the re-rendering check or by the chain.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::codec::CanonicalWriter;
use crate::protocol::Tick;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditAction {
    RegisterUser,
    RegisterData,
    AccessRequest,
    ApprovalForwarded,
    OwnerVerified,
    GrantIssued,
    Denied,
    Rejected,
    GrantExpired,
}

impl AuditAction {
    fn as_str(self) -> &'static str {
        match self {
            AuditAction::RegisterUser => "register_user",
            AuditAction::RegisterData => "register_data",
            AuditAction::AccessRequest => "access_request",
            AuditAction::ApprovalForwarded => "approval_forwarded",
            AuditAction::OwnerVerified => "owner_verified",
            AuditAction::GrantIssued => "grant_issued",
            AuditAction::Denied => "denied",
            AuditAction::Rejected => "rejected",
            AuditAction::GrantExpired => "grant_expired",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditEvent {
    pub index: u64,
    pub tick: Tick,
    pub actor: String,
    pub action: AuditAction,
    /// `ok` or `rejected:<reason>`.
    pub outcome: String,
    pub subject: BTreeMap<String, String>,
    pub envelope_digest: String,
    pub prev_digest: String,
    pub digest: String,
}

impl AuditEvent {
    pub fn is_ok(&self) -> bool {
        self.outcome == "ok"
    }

    pub fn subject(&self, key: &str) -> Option<&str> {
        self.subject.get(key).map(String::as_str)
    }

    fn compute_digest(&self) -> String {
        let mut w = CanonicalWriter::with_tag("dualguard/v1/audit");
        w.str(&self.prev_digest)
            .u64(self.index)
            .u64(self.tick)
            .str(&self.actor)
            .str(self.action.as_str())
            .str(&self.outcome)
            .u64(self.subject.len() as u64);
        for (k, v) in &self.subject {
            w.str(k).str(v);
        }
        w.str(&self.envelope_digest);
        hex::encode(Sha256::digest(w.finish()))
    }
}

/// What to append; the log fills in index and digests.
#[derive(Clone, Debug)]
pub struct AuditEntry {
    pub tick: Tick,
    pub actor: String,
    pub action: AuditAction,
    pub outcome: Result<(), String>,
    pub subject: BTreeMap<String, String>,
    pub envelope_digest: Option<[u8; 32]>,
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum AuditError {
    #[error("line {line}: not a well-formed audit record")]
    Malformed { line: usize },
    #[error("line {line}: record is not in canonical rendering")]
    NotCanonical { line: usize },
    #[error("line {line}: index {found} out of sequence")]
    Sequence { line: usize, found: u64 },
    #[error("line {line}: broken link, prev_digest does not match the preceding record")]
    BrokenLink { line: usize },
    #[error("line {line}: digest does not match record contents")]
    BadDigest { line: usize },
    #[error("log does not end with a newline")]
    MissingNewline,
}

impl AuditError {
    pub fn line(&self) -> Option<usize> {
        match self {
            AuditError::Malformed { line }
            | AuditError::NotCanonical { line }
            | AuditError::Sequence { line, .. }
            | AuditError::BrokenLink { line }
            | AuditError::BadDigest { line } => Some(*line),
            AuditError::MissingNewline => None,
        }
    }
}

const GENESIS: &str = "0000000000000000000000000000000000000000000000000000000000000000";

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AuditLog {
    events: Vec<AuditEvent>,
}

impl AuditLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn append(&mut self, entry: AuditEntry) -> &AuditEvent {
        let prev_digest = self
            .events
            .last()
            .map(|e| e.digest.clone())
            .unwrap_or_else(|| GENESIS.to_owned());
        let mut event = AuditEvent {
            index: self.events.len() as u64,
            tick: entry.tick,
            actor: entry.actor,
            action: entry.action,
            outcome: match entry.outcome {
                Ok(()) => "ok".to_owned(),
                Err(reason) => format!("rejected:{reason}"),
            },
            subject: entry.subject,
            envelope_digest: entry.envelope_digest.map(hex::encode).unwrap_or_default(),
            prev_digest,
            digest: String::new(),
        };
        event.digest = event.compute_digest();
        self.events.push(event);
        self.events.last().unwrap()
    }

    pub fn events(&self) -> &[AuditEvent] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn verify(&self) -> Result<(), AuditError> {
        verify_chain(&self.events)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            out.push_str(&serde_json::to_string(e).expect("event serializes"));
            out.push('\n');
        }
        out
    }

    /// Parses and fully verifies a persisted log.
    pub fn from_jsonl(text: &str) -> Result<Self, AuditError> {
        if text.is_empty() {
            return Ok(Self::new());
        }
        let body = text.strip_suffix('\n').ok_or(AuditError::MissingNewline)?;
        let mut events = Vec::new();
        for (i, line) in body.split('\n').enumerate() {
            let line_no = i + 1;
            let event: AuditEvent =
                serde_json::from_str(line).map_err(|_| AuditError::Malformed { line: line_no })?;
            if serde_json::to_string(&event).expect("event serializes") != line {
                return Err(AuditError::NotCanonical { line: line_no });
            }
            events.push(event);
        }
        verify_chain(&events)?;
        Ok(AuditLog { events })
    }
}

fn verify_chain(events: &[AuditEvent]) -> Result<(), AuditError> {
    let mut prev = GENESIS.to_owned();
    for (i, e) in events.iter().enumerate() {
        let line = i + 1;
        if e.index != i as u64 {
            return Err(AuditError::Sequence { line, found: e.index });
        }
        if e.prev_digest != prev {
            return Err(AuditError::BrokenLink { line });
        }
        if e.compute_digest() != e.digest {
            return Err(AuditError::BadDigest { line });
        }
        prev = e.digest.clone();
    }
    Ok(())
}

impl fmt::Display for AuditEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{} t={} {} {} {}", self.index, self.tick, self.actor, self.action.as_str(), self.outcome)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> AuditLog {
        let mut log = AuditLog::new();
        for i in 0..4u64 {
            let mut subject = BTreeMap::new();
            subject.insert("request".to_owned(), format!("r{i}"));
            log.append(AuditEntry {
                tick: i * 3,
                actor: "alice".into(),
                action: if i % 2 == 0 { AuditAction::AccessRequest } else { AuditAction::Rejected },
                outcome: if i % 2 == 0 { Ok(()) } else { Err("bad_signature".into()) },
                subject,
                envelope_digest: Some([i as u8; 32]),
            });
        }
        log
    }

    #[test]
    fn empty_log_verifies() {
        assert!(AuditLog::new().verify().is_ok());
        assert_eq!(AuditLog::from_jsonl("").unwrap(), AuditLog::new());
    }

    #[test]
    fn persisted_log_round_trips() {
        let log = sample();
        log.verify().unwrap();
        assert_eq!(AuditLog::from_jsonl(&log.to_jsonl()).unwrap(), log);
    }

    #[test]
    fn every_single_byte_tamper_is_detected() {
        let text = sample().to_jsonl().into_bytes();
        for pos in 0..text.len() {
            for replacement in [text[pos] ^ 0x01, text[pos] ^ 0x20, b' ', b'0'] {
                if replacement == text[pos] {
                    continue;
                }
                let mut t = text.clone();
                t[pos] = replacement;
                let Ok(s) = String::from_utf8(t) else { continue };
                assert!(AuditLog::from_jsonl(&s).is_err(), "undetected change at byte {pos}");
            }
        }
    }

    #[test]
    fn broken_link_names_the_line() {
        let mut log = sample();
        log.events[2].tick += 1;
        assert_eq!(log.verify(), Err(AuditError::BadDigest { line: 3 }));
        let mut log = sample();
        log.events.remove(1);
        assert!(matches!(log.verify(), Err(AuditError::Sequence { line: 2, .. })));
    }
}
