//! Line-delimited transcript records.
//!
//! One JSON object per line, keys in the fixed order of the structs below,
//! byte strings in standard padded base64. The same rendering is used by
//! audit logs and store files. See `docs/FORMATS.md`.

use std::fmt;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Envelope, MsgType, Payload, PrincipalId, Tick};
use crate::crypto::{KeyId, SealedPayload, Signature, SymCiphertext, WrappedKey};

#[derive(Debug, Error)]
pub enum RecordError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid base64 in field `{0}`")]
    Base64(&'static str),
    #[error("field `{0}` has the wrong length")]
    Length(&'static str),
    #[error("unknown message type `{0}`")]
    MsgType(String),
}

pub(crate) fn b64(bytes: &[u8]) -> String {
    B64.encode(bytes)
}

pub(crate) fn unb64(s: &str, field: &'static str) -> Result<Vec<u8>, RecordError> {
    B64.decode(s).map_err(|_| RecordError::Base64(field))
}

pub(crate) fn unb64_array<const N: usize>(s: &str, field: &'static str) -> Result<[u8; N], RecordError> {
    unb64(s, field)?
        .try_into()
        .map_err(|_| RecordError::Length(field))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum PayloadRecord {
    Sealed {
        wrapping_key_id: String,
        wrapped_key: String,
        nonce_iv: String,
        body: String,
        auth_tag: String,
        aad_hash: String,
    },
    Clear {
        bytes: String,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvelopeRecord {
    pub msg_type: String,
    pub sender_id: String,
    pub recipient_id: String,
    pub nonce: String,
    pub timestamp: Tick,
    pub payload: PayloadRecord,
    pub signer_key_id: String,
    pub signature: String,
}

impl From<&Envelope> for EnvelopeRecord {
    fn from(e: &Envelope) -> Self {
        let payload = match &e.payload {
            Payload::Sealed(sp) => PayloadRecord::Sealed {
                wrapping_key_id: sp.ephemeral_wrapped_key.wrapping_key_id.to_string(),
                wrapped_key: b64(&sp.ephemeral_wrapped_key.blob),
                nonce_iv: b64(&sp.body.nonce_iv),
                body: b64(&sp.body.body),
                auth_tag: b64(&sp.body.auth_tag),
                aad_hash: b64(&sp.body.aad_hash),
            },
            Payload::Clear(bytes) => PayloadRecord::Clear { bytes: b64(bytes) },
        };
        EnvelopeRecord {
            msg_type: e.msg_type.to_string(),
            sender_id: e.sender_id.to_string(),
            recipient_id: e.recipient_id.to_string(),
            nonce: b64(&e.nonce),
            timestamp: e.timestamp,
            payload,
            signer_key_id: e.signature.signer_key_id.to_string(),
            signature: b64(&e.signature.sig_bytes),
        }
    }
}

impl TryFrom<&EnvelopeRecord> for Envelope {
    type Error = RecordError;

    fn try_from(r: &EnvelopeRecord) -> Result<Self, Self::Error> {
        let payload = match &r.payload {
            PayloadRecord::Sealed {
                wrapping_key_id,
                wrapped_key,
                nonce_iv,
                body,
                auth_tag,
                aad_hash,
            } => Payload::Sealed(SealedPayload {
                ephemeral_wrapped_key: WrappedKey {
                    wrapping_key_id: KeyId::new(wrapping_key_id.clone()),
                    blob: unb64(wrapped_key, "wrapped_key")?,
                },
                body: SymCiphertext {
                    nonce_iv: unb64_array(nonce_iv, "nonce_iv")?,
                    body: unb64(body, "body")?,
                    auth_tag: unb64_array(auth_tag, "auth_tag")?,
                    aad_hash: unb64_array(aad_hash, "aad_hash")?,
                },
            }),
            PayloadRecord::Clear { bytes } => Payload::Clear(unb64(bytes, "bytes")?),
        };
        Ok(Envelope {
            msg_type: MsgType::parse(&r.msg_type).ok_or_else(|| RecordError::MsgType(r.msg_type.clone()))?,
            sender_id: PrincipalId::new(r.sender_id.clone()),
            recipient_id: PrincipalId::new(r.recipient_id.clone()),
            nonce: unb64_array(&r.nonce, "nonce")?,
            timestamp: r.timestamp,
            payload,
            signature: Signature {
                signer_key_id: KeyId::new(r.signer_key_id.clone()),
                sig_bytes: unb64(&r.signature, "signature")?,
            },
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TranscriptEvent {
    /// An honest principal put an envelope on a link.
    Send,
    /// The adversary discarded the envelope.
    Drop,
    /// The adversary replaced the envelope with a modified copy.
    Modify,
    /// The adversary introduced an envelope of its own making.
    Inject,
    /// The recipient accepted the delivered envelope.
    Accept,
    /// The recipient refused the delivered envelope.
    Reject,
    /// Delivery attempted to an endpoint that does not exist.
    Undeliverable,
}

impl fmt::Display for TranscriptEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).unwrap();
        f.write_str(s.as_str().unwrap())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TranscriptRecord {
    pub seq: u64,
    pub tick: Tick,
    pub event: TranscriptEvent,
    pub link: String,
    pub from: String,
    pub to: String,
    pub ref_seq: Option<u64>,
    pub outcome: Option<String>,
    pub envelope: Option<EnvelopeRecord>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Transcript {
    pub records: Vec<TranscriptRecord>,
}

impl Transcript {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn push(&mut self, mut record: TranscriptRecord) -> u64 {
        let seq = self.records.len() as u64;
        record.seq = seq;
        self.records.push(record);
        seq
    }

    pub fn get(&self, seq: u64) -> Option<&TranscriptRecord> {
        self.records.get(seq as usize)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn parse_jsonl(text: &str) -> Result<Self, RecordError> {
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let r: TranscriptRecord = serde_json::from_str(line).map_err(|e| RecordError::Parse {
                line: i + 1,
                msg: e.to_string(),
            })?;
            records.push(r);
        }
        Ok(Transcript { records })
    }

    /// Envelopes as they appeared on the wire, with their record seq.
    pub fn envelopes(&self) -> impl Iterator<Item = (u64, Envelope)> + '_ {
        self.records.iter().filter_map(|r| {
            let e = r.envelope.as_ref()?;
            Envelope::try_from(e).ok().map(|env| (r.seq, env))
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::test_keys::{pair, rng};
    use crate::protocol::make_envelope;

    #[test]
    fn envelope_record_is_lossless_and_stable() {
        let (a, b) = (pair("alice"), pair("bob"));
        let mut rng = rng();
        for t in [MsgType::GrantIssue, MsgType::Error] {
            let e = make_envelope(t, &"alice".into(), &a.private, &"bob".into(), Some(&b.public), b"p", 3, &mut rng).unwrap();
            let rec = EnvelopeRecord::from(&e);
            assert_eq!(Envelope::try_from(&rec).unwrap(), e);
            let mut t = Transcript::new();
            t.push(TranscriptRecord {
                seq: 0,
                tick: 3,
                event: TranscriptEvent::Send,
                link: "alice-bob".into(),
                from: "alice".into(),
                to: "bob".into(),
                ref_seq: None,
                outcome: None,
                envelope: Some(rec),
            });
            let text = t.to_jsonl();
            let back = Transcript::parse_jsonl(&text).unwrap();
            assert_eq!(back, t);
            assert_eq!(back.to_jsonl(), text);
            assert!(text.starts_with("{\"seq\":0,\"tick\":3,\"event\":\"send\""));
        }
    }
}
