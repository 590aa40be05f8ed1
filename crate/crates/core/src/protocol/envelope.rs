use rand::RngCore;
use sha2::{Digest, Sha256};

use super::{Directory, MsgType, PrincipalId, ProtocolError, Reason, ReplayCache, Tick};
use crate::codec::CanonicalWriter;
use crate::crypto::{open, seal, sign, verify, Entropy, PrivateKey, PublicKey, SealedPayload, Signature};

const ENVELOPE_TAG: &str = "DGENV/1";
const CONTEXT_TAG: &str = "DGHDR/1";

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Payload {
    Sealed(SealedPayload),
    Clear(Vec<u8>),
}

impl Payload {
    pub fn kind(&self) -> &'static str {
        match self {
            Payload::Sealed(_) => "sealed",
            Payload::Clear(_) => "clear",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Envelope {
    pub msg_type: MsgType,
    pub sender_id: PrincipalId,
    pub recipient_id: PrincipalId,
    pub nonce: [u8; 16],
    pub timestamp: Tick,
    pub payload: Payload,
    pub signature: Signature,
}

impl Envelope {
    pub fn canonical_bytes(&self) -> Result<Vec<u8>, ProtocolError> {
        canonical_bytes(
            self.msg_type,
            &self.sender_id,
            &self.recipient_id,
            &self.nonce,
            self.timestamp,
            &self.payload,
        )
    }

    /// SHA-256 over the signed bytes and the signature; identifies this exact
    /// envelope in audit records.
    pub fn digest(&self) -> [u8; 32] {
        let mut w = CanonicalWriter::new();
        w.bytes(&self.canonical_bytes().unwrap_or_default())
            .str(self.signature.signer_key_id.as_str())
            .bytes(&self.signature.sig_bytes);
        Sha256::digest(w.finish()).into()
    }

    pub fn context(&self) -> Vec<u8> {
        seal_context(
            self.msg_type,
            &self.sender_id,
            &self.recipient_id,
            &self.nonce,
            self.timestamp,
        )
    }
}

fn header(
    w: &mut CanonicalWriter,
    msg_type: MsgType,
    sender: &PrincipalId,
    recipient: &PrincipalId,
    nonce: &[u8; 16],
    timestamp: Tick,
) {
    w.str(msg_type.as_str())
        .str(sender.as_str())
        .str(recipient.as_str())
        .bytes(nonce)
        .u64(timestamp);
}

/// Header fields bound into the sealed payload's associated data and signature.
pub fn seal_context(
    msg_type: MsgType,
    sender: &PrincipalId,
    recipient: &PrincipalId,
    nonce: &[u8; 16],
    timestamp: Tick,
) -> Vec<u8> {
    let mut w = CanonicalWriter::with_tag(CONTEXT_TAG);
    header(&mut w, msg_type, sender, recipient, nonce, timestamp);
    w.finish()
}

/// Bytes covered by the envelope signature: everything but the signature.
pub fn canonical_bytes(
    msg_type: MsgType,
    sender: &PrincipalId,
    recipient: &PrincipalId,
    nonce: &[u8; 16],
    timestamp: Tick,
    payload: &Payload,
) -> Result<Vec<u8>, ProtocolError> {
    if sender.as_str().is_empty() {
        return Err(ProtocolError::EmptyField("sender_id"));
    }
    if recipient.as_str().is_empty() {
        return Err(ProtocolError::EmptyField("recipient_id"));
    }
    let mut w = CanonicalWriter::with_tag(ENVELOPE_TAG);
    header(&mut w, msg_type, sender, recipient, nonce, timestamp);
    w.str(payload.kind());
    match payload {
        Payload::Sealed(sp) => {
            if sp.ephemeral_wrapped_key.wrapping_key_id.as_str().is_empty() {
                return Err(ProtocolError::EmptyField("wrapping_key_id"));
            }
            w.str(sp.ephemeral_wrapped_key.wrapping_key_id.as_str())
                .bytes(&sp.ephemeral_wrapped_key.blob)
                .bytes(&sp.body.nonce_iv)
                .bytes(&sp.body.body)
                .bytes(&sp.body.auth_tag)
                .bytes(&sp.body.aad_hash);
        }
        Payload::Clear(bytes) => {
            w.bytes(bytes);
        }
    }
    Ok(w.finish())
}

/// Builds, seals (when the type demands it) and signs an envelope.
#[allow(clippy::too_many_arguments)]
pub fn make_envelope(
    msg_type: MsgType,
    sender: &PrincipalId,
    sender_key: &PrivateKey,
    recipient: &PrincipalId,
    recipient_key: Option<&PublicKey>,
    payload: &[u8],
    now: Tick,
    rng: &mut Entropy,
) -> Result<Envelope, ProtocolError> {
    let mut nonce = [0u8; 16];
    rng.try_fill_bytes(&mut nonce)
        .map_err(|_| crate::crypto::CryptoError::Entropy)?;
    let payload = if msg_type.is_sealed() {
        let key = recipient_key.ok_or(ProtocolError::MissingRecipientKey(msg_type))?;
        let context = seal_context(msg_type, sender, recipient, &nonce, now);
        Payload::Sealed(seal(payload, &context, sender_key, key, rng)?)
    } else {
        Payload::Clear(payload.to_vec())
    };
    let signed = canonical_bytes(msg_type, sender, recipient, &nonce, now, &payload)?;
    let signature = sign(&signed, sender_key, rng)?;
    Ok(Envelope {
        msg_type,
        sender_id: sender.clone(),
        recipient_id: recipient.clone(),
        nonce,
        timestamp: now,
        payload,
        signature,
    })
}

/// Accepts iff the sender is known, the envelope is addressed to `me`, the
/// signature verifies under the sender's registered key, the timestamp lies
/// within the window and the nonce is fresh. The nonce is recorded only on
/// acceptance.
pub fn authenticate_envelope(
    e: &Envelope,
    me: &PrincipalId,
    directory: &Directory,
    cache: &mut ReplayCache,
    now: Tick,
) -> Result<(), Reason> {
    let sender_key = directory.get(&e.sender_id).ok_or(Reason::UnknownSender)?;
    if &e.recipient_id != me {
        return Err(Reason::WrongRecipient);
    }
    let signed = e.canonical_bytes().map_err(|_| Reason::BadSignature)?;
    if !verify(&signed, &e.signature, sender_key) {
        return Err(Reason::BadSignature);
    }
    if !cache.in_window(e.timestamp, now) {
        return Err(Reason::StaleTimestamp);
    }
    cache.record(&e.sender_id, e.nonce, e.timestamp)
}

/// Recovers the payload of an authenticated envelope.
pub fn open_payload(
    e: &Envelope,
    recipient_key: &PrivateKey,
    sender_key: &PublicKey,
    rng: &mut Entropy,
) -> Result<Vec<u8>, ProtocolError> {
    match (&e.payload, e.msg_type.is_sealed()) {
        (Payload::Sealed(sp), true) => Ok(open(sp, &e.context(), recipient_key, sender_key, rng)?),
        (Payload::Clear(bytes), false) => Ok(bytes.clone()),
        _ => Err(ProtocolError::PayloadKind(e.msg_type)),
    }
}
