#![allow(dead_code)]

use dualguard::actors::{ApprovalPolicy, UserConfig};
use dualguard::agent::{AuditAction, AuditEvent};
use dualguard::crypto::{Entropy, KeyOwner, KeyPair};
use dualguard::protocol::transcript::TranscriptEvent;
use dualguard::protocol::{make_envelope, DataClassification, DataId, Envelope, MsgType, PrincipalId, Tick};
use dualguard::simnet::{Action, World, WorldConfig};

/// Same key seed as the catalog, so key pairs come from the shared cache.
pub const KEY_SEED: u64 = 1;

pub fn p(id: &str) -> PrincipalId {
    PrincipalId::new(id)
}

pub fn d(id: &str) -> DataId {
    DataId::new(id)
}

pub fn world(seed: u64, users: &[(&str, ApprovalPolicy)]) -> World {
    let mut w = World::new(WorldConfig::new(seed).with_key_seed(KEY_SEED)).unwrap();
    for (id, approval) in users {
        let mut cfg = UserConfig::new(*id);
        cfg.approval = approval.clone();
        w.add_user(cfg).unwrap();
    }
    w
}

/// Registers `data` at tick 0 and uploads `plaintext` once the owner holds
/// the data public key.
pub fn publish(w: &mut World, owner: &str, data: &str, class: DataClassification, plaintext: &[u8]) {
    w.schedule(0, Action::RegisterData { owner: p(owner), data: d(data), classification: class });
    w.schedule(0, Action::UploadWhenReady { owner: p(owner), data: d(data), plaintext: plaintext.to_vec() });
}

pub fn request(w: &mut World, at: Tick, applicant: &str, data: &str) {
    w.schedule(at, Action::Request { applicant: p(applicant), data: d(data), purpose: "test".into() });
}

pub fn keys(w: &World, id: &str) -> KeyPair {
    w.key_source().keypair(&format!("principal:{id}"), KeyOwner::User).unwrap()
}

/// Envelope from `from`, signed with `signer`, sealed to `to`'s registered key.
pub fn envelope(w: &World, t: MsgType, from: &str, signer: &KeyPair, to: &str, payload: &[u8], seed: u64) -> Envelope {
    let recipient = w.public_keys().get(&p(to)).cloned();
    make_envelope(
        t,
        &p(from),
        &signer.private,
        &p(to),
        recipient.as_ref(),
        payload,
        w.now(),
        &mut Entropy::derive(seed, "integration"),
    )
    .unwrap()
}

/// Verdict of every delivery of `t` to `to`: `None` for accepted, the
/// reason code otherwise.
pub fn verdicts(w: &World, t: MsgType, to: &str) -> Vec<Option<String>> {
    let records = &w.transcript().records;
    records
        .iter()
        .filter(|r| matches!(r.event, TranscriptEvent::Accept | TranscriptEvent::Reject) && r.to == to)
        .filter(|r| {
            r.ref_seq
                .and_then(|s| records.get(s as usize))
                .and_then(|o| o.envelope.as_ref())
                .is_some_and(|e| e.msg_type == t.as_str())
        })
        .map(|r| r.outcome.clone())
        .collect()
}

/// Verdict of the delivery of the envelope recorded at `seq`.
pub fn verdict_of(w: &World, seq: u64) -> Option<Option<String>> {
    w.transcript()
        .records
        .iter()
        .find(|r| r.ref_seq == Some(seq) && matches!(r.event, TranscriptEvent::Accept | TranscriptEvent::Reject))
        .map(|r| r.outcome.clone())
}

pub fn audit(w: &World, action: AuditAction) -> Vec<AuditEvent> {
    w.agent()
        .audit()
        .events()
        .iter()
        .filter(|e| e.action == action)
        .cloned()
        .collect()
}

pub fn contains(haystack: &[u8], needle: &[u8]) -> bool {
    !needle.is_empty() && haystack.windows(needle.len()).any(|w| w == needle)
}
