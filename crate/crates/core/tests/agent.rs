mod common;

use common::*;
use dualguard::actors::ApprovalPolicy;
use dualguard::agent::{AgentError, AuditAction};
use dualguard::crypto::{encrypt_labeled, sign, Entropy, KeyOwner, KeySource};
use dualguard::protocol::transcript::TranscriptEvent;
use dualguard::protocol::{
    DataClassification, Decision, MsgType, OwnerVerification, Payload, RequestId, BINDING_LABEL,
};
use dualguard::simnet::{Action, World};

fn manual_world(seed: u64) -> World {
    let mut w = world(seed, &[("alice", ApprovalPolicy::Manual), ("bob", ApprovalPolicy::Approve), ("carol", ApprovalPolicy::Approve)]);
    publish(&mut w, "alice", "plans", DataClassification::Shared, b"shared plans");
    request(&mut w, 10, "bob", "plans");
    w.run();
    assert_eq!(w.agent().pending().count(), 1);
    w
}

/// An owner verification built by hand: inner layer under `inner_key` binding
/// (`bound_request`, `decision`), outer signature by `outer_signer`.
fn verification(
    w: &World,
    request: &RequestId,
    bound_request: &RequestId,
    decision: Decision,
    outer_signer: &str,
    seed: u64,
) -> Vec<u8> {
    let mut rng = Entropy::derive(seed, "verification");
    let data_key = w.agent().entry(&d("plans")).unwrap().data_keypair.public.clone();
    let inner = encrypt_labeled(
        &OwnerVerification::inner_plaintext(bound_request, decision),
        &data_key,
        BINDING_LABEL,
        &mut rng,
    )
    .unwrap();
    let outer = sign(
        &OwnerVerification::outer_signed_bytes(request, decision, &inner),
        &keys(w, outer_signer).private,
        &mut rng,
    )
    .unwrap();
    OwnerVerification { request_id: request.clone(), decision, inner_layer: inner, outer_signature: outer }.encode()
}

fn deliver(w: &mut World, payload: &[u8], seed: u64) -> Option<String> {
    let alice = keys(w, "alice");
    let e = envelope(w, MsgType::OwnerVerification, "alice", &alice, "agent", payload, seed);
    let seq = w.inject(&p("alice"), &p("agent"), e, 1).unwrap();
    w.run();
    verdict_of(w, seq).expect("delivered")
}

#[test]
fn duplicate_user_registration_is_refused() {
    let mut w = world(1, &[("alice", ApprovalPolicy::Approve)]);
    let key = keys(&w, "alice").public;
    assert!(matches!(
        w.agent_mut().register_user(p("alice"), key, 0),
        Err(AgentError::DuplicateUser(id)) if id == p("alice")
    ));
    assert!(w.add_user(dualguard::actors::UserConfig::new("alice")).is_err());
}

#[test]
fn unregistered_sender_is_rejected() {
    let mut w = world(2, &[("alice", ApprovalPolicy::Approve)]);
    let stranger = KeySource::Deterministic { key_seed: KEY_SEED }.keypair("principal:zed", KeyOwner::User).unwrap();
    let e = envelope(&w, MsgType::AccessRequest, "zed", &stranger, "agent", b"anything", 2);
    let seq = w.inject(&p("alice"), &p("agent"), e, 1).unwrap();
    w.run();
    assert_eq!(verdict_of(&w, seq), Some(Some("unknown_sender".into())));
}

#[test]
fn duplicate_data_registration_leaves_the_vault_alone() {
    let mut w = world(3, &[("alice", ApprovalPolicy::Approve), ("bob", ApprovalPolicy::Approve)]);
    publish(&mut w, "alice", "notes", DataClassification::Shared, b"v1");
    w.schedule(5, Action::RegisterData { owner: p("alice"), data: d("notes"), classification: DataClassification::Public });
    w.schedule(5, Action::RegisterData { owner: p("bob"), data: d("notes"), classification: DataClassification::Public });
    w.run_scanned(|_| {});
    let before = w.agent().vault_records();
    let entry = w.agent().entry(&d("notes")).unwrap().clone();
    let reg = verdicts(&w, MsgType::RegisterData, "agent");
    assert_eq!(reg.len(), 3);
    assert_eq!(reg[0], None);
    assert!(reg[1..].iter().all(|v| v.is_some()), "{reg:?}");
    assert_eq!(entry.owner_id, p("alice"));
    assert_eq!(entry.classification, DataClassification::Shared);
    assert_eq!(w.agent().vault_records(), before);
    assert_eq!(w.agent().entries().count(), 1);
}

#[test]
fn registration_sends_the_public_key_to_cloud_and_owner_only() {
    let mut w = world(4, &[("alice", ApprovalPolicy::Approve), ("bob", ApprovalPolicy::Approve)]);
    publish(&mut w, "alice", "notes", DataClassification::Shared, b"body");
    request(&mut w, 10, "bob", "notes");
    w.run();
    let entry = w.agent().entry(&d("notes")).unwrap();
    let public = entry.data_keypair.public.clone();
    assert_eq!(w.user(&p("alice")).unwrap().owner.owned[&d("notes")].data_public_key.as_ref(), Some(&public));
    assert!(w.cloud().has_notice(&d("notes")));

    // Private key bytes never travel in clear: scan every clear payload and
    // the whole serialized transcript.
    let der = entry.data_keypair.private.to_der();
    let jsonl = w.transcript().to_jsonl();
    assert!(!contains(jsonl.as_bytes(), hex::encode(&*der).as_bytes()));
    for (_, e) in w.transcript().envelopes() {
        if let Payload::Clear(bytes) = &e.payload {
            assert!(!contains(bytes, &der), "{} carries the key in clear", e.msg_type);
        }
    }
    // The one place it does travel is sealed inside the grant.
    let grant_issues = w.transcript().envelopes().filter(|(_, e)| e.msg_type == MsgType::GrantIssue).count();
    assert_eq!(grant_issues, 1);
}

#[test]
fn requests_route_by_classification() {
    let mut w = world(5, &[("alice", ApprovalPolicy::Approve), ("bob", ApprovalPolicy::Approve)]);
    publish(&mut w, "alice", "shared", DataClassification::Shared, b"s");
    publish(&mut w, "alice", "private", DataClassification::Private, b"p");
    publish(&mut w, "alice", "public", DataClassification::Public, b"q");
    request(&mut w, 10, "bob", "shared");
    request(&mut w, 30, "bob", "private");
    request(&mut w, 50, "bob", "public");
    request(&mut w, 70, "bob", "missing");
    w.run();

    let forwarded = audit(&w, AuditAction::ApprovalForwarded);
    assert_eq!(forwarded.len(), 1);
    assert_eq!(forwarded[0].subject("data"), Some("shared"));
    assert_eq!(verdicts(&w, MsgType::OwnerApprovalRequest, "alice"), vec![None]);

    let denied: Vec<(String, String)> = audit(&w, AuditAction::Denied)
        .iter()
        .map(|e| (e.subject("data").unwrap().to_owned(), e.subject("reason").unwrap().to_owned()))
        .collect();
    assert_eq!(
        denied,
        vec![("private".to_owned(), "not_owner".to_owned()), ("missing".to_owned(), "unknown_data".to_owned())]
    );

    let grants: Vec<(String, String)> = audit(&w, AuditAction::GrantIssued)
        .iter()
        .map(|e| (e.subject("data").unwrap().to_owned(), e.subject("basis").unwrap().to_owned()))
        .collect();
    assert_eq!(
        grants,
        vec![("shared".to_owned(), "owner_approval".to_owned()), ("public".to_owned(), "public".to_owned())]
    );
    let bob = w.user(&p("bob")).unwrap();
    assert_eq!(bob.applicant.retrieved_for(&d("public")), vec![b"q".as_slice()]);
    assert_eq!(bob.applicant.retrieved_for(&d("shared")), vec![b"s".as_slice()]);
    assert!(bob.applicant.retrieved_for(&d("private")).is_empty());
}

#[test]
fn valid_double_layer_approval_issues_a_grant() {
    let mut w = manual_world(6);
    let req = RequestId::new("bob-r1");
    let payload = verification(&w, &req, &req, Decision::Approve, "alice", 6);
    assert_eq!(deliver(&mut w, &payload, 60), None);
    assert_eq!(w.agent().grants().count(), 1);
    assert_eq!(w.user(&p("bob")).unwrap().applicant.retrieved_for(&d("plans")), vec![b"shared plans".as_slice()]);

    // Same request again: nothing pending any more.
    let again = verification(&w, &req, &req, Decision::Approve, "alice", 61);
    assert_eq!(deliver(&mut w, &again, 62), Some("no_pending".into()));
    assert_eq!(w.agent().grants().count(), 1);
}

#[test]
fn outer_layer_by_a_non_owner_is_rejected_without_a_grant() {
    let mut w = manual_world(7);
    let req = RequestId::new("bob-r1");
    let payload = verification(&w, &req, &req, Decision::Approve, "carol", 7);
    assert_eq!(deliver(&mut w, &payload, 70), Some("bad_signature".into()));
    assert_eq!(w.agent().grants().count(), 0);
    assert_eq!(w.agent().pending().count(), 1);
    assert!(audit(&w, AuditAction::GrantIssued).is_empty());
}

#[test]
fn inner_layer_bound_to_another_request_is_rejected() {
    let mut w = manual_world(8);
    let (req, other) = (RequestId::new("bob-r1"), RequestId::new("bob-r2"));
    let payload = verification(&w, &req, &other, Decision::Approve, "alice", 8);
    assert_eq!(deliver(&mut w, &payload, 80), Some("bad_data_binding".into()));
    // Decision flipped inside the binding.
    let flipped = verification(&w, &req, &req, Decision::Deny, "alice", 81);
    let mut decoded = OwnerVerification::decode(&flipped).unwrap();
    decoded.decision = Decision::Approve;
    decoded.outer_signature = sign(
        &OwnerVerification::outer_signed_bytes(&req, Decision::Approve, &decoded.inner_layer),
        &keys(&w, "alice").private,
        &mut Entropy::derive(82, "outer"),
    )
    .unwrap();
    assert_eq!(deliver(&mut w, &decoded.encode(), 83), Some("bad_data_binding".into()));
    assert_eq!(w.agent().grants().count(), 0);
}

#[test]
fn owner_denial_reaches_the_applicant_without_key_material() {
    let mut w = world(9, &[("alice", ApprovalPolicy::Deny), ("bob", ApprovalPolicy::Approve)]);
    publish(&mut w, "alice", "plans", DataClassification::Shared, b"x");
    request(&mut w, 10, "bob", "plans");
    w.run();
    assert_eq!(w.agent().grants().count(), 0);
    assert_eq!(verdicts(&w, MsgType::Denial, "bob"), vec![None]);
    assert_eq!(w.user(&p("bob")).unwrap().applicant.held_keys(), 0);
}

#[test]
fn expiry_blocks_redemption_but_not_live_grants() {
    let mut w = world(10, &[("alice", ApprovalPolicy::Approve), ("bob", ApprovalPolicy::Approve)]);
    let mut cfg = dualguard::actors::UserConfig::new("carol");
    cfg.auto_redeem = false;
    cfg.local_grant_checks = false;
    w.add_user(cfg).unwrap();
    publish(&mut w, "alice", "board", DataClassification::Public, b"notice");
    request(&mut w, 10, "carol", "board");
    request(&mut w, 10, "bob", "board");
    let late = 10 + w.config().grant_ttl + 20;
    w.schedule(late, Action::Redeem { applicant: p("carol"), grant: dualguard::protocol::GrantId::new("grant-1") });
    w.run();
    let grants: Vec<_> = w.agent().grants().cloned().collect();
    assert_eq!(grants.len(), 2);
    assert!(grants.iter().all(|g| g.expired));
    assert_eq!(verdicts(&w, MsgType::CloudAccess, "cloud"), vec![None, Some("bad_grant".into())]);
    assert!(w.user(&p("carol")).unwrap().applicant.retrieved.is_empty());
    assert_eq!(w.user(&p("bob")).unwrap().applicant.retrieved.len(), 1);
    assert_eq!(audit(&w, AuditAction::GrantExpired).len(), 2);
}

#[test]
fn replay_cache_stays_bounded_over_a_long_run() {
    let mut w = world(11, &[("alice", ApprovalPolicy::Approve), ("bob", ApprovalPolicy::Approve)]);
    publish(&mut w, "alice", "feed", DataClassification::Public, b"f");
    let window = w.config().window;
    let mut peak = 0;
    for i in 0..40 {
        request(&mut w, 10 + i * 16, "bob", "feed");
    }
    w.run_scanned(|w| peak = peak.max(w.agent().replay_cache_len()));
    // At most one request per 16 ticks plus the registration traffic.
    let bound = (window / 16 + 1) as usize + 4;
    assert!(peak <= bound, "peak {peak} over bound {bound}");
    assert_eq!(w.user(&p("bob")).unwrap().applicant.retrieved.len(), 40);
}

#[test]
fn same_seed_gives_the_same_audit_log() {
    let run = |seed| {
        let mut w = world(seed, &[("alice", ApprovalPolicy::Approve), ("bob", ApprovalPolicy::Approve)]);
        publish(&mut w, "alice", "plans", DataClassification::Shared, b"p");
        request(&mut w, 10, "bob", "plans");
        w.run();
        w.agent().audit().to_jsonl()
    };
    assert_eq!(run(12), run(12));
    let log = dualguard::agent::AuditLog::from_jsonl(&run(12)).unwrap();
    assert!(log.len() > 4);
    assert!(dualguard::agent::AuditLog::from_jsonl("").unwrap().is_empty());
    assert!(run(12).lines().all(|l| !l.is_empty()));
    let _ = TranscriptEvent::Accept;
}
