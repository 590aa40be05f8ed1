mod common;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use common::*;
use dualguard::actors::{ApprovalPolicy, UserConfig};
use dualguard::cloud::{CloudError, CloudStore, StoreError};
use dualguard::protocol::{CloudAccess, DataClassification, DataId, GrantToken, MsgType};
use dualguard::simnet::World;
use zeroize::Zeroizing;

const BODY: &[u8] = b"quarterly numbers, do not forward";

/// Alice publishes `ledger`; carol holds an unredeemed grant for it.
fn granted(seed: u64) -> (World, GrantToken) {
    let mut w = world(seed, &[("alice", ApprovalPolicy::Approve)]);
    let mut cfg = UserConfig::new("carol");
    cfg.auto_redeem = false;
    w.add_user(cfg).unwrap();
    publish(&mut w, "alice", "ledger", DataClassification::Shared, BODY);
    request(&mut w, 10, "carol", "ledger");
    w.run();
    let carol = w.user(&p("carol")).unwrap();
    assert_eq!(carol.applicant.grants.len(), 1);
    let token = carol.applicant.grants.values().next().unwrap().token.clone();
    (w, token)
}

fn access(w: &World, grant: GrantToken, key_der: &[u8], seed: u64) -> dualguard::protocol::Envelope {
    let carol = keys(w, "carol");
    let payload = CloudAccess { grant, data_private_key: Zeroizing::new(key_der.to_vec()) }.encode();
    envelope(w, MsgType::CloudAccess, "carol", &carol, "cloud", &payload, seed)
}

#[test]
fn persisted_store_holds_no_plaintext_or_private_keys() {
    let mut w = world(21, &[("alice", ApprovalPolicy::Approve), ("bob", ApprovalPolicy::Approve)]);
    publish(&mut w, "alice", "ledger", DataClassification::Shared, BODY);
    request(&mut w, 10, "bob", "ledger");
    w.run();
    assert_eq!(w.user(&p("bob")).unwrap().applicant.retrieved_for(&d("ledger")), vec![BODY]);

    let text = w.cloud().persist();
    let data_key = w.agent().entry(&d("ledger")).unwrap().data_keypair.private.to_der();
    for needle in [BODY.to_vec(), STANDARD.encode(BODY).into_bytes(), data_key.to_vec(), STANDARD.encode(&*data_key).into_bytes()] {
        assert!(!contains(text.as_bytes(), &needle));
    }
    let record = w.cloud().record(&d("ledger")).unwrap();
    assert!(!contains(&record.ciphertext.body, BODY));
    assert_eq!(record.ciphertext.body.len(), BODY.len());
    assert_eq!(record.wrapped_main_key.wrapping_key_id, *record.data_public_key.key_id());
}

#[test]
fn ingest_without_notice_or_by_non_owner_is_refused() {
    let (mut w, _) = granted(22);
    let cloud = w.cloud_mut();
    assert!(matches!(
        cloud.ingest_data(&p("alice"), &d("unknown"), b"x"),
        Err(CloudError::NoPubKeyNotice(id)) if id == d("unknown")
    ));
    assert!(matches!(cloud.ingest_data(&p("carol"), &d("ledger"), b"x"), Err(CloudError::NotOwner(..))));
    assert!(matches!(cloud.ingest_data(&p("alice"), &d("ledger"), b"x"), Err(CloudError::Duplicate(_))));
    assert_eq!(cloud.records().count(), 1);
}

#[test]
fn wrong_data_private_key_fails_to_unwrap() {
    let (mut w, grant) = granted(23);
    let wrong = keys(&w, "alice").private.to_der();
    let before = w.cloud().counters();
    let e = access(&w, grant.clone(), &wrong, 23);
    let seq = w.inject(&p("carol"), &p("cloud"), e, 1).unwrap();
    w.run();
    assert_eq!(verdict_of(&w, seq), Some(Some("unwrap_failed".into())));
    let after = w.cloud().counters();
    assert_eq!(after.main_key_unwraps, before.main_key_unwraps + 1);
    assert_eq!(after.data_decryptions, before.data_decryptions);
    assert!(!w.cloud().is_redeemed(&grant.grant_id));

    // Garbage in place of a key never reaches the unwrap.
    let e = access(&w, grant, b"not a key", 24);
    let seq = w.inject(&p("carol"), &p("cloud"), e, 1).unwrap();
    w.run();
    assert_eq!(verdict_of(&w, seq), Some(Some("unwrap_failed".into())));
    assert_eq!(w.cloud().counters().main_key_unwraps, after.main_key_unwraps);
}

#[test]
fn resent_cloud_access_is_a_replay() {
    let mut w = world(25, &[("alice", ApprovalPolicy::Approve), ("bob", ApprovalPolicy::Approve)]);
    publish(&mut w, "alice", "ledger", DataClassification::Shared, BODY);
    request(&mut w, 10, "bob", "ledger");
    w.run();
    let (_, e) = w
        .transcript()
        .envelopes()
        .find(|(_, e)| e.msg_type == MsgType::CloudAccess)
        .unwrap();
    let redemptions = w.cloud().counters().redemptions;
    let seq = w.inject(&p("bob"), &p("cloud"), e, 1).unwrap();
    w.run();
    assert_eq!(verdict_of(&w, seq), Some(Some("replayed_nonce".into())));
    assert_eq!(w.cloud().counters().redemptions, redemptions);
    assert_eq!(w.user(&p("bob")).unwrap().applicant.retrieved.len(), 1);
}

#[test]
fn rejected_envelopes_never_reach_key_material() {
    let (mut w, grant) = granted(26);
    let data_key = w.agent().entry(&d("ledger")).unwrap().data_keypair.private.to_der();
    let before = w.cloud().counters();

    // Signed by alice but claiming to come from carol.
    let alice = keys(&w, "alice");
    let payload = CloudAccess { grant: grant.clone(), data_private_key: data_key.clone() }.encode();
    let forged = envelope(&w, MsgType::CloudAccess, "carol", &alice, "cloud", &payload, 26);
    // Addressed to the agent, delivered to the cloud.
    let misaddressed = {
        let carol = keys(&w, "carol");
        envelope(&w, MsgType::CloudAccess, "carol", &carol, "agent", &payload, 27)
    };
    let s1 = w.inject(&p("carol"), &p("cloud"), forged, 1).unwrap();
    let s2 = w.inject(&p("carol"), &p("cloud"), misaddressed, 1).unwrap();
    w.run();
    assert_eq!(verdict_of(&w, s1), Some(Some("bad_signature".into())));
    assert_eq!(verdict_of(&w, s2), Some(Some("wrong_recipient".into())));
    assert_eq!(w.cloud().counters(), before);

    // A well-formed access with the right key still works afterwards.
    let e = access(&w, grant, &data_key, 28);
    let seq = w.inject(&p("carol"), &p("cloud"), e, 1).unwrap();
    w.run();
    assert_eq!(verdict_of(&w, seq), Some(None));
    assert_eq!(w.cloud().counters().redemptions, before.redemptions + 1);
}

#[test]
fn store_round_trips_empty_and_large() {
    let empty = CloudStore::default();
    assert_eq!(CloudStore::from_text(&empty.to_text()).unwrap(), empty);

    let (w, grant) = granted(29);
    let base = w.cloud().store();
    let template = base.records[0].clone();
    let mut big = CloudStore::default();
    for i in 0..100 {
        let mut r = template.clone();
        r.data_id = DataId::new(format!("item-{i:03}"));
        r.ciphertext.body.push(i as u8);
        big.notices.push((r.data_id.clone(), r.owner_id.clone(), r.classification, r.data_public_key.clone()));
        big.records.push(r);
    }
    big.redeemed.push((grant.grant_id.clone(), grant.expiry));
    let text = big.to_text();
    assert_eq!(CloudStore::from_text(&text).unwrap(), big);
    assert_eq!(text.lines().count(), 1 + 100 + 100 + 1);

    assert!(matches!(CloudStore::from_text(&text[..text.len() - 1]), Err(StoreError::Truncated)));
    let cut = text.rfind('\n').unwrap();
    let mid = text[..cut].rfind('\n').unwrap() + 1;
    assert!(matches!(CloudStore::from_text(&text[..mid]), Err(StoreError::Count { .. })));
    assert!(matches!(CloudStore::from_text(""), Err(StoreError::Header | StoreError::Truncated)));
    let garbled = text.replacen("\"kind\":\"data\"", "\"kind\":\"dta\"", 1);
    let err = CloudStore::from_text(&garbled).unwrap_err();
    assert!(err.line().is_some_and(|l| l > 1), "{err}");

    let mut restored = w.clone();
    restored.cloud_mut().load(&w.cloud().persist()).unwrap();
    assert_eq!(restored.cloud().store(), base);
}
