//! Attack campaigns shared by the scenarios: randomized interception,
//! crafted injection, exhaustive single-field mutation, store compromise and
//! forgery.

use std::collections::BTreeMap;

use rand::{Rng, RngCore};

use crate::agent::VaultRecord;
use crate::cloud::{CloudStore, StoreError};
use crate::crypto::{encrypt_labeled, sign, Entropy, KeyOwner, KeyPair, PrivateKey, PublicKey};
use crate::protocol::transcript::TranscriptEvent;
use crate::protocol::{
    make_envelope, AccessRequest, DataId, Decision, Envelope, MsgType, OwnerVerification, PrincipalId, Reason,
    RequestId, BINDING_LABEL,
};
use crate::simnet::{
    adversary_try_decrypt, mutate, AdversaryState, Delivery, EnvelopeField, Mutation, NodeBox, Provenance,
    SimError, Success, TapPolicy, TryCache, Violation, World, ADVERSARY_ID,
};

/// The adversary's own key pair; it is registered like any user.
fn adversary_keys(w: &World) -> Result<KeyPair, SimError> {
    Ok(w.key_source().keypair(&format!("principal:{ADVERSARY_ID}"), KeyOwner::User)?)
}

#[derive(Clone, Debug)]
pub struct CampaignResult {
    pub link: String,
    pub strategies: usize,
    /// Strategies that forked from a tapped delivery.
    pub interception_strategies: usize,
    /// Strategies that injected crafted envelopes.
    pub injection_strategies: usize,
    pub tap_points: usize,
    pub injection_points: usize,
    /// Adversary actions other than plain forwarding, over all strategies.
    pub actions: usize,
    pub violations: Vec<(usize, Violation)>,
    pub successes: Vec<(usize, Success)>,
    pub decrypt_attempts: u64,
    /// Envelopes the passive adversary captured.
    pub passive_captures: Vec<u64>,
    /// A few adversary log lines, for the verdict detail.
    pub sample: Vec<String>,
}

/// Runs `base` once with a passive tap, then branches `strategies` times
/// from recorded states: mostly from a delivery the tap sees, with a random
/// interception policy, and otherwise from a tick boundary, with crafted
/// injections over the tapped link. After each branch finishes, every key
/// the adversary holds is tried against everything it captured.
pub fn mitm_campaign(base: &World, strategies: usize, seed: u64) -> Result<(World, CampaignResult), SimError> {
    let adv = base
        .adversary()
        .ok_or_else(|| SimError::UnknownPrincipal(PrincipalId::new(ADVERSARY_ID)))?;
    let link = adv
        .link()
        .cloned()
        .ok_or_else(|| SimError::UnknownPrincipal(PrincipalId::new(ADVERSARY_ID)))?;
    let mut passive = base.clone();
    let mut tap_points = Vec::new();
    let mut injection_points = Vec::new();
    let mut last_tick = None;
    let limit = passive.now() + passive.config().tick_budget;
    loop {
        if passive.next_is_tapped() {
            tap_points.push(passive.clone());
        }
        if passive.peek_delivery().is_some() && last_tick != Some(passive.now()) {
            last_tick = Some(passive.now());
            injection_points.push(passive.clone());
        }
        if !passive.micro_step() || passive.now() > limit {
            break;
        }
    }
    let keys = adversary_keys(base)?;
    let mut cache = TryCache::default();
    let mut result = CampaignResult {
        link: crate::simnet::link_name(&link.a, &link.b),
        strategies,
        interception_strategies: 0,
        injection_strategies: 0,
        tap_points: tap_points.len(),
        injection_points: injection_points.len(),
        actions: 0,
        violations: Vec::new(),
        successes: Vec::new(),
        decrypt_attempts: 0,
        passive_captures: passive
            .adversary()
            .map(|a| a.captured().iter().map(|(s, _)| *s).collect())
            .unwrap_or_default(),
        sample: Vec::new(),
    };
    for i in 0..strategies {
        let mut rng = Entropy::derive(seed, &format!("strategy:{i}"));
        let intercept = !tap_points.is_empty() && i % 4 != 3;
        let mut w = if intercept {
            result.interception_strategies += 1;
            let mut w = tap_points[rng.gen_range(0..tap_points.len())].clone();
            let percent = rng.gen_range(5..=60);
            let s = rng.next_u64();
            if let Some(a) = w.adversary_mut() {
                a.set_strategy(TapPolicy::Random { percent }, s);
            }
            w
        } else {
            let Some(point) = injection_points.get(rng.gen_range(0..injection_points.len().max(1))) else {
                continue;
            };
            result.injection_strategies += 1;
            let mut w = point.clone();
            for _ in 0..rng.gen_range(1..=3) {
                if let Some((via, to, e)) = craft_injection(&w, &link.a, &link.b, &keys, &mut rng) {
                    let delay = rng.gen_range(0..3);
                    w.inject(&via, &to, e, delay)?;
                    result.actions += 1;
                }
            }
            w
        };
        let before = w.adversary().map_or(0, |a| a.log().len());
        w.run();
        let adv = w.adversary().expect("adversary persists across clones");
        result.actions += adv.log().len() - before;
        if result.sample.len() < 6 {
            result.sample.extend(adv.log().iter().skip(before).take(1).cloned());
        }
        result.violations.extend(w.violations().iter().cloned().map(|v| (i, v)));
        let report = adversary_try_decrypt(&adv.state(&w), &mut cache);
        result.decrypt_attempts += report.attempts;
        result.successes.extend(report.successes.into_iter().map(|s| (i, s)));
    }
    Ok((passive, result))
}

/// One adversary-made envelope for an endpoint of the link `a`–`b`, built
/// only from what a wire adversary has: its own key, public keys, known
/// identifiers and envelopes seen on the wire.
fn craft_injection(
    w: &World,
    a: &PrincipalId,
    b: &PrincipalId,
    keys: &KeyPair,
    rng: &mut Entropy,
) -> Option<(PrincipalId, PrincipalId, Envelope)> {
    let (to, via) = if rng.gen() { (a.clone(), b.clone()) } else { (b.clone(), a.clone()) };
    let me = PrincipalId::new(ADVERSARY_ID);
    let now = w.now();
    let principals: Vec<PrincipalId> = w.public_keys().keys().filter(|p| **p != me).cloned().collect();
    let to_key = w.public_keys().get(&to);
    let seen: Vec<Envelope> = w
        .transcript()
        .envelopes()
        .map(|(_, e)| e)
        .filter(|e| e.recipient_id == to)
        .collect();
    let random_type = |rng: &mut Entropy| MsgType::ALL[rng.gen_range(0..MsgType::ALL.len())];
    let mut junk = vec![0u8; rng.gen_range(0..160)];
    rng.fill_bytes(&mut junk);
    let e = match rng.gen_range(0..5) {
        0 => {
            let claimed = &principals[rng.gen_range(0..principals.len())];
            make_envelope(random_type(rng), claimed, &keys.private, &to, to_key, &junk, now, rng).ok()?
        }
        1 => make_envelope(random_type(rng), &me, &keys.private, &to, to_key, &junk, now, rng).ok()?,
        2 => {
            let data: Vec<DataId> = w.agent().entries().map(|e| e.data_id.clone()).collect();
            if data.is_empty() {
                return None;
            }
            let body = AccessRequest {
                request_id: RequestId::new(format!("{me}-x{}", rng.next_u32())),
                data_id: data[rng.gen_range(0..data.len())].clone(),
                applicant_id: me.clone(),
                purpose: "audit".into(),
            }
            .encode();
            make_envelope(MsgType::AccessRequest, &me, &keys.private, &to, to_key, &body, now, rng).ok()?
        }
        3 => seen.get(rng.gen_range(0..seen.len().max(1)))?.clone(),
        _ => {
            let e = seen.get(rng.gen_range(0..seen.len().max(1)))?;
            let f = EnvelopeField::ALL[rng.gen_range(0..EnvelopeField::ALL.len())];
            let m = Mutation::SWEEP[rng.gen_range(0..Mutation::SWEEP.len())];
            mutate(e, f, m, &principals, w.config().window, rng)?
        }
    };
    Some((via, to, e))
}

#[derive(Clone, Debug, Default)]
pub struct SweepResult {
    /// Honest deliveries swept.
    pub deliveries: usize,
    pub mutations: usize,
    /// Transcript seqs of the swept deliveries.
    pub swept: Vec<u64>,
    /// `seq field mutation` of every mutated envelope that was accepted.
    pub accepted: Vec<String>,
    /// Cloud-side work done on behalf of a mutated envelope.
    pub cloud_side_effects: Vec<String>,
    pub reasons: BTreeMap<String, usize>,
}

/// Runs `base` and, before each honest delivery `select` picks, hands every
/// single-field mutation of the envelope to a copy of the recipient.
pub fn mutation_sweep(base: &World, select: impl Fn(&Delivery) -> bool, seed: u64) -> SweepResult {
    let mut out = SweepResult::default();
    let mut rng = Entropy::derive(seed, "mutation-sweep");
    let mut w = base.clone();
    w.run_visiting(|w, d| {
        if d.provenance != Provenance::Honest || !select(d) {
            return;
        }
        let Some(node) = w.node(&d.to) else { return };
        let principals: Vec<PrincipalId> = w.public_keys().keys().cloned().collect();
        out.deliveries += 1;
        out.swept.push(d.origin_seq);
        for f in EnvelopeField::ALL {
            for m in Mutation::SWEEP {
                let Some(e) = mutate(&d.envelope, f, m, &principals, w.config().window, &mut rng) else {
                    continue;
                };
                out.mutations += 1;
                let mut copy = node.clone();
                let before = match &copy {
                    NodeBox::Cloud(c) => Some(c.counters()),
                    _ => None,
                };
                let outcome = copy.handle(&e, w.now());
                let label = format!("seq {} {} {m:?}", d.origin_seq, f.as_str());
                match outcome.rejected {
                    Some(r) => *out.reasons.entry(r.as_str().to_owned()).or_default() += 1,
                    None => out.accepted.push(label.clone()),
                }
                if let (Some(before), NodeBox::Cloud(c)) = (before, &copy) {
                    if c.counters() != before {
                        out.cloud_side_effects.push(label);
                    }
                }
            }
        }
    });
    out
}

/// What an adversary holding the persisted cloud store has: the store's
/// records and public keys, plus its own key pair.
pub fn store_state(store_text: &str, w: &World) -> Result<AdversaryState, StoreError> {
    let store = CloudStore::from_text(store_text)?;
    let mut state = own_state(w);
    state
        .public_keys
        .extend(store.notices.iter().map(|(_, _, _, k)| k.clone()));
    state.records = store
        .records
        .into_iter()
        .map(|r| (format!("store record {}", r.data_id), r))
        .collect();
    Ok(state)
}

/// What an adversary holding the decrypted Agent vault has: every private
/// key in it, plus its own key pair and all public keys.
pub fn vault_state(records: &[VaultRecord], w: &World) -> AdversaryState {
    let mut state = own_state(w);
    for r in records {
        let label = match r {
            VaultRecord::Identity { id, .. } => format!("vault identity key of {id}"),
            VaultRecord::Data { data_id, .. } => format!("vault data key of {data_id}"),
            _ => continue,
        };
        if let Some(k) = r.private_key_der().and_then(|der| PrivateKey::from_der(&der).ok()) {
            state.private_keys.push((label, k));
        }
    }
    state
}

fn own_state(w: &World) -> AdversaryState {
    let mut state = AdversaryState {
        public_keys: w.public_keys().values().cloned().collect(),
        ..AdversaryState::default()
    };
    if let Ok(k) = adversary_keys(w) {
        state
            .private_keys
            .push((format!("{ADVERSARY_ID} identity"), k.private));
    }
    state
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum ForgeryKind {
    /// An access request claiming the applicant, signed with the adversary's key.
    ForgedRequest,
    /// An approval claiming the owner, signed with the adversary's key.
    ForgedVerification,
    /// A correctly signed approval from the adversary for someone else's data.
    ForeignApproval,
    /// The owner's transport signature around an outer layer signed by
    /// another key.
    WrongOuterKey,
    /// Owner-signed, but the inner binding does not match.
    MismatchedBinding,
}

impl ForgeryKind {
    pub const ALL: [ForgeryKind; 5] = [
        ForgeryKind::ForgedRequest,
        ForgeryKind::ForgedVerification,
        ForgeryKind::ForeignApproval,
        ForgeryKind::WrongOuterKey,
        ForgeryKind::MismatchedBinding,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ForgeryKind::ForgedRequest => "forged_access_request",
            ForgeryKind::ForgedVerification => "forged_owner_verification",
            ForgeryKind::ForeignApproval => "foreign_approval",
            ForgeryKind::WrongOuterKey => "wrong_outer_key",
            ForgeryKind::MismatchedBinding => "mismatched_binding",
        }
    }

    pub fn expected(self) -> Reason {
        match self {
            ForgeryKind::MismatchedBinding => Reason::BadDataBinding,
            _ => Reason::BadSignature,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct ForgeryResult {
    pub attempts: usize,
    /// Attempts and rejection reasons per kind.
    pub per_kind: BTreeMap<ForgeryKind, (usize, BTreeMap<String, usize>)>,
    /// Attempts that were not rejected with the expected reason.
    pub unexpected: Vec<String>,
    pub grants_before: usize,
    pub grants_after: usize,
    /// Transcript seqs of the verdict records, one per attempt.
    pub verdict_seqs: Vec<u64>,
}

/// The parties a forgery campaign targets. `request` must be pending at
/// the Agent, for `data` owned by `owner`.
pub struct ForgeryTarget<'a> {
    pub owner: &'a PrincipalId,
    pub applicant: &'a PrincipalId,
    pub data: &'a DataId,
    pub request: &'a RequestId,
}

/// Injects `n` forgeries at the Agent, cycling through [`ForgeryKind::ALL`],
/// running the world to quiescence after each.
///
/// The owner-signed kinds use the owner's key from the world's key source;
/// they isolate the checks behind transport authentication and are beyond
/// what a wire adversary can produce.
pub fn forgery_campaign(w: &mut World, t: &ForgeryTarget, n: usize, seed: u64) -> Result<ForgeryResult, SimError> {
    let agent = PrincipalId::agent();
    let agent_key = w.public_keys()[&agent].clone();
    let mallory = adversary_keys(w)?;
    let me = PrincipalId::new(ADVERSARY_ID);
    let owner = w.key_source().keypair(&format!("principal:{}", t.owner), KeyOwner::User)?;
    let data_key = w
        .user(t.owner)
        .and_then(|u| u.owner.owned.get(t.data))
        .and_then(|d| d.data_public_key.clone())
        .ok_or_else(|| SimError::UnknownPrincipal(t.owner.clone()))?;
    let mut rng = Entropy::derive(seed, "forgery");
    let mut out = ForgeryResult {
        grants_before: w.agent().grants().count(),
        ..ForgeryResult::default()
    };
    for i in 0..n {
        let kind = ForgeryKind::ALL[i % ForgeryKind::ALL.len()];
        let now = w.now();
        let approval = |inner: Vec<u8>, outer: &PrivateKey, decision: Decision, rng: &mut Entropy| {
            let outer_bytes = OwnerVerification::outer_signed_bytes(t.request, decision, &inner);
            let sig = sign(&outer_bytes, outer, rng).map_err(SimError::from)?;
            Ok::<_, SimError>(
                OwnerVerification {
                    request_id: t.request.clone(),
                    decision,
                    inner_layer: inner,
                    outer_signature: sig,
                }
                .encode(),
            )
        };
        let binding = |request: &RequestId, decision: Decision, key: &PublicKey, rng: &mut Entropy| {
            encrypt_labeled(&OwnerVerification::inner_plaintext(request, decision), key, BINDING_LABEL, rng)
                .map_err(SimError::from)
        };
        let envelope = |t_: MsgType, from: &PrincipalId, key: &PrivateKey, body: &[u8], rng: &mut Entropy| {
            make_envelope(t_, from, key, &agent, Some(&agent_key), body, now, rng)
                .map_err(SimError::from)
        };
        let (via, e) = match kind {
            ForgeryKind::ForgedRequest => {
                let body = AccessRequest {
                    request_id: RequestId::new(format!("{}-f{i}", t.applicant)),
                    data_id: t.data.clone(),
                    applicant_id: t.applicant.clone(),
                    purpose: "forged".into(),
                }
                .encode();
                (t.applicant, envelope(MsgType::AccessRequest, t.applicant, &mallory.private, &body, &mut rng)?)
            }
            ForgeryKind::ForgedVerification => {
                let inner = binding(t.request, Decision::Approve, &data_key, &mut rng)?;
                let body = approval(inner, &mallory.private, Decision::Approve, &mut rng)?;
                (t.owner, envelope(MsgType::OwnerVerification, t.owner, &mallory.private, &body, &mut rng)?)
            }
            ForgeryKind::ForeignApproval => {
                let inner = binding(t.request, Decision::Approve, &data_key, &mut rng)?;
                let body = approval(inner, &mallory.private, Decision::Approve, &mut rng)?;
                (t.owner, envelope(MsgType::OwnerVerification, &me, &mallory.private, &body, &mut rng)?)
            }
            ForgeryKind::WrongOuterKey => {
                let inner = binding(t.request, Decision::Approve, &data_key, &mut rng)?;
                let body = approval(inner, &mallory.private, Decision::Approve, &mut rng)?;
                (t.owner, envelope(MsgType::OwnerVerification, t.owner, &owner.private, &body, &mut rng)?)
            }
            ForgeryKind::MismatchedBinding => {
                let inner = match (i / ForgeryKind::ALL.len()) % 4 {
                    0 => binding(&RequestId::new(format!("{}-other", t.request)), Decision::Approve, &data_key, &mut rng)?,
                    1 => binding(t.request, Decision::Deny, &data_key, &mut rng)?,
                    2 => binding(t.request, Decision::Approve, &mallory.public, &mut rng)?,
                    _ => {
                        let mut b = vec![0u8; 256];
                        rng.fill_bytes(&mut b);
                        b
                    }
                };
                let body = approval(inner, &owner.private, Decision::Approve, &mut rng)?;
                (t.owner, envelope(MsgType::OwnerVerification, t.owner, &owner.private, &body, &mut rng)?)
            }
        };
        let seq = w.inject(via, &agent, e, 1)?;
        w.run();
        let verdict = w
            .transcript()
            .records
            .iter()
            .rev()
            .find(|r| r.ref_seq == Some(seq) && matches!(r.event, TranscriptEvent::Accept | TranscriptEvent::Reject));
        let reason = match verdict {
            Some(r) if r.event == TranscriptEvent::Reject => r.outcome.clone().unwrap_or_default(),
            Some(_) => "accepted".to_owned(),
            None => "not delivered".to_owned(),
        };
        if let Some(r) = verdict {
            out.verdict_seqs.push(r.seq);
        }
        if reason != kind.expected().as_str() {
            out.unexpected.push(format!("attempt {i} {}: {reason}", kind.as_str()));
        }
        let entry = out.per_kind.entry(kind).or_default();
        entry.0 += 1;
        *entry.1.entry(reason).or_default() += 1;
        out.attempts += 1;
    }
    out.grants_after = w.agent().grants().count();
    Ok(out)
}
