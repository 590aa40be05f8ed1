//! The network adversary: a registered but otherwise ordinary principal that
//! sits on one link and may observe, drop, alter, replay and inject.

use rand::{Rng, RngCore};

use super::{Delivery, Link, Provenance, World};
use crate::crypto::{sign, Entropy, KeyId, KeyPair, PrivateKey, PublicKey, SealedPayload, SymCiphertext, WrappedKey};
use crate::protocol::{
    make_envelope, AccessRequest, DataId, Envelope, MsgType, Payload, PrincipalId, RequestId, Tick,
};

pub const ADVERSARY_ID: &str = "mallory";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Capabilities {
    pub observe: bool,
    pub drop: bool,
    pub modify: bool,
    pub inject: bool,
}

impl Default for Capabilities {
    fn default() -> Self {
        Capabilities {
            observe: true,
            drop: true,
            modify: true,
            inject: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EnvelopeField {
    MsgType,
    SenderId,
    RecipientId,
    Nonce,
    Timestamp,
    PayloadKind,
    WrappingKeyId,
    WrappedKeyBlob,
    NonceIv,
    Body,
    AuthTag,
    AadHash,
    ClearBytes,
    SignerKeyId,
    SignatureBytes,
}

impl EnvelopeField {
    pub const ALL: [EnvelopeField; 15] = [
        EnvelopeField::MsgType,
        EnvelopeField::SenderId,
        EnvelopeField::RecipientId,
        EnvelopeField::Nonce,
        EnvelopeField::Timestamp,
        EnvelopeField::PayloadKind,
        EnvelopeField::WrappingKeyId,
        EnvelopeField::WrappedKeyBlob,
        EnvelopeField::NonceIv,
        EnvelopeField::Body,
        EnvelopeField::AuthTag,
        EnvelopeField::AadHash,
        EnvelopeField::ClearBytes,
        EnvelopeField::SignerKeyId,
        EnvelopeField::SignatureBytes,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EnvelopeField::MsgType => "msg_type",
            EnvelopeField::SenderId => "sender_id",
            EnvelopeField::RecipientId => "recipient_id",
            EnvelopeField::Nonce => "nonce",
            EnvelopeField::Timestamp => "timestamp",
            EnvelopeField::PayloadKind => "payload_kind",
            EnvelopeField::WrappingKeyId => "wrapping_key_id",
            EnvelopeField::WrappedKeyBlob => "wrapped_key",
            EnvelopeField::NonceIv => "nonce_iv",
            EnvelopeField::Body => "body",
            EnvelopeField::AuthTag => "auth_tag",
            EnvelopeField::AadHash => "aad_hash",
            EnvelopeField::ClearBytes => "clear_bytes",
            EnvelopeField::SignerKeyId => "signer_key_id",
            EnvelopeField::SignatureBytes => "signature",
        }
    }

    /// Whether the field exists on `e`.
    pub fn applies_to(self, e: &Envelope) -> bool {
        let sealed = matches!(e.payload, Payload::Sealed(_));
        match self {
            EnvelopeField::WrappingKeyId
            | EnvelopeField::WrappedKeyBlob
            | EnvelopeField::NonceIv
            | EnvelopeField::Body
            | EnvelopeField::AuthTag
            | EnvelopeField::AadHash => sealed,
            EnvelopeField::ClearBytes => !sealed,
            _ => true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mutation {
    FlipFirst,
    FlipMiddle,
    FlipLast,
    /// Flip bit `n` modulo the field's bit length.
    FlipAt(usize),
    Truncate,
    Extend,
    Randomize,
    Empty,
    /// Replace an identifier with another principal's.
    OtherPrincipal,
}

impl Mutation {
    /// The variants used by the exhaustive sweep.
    pub const SWEEP: [Mutation; 8] = [
        Mutation::FlipFirst,
        Mutation::FlipMiddle,
        Mutation::FlipLast,
        Mutation::Truncate,
        Mutation::Extend,
        Mutation::Randomize,
        Mutation::Empty,
        Mutation::OtherPrincipal,
    ];
}

fn bit_index(m: Mutation, bits: usize) -> Option<usize> {
    if bits == 0 {
        return None;
    }
    match m {
        Mutation::FlipFirst => Some(0),
        Mutation::FlipMiddle => Some(bits / 2),
        Mutation::FlipLast => Some(bits - 1),
        Mutation::FlipAt(n) => Some(n % bits),
        _ => None,
    }
}

fn mutate_bytes(b: &mut Vec<u8>, m: Mutation, rng: &mut Entropy) {
    if let Some(i) = bit_index(m, b.len() * 8) {
        b[i / 8] ^= 1 << (i % 8);
        return;
    }
    match m {
        Mutation::Truncate => {
            b.pop();
        }
        Mutation::Extend => b.push(0),
        Mutation::Empty => b.clear(),
        Mutation::Randomize | Mutation::OtherPrincipal => {
            let len = b.len().max(1);
            b.resize(len, 0);
            rng.fill_bytes(b);
        }
        _ => b.push(1),
    }
}

fn mutate_array<const N: usize>(a: &mut [u8; N], m: Mutation, rng: &mut Entropy) {
    match bit_index(m, N * 8) {
        Some(i) => a[i / 8] ^= 1 << (i % 8),
        None => match m {
            Mutation::Empty => *a = [0; N],
            Mutation::Truncate => a[N - 1] = a[N - 1].wrapping_add(1),
            Mutation::Extend => a[0] = a[0].wrapping_add(1),
            _ => rng.fill_bytes(a),
        },
    }
}

fn mutate_str(s: &str, m: Mutation, others: &[PrincipalId], rng: &mut Entropy) -> String {
    match m {
        Mutation::OtherPrincipal => {
            let candidates: Vec<&PrincipalId> = others.iter().filter(|p| p.as_str() != s).collect();
            if candidates.is_empty() {
                return format!("{s}x");
            }
            candidates[rng.gen_range(0..candidates.len())].to_string()
        }
        Mutation::Randomize => {
            let n = s.len().max(1);
            (0..n).map(|_| rng.gen_range(b'a'..=b'z') as char).collect()
        }
        _ => {
            let mut b = s.as_bytes().to_vec();
            if let Some(i) = bit_index(m, b.len() * 8) {
                // Stay inside ASCII so the result is still a string.
                let bit = i % 7;
                let byte = i / 8;
                b[byte] ^= 1 << bit;
            } else {
                mutate_bytes(&mut b, m, rng);
            }
            String::from_utf8_lossy(&b).into_owned()
        }
    }
}

/// Applies one mutation to one field. `None` if the field does not exist on
/// `e` or the result is unchanged.
pub fn mutate(
    e: &Envelope,
    field: EnvelopeField,
    m: Mutation,
    principals: &[PrincipalId],
    window: Tick,
    rng: &mut Entropy,
) -> Option<Envelope> {
    if !field.applies_to(e) {
        return None;
    }
    let mut out = e.clone();
    match field {
        EnvelopeField::MsgType => {
            let i = MsgType::ALL.iter().position(|t| *t == e.msg_type).unwrap_or(0);
            let step = match m {
                Mutation::FlipAt(n) => 1 + n % (MsgType::ALL.len() - 1),
                Mutation::Randomize => rng.gen_range(1..MsgType::ALL.len()),
                _ => 1 + Mutation::SWEEP.iter().position(|x| *x == m).unwrap_or(0),
            };
            out.msg_type = MsgType::ALL[(i + step) % MsgType::ALL.len()];
        }
        EnvelopeField::SenderId => out.sender_id = PrincipalId::new(mutate_str(e.sender_id.as_str(), m, principals, rng)),
        EnvelopeField::RecipientId => {
            out.recipient_id = PrincipalId::new(mutate_str(e.recipient_id.as_str(), m, principals, rng))
        }
        EnvelopeField::Nonce => mutate_array(&mut out.nonce, m, rng),
        EnvelopeField::Timestamp => {
            out.timestamp = match bit_index(m, 64) {
                Some(i) => e.timestamp ^ (1 << i),
                None => match m {
                    Mutation::Truncate | Mutation::Empty => e.timestamp.saturating_sub(window + 1),
                    Mutation::Extend => e.timestamp + window + 1,
                    _ => rng.next_u64(),
                },
            }
        }
        EnvelopeField::PayloadKind => {
            out.payload = match &e.payload {
                Payload::Sealed(sp) => Payload::Clear(sp.body.body.clone()),
                Payload::Clear(bytes) => Payload::Sealed(SealedPayload {
                    ephemeral_wrapped_key: WrappedKey {
                        wrapping_key_id: e.signature.signer_key_id.clone(),
                        blob: vec![0; 256],
                    },
                    body: SymCiphertext {
                        nonce_iv: [0; 12],
                        body: bytes.clone(),
                        auth_tag: [0; 16],
                        aad_hash: [0; 32],
                    },
                }),
            }
        }
        EnvelopeField::ClearBytes => {
            if let Payload::Clear(b) = &mut out.payload {
                mutate_bytes(b, m, rng);
            }
        }
        EnvelopeField::SignerKeyId => {
            out.signature.signer_key_id = KeyId::new(mutate_str(e.signature.signer_key_id.as_str(), m, &[], rng))
        }
        EnvelopeField::SignatureBytes => mutate_bytes(&mut out.signature.sig_bytes, m, rng),
        _ => {
            let Payload::Sealed(sp) = &mut out.payload else {
                return None;
            };
            match field {
                EnvelopeField::WrappingKeyId => {
                    let id = mutate_str(sp.ephemeral_wrapped_key.wrapping_key_id.as_str(), m, &[], rng);
                    sp.ephemeral_wrapped_key.wrapping_key_id = KeyId::new(id);
                }
                EnvelopeField::WrappedKeyBlob => mutate_bytes(&mut sp.ephemeral_wrapped_key.blob, m, rng),
                EnvelopeField::NonceIv => mutate_array(&mut sp.body.nonce_iv, m, rng),
                EnvelopeField::Body => mutate_bytes(&mut sp.body.body, m, rng),
                EnvelopeField::AuthTag => mutate_array(&mut sp.body.auth_tag, m, rng),
                EnvelopeField::AadHash => mutate_array(&mut sp.body.aad_hash, m, rng),
                _ => unreachable!("header fields handled above"),
            }
        }
    }
    (out != *e).then_some(out)
}

/// What the tap does with one intercepted envelope.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TapOp {
    Forward,
    Drop,
    Mutate(EnvelopeField, Mutation),
    /// Forward, plus an immediate second copy.
    Duplicate,
    /// Forward, plus a copy after the given delay.
    ReplayLater(Tick),
    /// Forward, plus an earlier capture (index modulo the capture count).
    ReplayCaptured(usize),
    /// Replace the payload with that of an earlier capture.
    Splice(usize),
    /// Send the envelope back to the endpoint it came from.
    Reflect,
    /// Rewrite the recipient to the sending endpoint and deliver it there.
    Readdress,
    /// Hold and deliver later.
    Delay(Tick),
    /// Replace with a fresh envelope that claims the original sender but is
    /// signed with the adversary's key.
    ForgeAsSender,
    /// Rewrite the sender to the adversary and re-sign with its own key.
    ResignAsSelf,
    /// Forward, plus a fresh request in the adversary's own name.
    InjectOwn,
}

impl TapOp {
    fn random(rng: &mut Entropy) -> TapOp {
        match rng.gen_range(0..13) {
            0 => TapOp::Drop,
            1..=3 => {
                let f = EnvelopeField::ALL[rng.gen_range(0..EnvelopeField::ALL.len())];
                let m = match rng.gen_range(0..6) {
                    0 => Mutation::Truncate,
                    1 => Mutation::Extend,
                    2 => Mutation::Randomize,
                    3 => Mutation::OtherPrincipal,
                    _ => Mutation::FlipAt(rng.gen()),
                };
                TapOp::Mutate(f, m)
            }
            4 => TapOp::Duplicate,
            5 => TapOp::ReplayLater(rng.gen_range(1..200)),
            6 => TapOp::ReplayCaptured(rng.gen()),
            7 => TapOp::Splice(rng.gen()),
            8 => TapOp::Reflect,
            9 => TapOp::Readdress,
            10 => TapOp::Delay(rng.gen_range(1..100)),
            11 => {
                if rng.gen() {
                    TapOp::ForgeAsSender
                } else {
                    TapOp::ResignAsSelf
                }
            }
            _ => TapOp::InjectOwn,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TapPolicy {
    Passive,
    DropAll,
    /// The n-th interception gets the n-th op; later ones are forwarded.
    Script(Vec<TapOp>),
    /// The first interception gets a random op; each later one gets a random
    /// op with probability `percent`/100.
    Random { percent: u32 },
}

#[derive(Clone, Debug)]
pub(super) struct TapOutput {
    pub to: PrincipalId,
    pub envelope: Envelope,
    pub provenance: Provenance,
    pub delay: Tick,
}

/// Everything the adversary holds when it tries to decrypt.
#[derive(Clone, Debug, Default)]
pub struct AdversaryState {
    /// Private keys, each with a note on how it was obtained.
    pub private_keys: Vec<(String, PrivateKey)>,
    pub public_keys: Vec<PublicKey>,
    /// Captured envelopes, each with a source pointer.
    pub envelopes: Vec<(String, Envelope)>,
    pub records: Vec<(String, crate::cloud::DataRecord)>,
}

#[derive(Clone, Debug)]
pub struct Adversary {
    keys: KeyPair,
    link: Option<Link>,
    capabilities: Capabilities,
    policy: TapPolicy,
    rng: Entropy,
    intercepted: usize,
    captured: Vec<(u64, Envelope)>,
    known_data: Vec<DataId>,
    injected_requests: usize,
    log: Vec<String>,
}

impl Adversary {
    pub(super) fn new(
        keys: KeyPair,
        link: Option<Link>,
        capabilities: Capabilities,
        policy: TapPolicy,
        rng: Entropy,
    ) -> Self {
        Adversary {
            keys,
            link,
            capabilities,
            policy,
            rng,
            intercepted: 0,
            captured: Vec::new(),
            known_data: Vec::new(),
            injected_requests: 0,
            log: Vec::new(),
        }
    }

    pub fn id(&self) -> PrincipalId {
        PrincipalId::new(ADVERSARY_ID)
    }

    pub fn public_key(&self) -> &PublicKey {
        &self.keys.public
    }

    pub fn link(&self) -> Option<&Link> {
        self.link.as_ref()
    }

    pub fn policy(&self) -> &TapPolicy {
        &self.policy
    }

    /// Switches strategy; interception counting restarts so that a
    /// `Random` policy acts on the very next envelope.
    pub fn set_strategy(&mut self, policy: TapPolicy, seed: u64) {
        self.policy = policy;
        self.rng = Entropy::derive(seed, "adversary-strategy");
        self.intercepted = 0;
    }

    /// Data identifiers the adversary may name in its own requests.
    pub fn set_known_data(&mut self, data: Vec<DataId>) {
        self.known_data = data;
    }

    /// Envelopes observed on the tapped link, with the transcript sequence
    /// number that put each on the wire.
    pub fn captured(&self) -> &[(u64, Envelope)] {
        &self.captured
    }

    /// One line per action taken, for evidence.
    pub fn log(&self) -> &[String] {
        &self.log
    }

    pub fn state(&self, world: &World) -> AdversaryState {
        AdversaryState {
            private_keys: vec![(format!("{ADVERSARY_ID} identity"), self.keys.private.clone())],
            public_keys: world.public_keys().values().cloned().collect(),
            envelopes: self
                .captured
                .iter()
                .map(|(seq, e)| (format!("transcript seq {seq}"), e.clone()))
                .collect(),
            records: Vec::new(),
        }
    }

    fn next_op(&mut self) -> TapOp {
        let n = self.intercepted;
        self.intercepted += 1;
        match &self.policy {
            TapPolicy::Passive => TapOp::Forward,
            TapPolicy::DropAll => TapOp::Drop,
            TapPolicy::Script(ops) => ops.get(n).cloned().unwrap_or(TapOp::Forward),
            TapPolicy::Random { percent } => {
                let percent = *percent;
                if n == 0 || self.rng.gen_range(0..100) < percent {
                    TapOp::random(&mut self.rng)
                } else {
                    TapOp::Forward
                }
            }
        }
    }

    fn allowed(&self, op: &TapOp) -> bool {
        let c = self.capabilities;
        match op {
            TapOp::Forward => true,
            TapOp::Drop | TapOp::Delay(_) => c.drop,
            TapOp::Mutate(..) | TapOp::Splice(_) | TapOp::Readdress | TapOp::ResignAsSelf => c.modify && c.drop,
            TapOp::ReplayCaptured(_) => c.inject && c.observe,
            TapOp::Duplicate | TapOp::ReplayLater(_) | TapOp::Reflect | TapOp::InjectOwn => c.inject,
            TapOp::ForgeAsSender => c.inject && c.drop,
        }
    }

    pub(super) fn intercept(&mut self, d: &Delivery, world: &World) -> Vec<TapOutput> {
        let e = &d.envelope;
        if self.capabilities.observe {
            self.captured.push((d.origin_seq, e.clone()));
        }
        let mut op = self.next_op();
        if !self.allowed(&op) {
            op = TapOp::Forward;
        }
        let forward = || TapOutput {
            to: d.to.clone(),
            envelope: e.clone(),
            provenance: Provenance::Honest,
            delay: 0,
        };
        let injected = |to: &PrincipalId, envelope: Envelope, delay: Tick| TapOutput {
            to: to.clone(),
            envelope,
            provenance: Provenance::Injected,
            delay,
        };
        let modified = |to: &PrincipalId, envelope: Envelope| TapOutput {
            to: to.clone(),
            envelope,
            provenance: Provenance::Modified,
            delay: 0,
        };
        let now = world.now();
        let out = match &op {
            TapOp::Forward => vec![forward()],
            TapOp::Drop => vec![],
            TapOp::Mutate(field, m) => {
                let principals: Vec<PrincipalId> = world.public_keys().keys().cloned().collect();
                match mutate(e, *field, *m, &principals, world.config().window, &mut self.rng) {
                    Some(e2) => vec![modified(&d.to, e2)],
                    None => vec![forward()],
                }
            }
            TapOp::Duplicate => vec![forward(), injected(&d.to, e.clone(), 0)],
            TapOp::ReplayLater(t) => vec![forward(), injected(&d.to, e.clone(), *t)],
            TapOp::ReplayCaptured(i) => {
                let (_, old) = &self.captured[i % self.captured.len()];
                let to = if self.is_endpoint(&old.recipient_id) {
                    old.recipient_id.clone()
                } else {
                    d.to.clone()
                };
                vec![forward(), injected(&to, old.clone(), 0)]
            }
            TapOp::Splice(i) => {
                let (_, other) = &self.captured[i % self.captured.len()];
                let mut e2 = e.clone();
                e2.payload = other.payload.clone();
                if e2 == *e {
                    vec![forward()]
                } else {
                    vec![modified(&d.to, e2)]
                }
            }
            TapOp::Reflect => vec![injected(&d.from, e.clone(), 0)],
            TapOp::Readdress => {
                let mut e2 = e.clone();
                e2.recipient_id = d.from.clone();
                vec![modified(&d.from, e2)]
            }
            TapOp::Delay(t) => vec![TapOutput {
                delay: *t,
                ..forward()
            }],
            TapOp::ForgeAsSender => match self.forge(e, world, now) {
                Some(e2) => vec![injected(&d.to, e2, 0)],
                None => vec![forward()],
            },
            TapOp::ResignAsSelf => match self.resign(e) {
                Some(e2) => vec![modified(&d.to, e2)],
                None => vec![forward()],
            },
            TapOp::InjectOwn => {
                let mut out = vec![forward()];
                if let Some((to, e2)) = self.own_request(d, world, now) {
                    out.push(injected(&to, e2, 0));
                }
                out
            }
        };
        if op != TapOp::Forward {
            self.log.push(format!(
                "tick {now}: {op:?} on {} {}->{} (transcript seq {})",
                e.msg_type, d.from, d.to, d.origin_seq
            ));
        }
        out
    }

    fn is_endpoint(&self, p: &PrincipalId) -> bool {
        self.link.as_ref().is_some_and(|l| &l.a == p || &l.b == p)
    }

    fn forge(&mut self, e: &Envelope, world: &World, now: Tick) -> Option<Envelope> {
        let payload = match &e.payload {
            Payload::Clear(b) => b.clone(),
            Payload::Sealed(_) => {
                let mut b = vec![0u8; 64];
                self.rng.fill_bytes(&mut b);
                b
            }
        };
        make_envelope(
            e.msg_type,
            &e.sender_id,
            &self.keys.private,
            &e.recipient_id,
            world.public_keys().get(&e.recipient_id),
            &payload,
            now,
            &mut self.rng,
        )
        .ok()
    }

    fn resign(&mut self, e: &Envelope) -> Option<Envelope> {
        let mut e2 = e.clone();
        e2.sender_id = self.id();
        let bytes = e2.canonical_bytes().ok()?;
        e2.signature = sign(&bytes, &self.keys.private, &mut self.rng).ok()?;
        Some(e2)
    }

    fn own_request(&mut self, d: &Delivery, world: &World, now: Tick) -> Option<(PrincipalId, Envelope)> {
        let me = self.id();
        let agent = PrincipalId::agent();
        self.injected_requests += 1;
        if self.is_endpoint(&agent) && !self.known_data.is_empty() {
            let data_id = self.known_data[self.rng.gen_range(0..self.known_data.len())].clone();
            let body = AccessRequest {
                request_id: RequestId::new(format!("{me}-r{}", self.injected_requests)),
                data_id,
                applicant_id: me.clone(),
                purpose: "audit".into(),
            }
            .encode();
            let e = make_envelope(
                crate::protocol::MsgType::AccessRequest,
                &me,
                &self.keys.private,
                &agent,
                world.public_keys().get(&agent),
                &body,
                now,
                &mut self.rng,
            )
            .ok()?;
            return Some((agent, e));
        }
        let mut junk = vec![0u8; 48];
        self.rng.fill_bytes(&mut junk);
        let to = d.to.clone();
        let e = make_envelope(
            d.envelope.msg_type,
            &me,
            &self.keys.private,
            &to,
            world.public_keys().get(&to),
            &junk,
            now,
            &mut self.rng,
        )
        .ok()?;
        Some((to, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::test_keys::{pair, rng};

    fn sample(sealed: bool) -> Envelope {
        let a = pair("mut-a");
        let b = pair("mut-b");
        let t = if sealed { MsgType::AccessRequest } else { MsgType::Denial };
        make_envelope(
            t,
            &PrincipalId::new("alice"),
            &a.private,
            &PrincipalId::new("agent"),
            Some(&b.public),
            b"payload",
            10,
            &mut rng(),
        )
        .unwrap()
    }

    #[test]
    fn every_applicable_mutation_changes_the_envelope() {
        let principals = vec![PrincipalId::new("alice"), PrincipalId::new("agent"), PrincipalId::new("bob")];
        for sealed in [true, false] {
            let e = sample(sealed);
            for f in EnvelopeField::ALL {
                for m in Mutation::SWEEP {
                    let out = mutate(&e, f, m, &principals, 64, &mut rng());
                    if f.applies_to(&e) {
                        let out = out.unwrap_or_else(|| panic!("{f:?} {m:?} left the envelope unchanged"));
                        assert_ne!(out, e);
                    } else {
                        assert!(out.is_none());
                    }
                }
            }
        }
    }

    #[test]
    fn id_mutations_stay_printable() {
        let e = sample(true);
        for n in 0..64 {
            let out = mutate(&e, EnvelopeField::SenderId, Mutation::FlipAt(n), &[], 64, &mut rng()).unwrap();
            assert!(out.sender_id.as_str().is_ascii());
        }
    }
}
