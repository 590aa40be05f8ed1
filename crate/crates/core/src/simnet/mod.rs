//! Deterministic in-process network: principals, links, a logical clock and
//! an optional adversary tap on one link.
//!
//! The world advances in micro-steps. Each tick first runs scheduled actions
//! and node timers, then delivers queued envelopes one at a time in
//! `(tick, sequence)` order, so delivery on every link is FIFO. Because a
//! [`World`] is `Clone`, any state between two micro-steps can be saved and
//! resumed, which is how interception strategies branch off a recorded run.

mod adversary;
mod brute;
mod spec;

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::actors::{ActorError, User, UserConfig};
use crate::agent::{Agent, AgentConfig, AgentError, DEFAULT_GRANT_TTL};
use crate::cloud::{CloudConfig, CloudError, CloudServer};
use crate::crypto::{CryptoError, Entropy, KeyOwner, KeySource, PublicKey};
use crate::node::{Node, RunMode};
use crate::protocol::transcript::{EnvelopeRecord, Transcript, TranscriptEvent, TranscriptRecord};
use crate::protocol::{
    DataClassification, DataId, Decision, Envelope, GrantId, PrincipalId, ProtocolError, RequestId, Tick,
    DEFAULT_WINDOW,
};

pub use adversary::{
    mutate, Adversary, AdversaryState, Capabilities, EnvelopeField, Mutation, TapOp, TapPolicy, ADVERSARY_ID,
};
pub use brute::{adversary_try_decrypt, Recovered, Success, SuccessKind, TryCache, TryReport};
pub use spec::{
    AdversarySpec, AssertionSpec, DataSpec, EventSpec, LinkSpec, PrincipalSpec, ScenarioFile, ScenarioMeta,
    SpecError, SpecOutcome,
};

/// Default tick budget for a run.
pub const DEFAULT_TICK_BUDGET: Tick = 10_000;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("principal {0} already exists")]
    DuplicatePrincipal(PrincipalId),
    #[error("no principal {0}")]
    UnknownPrincipal(PrincipalId),
    #[error("no link between {0} and {1}")]
    UnknownLink(PrincipalId, PrincipalId),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Cloud(#[from] CloudError),
    #[error(transparent)]
    Actor(#[from] ActorError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
}

#[derive(Clone, Debug)]
pub struct WorldConfig {
    /// Drives every nonce, padding and adversary choice.
    pub seed: u64,
    /// Drives key generation. Kept separate so that many runs can share one
    /// set of (expensive) key pairs.
    pub key_seed: u64,
    pub default_delay: Tick,
    pub tick_budget: Tick,
    pub window: Tick,
    pub grant_ttl: Tick,
}

impl WorldConfig {
    pub fn new(seed: u64) -> Self {
        WorldConfig {
            seed,
            key_seed: seed,
            default_delay: 1,
            tick_budget: DEFAULT_TICK_BUDGET,
            window: DEFAULT_WINDOW,
            grant_ttl: DEFAULT_GRANT_TTL,
        }
    }

    pub fn with_key_seed(mut self, key_seed: u64) -> Self {
        self.key_seed = key_seed;
        self
    }
}

#[derive(Clone, Debug)]
#[allow(clippy::large_enum_variant)]
pub enum NodeBox {
    Agent(Agent),
    Cloud(CloudServer),
    User(User),
}

impl NodeBox {
    fn node_mut(&mut self) -> &mut dyn Node {
        match self {
            NodeBox::Agent(a) => a,
            NodeBox::Cloud(c) => c,
            NodeBox::User(u) => u,
        }
    }

    pub fn handle(&mut self, e: &Envelope, now: Tick) -> crate::node::Outcome {
        self.node_mut().handle(e, now)
    }

    fn next_timer(&self) -> Option<Tick> {
        match self {
            NodeBox::User(u) => u.next_timer(),
            _ => None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Link {
    pub a: PrincipalId,
    pub b: PrincipalId,
    pub delay: Tick,
    pub tapped: bool,
}

/// Canonical name of the link between two principals.
pub fn link_name(a: &PrincipalId, b: &PrincipalId) -> String {
    if a <= b {
        format!("{a}~{b}")
    } else {
        format!("{b}~{a}")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Provenance {
    Honest,
    /// An honest envelope the adversary changed.
    Modified,
    /// Produced or re-sent by the adversary.
    Injected,
}

#[derive(Clone, Debug)]
pub struct Delivery {
    pub link: String,
    pub from: PrincipalId,
    pub to: PrincipalId,
    pub envelope: Envelope,
    /// Transcript record that put this envelope on the wire.
    pub origin_seq: u64,
    pub provenance: Provenance,
}

/// Something a scenario makes a principal do at a given tick.
#[derive(Clone, Debug)]
pub enum Action {
    RegisterData {
        owner: PrincipalId,
        data: DataId,
        classification: DataClassification,
    },
    Upload {
        owner: PrincipalId,
        data: DataId,
        plaintext: Vec<u8>,
    },
    /// Upload as soon as the owner holds the data public key.
    UploadWhenReady {
        owner: PrincipalId,
        data: DataId,
        plaintext: Vec<u8>,
    },
    Request {
        applicant: PrincipalId,
        data: DataId,
        purpose: String,
    },
    Decide {
        owner: PrincipalId,
        request: RequestId,
        decision: Decision,
    },
    Redeem {
        applicant: PrincipalId,
        grant: GrantId,
    },
    /// Put an already built envelope on the wire from `from`.
    Send { from: PrincipalId, envelope: Envelope },
}

/// An adversary-produced envelope that a recipient accepted.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub seq: u64,
    pub to: PrincipalId,
    pub msg_type: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RunReport {
    pub start: Tick,
    pub end: Tick,
    pub deliveries: u64,
    pub budget_exhausted: bool,
}

#[derive(Clone, Debug)]
pub struct World {
    config: WorldConfig,
    keys: KeySource,
    now: Tick,
    ticked: Option<Tick>,
    nodes: BTreeMap<PrincipalId, NodeBox>,
    public_keys: BTreeMap<PrincipalId, PublicKey>,
    links: BTreeMap<String, Link>,
    queue: BTreeMap<(Tick, u64), Delivery>,
    next_queue_seq: u64,
    schedule: BTreeMap<(Tick, u64), Action>,
    next_action_seq: u64,
    transcript: Transcript,
    adversary: Option<Adversary>,
    honest_digests: BTreeSet<[u8; 32]>,
    accepted_digests: BTreeSet<[u8; 32]>,
    violations: Vec<Violation>,
    action_errors: Vec<(Tick, String)>,
    deliveries: u64,
}

impl World {
    /// A world with an Agent and a cloud server linked to each other.
    pub fn new(config: WorldConfig) -> Result<Self, SimError> {
        let keys = KeySource::Deterministic {
            key_seed: config.key_seed,
        };
        let agent_keys = keys.keypair("principal:agent", KeyOwner::User)?;
        let cloud_keys = keys.keypair("principal:cloud", KeyOwner::User)?;
        let agent_cfg = AgentConfig {
            mode: RunMode::Deterministic,
            window: config.window,
            grant_ttl: config.grant_ttl,
            ..AgentConfig::default()
        };
        let cloud_cfg = CloudConfig {
            mode: RunMode::Deterministic,
            window: config.window,
            ..CloudConfig::default()
        };
        let (agent_id, cloud_id) = (agent_cfg.id.clone(), cloud_cfg.id.clone());
        let mut agent = Agent::new(
            agent_cfg,
            agent_keys.clone(),
            keys.clone(),
            Entropy::derive(config.seed, "node:agent"),
        )?;
        let mut cloud = CloudServer::new(cloud_cfg, cloud_keys.clone(), Entropy::derive(config.seed, "node:cloud"))?;
        agent.register_user(cloud_id.clone(), cloud_keys.public.clone(), 0)?;
        cloud.register_principal(agent_id.clone(), agent_keys.public.clone());
        let mut world = World {
            config,
            keys,
            now: 0,
            ticked: None,
            nodes: BTreeMap::new(),
            public_keys: BTreeMap::new(),
            links: BTreeMap::new(),
            queue: BTreeMap::new(),
            next_queue_seq: 0,
            schedule: BTreeMap::new(),
            next_action_seq: 0,
            transcript: Transcript::new(),
            adversary: None,
            honest_digests: BTreeSet::new(),
            accepted_digests: BTreeSet::new(),
            violations: Vec::new(),
            action_errors: Vec::new(),
            deliveries: 0,
        };
        world.public_keys.insert(agent_id.clone(), agent_keys.public);
        world.public_keys.insert(cloud_id.clone(), cloud_keys.public);
        world.nodes.insert(agent_id.clone(), NodeBox::Agent(agent));
        world.nodes.insert(cloud_id.clone(), NodeBox::Cloud(cloud));
        world.add_link(&agent_id, &cloud_id);
        Ok(world)
    }

    pub fn config(&self) -> &WorldConfig {
        &self.config
    }

    pub fn key_source(&self) -> &KeySource {
        &self.keys
    }

    pub fn now(&self) -> Tick {
        self.now
    }

    fn add_link(&mut self, a: &PrincipalId, b: &PrincipalId) {
        self.links.insert(
            link_name(a, b),
            Link {
                a: a.clone(),
                b: b.clone(),
                delay: self.config.default_delay,
                tapped: false,
            },
        );
    }

    /// Adds a user, registers it with the Agent and the cloud server, and
    /// links it to both and to every existing user.
    pub fn add_user(&mut self, mut config: UserConfig) -> Result<(), SimError> {
        let id = config.id.clone();
        if self.nodes.contains_key(&id) || id.as_str() == ADVERSARY_ID {
            return Err(SimError::DuplicatePrincipal(id));
        }
        config.mode = RunMode::Deterministic;
        config.window = self.config.window;
        let keys = self.keys.keypair(&format!("principal:{id}"), KeyOwner::User)?;
        self.register_everywhere(&id, &keys.public)?;
        let user = User::new(
            config,
            keys,
            self.public_keys[&PrincipalId::agent()].clone(),
            self.public_keys[&PrincipalId::cloud()].clone(),
            Entropy::derive(self.config.seed, &format!("node:{id}")),
        )?;
        let others: Vec<PrincipalId> = self.nodes.keys().cloned().collect();
        for other in others {
            self.add_link(&id, &other);
        }
        self.nodes.insert(id, NodeBox::User(user));
        Ok(())
    }

    fn register_everywhere(&mut self, id: &PrincipalId, key: &PublicKey) -> Result<(), SimError> {
        let now = self.now;
        if let Some(NodeBox::Agent(a)) = self.nodes.get_mut(&PrincipalId::agent()) {
            a.register_user(id.clone(), key.clone(), now)?;
        }
        if let Some(NodeBox::Cloud(c)) = self.nodes.get_mut(&PrincipalId::cloud()) {
            c.register_principal(id.clone(), key.clone());
        }
        self.public_keys.insert(id.clone(), key.clone());
        Ok(())
    }

    /// Registers the adversary as an ordinary user (it has no node and no
    /// links of its own) and places its tap on the link `a`–`b`, if given.
    pub fn add_adversary(
        &mut self,
        tap: Option<(&PrincipalId, &PrincipalId)>,
        capabilities: Capabilities,
        policy: TapPolicy,
    ) -> Result<(), SimError> {
        let id = PrincipalId::new(ADVERSARY_ID);
        if self.public_keys.contains_key(&id) {
            return Err(SimError::DuplicatePrincipal(id));
        }
        let keys = self.keys.keypair(&format!("principal:{id}"), KeyOwner::User)?;
        self.register_everywhere(&id, &keys.public)?;
        let mut tapped = None;
        if let Some((a, b)) = tap {
            let link = self
                .links
                .get_mut(&link_name(a, b))
                .ok_or_else(|| SimError::UnknownLink(a.clone(), b.clone()))?;
            link.tapped = true;
            tapped = Some(link.clone());
        }
        self.adversary = Some(Adversary::new(
            keys,
            tapped,
            capabilities,
            policy,
            Entropy::derive(self.config.seed, "adversary"),
        ));
        Ok(())
    }

    pub fn set_delay(&mut self, a: &PrincipalId, b: &PrincipalId, delay: Tick) -> Result<(), SimError> {
        let link = self
            .links
            .get_mut(&link_name(a, b))
            .ok_or_else(|| SimError::UnknownLink(a.clone(), b.clone()))?;
        link.delay = delay.max(1);
        Ok(())
    }

    pub fn schedule(&mut self, at: Tick, action: Action) {
        self.schedule.insert((at, self.next_action_seq), action);
        self.next_action_seq += 1;
    }

    pub fn links(&self) -> impl Iterator<Item = &Link> {
        self.links.values()
    }

    pub fn link(&self, a: &PrincipalId, b: &PrincipalId) -> Option<&Link> {
        self.links.get(&link_name(a, b))
    }

    pub fn transcript(&self) -> &Transcript {
        &self.transcript
    }

    pub fn violations(&self) -> &[Violation] {
        &self.violations
    }

    pub fn action_errors(&self) -> &[(Tick, String)] {
        &self.action_errors
    }

    pub fn adversary(&self) -> Option<&Adversary> {
        self.adversary.as_ref()
    }

    pub fn adversary_mut(&mut self) -> Option<&mut Adversary> {
        self.adversary.as_mut()
    }

    pub fn public_keys(&self) -> &BTreeMap<PrincipalId, PublicKey> {
        &self.public_keys
    }

    pub fn agent(&self) -> &Agent {
        match &self.nodes[&PrincipalId::agent()] {
            NodeBox::Agent(a) => a,
            _ => unreachable!("agent id holds the agent"),
        }
    }

    pub fn agent_mut(&mut self) -> &mut Agent {
        match self.nodes.get_mut(&PrincipalId::agent()) {
            Some(NodeBox::Agent(a)) => a,
            _ => unreachable!("agent id holds the agent"),
        }
    }

    pub fn cloud(&self) -> &CloudServer {
        match &self.nodes[&PrincipalId::cloud()] {
            NodeBox::Cloud(c) => c,
            _ => unreachable!("cloud id holds the cloud server"),
        }
    }

    pub fn cloud_mut(&mut self) -> &mut CloudServer {
        match self.nodes.get_mut(&PrincipalId::cloud()) {
            Some(NodeBox::Cloud(c)) => c,
            _ => unreachable!("cloud id holds the cloud server"),
        }
    }

    pub fn user(&self, id: &PrincipalId) -> Option<&User> {
        match self.nodes.get(id) {
            Some(NodeBox::User(u)) => Some(u),
            _ => None,
        }
    }

    pub fn user_mut(&mut self, id: &PrincipalId) -> Option<&mut User> {
        match self.nodes.get_mut(id) {
            Some(NodeBox::User(u)) => Some(u),
            _ => None,
        }
    }

    pub fn users(&self) -> impl Iterator<Item = &User> {
        self.nodes.values().filter_map(|n| match n {
            NodeBox::User(u) => Some(u),
            _ => None,
        })
    }

    /// A copy of the node that owns `id`, for replaying a single delivery.
    pub fn node(&self, id: &PrincipalId) -> Option<&NodeBox> {
        self.nodes.get(id)
    }

    /// Puts `e` on the link from `from` to its recipient.
    pub fn send(&mut self, from: &PrincipalId, e: Envelope) {
        let to = e.recipient_id.clone();
        let name = link_name(from, &to);
        let record = |event, outcome: Option<String>, e: &Envelope| TranscriptRecord {
            seq: 0,
            tick: self.now,
            event,
            link: name.clone(),
            from: from.to_string(),
            to: to.to_string(),
            ref_seq: None,
            outcome,
            envelope: Some(EnvelopeRecord::from(e)),
        };
        let Some(link) = self.links.get(&name).filter(|_| self.nodes.contains_key(&to)) else {
            let r = record(TranscriptEvent::Undeliverable, Some("unknown_endpoint".into()), &e);
            self.transcript.push(r);
            return;
        };
        let at = self.now + link.delay;
        let r = record(TranscriptEvent::Send, None, &e);
        let seq = self.transcript.push(r);
        self.honest_digests.insert(e.digest());
        self.enqueue(
            at,
            Delivery {
                link: name,
                from: from.clone(),
                to,
                envelope: e,
                origin_seq: seq,
                provenance: Provenance::Honest,
            },
        );
    }

    /// Puts an adversary-made envelope on the link between `via` and `to`,
    /// to arrive after `delay` ticks. Returns its transcript seq.
    pub fn inject(&mut self, via: &PrincipalId, to: &PrincipalId, e: Envelope, delay: Tick) -> Result<u64, SimError> {
        let name = link_name(via, to);
        if !self.links.contains_key(&name) {
            return Err(SimError::UnknownLink(via.clone(), to.clone()));
        }
        let seq = self.transcript.push(TranscriptRecord {
            seq: 0,
            tick: self.now,
            event: TranscriptEvent::Inject,
            link: name.clone(),
            from: ADVERSARY_ID.into(),
            to: to.to_string(),
            ref_seq: None,
            outcome: None,
            envelope: Some(EnvelopeRecord::from(&e)),
        });
        self.enqueue(
            self.now + delay,
            Delivery {
                link: name,
                from: PrincipalId::new(ADVERSARY_ID),
                to: to.clone(),
                envelope: e,
                origin_seq: seq,
                provenance: Provenance::Injected,
            },
        );
        Ok(seq)
    }

    fn enqueue(&mut self, at: Tick, d: Delivery) {
        self.queue.insert((at, self.next_queue_seq), d);
        self.next_queue_seq += 1;
    }

    fn run_action(&mut self, action: Action) {
        let now = self.now;
        let result: Result<Option<(PrincipalId, Envelope)>, String> = match action {
            Action::Send { from, envelope } => Ok(Some((from, envelope))),
            Action::RegisterData {
                owner,
                data,
                classification,
            } => self.with_user(&owner, |u| u.register_data(&data, classification, now)),
            Action::Upload { owner, data, plaintext } => self.with_user(&owner, |u| u.owner_upload(&data, &plaintext, now)),
            Action::UploadWhenReady { owner, data, plaintext } => match self.user_mut(&owner) {
                Some(u) => {
                    u.upload_when_ready(&data, &plaintext);
                    Ok(None)
                }
                None => Err(format!("no user {owner}")),
            },
            Action::Request {
                applicant,
                data,
                purpose,
            } => self.with_user(&applicant, |u| u.applicant_request(&data, &purpose, now)),
            Action::Decide {
                owner,
                request,
                decision,
            } => self.with_user(&owner, |u| u.owner_decide(&request, decision, now)),
            Action::Redeem { applicant, grant } => self.with_user(&applicant, |u| u.applicant_redeem(&grant, now)),
        };
        match result {
            Ok(Some((from, e))) => self.send(&from, e),
            Ok(None) => {}
            Err(msg) => self.action_errors.push((now, msg)),
        }
    }

    fn with_user(
        &mut self,
        id: &PrincipalId,
        f: impl FnOnce(&mut User) -> Result<Envelope, ActorError>,
    ) -> Result<Option<(PrincipalId, Envelope)>, String> {
        let user = self.user_mut(id).ok_or_else(|| format!("no user {id}"))?;
        f(user).map(|e| Some((id.clone(), e))).map_err(|e| format!("{id}: {e}"))
    }

    fn next_event_tick(&self) -> Option<Tick> {
        let q = self.queue.keys().next().map(|k| k.0);
        let s = self.schedule.keys().next().map(|k| k.0);
        let t = self.nodes.values().filter_map(NodeBox::next_timer).min();
        [q, s, t].into_iter().flatten().min()
    }

    /// The delivery the next micro-step will perform, if that step is a
    /// delivery.
    pub fn peek_delivery(&self) -> Option<&Delivery> {
        if self.ticked != Some(self.now) {
            return None;
        }
        self.queue
            .iter()
            .next()
            .filter(|((t, _), _)| *t <= self.now)
            .map(|(_, d)| d)
    }

    /// Whether the next micro-step hands an honest envelope to the tap.
    pub fn next_is_tapped(&self) -> bool {
        self.peek_delivery().is_some_and(|d| {
            d.provenance == Provenance::Honest && self.links.get(&d.link).is_some_and(|l| l.tapped)
        })
    }

    /// Performs one unit of work. Returns false when nothing is left to do.
    pub fn micro_step(&mut self) -> bool {
        if self.ticked != Some(self.now) {
            self.ticked = Some(self.now);
            self.run_tick_phase();
            return true;
        }
        let head = self.queue.keys().next().copied();
        if let Some(key) = head.filter(|k| k.0 <= self.now) {
            let d = self.queue.remove(&key).expect("head exists");
            self.deliver(d);
            return true;
        }
        match self.next_event_tick() {
            Some(t) => {
                self.now = t.max(self.now + 1);
                true
            }
            None => false,
        }
    }

    fn run_tick_phase(&mut self) {
        let now = self.now;
        let due: Vec<(Tick, u64)> = self.schedule.range(..=(now, u64::MAX)).map(|(k, _)| *k).collect();
        for k in due {
            let action = self.schedule.remove(&k).expect("due action exists");
            self.run_action(action);
        }
        let ids: Vec<PrincipalId> = self.nodes.keys().cloned().collect();
        for id in ids {
            let out = self.nodes.get_mut(&id).expect("node exists").node_mut().on_tick(now);
            for e in out {
                self.send(&id, e);
            }
        }
    }

    fn deliver(&mut self, d: Delivery) {
        let tapped = d.provenance == Provenance::Honest && self.links.get(&d.link).is_some_and(|l| l.tapped);
        if tapped {
            if let Some(mut adv) = self.adversary.take() {
                let outputs = adv.intercept(&d, self);
                self.adversary = Some(adv);
                self.apply_tap(d, outputs);
                return;
            }
        }
        self.hand_over(d);
    }

    fn apply_tap(&mut self, original: Delivery, outputs: Vec<adversary::TapOutput>) {
        let forwarded = outputs
            .iter()
            .any(|o| o.provenance == Provenance::Honest && o.delay == 0);
        let record = |w: &mut World, event, e: Option<&Envelope>, to: &PrincipalId| {
            w.transcript.push(TranscriptRecord {
                seq: 0,
                tick: w.now,
                event,
                link: original.link.clone(),
                from: ADVERSARY_ID.into(),
                to: to.to_string(),
                ref_seq: Some(original.origin_seq),
                outcome: None,
                envelope: e.map(EnvelopeRecord::from),
            })
        };
        if !forwarded {
            record(self, TranscriptEvent::Drop, None, &original.to);
        }
        let mut immediate = Vec::new();
        for o in outputs {
            let seq = match o.provenance {
                Provenance::Honest => original.origin_seq,
                Provenance::Modified => record(self, TranscriptEvent::Modify, Some(&o.envelope), &o.to),
                Provenance::Injected => record(self, TranscriptEvent::Inject, Some(&o.envelope), &o.to),
            };
            let d = Delivery {
                link: original.link.clone(),
                from: PrincipalId::new(ADVERSARY_ID),
                to: o.to,
                envelope: o.envelope,
                origin_seq: seq,
                provenance: if o.provenance == Provenance::Honest && o.delay > 0 {
                    Provenance::Injected
                } else {
                    o.provenance
                },
            };
            if o.delay == 0 {
                immediate.push(d);
            } else {
                self.enqueue(self.now + o.delay, d);
            }
        }
        for d in immediate {
            self.hand_over(d);
        }
    }

    fn hand_over(&mut self, d: Delivery) {
        let now = self.now;
        self.deliveries += 1;
        let Some(node) = self.nodes.get_mut(&d.to) else {
            self.transcript.push(TranscriptRecord {
                seq: 0,
                tick: now,
                event: TranscriptEvent::Undeliverable,
                link: d.link.clone(),
                from: d.from.to_string(),
                to: d.to.to_string(),
                ref_seq: Some(d.origin_seq),
                outcome: Some("unknown_endpoint".into()),
                envelope: None,
            });
            return;
        };
        let outcome = node.node_mut().handle(&d.envelope, now);
        let digest = d.envelope.digest();
        let event = if outcome.is_accepted() {
            TranscriptEvent::Accept
        } else {
            TranscriptEvent::Reject
        };
        let seq = self.transcript.push(TranscriptRecord {
            seq: 0,
            tick: now,
            event,
            link: d.link.clone(),
            from: d.envelope.sender_id.to_string(),
            to: d.to.to_string(),
            ref_seq: Some(d.origin_seq),
            outcome: outcome.rejected.map(|r| r.as_str().to_owned()),
            envelope: None,
        });
        if outcome.is_accepted() {
            let first_acceptance = self.accepted_digests.insert(digest);
            let delayed_honest = self.honest_digests.contains(&digest) && first_acceptance;
            let own = d.envelope.sender_id.as_str() == ADVERSARY_ID;
            if d.provenance != Provenance::Honest && !delayed_honest && !own {
                self.violations.push(Violation {
                    seq,
                    to: d.to.clone(),
                    msg_type: d.envelope.msg_type.to_string(),
                });
            }
        }
        let to = d.to.clone();
        for e in outcome.outgoing {
            self.send(&to, e);
        }
    }

    /// Runs until nothing is left to do or the tick budget is spent.
    pub fn run(&mut self) -> RunReport {
        let start = self.now;
        let deliveries = self.deliveries;
        let mut budget_exhausted = false;
        while self.micro_step() {
            if self.now > start + self.config.tick_budget {
                budget_exhausted = true;
                break;
            }
        }
        RunReport {
            start,
            end: self.now,
            deliveries: self.deliveries - deliveries,
            budget_exhausted,
        }
    }

    /// Runs, handing each tick's state to `scan` after its deliveries.
    pub fn run_scanned(&mut self, mut scan: impl FnMut(&World)) -> RunReport {
        let start = self.now;
        let deliveries = self.deliveries;
        let mut budget_exhausted = false;
        let mut last = self.now;
        while self.micro_step() {
            if self.now != last {
                scan(self);
                last = self.now;
            }
            if self.now > start + self.config.tick_budget {
                budget_exhausted = true;
                break;
            }
        }
        scan(self);
        RunReport {
            start,
            end: self.now,
            deliveries: self.deliveries - deliveries,
            budget_exhausted,
        }
    }

    /// Runs, saving a copy of the world before every delivery the tap will
    /// see.
    pub fn run_with_snapshots(&mut self) -> (RunReport, Vec<World>) {
        let mut snapshots = Vec::new();
        let start = self.now;
        let deliveries = self.deliveries;
        let mut budget_exhausted = false;
        loop {
            if self.next_is_tapped() {
                snapshots.push(self.clone());
            }
            if !self.micro_step() {
                break;
            }
            if self.now > start + self.config.tick_budget {
                budget_exhausted = true;
                break;
            }
        }
        (
            RunReport {
                start,
                end: self.now,
                deliveries: self.deliveries - deliveries,
                budget_exhausted,
            },
            snapshots,
        )
    }

    /// Runs, calling `visit` with the state just before every delivery.
    pub fn run_visiting(&mut self, mut visit: impl FnMut(&World, &Delivery)) -> RunReport {
        let start = self.now;
        let deliveries = self.deliveries;
        let mut budget_exhausted = false;
        loop {
            if let Some(d) = self.peek_delivery() {
                visit(self, d);
            }
            if !self.micro_step() {
                break;
            }
            if self.now > start + self.config.tick_budget {
                budget_exhausted = true;
                break;
            }
        }
        RunReport {
            start,
            end: self.now,
            deliveries: self.deliveries - deliveries,
            budget_exhausted,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const KEY_SEED: u64 = 0x5eed;

    fn basic(seed: u64) -> (World, Vec<u8>) {
        let mut w = World::new(WorldConfig::new(seed).with_key_seed(KEY_SEED)).unwrap();
        w.add_user(UserConfig::new("alice")).unwrap();
        w.add_user(UserConfig::new("bob")).unwrap();
        let (alice, bob, d1) = (PrincipalId::new("alice"), PrincipalId::new("bob"), DataId::new("d1"));
        let plaintext = b"quarterly figures".to_vec();
        w.schedule(
            0,
            Action::RegisterData {
                owner: alice.clone(),
                data: d1.clone(),
                classification: DataClassification::Shared,
            },
        );
        w.schedule(
            0,
            Action::UploadWhenReady {
                owner: alice,
                data: d1.clone(),
                plaintext: plaintext.clone(),
            },
        );
        w.schedule(
            10,
            Action::Request {
                applicant: bob,
                data: d1,
                purpose: "review".into(),
            },
        );
        (w, plaintext)
    }

    #[test]
    fn shared_data_reaches_an_approved_applicant() {
        let (mut w, plaintext) = basic(1);
        let run = w.run();
        assert!(!run.budget_exhausted);
        let bob = w.user(&PrincipalId::new("bob")).unwrap();
        assert_eq!(bob.applicant.retrieved_for(&DataId::new("d1")), vec![plaintext.as_slice()]);
        assert!(w.violations().is_empty());
        assert!(w.action_errors().is_empty(), "{:?}", w.action_errors());
        assert!(w.transcript().records.iter().all(|r| r.event != TranscriptEvent::Reject));
        w.agent().audit().verify().unwrap();
    }

    #[test]
    fn runs_are_reproducible_per_seed() {
        let (mut a, _) = basic(3);
        let (mut b, _) = basic(3);
        let (mut c, _) = basic(4);
        a.run();
        b.run();
        c.run();
        assert_eq!(a.transcript().to_jsonl(), b.transcript().to_jsonl());
        assert_ne!(a.transcript().to_jsonl(), c.transcript().to_jsonl());
    }

    #[test]
    fn snapshots_resume_to_the_same_end_state() {
        let (mut w, _) = basic(5);
        w.add_adversary(
            Some((&PrincipalId::new("bob"), &PrincipalId::agent())),
            Capabilities::default(),
            TapPolicy::Passive,
        )
        .unwrap();
        let (_, snaps) = w.run_with_snapshots();
        assert!(!snaps.is_empty());
        for mut s in snaps {
            s.run();
            assert_eq!(s.transcript().to_jsonl(), w.transcript().to_jsonl());
        }
    }

    #[test]
    fn missing_link_is_recorded_as_undeliverable() {
        let (mut w, _) = basic(6);
        let e = w.transcript().records.len();
        let mut rng = Entropy::derive(1, "t");
        let keys = w.key_source().keypair("principal:alice", KeyOwner::User).unwrap();
        let env = crate::protocol::make_envelope(
            crate::protocol::MsgType::Denial,
            &PrincipalId::new("alice"),
            &keys.private,
            &PrincipalId::new("nobody"),
            None,
            b"x",
            0,
            &mut rng,
        )
        .unwrap();
        w.send(&PrincipalId::new("alice"), env);
        assert_eq!(w.transcript().records[e].event, TranscriptEvent::Undeliverable);
    }
}

