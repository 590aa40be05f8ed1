//! The Agent: vaults data key pairs and user registrations, authenticates
//! applicants and owners, applies the per-classification access policy,
//! issues grants and keeps the audit log.

mod audit;
mod vault;

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;
use zeroize::Zeroizing;

use crate::crypto::{
    decrypt_labeled, sign, verify, CryptoError, Entropy, KeyOwner, KeyPair, KeySource, PrivateKey,
    PublicKey,
};
use crate::node::{Node, Outcome, RunMode};
use crate::protocol::transcript::{b64, unb64};
use crate::protocol::{
    authenticate_envelope, make_envelope, open_payload, AccessRequest, DataClassification, DataId,
    DataPubKeyNotice, Decision, Denial, Directory, Envelope, ErrorNotice, GrantId, GrantIssue,
    GrantToken, MsgType, OwnerApprovalRequest, OwnerVerification, PrincipalId, ProtocolError,
    Reason, RegisterData, ReplayCache, RequestId, Tick, BINDING_LABEL, DEFAULT_WINDOW,
};

pub use audit::{AuditAction, AuditEntry, AuditError, AuditEvent, AuditLog};
pub use vault::{open_vault, seal_vault, MasterKey, VaultError, VaultRecord, VAULT_FORMAT, VAULT_VERSION};

pub const DEFAULT_GRANT_TTL: Tick = 128;

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("user {0} is already registered")]
    DuplicateUser(PrincipalId),
    #[error("unknown owner {0}")]
    UnknownOwner(PrincipalId),
    #[error("data {0} is already registered")]
    DuplicateData(DataId),
    #[error("seeded randomness is not allowed in production mode")]
    SeededInProduction,
    #[error(transparent)]
    Crypto(#[from] CryptoError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Vault(#[from] VaultError),
}

#[derive(Clone, Debug)]
pub struct AgentConfig {
    pub id: PrincipalId,
    pub cloud_id: PrincipalId,
    pub mode: RunMode,
    /// Acceptance window for envelope timestamps.
    pub window: Tick,
    pub grant_ttl: Tick,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            id: PrincipalId::agent(),
            cloud_id: PrincipalId::cloud(),
            mode: RunMode::Production,
            window: DEFAULT_WINDOW,
            grant_ttl: DEFAULT_GRANT_TTL,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AccessPolicy {
    pub granted: BTreeSet<GrantId>,
    pub denied: BTreeSet<RequestId>,
}

#[derive(Clone, Debug)]
pub struct AgentDataEntry {
    pub data_id: DataId,
    pub owner_id: PrincipalId,
    pub classification: DataClassification,
    pub data_keypair: KeyPair,
    pub policy: AccessPolicy,
    pub created_at: Tick,
}

/// A grant as the Agent knows it. Redemption is tracked by the cloud server,
/// which is the only party that sees it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AccessGrant {
    pub grant_id: GrantId,
    pub data_id: DataId,
    pub applicant_id: PrincipalId,
    pub request_id: RequestId,
    pub expiry: Tick,
    pub one_time: bool,
    pub expired: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PendingApproval {
    pub request_id: RequestId,
    pub data_id: DataId,
    pub applicant_id: PrincipalId,
    pub purpose: String,
    pub created_at: Tick,
}

/// Why a grant was issued.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GrantBasis {
    Public,
    OwnerSelf,
    OwnerApproval,
}

impl GrantBasis {
    pub fn as_str(self) -> &'static str {
        match self {
            GrantBasis::Public => "public",
            GrantBasis::OwnerSelf => "owner_self",
            GrantBasis::OwnerApproval => "owner_approval",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PolicyDecision {
    Grant(GrantBasis),
    AskOwner,
    Deny(&'static str),
}

/// Public: any registered user. Private: the owner only. Shared: the owner
/// directly, anyone else after the owner approves that request.
pub fn evaluate_policy(
    classification: DataClassification,
    owner: &PrincipalId,
    applicant: &PrincipalId,
) -> PolicyDecision {
    match classification {
        DataClassification::Public => PolicyDecision::Grant(GrantBasis::Public),
        _ if applicant == owner => PolicyDecision::Grant(GrantBasis::OwnerSelf),
        DataClassification::Private => PolicyDecision::Deny("not_owner"),
        DataClassification::Shared => PolicyDecision::AskOwner,
    }
}

#[derive(Clone, Debug)]
pub struct Agent {
    config: AgentConfig,
    identity: KeyPair,
    keys: KeySource,
    rng: Entropy,
    directory: Directory,
    entries: BTreeMap<DataId, AgentDataEntry>,
    pending: BTreeMap<RequestId, PendingApproval>,
    seen_requests: BTreeSet<RequestId>,
    grants: BTreeMap<GrantId, AccessGrant>,
    next_grant: u64,
    replay: ReplayCache,
    audit: AuditLog,
}

fn subject(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
    pairs
        .iter()
        .map(|(k, v)| ((*k).to_owned(), (*v).to_owned()))
        .collect()
}

impl Agent {
    pub fn new(config: AgentConfig, identity: KeyPair, keys: KeySource, rng: Entropy) -> Result<Self, AgentError> {
        if config.mode == RunMode::Production && (rng.is_deterministic() || keys.is_deterministic()) {
            return Err(AgentError::SeededInProduction);
        }
        let replay = ReplayCache::new(config.window);
        Ok(Agent {
            config,
            identity,
            keys,
            rng,
            directory: Directory::new(),
            entries: BTreeMap::new(),
            pending: BTreeMap::new(),
            seen_requests: BTreeSet::new(),
            grants: BTreeMap::new(),
            next_grant: 1,
            replay,
            audit: AuditLog::new(),
        })
    }

    pub fn public_key(&self) -> &PublicKey {
        &self.identity.public
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub fn directory(&self) -> &Directory {
        &self.directory
    }

    pub fn entry(&self, data_id: &DataId) -> Option<&AgentDataEntry> {
        self.entries.get(data_id)
    }

    pub fn entries(&self) -> impl Iterator<Item = &AgentDataEntry> {
        self.entries.values()
    }

    pub fn grants(&self) -> impl Iterator<Item = &AccessGrant> {
        self.grants.values()
    }

    pub fn pending(&self) -> impl Iterator<Item = &PendingApproval> {
        self.pending.values()
    }

    pub fn audit(&self) -> &AuditLog {
        &self.audit
    }

    pub fn replay_cache_len(&self) -> usize {
        self.replay.len()
    }

    /// Binds `user_id` to `public_key` for all later verification. Also used
    /// for the cloud server's identity.
    pub fn register_user(&mut self, user_id: PrincipalId, public_key: PublicKey, now: Tick) -> Result<(), AgentError> {
        let ok = self.directory.insert(user_id.clone(), public_key);
        self.audit.append(AuditEntry {
            tick: now,
            actor: user_id.to_string(),
            action: AuditAction::RegisterUser,
            outcome: if ok { Ok(()) } else { Err(Reason::Duplicate.as_str().into()) },
            subject: subject(&[("user", user_id.as_str())]),
            envelope_digest: None,
        });
        if ok {
            Ok(())
        } else {
            Err(AgentError::DuplicateUser(user_id))
        }
    }

    /// Creates the data key pair and returns the two public-key notices: one
    /// to the cloud server, one to the owner.
    pub fn register_data(
        &mut self,
        owner_id: &PrincipalId,
        data_id: &DataId,
        classification: DataClassification,
        now: Tick,
    ) -> Result<Vec<Envelope>, AgentError> {
        self.register_data_from(owner_id, data_id, classification, now, None)
    }

    fn register_data_from(
        &mut self,
        owner_id: &PrincipalId,
        data_id: &DataId,
        classification: DataClassification,
        now: Tick,
        digest: Option<[u8; 32]>,
    ) -> Result<Vec<Envelope>, AgentError> {
        let err = if !self.directory.contains(owner_id) {
            Some(AgentError::UnknownOwner(owner_id.clone()))
        } else if self.entries.contains_key(data_id) {
            Some(AgentError::DuplicateData(data_id.clone()))
        } else {
            None
        };
        let subj = subject(&[("data", data_id.as_str()), ("classification", classification.as_str())]);
        if let Some(err) = err {
            // Envelope-borne failures are audited by the handler.
            if digest.is_none() {
                let reason = match err {
                    AgentError::UnknownOwner(_) => Reason::UnknownSender,
                    _ => Reason::Duplicate,
                };
                self.audit.append(AuditEntry {
                    tick: now,
                    actor: owner_id.to_string(),
                    action: AuditAction::RegisterData,
                    outcome: Err(reason.as_str().into()),
                    subject: subj,
                    envelope_digest: None,
                });
            }
            return Err(err);
        }
        let data_keypair = self.keys.keypair(&format!("data:{data_id}"), KeyOwner::Data)?;
        let notice = DataPubKeyNotice {
            data_id: data_id.clone(),
            owner_id: owner_id.clone(),
            classification,
            data_public_key: data_keypair.public.clone(),
        }
        .encode();
        let out = vec![
            self.envelope(MsgType::DataPubKeyNotice, &self.config.cloud_id.clone(), &notice, now)?,
            self.envelope(MsgType::DataPubKeyNotice, owner_id, &notice, now)?,
        ];
        self.entries.insert(
            data_id.clone(),
            AgentDataEntry {
                data_id: data_id.clone(),
                owner_id: owner_id.clone(),
                classification,
                data_keypair,
                policy: AccessPolicy::default(),
                created_at: now,
            },
        );
        self.audit.append(AuditEntry {
            tick: now,
            actor: owner_id.to_string(),
            action: AuditAction::RegisterData,
            outcome: Ok(()),
            subject: subj,
            envelope_digest: digest,
        });
        Ok(out)
    }

    /// Marks grants past expiry and prunes the replay cache. Returns the
    /// number of grants that expired now.
    pub fn expire_and_gc(&mut self, now: Tick) -> usize {
        let mut expired = Vec::new();
        for g in self.grants.values_mut() {
            if !g.expired && g.expiry < now {
                g.expired = true;
                expired.push((g.grant_id.clone(), g.data_id.clone()));
            }
        }
        for (grant, data) in &expired {
            self.audit.append(AuditEntry {
                tick: now,
                actor: self.config.id.to_string(),
                action: AuditAction::GrantExpired,
                outcome: Ok(()),
                subject: subject(&[("grant", grant.as_str()), ("data", data.as_str())]),
                envelope_digest: None,
            });
        }
        self.replay.prune(now);
        expired.len()
    }

    /// Appends an arbitrary event to the audit chain.
    pub fn audit_append(&mut self, entry: AuditEntry) -> &AuditEvent {
        self.audit.append(entry)
    }

    fn envelope(&mut self, t: MsgType, to: &PrincipalId, payload: &[u8], now: Tick) -> Result<Envelope, ProtocolError> {
        let key = if t.is_sealed() {
            Some(
                self.directory
                    .get(to)
                    .ok_or(ProtocolError::MissingRecipientKey(t))?
                    .clone(),
            )
        } else {
            None
        };
        make_envelope(
            t,
            &self.config.id,
            &self.identity.private,
            to,
            key.as_ref(),
            payload,
            now,
            &mut self.rng,
        )
    }

    fn reject(&mut self, e: &Envelope, reason: Reason, now: Tick) {
        self.audit.append(AuditEntry {
            tick: now,
            actor: e.sender_id.to_string(),
            action: AuditAction::Rejected,
            outcome: Err(reason.as_str().into()),
            subject: subject(&[("msg_type", e.msg_type.as_str())]),
            envelope_digest: Some(e.digest()),
        });
    }

    fn open(&mut self, e: &Envelope) -> Result<Zeroizing<Vec<u8>>, Reason> {
        let sender_key = self.directory.get(&e.sender_id).ok_or(Reason::UnknownSender)?.clone();
        open_payload(e, &self.identity.private, &sender_key, &mut self.rng)
            .map(Zeroizing::new)
            .map_err(|_| Reason::SealFailed)
    }

    fn on_register_data(&mut self, e: &Envelope, now: Tick) -> Result<Vec<Envelope>, Reason> {
        let plain = self.open(e)?;
        let req = RegisterData::decode(&plain).map_err(|_| Reason::Malformed)?;
        self.register_data_from(&e.sender_id, &req.data_id, req.classification, now, Some(e.digest()))
            .map_err(|err| match err {
                AgentError::DuplicateData(_) => Reason::Duplicate,
                _ => Reason::Malformed,
            })
    }

    fn on_access_request(&mut self, e: &Envelope, now: Tick) -> Result<Vec<Envelope>, Reason> {
        let plain = self.open(e)?;
        let req = AccessRequest::decode(&plain).map_err(|_| Reason::Malformed)?;
        if req.applicant_id != e.sender_id {
            return Err(Reason::Malformed);
        }
        if !self.seen_requests.insert(req.request_id.clone()) {
            return Err(Reason::Duplicate);
        }
        let digest = e.digest();
        self.audit.append(AuditEntry {
            tick: now,
            actor: e.sender_id.to_string(),
            action: AuditAction::AccessRequest,
            outcome: Ok(()),
            subject: subject(&[("request", req.request_id.as_str()), ("data", req.data_id.as_str())]),
            envelope_digest: Some(digest),
        });
        let Some(entry) = self.entries.get(&req.data_id) else {
            return self.deny(&req.request_id, &req.data_id, &req.applicant_id, Reason::UnknownData.as_str(), now);
        };
        match evaluate_policy(entry.classification, &entry.owner_id, &req.applicant_id) {
            PolicyDecision::Grant(basis) => self
                .issue_grant(&req.data_id, &req.applicant_id, &req.request_id, basis, now)
                .map(|e| vec![e]),
            PolicyDecision::Deny(why) => self.deny(&req.request_id, &req.data_id, &req.applicant_id, why, now),
            PolicyDecision::AskOwner => {
                let owner = entry.owner_id.clone();
                let ask = OwnerApprovalRequest {
                    request_id: req.request_id.clone(),
                    data_id: req.data_id.clone(),
                    applicant_id: req.applicant_id.clone(),
                    purpose: req.purpose.clone(),
                };
                let out = self
                    .envelope(MsgType::OwnerApprovalRequest, &owner, &ask.encode(), now)
                    .map_err(|_| Reason::SealFailed)?;
                self.pending.insert(
                    req.request_id.clone(),
                    PendingApproval {
                        request_id: req.request_id.clone(),
                        data_id: req.data_id.clone(),
                        applicant_id: req.applicant_id.clone(),
                        purpose: req.purpose,
                        created_at: now,
                    },
                );
                self.audit.append(AuditEntry {
                    tick: now,
                    actor: self.config.id.to_string(),
                    action: AuditAction::ApprovalForwarded,
                    outcome: Ok(()),
                    subject: subject(&[
                        ("request", req.request_id.as_str()),
                        ("data", req.data_id.as_str()),
                        ("owner", owner.as_str()),
                    ]),
                    envelope_digest: Some(out.digest()),
                });
                Ok(vec![out])
            }
        }
    }

    fn on_owner_verification(&mut self, e: &Envelope, now: Tick) -> Result<Vec<Envelope>, Reason> {
        let plain = self.open(e)?;
        let v = OwnerVerification::decode(&plain).map_err(|_| Reason::Malformed)?;
        let pending = self.pending.get(&v.request_id).ok_or(Reason::NoPending)?.clone();
        let entry = self.entries.get(&pending.data_id).ok_or(Reason::UnknownData)?;
        if e.sender_id != entry.owner_id {
            return Err(Reason::BadSignature);
        }
        let owner_key = self.directory.get(&entry.owner_id).ok_or(Reason::UnknownSender)?;
        let outer = OwnerVerification::outer_signed_bytes(&v.request_id, v.decision, &v.inner_layer);
        if !verify(&outer, &v.outer_signature, owner_key) {
            return Err(Reason::BadSignature);
        }
        let inner = decrypt_labeled(&v.inner_layer, &entry.data_keypair.private, BINDING_LABEL)
            .map_err(|_| Reason::BadDataBinding)?;
        if *inner != OwnerVerification::inner_plaintext(&v.request_id, v.decision) {
            return Err(Reason::BadDataBinding);
        }
        self.pending.remove(&v.request_id);
        self.audit.append(AuditEntry {
            tick: now,
            actor: e.sender_id.to_string(),
            action: AuditAction::OwnerVerified,
            outcome: Ok(()),
            subject: subject(&[
                ("request", v.request_id.as_str()),
                ("data", pending.data_id.as_str()),
                ("decision", v.decision.as_str()),
            ]),
            envelope_digest: Some(e.digest()),
        });
        match v.decision {
            Decision::Approve => self
                .issue_grant(
                    &pending.data_id,
                    &pending.applicant_id,
                    &pending.request_id,
                    GrantBasis::OwnerApproval,
                    now,
                )
                .map(|e| vec![e]),
            Decision::Deny => self.deny(&pending.request_id, &pending.data_id, &pending.applicant_id, "owner_denied", now),
        }
    }

    fn deny(
        &mut self,
        request_id: &RequestId,
        data_id: &DataId,
        applicant: &PrincipalId,
        why: &str,
        now: Tick,
    ) -> Result<Vec<Envelope>, Reason> {
        let denial = Denial {
            request_id: request_id.clone(),
            data_id: data_id.clone(),
            reason: why.to_owned(),
        };
        let out = self
            .envelope(MsgType::Denial, applicant, &denial.encode(), now)
            .map_err(|_| Reason::Malformed)?;
        if let Some(entry) = self.entries.get_mut(data_id) {
            entry.policy.denied.insert(request_id.clone());
        }
        self.audit.append(AuditEntry {
            tick: now,
            actor: self.config.id.to_string(),
            action: AuditAction::Denied,
            outcome: Ok(()),
            subject: subject(&[
                ("request", request_id.as_str()),
                ("data", data_id.as_str()),
                ("applicant", applicant.as_str()),
                ("reason", why),
            ]),
            envelope_digest: Some(out.digest()),
        });
        Ok(vec![out])
    }

    fn issue_grant(
        &mut self,
        data_id: &DataId,
        applicant: &PrincipalId,
        request_id: &RequestId,
        basis: GrantBasis,
        now: Tick,
    ) -> Result<Envelope, Reason> {
        let grant_id = GrantId::new(format!("grant-{}", self.next_grant));
        let expiry = now.saturating_add(self.config.grant_ttl);
        let mut token = GrantToken {
            grant_id: grant_id.clone(),
            data_id: data_id.clone(),
            applicant_id: applicant.clone(),
            request_id: request_id.clone(),
            expiry,
            one_time: true,
            agent_signature: crate::crypto::Signature {
                signer_key_id: self.identity.key_id().clone(),
                sig_bytes: Vec::new(),
            },
        };
        token.agent_signature =
            sign(&token.signed_bytes(), &self.identity.private, &mut self.rng).map_err(|_| Reason::SealFailed)?;
        let entry = self.entries.get(data_id).ok_or(Reason::UnknownData)?;
        let issue = GrantIssue {
            grant: token,
            data_private_key: entry.data_keypair.private.to_der(),
        };
        let out = self
            .envelope(MsgType::GrantIssue, applicant, &issue.encode(), now)
            .map_err(|_| Reason::SealFailed)?;
        self.next_grant += 1;
        self.grants.insert(
            grant_id.clone(),
            AccessGrant {
                grant_id: grant_id.clone(),
                data_id: data_id.clone(),
                applicant_id: applicant.clone(),
                request_id: request_id.clone(),
                expiry,
                one_time: true,
                expired: false,
            },
        );
        if let Some(entry) = self.entries.get_mut(data_id) {
            entry.policy.granted.insert(grant_id.clone());
        }
        let expiry = expiry.to_string();
        self.audit.append(AuditEntry {
            tick: now,
            actor: self.config.id.to_string(),
            action: AuditAction::GrantIssued,
            outcome: Ok(()),
            subject: subject(&[
                ("grant", grant_id.as_str()),
                ("request", request_id.as_str()),
                ("data", data_id.as_str()),
                ("applicant", applicant.as_str()),
                ("basis", basis.as_str()),
                ("expiry", &expiry),
            ]),
            envelope_digest: Some(out.digest()),
        });
        Ok(out)
    }

    fn error_reply(&mut self, e: &Envelope, reason: Reason, now: Tick) -> Option<Envelope> {
        let notice = ErrorNotice {
            reason,
            subject: e.msg_type.as_str().to_owned(),
            refers_to: e.digest(),
        };
        self.envelope(MsgType::Error, &e.sender_id, &notice.encode(), now).ok()
    }

    /// Serializes the complete Agent state, including its identity key, into
    /// an encrypted vault file.
    pub fn save_vault(&mut self, master: &MasterKey) -> Result<String, AgentError> {
        Ok(seal_vault(&self.vault_records(), master, &mut self.rng)?)
    }

    pub fn vault_records(&self) -> Vec<VaultRecord> {
        let mut out = vec![VaultRecord::Identity {
            id: self.config.id.clone(),
            private_key: b64(&self.identity.private.to_der()),
        }];
        for (id, key) in self.directory.iter() {
            out.push(VaultRecord::User {
                id: id.clone(),
                public_key: b64(&key.to_der()),
            });
        }
        for e in self.entries.values() {
            out.push(VaultRecord::Data {
                data_id: e.data_id.clone(),
                owner_id: e.owner_id.clone(),
                classification: e.classification,
                created_at: e.created_at,
                private_key: b64(&e.data_keypair.private.to_der()),
                granted: e.policy.granted.iter().cloned().collect(),
                denied: e.policy.denied.iter().cloned().collect(),
            });
        }
        for p in self.pending.values() {
            out.push(VaultRecord::Pending {
                request_id: p.request_id.clone(),
                data_id: p.data_id.clone(),
                applicant_id: p.applicant_id.clone(),
                purpose: p.purpose.clone(),
                created_at: p.created_at,
            });
        }
        for g in self.grants.values() {
            out.push(VaultRecord::Grant {
                grant_id: g.grant_id.clone(),
                data_id: g.data_id.clone(),
                applicant_id: g.applicant_id.clone(),
                request_id: g.request_id.clone(),
                expiry: g.expiry,
                one_time: g.one_time,
                expired: g.expired,
            });
        }
        for r in &self.seen_requests {
            out.push(VaultRecord::RequestSeen { request_id: r.clone() });
        }
        for (sender, nonce, timestamp) in self.replay.entries() {
            out.push(VaultRecord::Nonce {
                sender: sender.clone(),
                nonce: b64(nonce),
                timestamp,
            });
        }
        out.push(VaultRecord::Counter {
            next_grant: self.next_grant,
        });
        out
    }

    /// Rebuilds an Agent from its vault. The audit log is kept in its own
    /// file and is passed in separately.
    pub fn load_vault(
        text: &str,
        master: &MasterKey,
        config: AgentConfig,
        keys: KeySource,
        rng: Entropy,
        audit: AuditLog,
    ) -> Result<Self, AgentError> {
        let records = open_vault(text, master)?;
        let bad = |index: usize, msg: &str| VaultError::Record {
            index,
            msg: msg.to_owned(),
        };
        let private = |index: usize, der: &str| -> Result<PrivateKey, VaultError> {
            let der = Zeroizing::new(unb64(der, "private_key").map_err(|_| bad(index, "bad base64"))?);
            PrivateKey::from_der(&der).map_err(|_| bad(index, "bad private key"))
        };
        let mut identity = None;
        let mut agent_parts = Vec::new();
        for (index, r) in records.into_iter().enumerate() {
            match r {
                VaultRecord::Identity { id, private_key } => {
                    if id != config.id {
                        return Err(bad(index, "identity does not match configuration").into());
                    }
                    identity = Some(KeyPair::from_private_key(private(index, &private_key)?, KeyOwner::User));
                }
                other => agent_parts.push((index, other)),
            }
        }
        let identity = identity.ok_or_else(|| bad(0, "no identity record"))?;
        let mut agent = Agent::new(config, identity, keys, rng)?;
        let mut nonces = Vec::new();
        for (index, r) in agent_parts {
            match r {
                VaultRecord::Identity { .. } => unreachable!(),
                VaultRecord::User { id, public_key } => {
                    let der = unb64(&public_key, "public_key").map_err(|_| bad(index, "bad base64"))?;
                    let key = PublicKey::from_der(&der).map_err(|_| bad(index, "bad public key"))?;
                    if !agent.directory.insert(id, key) {
                        return Err(bad(index, "duplicate user").into());
                    }
                }
                VaultRecord::Data {
                    data_id,
                    owner_id,
                    classification,
                    created_at,
                    private_key,
                    granted,
                    denied,
                } => {
                    let data_keypair = KeyPair::from_private_key(private(index, &private_key)?, KeyOwner::Data);
                    agent.entries.insert(
                        data_id.clone(),
                        AgentDataEntry {
                            data_id,
                            owner_id,
                            classification,
                            data_keypair,
                            policy: AccessPolicy {
                                granted: granted.into_iter().collect(),
                                denied: denied.into_iter().collect(),
                            },
                            created_at,
                        },
                    );
                }
                VaultRecord::Pending {
                    request_id,
                    data_id,
                    applicant_id,
                    purpose,
                    created_at,
                } => {
                    agent.pending.insert(
                        request_id.clone(),
                        PendingApproval {
                            request_id,
                            data_id,
                            applicant_id,
                            purpose,
                            created_at,
                        },
                    );
                }
                VaultRecord::Grant {
                    grant_id,
                    data_id,
                    applicant_id,
                    request_id,
                    expiry,
                    one_time,
                    expired,
                } => {
                    agent.grants.insert(
                        grant_id.clone(),
                        AccessGrant {
                            grant_id,
                            data_id,
                            applicant_id,
                            request_id,
                            expiry,
                            one_time,
                            expired,
                        },
                    );
                }
                VaultRecord::RequestSeen { request_id } => {
                    agent.seen_requests.insert(request_id);
                }
                VaultRecord::Nonce {
                    sender,
                    nonce,
                    timestamp,
                } => {
                    let nonce: [u8; 16] = unb64(&nonce, "nonce")
                        .ok()
                        .and_then(|n| n.try_into().ok())
                        .ok_or_else(|| bad(index, "bad nonce"))?;
                    nonces.push((sender, nonce, timestamp));
                }
                VaultRecord::Counter { next_grant } => agent.next_grant = next_grant,
            }
        }
        agent.replay = ReplayCache::restore(agent.config.window, nonces);
        audit.verify().map_err(|_| bad(0, "audit log does not verify"))?;
        agent.audit = audit;
        Ok(agent)
    }
}

impl Node for Agent {
    fn id(&self) -> &PrincipalId {
        &self.config.id
    }

    fn handle(&mut self, e: &Envelope, now: Tick) -> Outcome {
        if let Err(reason) = authenticate_envelope(e, &self.config.id, &self.directory, &mut self.replay, now) {
            self.reject(e, reason, now);
            return Outcome::rejected(reason);
        }
        let result = match e.msg_type {
            MsgType::RegisterData => self.on_register_data(e, now),
            MsgType::AccessRequest => self.on_access_request(e, now),
            MsgType::OwnerVerification => self.on_owner_verification(e, now),
            _ => Err(Reason::UnexpectedMessage),
        };
        match result {
            Ok(out) => Outcome::accepted(out),
            Err(reason) => {
                self.reject(e, reason, now);
                let reply = self.error_reply(e, reason, now);
                Outcome::rejected_with_reply(reason, reply)
            }
        }
    }

    fn on_tick(&mut self, now: Tick) -> Vec<Envelope> {
        self.expire_and_gc(now);
        Vec::new()
    }
}
