//! Data owner and data applicant state machines.
//!
//! A [`User`] is one registered principal. It plays the owner role for data
//! it registered and the applicant role for data it requests, including its
//! own. The two roles keep separate state so each can be inspected alone.

use std::collections::BTreeMap;

use thiserror::Error;
use zeroize::Zeroizing;

use crate::crypto::{encrypt_labeled, sign, verify, CryptoError, Entropy, KeyPair, PublicKey};
use crate::node::{Node, Outcome, RunMode};
use crate::protocol::{
    authenticate_envelope, make_envelope, open_payload, AccessRequest, CloudAccess, DataClassification,
    DataId, DataPubKeyNotice, DataResponse, DataUpload, Decision, Denial, Directory, Envelope,
    ErrorNotice, GrantId, GrantIssue, GrantToken, MsgType, OwnerApprovalRequest, OwnerVerification,
    Payload, PrincipalId, ProtocolError, Reason, RegisterData, ReplayCache, RequestId, Tick,
    BINDING_LABEL, DEFAULT_WINDOW,
};

/// Ticks an owner waits before re-sending an upload the cloud refused for
/// lack of a public-key notice.
pub const UPLOAD_RETRY_DELAY: Tick = 4;
pub const UPLOAD_MAX_RETRIES: u32 = 16;

#[derive(Debug, Error)]
pub enum ActorError {
    #[error("data {0} is not registered by this owner")]
    NotOwned(DataId),
    #[error("no public-key copy received yet for data {0}")]
    NoPubKey(DataId),
    #[error("no pending approval request {0}")]
    UnknownRequest(RequestId),
    #[error("no grant {0}")]
    UnknownGrant(GrantId),
    #[error("grant {0} was already used")]
    GrantUsed(GrantId),
    #[error("grant {0} expired at tick {1}")]
    GrantExpired(GrantId, Tick),
    #[error("seeded randomness is not allowed in production mode")]
    SeededInProduction,
    #[error(transparent)]
    Crypto(#[from] CryptoError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
}

/// How an owner answers approval requests.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub enum ApprovalPolicy {
    #[default]
    Approve,
    Deny,
    /// Leave requests pending until [`User::owner_decide`] is called.
    Manual,
    /// Approve only the listed applicants.
    Allow(Vec<PrincipalId>),
}

impl ApprovalPolicy {
    fn decide(&self, applicant: &PrincipalId) -> Option<Decision> {
        match self {
            ApprovalPolicy::Approve => Some(Decision::Approve),
            ApprovalPolicy::Deny => Some(Decision::Deny),
            ApprovalPolicy::Manual => None,
            ApprovalPolicy::Allow(list) if list.contains(applicant) => Some(Decision::Approve),
            ApprovalPolicy::Allow(_) => Some(Decision::Deny),
        }
    }
}

#[derive(Clone, Debug)]
pub struct UserConfig {
    pub id: PrincipalId,
    pub agent_id: PrincipalId,
    pub cloud_id: PrincipalId,
    pub mode: RunMode,
    pub window: Tick,
    pub approval: ApprovalPolicy,
    /// Redeem grants as soon as they arrive.
    pub auto_redeem: bool,
    /// Refuse expired or used grants locally and erase the data private key
    /// after redeeming. Only a misbehaving client turns this off.
    pub local_grant_checks: bool,
}

impl UserConfig {
    pub fn new(id: impl Into<PrincipalId>) -> Self {
        UserConfig {
            id: id.into(),
            agent_id: PrincipalId::agent(),
            cloud_id: PrincipalId::cloud(),
            mode: RunMode::Production,
            window: DEFAULT_WINDOW,
            approval: ApprovalPolicy::default(),
            auto_redeem: true,
            local_grant_checks: true,
        }
    }
}

#[derive(Clone, Debug)]
pub struct OwnedData {
    pub classification: DataClassification,
    /// Copy of the data public key from the Agent's notice.
    pub data_public_key: Option<PublicKey>,
}

#[derive(Clone, Debug)]
struct Upload {
    data_id: DataId,
    plaintext: Zeroizing<Vec<u8>>,
    retries: u32,
    retry_at: Option<Tick>,
    last_digest: Option<[u8; 32]>,
}

#[derive(Clone, Debug, Default)]
pub struct OwnerState {
    pub owned: BTreeMap<DataId, OwnedData>,
    pub pending: BTreeMap<RequestId, OwnerApprovalRequest>,
    pub decisions: Vec<(RequestId, Decision)>,
    uploads: Vec<Upload>,
}

impl OwnerState {
    /// Every byte string the owner role holds, for least-knowledge scans.
    pub fn state_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for d in self.owned.values() {
            if let Some(k) = &d.data_public_key {
                out.extend(k.to_der());
            }
        }
        for u in &self.uploads {
            out.extend(u.plaintext.iter());
        }
        out
    }

    pub fn uploads_outstanding(&self) -> usize {
        self.uploads.len()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum RequestStatus {
    Pending,
    Granted(GrantId),
    Denied(String),
}

#[derive(Clone, Debug)]
pub struct OutstandingRequest {
    pub data_id: DataId,
    pub purpose: String,
    pub status: RequestStatus,
}

#[derive(Clone, Debug)]
pub struct HeldGrant {
    pub token: GrantToken,
    /// PKCS#8 data private key, held only until redemption.
    pub data_private_key: Option<Zeroizing<Vec<u8>>>,
    pub used: bool,
}

#[derive(Clone, Debug, Default)]
pub struct ApplicantState {
    pub requests: BTreeMap<RequestId, OutstandingRequest>,
    pub grants: BTreeMap<GrantId, HeldGrant>,
    /// Plaintexts received, by grant.
    pub retrieved: BTreeMap<GrantId, (DataId, Zeroizing<Vec<u8>>)>,
    pub errors: Vec<ErrorNotice>,
    next_request: u64,
}

impl ApplicantState {
    pub fn state_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for g in self.grants.values() {
            if let Some(k) = &g.data_private_key {
                out.extend(k.iter());
            }
        }
        for (_, p) in self.retrieved.values() {
            out.extend(p.iter());
        }
        out
    }

    /// Number of data private keys currently held.
    pub fn held_keys(&self) -> usize {
        self.grants
            .values()
            .filter(|g| g.data_private_key.is_some())
            .count()
    }

    pub fn retrieved_for(&self, data_id: &DataId) -> Vec<&[u8]> {
        self.retrieved
            .values()
            .filter(|(d, _)| d == data_id)
            .map(|(_, p)| p.as_slice())
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct User {
    config: UserConfig,
    identity: KeyPair,
    rng: Entropy,
    directory: Directory,
    replay: ReplayCache,
    pub owner: OwnerState,
    pub applicant: ApplicantState,
}

impl User {
    /// `agent_key` and `cloud_key` are the only principals a user accepts
    /// envelopes from.
    pub fn new(
        config: UserConfig,
        identity: KeyPair,
        agent_key: PublicKey,
        cloud_key: PublicKey,
        rng: Entropy,
    ) -> Result<Self, ActorError> {
        if config.mode == RunMode::Production && rng.is_deterministic() {
            return Err(ActorError::SeededInProduction);
        }
        let mut directory = Directory::new();
        directory.insert(config.agent_id.clone(), agent_key);
        directory.insert(config.cloud_id.clone(), cloud_key);
        let replay = ReplayCache::new(config.window);
        Ok(User {
            config,
            identity,
            rng,
            directory,
            replay,
            owner: OwnerState::default(),
            applicant: ApplicantState::default(),
        })
    }

    pub fn public_key(&self) -> &PublicKey {
        &self.identity.public
    }

    pub fn config(&self) -> &UserConfig {
        &self.config
    }

    pub fn config_mut(&mut self) -> &mut UserConfig {
        &mut self.config
    }

    /// Earliest tick at which [`Node::on_tick`] has work to do.
    pub fn next_timer(&self) -> Option<Tick> {
        self.owner.uploads.iter().filter_map(|u| u.retry_at).min()
    }

    fn envelope(&mut self, t: MsgType, to: &PrincipalId, payload: &[u8], now: Tick) -> Result<Envelope, ProtocolError> {
        let key = self.directory.get(to).cloned();
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

    /// Asks the Agent to register a data object owned by this user.
    pub fn register_data(
        &mut self,
        data_id: &DataId,
        classification: DataClassification,
        now: Tick,
    ) -> Result<Envelope, ActorError> {
        let body = RegisterData {
            data_id: data_id.clone(),
            classification,
        }
        .encode();
        let agent = self.config.agent_id.clone();
        let e = self.envelope(MsgType::RegisterData, &agent, &body, now)?;
        self.owner.owned.insert(
            data_id.clone(),
            OwnedData {
                classification,
                data_public_key: None,
            },
        );
        Ok(e)
    }

    /// Sends `plaintext` to the cloud server, sealed and signed. Requires the
    /// Agent's public-key copy for this data.
    pub fn owner_upload(&mut self, data_id: &DataId, plaintext: &[u8], now: Tick) -> Result<Envelope, ActorError> {
        let owned = self
            .owner
            .owned
            .get(data_id)
            .ok_or_else(|| ActorError::NotOwned(data_id.clone()))?;
        if owned.data_public_key.is_none() {
            return Err(ActorError::NoPubKey(data_id.clone()));
        }
        let e = self.upload_envelope(data_id, plaintext, now)?;
        self.owner.uploads.push(Upload {
            data_id: data_id.clone(),
            plaintext: Zeroizing::new(plaintext.to_vec()),
            retries: 0,
            retry_at: None,
            last_digest: Some(e.digest()),
        });
        Ok(e)
    }

    /// Queues an upload to go out as soon as the public-key copy arrives.
    pub fn upload_when_ready(&mut self, data_id: &DataId, plaintext: &[u8]) {
        self.owner.uploads.push(Upload {
            data_id: data_id.clone(),
            plaintext: Zeroizing::new(plaintext.to_vec()),
            retries: 0,
            retry_at: None,
            last_digest: None,
        });
    }

    fn upload_envelope(&mut self, data_id: &DataId, plaintext: &[u8], now: Tick) -> Result<Envelope, ActorError> {
        let body = DataUpload {
            data_id: data_id.clone(),
            plaintext: Zeroizing::new(plaintext.to_vec()),
        }
        .encode();
        let cloud = self.config.cloud_id.clone();
        Ok(self.envelope(MsgType::DataUpload, &cloud, &body, now)?)
    }

    /// Answers a pending approval request with the double-layer verification:
    /// the decision bound to the request under the data public key, then
    /// signed with the owner's own key.
    pub fn owner_decide(&mut self, request_id: &RequestId, decision: Decision, now: Tick) -> Result<Envelope, ActorError> {
        let req = self
            .owner
            .pending
            .get(request_id)
            .ok_or_else(|| ActorError::UnknownRequest(request_id.clone()))?;
        let data_key = self
            .owner
            .owned
            .get(&req.data_id)
            .and_then(|d| d.data_public_key.clone())
            .ok_or_else(|| ActorError::NoPubKey(req.data_id.clone()))?;
        let inner = encrypt_labeled(
            &OwnerVerification::inner_plaintext(request_id, decision),
            &data_key,
            BINDING_LABEL,
            &mut self.rng,
        )?;
        let outer = sign(
            &OwnerVerification::outer_signed_bytes(request_id, decision, &inner),
            &self.identity.private,
            &mut self.rng,
        )?;
        let body = OwnerVerification {
            request_id: request_id.clone(),
            decision,
            inner_layer: inner,
            outer_signature: outer,
        }
        .encode();
        let agent = self.config.agent_id.clone();
        let e = self.envelope(MsgType::OwnerVerification, &agent, &body, now)?;
        self.owner.pending.remove(request_id);
        self.owner.decisions.push((request_id.clone(), decision));
        Ok(e)
    }

    /// Builds a signed access request with a fresh request id.
    pub fn applicant_request(&mut self, data_id: &DataId, purpose: &str, now: Tick) -> Result<Envelope, ActorError> {
        self.applicant.next_request += 1;
        let request_id = RequestId::new(format!("{}-r{}", self.config.id, self.applicant.next_request));
        let body = AccessRequest {
            request_id: request_id.clone(),
            data_id: data_id.clone(),
            applicant_id: self.config.id.clone(),
            purpose: purpose.to_owned(),
        }
        .encode();
        let agent = self.config.agent_id.clone();
        let e = self.envelope(MsgType::AccessRequest, &agent, &body, now)?;
        self.applicant.requests.insert(
            request_id,
            OutstandingRequest {
                data_id: data_id.clone(),
                purpose: purpose.to_owned(),
                status: RequestStatus::Pending,
            },
        );
        Ok(e)
    }

    /// Sends the grant and data private key to the cloud server and erases
    /// the local copy of the key.
    pub fn applicant_redeem(&mut self, grant_id: &GrantId, now: Tick) -> Result<Envelope, ActorError> {
        let checks = self.config.local_grant_checks;
        let held = self
            .applicant
            .grants
            .get(grant_id)
            .ok_or_else(|| ActorError::UnknownGrant(grant_id.clone()))?;
        if checks && held.used {
            return Err(ActorError::GrantUsed(grant_id.clone()));
        }
        if checks && now > held.token.expiry {
            return Err(ActorError::GrantExpired(grant_id.clone(), held.token.expiry));
        }
        let key = held
            .data_private_key
            .clone()
            .ok_or_else(|| ActorError::GrantUsed(grant_id.clone()))?;
        let body = CloudAccess {
            grant: held.token.clone(),
            data_private_key: key,
        }
        .encode();
        let cloud = self.config.cloud_id.clone();
        let e = self.envelope(MsgType::CloudAccess, &cloud, &body, now)?;
        let held = self.applicant.grants.get_mut(grant_id).expect("checked above");
        held.used = true;
        if checks {
            held.data_private_key = None;
        }
        Ok(e)
    }

    /// Validates and opens a data response addressed to this user.
    pub fn applicant_open_response(&mut self, e: &Envelope) -> Result<DataResponse, Reason> {
        if e.msg_type != MsgType::DataResponse || e.recipient_id != self.config.id {
            return Err(Reason::WrongRecipient);
        }
        let cloud_key = self.directory.get(&self.config.cloud_id).ok_or(Reason::UnknownSender)?.clone();
        if e.sender_id != self.config.cloud_id {
            return Err(Reason::UnknownSender);
        }
        let plain = Zeroizing::new(
            open_payload(e, &self.identity.private, &cloud_key, &mut self.rng).map_err(|_| Reason::SealFailed)?,
        );
        DataResponse::decode(&plain).map_err(|_| Reason::Malformed)
    }

    fn open(&mut self, e: &Envelope) -> Result<Zeroizing<Vec<u8>>, Reason> {
        let sender_key = self.directory.get(&e.sender_id).ok_or(Reason::UnknownSender)?.clone();
        open_payload(e, &self.identity.private, &sender_key, &mut self.rng)
            .map(Zeroizing::new)
            .map_err(|_| Reason::SealFailed)
    }

    fn on_notice(&mut self, e: &Envelope, now: Tick) -> Result<Vec<Envelope>, Reason> {
        if e.sender_id != self.config.agent_id {
            return Err(Reason::UnexpectedMessage);
        }
        let Payload::Clear(bytes) = &e.payload else {
            return Err(Reason::Malformed);
        };
        let n = DataPubKeyNotice::decode(bytes).map_err(|_| Reason::Malformed)?;
        if n.owner_id != self.config.id {
            return Err(Reason::NotOwner);
        }
        let owned = self.owner.owned.get_mut(&n.data_id).ok_or(Reason::UnknownData)?;
        if owned.data_public_key.is_some() {
            return Err(Reason::Duplicate);
        }
        owned.data_public_key = Some(n.data_public_key);
        let mut out = Vec::new();
        let ready: Vec<usize> = (0..self.owner.uploads.len())
            .filter(|&i| self.owner.uploads[i].data_id == n.data_id && self.owner.uploads[i].last_digest.is_none())
            .collect();
        for i in ready {
            let (data_id, plaintext) = (self.owner.uploads[i].data_id.clone(), self.owner.uploads[i].plaintext.clone());
            if let Ok(up) = self.upload_envelope(&data_id, &plaintext, now) {
                self.owner.uploads[i].last_digest = Some(up.digest());
                out.push(up);
            }
        }
        Ok(out)
    }

    fn on_approval_request(&mut self, e: &Envelope, now: Tick) -> Result<Vec<Envelope>, Reason> {
        let plain = self.open(e)?;
        let req = OwnerApprovalRequest::decode(&plain).map_err(|_| Reason::Malformed)?;
        if !self.owner.owned.contains_key(&req.data_id) {
            return Err(Reason::NotOwner);
        }
        if self.owner.pending.contains_key(&req.request_id) {
            return Err(Reason::Duplicate);
        }
        let request_id = req.request_id.clone();
        let decision = self.config.approval.decide(&req.applicant_id);
        self.owner.pending.insert(request_id.clone(), req);
        match decision {
            Some(d) => self
                .owner_decide(&request_id, d, now)
                .map(|e| vec![e])
                .map_err(|_| Reason::SealFailed),
            None => Ok(Vec::new()),
        }
    }

    fn on_grant(&mut self, e: &Envelope, now: Tick) -> Result<Vec<Envelope>, Reason> {
        let plain = self.open(e)?;
        let issue = GrantIssue::decode(&plain).map_err(|_| Reason::Malformed)?;
        let token = issue.grant;
        let agent_key = self.directory.get(&self.config.agent_id).ok_or(Reason::UnknownSender)?;
        if !verify(&token.signed_bytes(), &token.agent_signature, agent_key) || token.applicant_id != self.config.id {
            return Err(Reason::BadGrant);
        }
        let request = self
            .applicant
            .requests
            .get_mut(&token.request_id)
            .ok_or(Reason::NoPending)?;
        if request.status != RequestStatus::Pending || request.data_id != token.data_id {
            return Err(Reason::BadGrant);
        }
        if self.applicant.grants.contains_key(&token.grant_id) {
            return Err(Reason::Duplicate);
        }
        request.status = RequestStatus::Granted(token.grant_id.clone());
        let grant_id = token.grant_id.clone();
        self.applicant.grants.insert(
            grant_id.clone(),
            HeldGrant {
                token,
                data_private_key: Some(issue.data_private_key),
                used: false,
            },
        );
        if self.config.auto_redeem {
            self.applicant_redeem(&grant_id, now)
                .map(|e| vec![e])
                .map_err(|_| Reason::BadGrant)
        } else {
            Ok(Vec::new())
        }
    }

    fn on_response(&mut self, e: &Envelope) -> Result<Vec<Envelope>, Reason> {
        let resp = self.applicant_open_response(e)?;
        let held = self.applicant.grants.get(&resp.grant_id).ok_or(Reason::BadGrant)?;
        if held.token.data_id != resp.data_id || !held.used {
            return Err(Reason::BadGrant);
        }
        self.applicant
            .retrieved
            .insert(resp.grant_id, (resp.data_id, resp.plaintext));
        Ok(Vec::new())
    }

    fn on_denial(&mut self, e: &Envelope) -> Result<Vec<Envelope>, Reason> {
        let Payload::Clear(bytes) = &e.payload else {
            return Err(Reason::Malformed);
        };
        let d = Denial::decode(bytes).map_err(|_| Reason::Malformed)?;
        let req = self.applicant.requests.get_mut(&d.request_id).ok_or(Reason::NoPending)?;
        if req.status != RequestStatus::Pending {
            return Err(Reason::Duplicate);
        }
        req.status = RequestStatus::Denied(d.reason);
        Ok(Vec::new())
    }

    fn on_error(&mut self, e: &Envelope, now: Tick) -> Result<Vec<Envelope>, Reason> {
        let Payload::Clear(bytes) = &e.payload else {
            return Err(Reason::Malformed);
        };
        let notice = ErrorNotice::decode(bytes).map_err(|_| Reason::Malformed)?;
        if notice.reason == Reason::NoPubKeyNotice {
            if let Some(u) = self
                .owner
                .uploads
                .iter_mut()
                .find(|u| u.last_digest == Some(notice.refers_to))
            {
                if u.retries < UPLOAD_MAX_RETRIES {
                    u.retries += 1;
                    u.retry_at = Some(now + UPLOAD_RETRY_DELAY);
                }
            }
        }
        self.applicant.errors.push(notice);
        Ok(Vec::new())
    }
}

impl Node for User {
    fn id(&self) -> &PrincipalId {
        &self.config.id
    }

    fn handle(&mut self, e: &Envelope, now: Tick) -> Outcome {
        if let Err(reason) = authenticate_envelope(e, &self.config.id, &self.directory, &mut self.replay, now) {
            return Outcome::rejected(reason);
        }
        let result = match e.msg_type {
            MsgType::DataPubKeyNotice => self.on_notice(e, now),
            MsgType::OwnerApprovalRequest => self.on_approval_request(e, now),
            MsgType::GrantIssue => self.on_grant(e, now),
            MsgType::DataResponse => self.on_response(e),
            MsgType::Denial => self.on_denial(e),
            MsgType::Error => self.on_error(e, now),
            _ => Err(Reason::UnexpectedMessage),
        };
        match result {
            Ok(out) => Outcome::accepted(out),
            Err(reason) => Outcome::rejected(reason),
        }
    }

    fn on_tick(&mut self, now: Tick) -> Vec<Envelope> {
        self.replay.prune(now);
        let due: Vec<usize> = (0..self.owner.uploads.len())
            .filter(|&i| self.owner.uploads[i].retry_at.is_some_and(|t| t <= now))
            .collect();
        let mut out = Vec::new();
        for i in due {
            self.owner.uploads[i].retry_at = None;
            let (data_id, plaintext) = (self.owner.uploads[i].data_id.clone(), self.owner.uploads[i].plaintext.clone());
            if let Ok(up) = self.upload_envelope(&data_id, &plaintext, now) {
                self.owner.uploads[i].last_digest = Some(up.digest());
                out.push(up);
            }
        }
        out
    }
}
