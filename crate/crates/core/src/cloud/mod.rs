//! The cloud server: keeps data encrypted under the main (symmetric) layer
//! with the main key wrapped under the data public key, and runs the
//! decryption chain when an applicant redeems a grant.

mod store;

use std::collections::BTreeMap;

use thiserror::Error;
use zeroize::Zeroizing;

use crate::codec::CanonicalWriter;
use crate::crypto::{
    gen_symmetric_key, sym_decrypt, sym_encrypt, unwrap_key, verify, wrap_key, CryptoError, Entropy,
    KeyPair, PrivateKey, PublicKey, SymCiphertext, WrappedKey,
};
use crate::node::{Node, Outcome, RunMode};
use crate::protocol::{
    authenticate_envelope, make_envelope, open_payload, CloudAccess, DataClassification, DataId,
    DataPubKeyNotice, DataResponse, DataUpload, Directory, Envelope, ErrorNotice, GrantId, MsgType,
    Payload, PrincipalId, ProtocolError, Reason, ReplayCache, Tick, DEFAULT_WINDOW,
};

pub use store::{CloudStore, StoreError, StoreRecord, STORE_FORMAT, STORE_VERSION};

#[derive(Debug, Error)]
pub enum CloudError {
    #[error("no public-key notice for data {0}")]
    NoPubKeyNotice(DataId),
    #[error("{0} does not own data {1}")]
    NotOwner(PrincipalId, DataId),
    #[error("data {0} is already stored")]
    Duplicate(DataId),
    #[error("seeded randomness is not allowed in production mode")]
    SeededInProduction,
    #[error(transparent)]
    Crypto(#[from] CryptoError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

impl CloudError {
    fn reason(&self) -> Reason {
        match self {
            CloudError::NoPubKeyNotice(_) => Reason::NoPubKeyNotice,
            CloudError::NotOwner(..) => Reason::NotOwner,
            CloudError::Duplicate(_) => Reason::Duplicate,
            _ => Reason::Malformed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DataRecord {
    pub data_id: DataId,
    pub owner_id: PrincipalId,
    pub classification: DataClassification,
    pub ciphertext: SymCiphertext,
    pub wrapped_main_key: WrappedKey,
    pub data_public_key: PublicKey,
}

/// Associated data binding a ciphertext to its record.
pub fn record_aad(data_id: &DataId, owner_id: &PrincipalId, classification: DataClassification) -> Vec<u8> {
    let mut w = CanonicalWriter::with_tag("dualguard/v1/record");
    w.str(data_id.as_str())
        .str(owner_id.as_str())
        .str(classification.as_str());
    w.finish()
}

/// Work done on behalf of authenticated envelopes; used to check that
/// rejected envelopes never reach key material.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CloudCounters {
    /// Sealed payloads opened with the server's own key.
    pub transport_opens: u64,
    /// Main keys unwrapped with a data private key.
    pub main_key_unwraps: u64,
    pub data_decryptions: u64,
    pub redemptions: u64,
}

#[derive(Clone, Debug)]
pub struct CloudConfig {
    pub id: PrincipalId,
    pub agent_id: PrincipalId,
    pub mode: RunMode,
    pub window: Tick,
}

impl Default for CloudConfig {
    fn default() -> Self {
        CloudConfig {
            id: PrincipalId::cloud(),
            agent_id: PrincipalId::agent(),
            mode: RunMode::Production,
            window: DEFAULT_WINDOW,
        }
    }
}

#[derive(Clone, Debug)]
pub struct CloudServer {
    config: CloudConfig,
    identity: KeyPair,
    rng: Entropy,
    directory: Directory,
    notices: BTreeMap<DataId, (PrincipalId, DataClassification, PublicKey)>,
    records: BTreeMap<DataId, DataRecord>,
    redeemed: BTreeMap<GrantId, Tick>,
    replay: ReplayCache,
    counters: CloudCounters,
}

impl CloudServer {
    pub fn new(config: CloudConfig, identity: KeyPair, rng: Entropy) -> Result<Self, CloudError> {
        if config.mode == RunMode::Production && rng.is_deterministic() {
            return Err(CloudError::SeededInProduction);
        }
        let replay = ReplayCache::new(config.window);
        Ok(CloudServer {
            config,
            identity,
            rng,
            directory: Directory::new(),
            notices: BTreeMap::new(),
            records: BTreeMap::new(),
            redeemed: BTreeMap::new(),
            replay,
            counters: CloudCounters::default(),
        })
    }

    pub fn public_key(&self) -> &PublicKey {
        &self.identity.public
    }

    /// Makes `id`'s signatures verifiable here. Returns false on a duplicate.
    pub fn register_principal(&mut self, id: PrincipalId, key: PublicKey) -> bool {
        self.directory.insert(id, key)
    }

    pub fn counters(&self) -> CloudCounters {
        self.counters
    }

    pub fn record(&self, data_id: &DataId) -> Option<&DataRecord> {
        self.records.get(data_id)
    }

    pub fn records(&self) -> impl Iterator<Item = &DataRecord> {
        self.records.values()
    }

    pub fn has_notice(&self, data_id: &DataId) -> bool {
        self.notices.contains_key(data_id)
    }

    pub fn is_redeemed(&self, grant_id: &GrantId) -> bool {
        self.redeemed.contains_key(grant_id)
    }

    /// Encrypts `plaintext` under a fresh main key, wraps the main key under
    /// the data public key received from the Agent, and keeps only the
    /// record. The main key is zeroized when it goes out of scope here.
    pub fn ingest_data(&mut self, owner_id: &PrincipalId, data_id: &DataId, plaintext: &[u8]) -> Result<(), CloudError> {
        let (owner, classification, key) = self
            .notices
            .get(data_id)
            .ok_or_else(|| CloudError::NoPubKeyNotice(data_id.clone()))?
            .clone();
        if &owner != owner_id {
            return Err(CloudError::NotOwner(owner_id.clone(), data_id.clone()));
        }
        if self.records.contains_key(data_id) {
            return Err(CloudError::Duplicate(data_id.clone()));
        }
        let main_key = gen_symmetric_key(&mut self.rng)?;
        let ciphertext = sym_encrypt(&main_key, plaintext, &record_aad(data_id, &owner, classification))?;
        let wrapped_main_key = wrap_key(&main_key, &key, &mut self.rng)?;
        drop(main_key);
        self.records.insert(
            data_id.clone(),
            DataRecord {
                data_id: data_id.clone(),
                owner_id: owner,
                classification,
                ciphertext,
                wrapped_main_key,
                data_public_key: key,
            },
        );
        Ok(())
    }

    pub fn store(&self) -> CloudStore {
        CloudStore {
            notices: self
                .notices
                .iter()
                .map(|(d, (o, c, k))| (d.clone(), o.clone(), *c, k.clone()))
                .collect(),
            records: self.records.values().cloned().collect(),
            redeemed: self.redeemed.iter().map(|(g, t)| (g.clone(), *t)).collect(),
        }
    }

    pub fn persist(&self) -> String {
        self.store().to_text()
    }

    /// Replaces the persisted part of the state with the contents of `text`.
    pub fn load(&mut self, text: &str) -> Result<(), CloudError> {
        let store = CloudStore::from_text(text)?;
        self.notices = store
            .notices
            .into_iter()
            .map(|(d, o, c, k)| (d, (o, c, k)))
            .collect();
        self.records = store
            .records
            .into_iter()
            .map(|r| (r.data_id.clone(), r))
            .collect();
        self.redeemed = store.redeemed.into_iter().collect();
        Ok(())
    }

    /// Drops redemption entries whose grants can no longer validate anyway,
    /// and prunes the replay cache.
    pub fn gc(&mut self, now: Tick) {
        self.redeemed.retain(|_, expiry| *expiry >= now);
        self.replay.prune(now);
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

    fn open(&mut self, e: &Envelope) -> Result<Zeroizing<Vec<u8>>, Reason> {
        let sender_key = self.directory.get(&e.sender_id).ok_or(Reason::UnknownSender)?.clone();
        self.counters.transport_opens += 1;
        open_payload(e, &self.identity.private, &sender_key, &mut self.rng)
            .map(Zeroizing::new)
            .map_err(|_| Reason::SealFailed)
    }

    fn on_notice(&mut self, e: &Envelope) -> Result<Vec<Envelope>, Reason> {
        if e.sender_id != self.config.agent_id {
            return Err(Reason::UnexpectedMessage);
        }
        let n = DataPubKeyNotice::decode(clear_bytes(e)?).map_err(|_| Reason::Malformed)?;
        if self.notices.contains_key(&n.data_id) {
            return Err(Reason::Duplicate);
        }
        self.notices
            .insert(n.data_id, (n.owner_id, n.classification, n.data_public_key));
        Ok(Vec::new())
    }

    fn on_upload(&mut self, e: &Envelope) -> Result<Vec<Envelope>, Reason> {
        let plain = self.open(e)?;
        let up = DataUpload::decode(&plain).map_err(|_| Reason::Malformed)?;
        self.ingest_data(&e.sender_id, &up.data_id, &up.plaintext)
            .map_err(|err| err.reason())?;
        Ok(Vec::new())
    }

    fn on_access(&mut self, e: &Envelope, now: Tick) -> Result<Vec<Envelope>, Reason> {
        let plain = self.open(e)?;
        let access = CloudAccess::decode(&plain).map_err(|_| Reason::Malformed)?;
        let grant = &access.grant;
        let agent_key = self.directory.get(&self.config.agent_id).ok_or(Reason::BadGrant)?;
        if !verify(&grant.signed_bytes(), &grant.agent_signature, agent_key)
            || grant.applicant_id != e.sender_id
            || !grant.one_time
            || now > grant.expiry
            || self.redeemed.contains_key(&grant.grant_id)
        {
            return Err(Reason::BadGrant);
        }
        let record = self.records.get(&grant.data_id).ok_or(Reason::UnknownData)?;
        let data_key = PrivateKey::from_der(&access.data_private_key).map_err(|_| Reason::UnwrapFailed)?;
        self.counters.main_key_unwraps += 1;
        let main_key = unwrap_key(&record.wrapped_main_key, &data_key, &mut self.rng).map_err(|_| Reason::UnwrapFailed)?;
        drop(data_key);
        self.counters.data_decryptions += 1;
        let plaintext = Zeroizing::new(
            sym_decrypt(
                &main_key,
                &record.ciphertext,
                &record_aad(&record.data_id, &record.owner_id, record.classification),
            )
            .map_err(|_| Reason::DecryptFailed)?,
        );
        drop(main_key);
        let response = DataResponse {
            data_id: grant.data_id.clone(),
            grant_id: grant.grant_id.clone(),
            plaintext,
        };
        let out = self
            .envelope(MsgType::DataResponse, &e.sender_id, &response.encode(), now)
            .map_err(|_| Reason::SealFailed)?;
        self.redeemed.insert(grant.grant_id.clone(), grant.expiry);
        self.counters.redemptions += 1;
        Ok(vec![out])
    }

    fn error_reply(&mut self, e: &Envelope, reason: Reason, now: Tick) -> Option<Envelope> {
        let notice = ErrorNotice {
            reason,
            subject: e.msg_type.as_str().to_owned(),
            refers_to: e.digest(),
        };
        self.envelope(MsgType::Error, &e.sender_id, &notice.encode(), now).ok()
    }
}

fn clear_bytes(e: &Envelope) -> Result<&[u8], Reason> {
    match &e.payload {
        Payload::Clear(b) if !e.msg_type.is_sealed() => Ok(b),
        _ => Err(Reason::Malformed),
    }
}

impl Node for CloudServer {
    fn id(&self) -> &PrincipalId {
        &self.config.id
    }

    fn handle(&mut self, e: &Envelope, now: Tick) -> Outcome {
        if let Err(reason) = authenticate_envelope(e, &self.config.id, &self.directory, &mut self.replay, now) {
            return Outcome::rejected(reason);
        }
        let result = match e.msg_type {
            MsgType::DataPubKeyNotice => self.on_notice(e),
            MsgType::DataUpload => self.on_upload(e),
            MsgType::CloudAccess => self.on_access(e, now),
            _ => Err(Reason::UnexpectedMessage),
        };
        match result {
            Ok(out) => Outcome::accepted(out),
            Err(reason) if e.sender_id == self.config.agent_id => Outcome::rejected(reason),
            Err(reason) => {
                let reply = self.error_reply(e, reason, now);
                Outcome::rejected_with_reply(reason, reply)
            }
        }
    }

    fn on_tick(&mut self, now: Tick) -> Vec<Envelope> {
        self.gc(now);
        Vec::new()
    }
}
