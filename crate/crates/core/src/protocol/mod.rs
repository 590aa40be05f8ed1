//! Wire messages and the rules for accepting them.

mod envelope;
mod ids;
mod messages;
mod replay;
pub mod transcript;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::CodecError;
use crate::crypto::{CryptoError, PublicKey};

pub use envelope::{
    authenticate_envelope, canonical_bytes, make_envelope, open_payload, seal_context, Envelope,
    Payload,
};
pub use messages::{
    AccessRequest, DataPubKeyNotice, DataResponse, DataUpload, Decision, Denial, ErrorNotice,
    GrantIssue, GrantToken, OwnerApprovalRequest, OwnerVerification, RegisterData, CloudAccess,
    BINDING_LABEL,
};
pub use ids::{DataId, GrantId, PrincipalId, RequestId};
pub use replay::{ReplayCache, DEFAULT_WINDOW};

/// Logical clock value advanced by the scheduler.
pub type Tick = u64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MsgType {
    RegisterData,
    DataPubKeyNotice,
    DataUpload,
    AccessRequest,
    OwnerApprovalRequest,
    OwnerVerification,
    GrantIssue,
    CloudAccess,
    DataResponse,
    Denial,
    Error,
}

impl MsgType {
    pub const ALL: [MsgType; 11] = [
        MsgType::RegisterData,
        MsgType::DataPubKeyNotice,
        MsgType::DataUpload,
        MsgType::AccessRequest,
        MsgType::OwnerApprovalRequest,
        MsgType::OwnerVerification,
        MsgType::GrantIssue,
        MsgType::CloudAccess,
        MsgType::DataResponse,
        MsgType::Denial,
        MsgType::Error,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MsgType::RegisterData => "RegisterData",
            MsgType::DataPubKeyNotice => "DataPubKeyNotice",
            MsgType::DataUpload => "DataUpload",
            MsgType::AccessRequest => "AccessRequest",
            MsgType::OwnerApprovalRequest => "OwnerApprovalRequest",
            MsgType::OwnerVerification => "OwnerVerification",
            MsgType::GrantIssue => "GrantIssue",
            MsgType::CloudAccess => "CloudAccess",
            MsgType::DataResponse => "DataResponse",
            MsgType::Denial => "Denial",
            MsgType::Error => "Error",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.as_str() == s)
    }

    /// Everything except denials, errors and public-key notices is sealed to
    /// its recipient.
    pub fn is_sealed(self) -> bool {
        !matches!(
            self,
            MsgType::Denial | MsgType::Error | MsgType::DataPubKeyNotice
        )
    }
}

impl fmt::Display for MsgType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataClassification {
    Public,
    Private,
    Shared,
}

impl DataClassification {
    pub const ALL: [DataClassification; 3] = [
        DataClassification::Public,
        DataClassification::Private,
        DataClassification::Shared,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DataClassification::Public => "public",
            DataClassification::Private => "private",
            DataClassification::Shared => "shared",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.as_str() == s)
    }
}

impl fmt::Display for DataClassification {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Why a principal refused an envelope. The first five are produced by
/// [`authenticate_envelope`]; the rest by message handlers after it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reason {
    UnknownSender,
    WrongRecipient,
    BadSignature,
    ReplayedNonce,
    StaleTimestamp,
    Malformed,
    UnexpectedMessage,
    SealFailed,
    BadDataBinding,
    NoPending,
    BadGrant,
    UnwrapFailed,
    DecryptFailed,
    UnknownData,
    NoPubKeyNotice,
    Duplicate,
    NotOwner,
}

impl Reason {
    pub fn as_str(self) -> &'static str {
        match self {
            Reason::UnknownSender => "unknown_sender",
            Reason::WrongRecipient => "wrong_recipient",
            Reason::BadSignature => "bad_signature",
            Reason::ReplayedNonce => "replayed_nonce",
            Reason::StaleTimestamp => "stale_timestamp",
            Reason::Malformed => "malformed",
            Reason::UnexpectedMessage => "unexpected_message",
            Reason::SealFailed => "seal_failed",
            Reason::BadDataBinding => "bad_data_binding",
            Reason::NoPending => "no_pending",
            Reason::BadGrant => "bad_grant",
            Reason::UnwrapFailed => "unwrap_failed",
            Reason::DecryptFailed => "decrypt_failed",
            Reason::UnknownData => "unknown_data",
            Reason::NoPubKeyNotice => "no_pub_key_notice",
            Reason::Duplicate => "duplicate",
            Reason::NotOwner => "not_owner",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        use Reason::*;
        [
            UnknownSender,
            WrongRecipient,
            BadSignature,
            ReplayedNonce,
            StaleTimestamp,
            Malformed,
            UnexpectedMessage,
            SealFailed,
            BadDataBinding,
            NoPending,
            BadGrant,
            UnwrapFailed,
            DecryptFailed,
            UnknownData,
            NoPubKeyNotice,
            Duplicate,
            NotOwner,
        ]
        .into_iter()
        .find(|r| r.as_str() == s)
    }
}

impl fmt::Display for Reason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("envelope field `{0}` is empty")]
    EmptyField(&'static str),
    #[error("{0} payloads must be sealed but no recipient key is known")]
    MissingRecipientKey(MsgType),
    #[error("{0} payload kind does not match its message type")]
    PayloadKind(MsgType),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
    #[error(transparent)]
    Codec(#[from] CodecError),
}

/// Public keys of the principals one party knows about, provisioned at
/// enrollment.
#[derive(Clone, Debug, Default)]
pub struct Directory {
    keys: BTreeMap<PrincipalId, PublicKey>,
}

impl Directory {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns `false` and leaves the existing binding alone if `id` is taken.
    pub fn insert(&mut self, id: PrincipalId, key: PublicKey) -> bool {
        if self.keys.contains_key(&id) {
            return false;
        }
        self.keys.insert(id, key);
        true
    }

    pub fn get(&self, id: &PrincipalId) -> Option<&PublicKey> {
        self.keys.get(id)
    }

    pub fn contains(&self, id: &PrincipalId) -> bool {
        self.keys.contains_key(id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&PrincipalId, &PublicKey)> {
        self.keys.iter()
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }
}
