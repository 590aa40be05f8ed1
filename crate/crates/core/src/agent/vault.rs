//! Encrypted single-file vault for Agent state.
//!
//! Layout: a JSON header line, then one JSON line holding an AES-256-GCM
//! ciphertext whose associated data is the header line. The plaintext is a
//! list of JSON records, one per line, each tagged with `kind`.

use serde::{Deserialize, Serialize};
use thiserror::Error;
use zeroize::Zeroizing;

use crate::crypto::{sym_decrypt, sym_encrypt, CryptoError, Entropy, SymCiphertext, SymmetricKey};
use crate::protocol::transcript::{b64, unb64};
use crate::protocol::{DataClassification, DataId, GrantId, PrincipalId, RequestId, Tick};

pub const VAULT_FORMAT: &str = "dualguard-agent-vault";
pub const VAULT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum VaultError {
    #[error("vault header missing or malformed")]
    Header,
    #[error("unsupported vault version {0}")]
    Version(u32),
    #[error("vault body missing or malformed")]
    Body,
    #[error("vault does not decrypt under this master key")]
    Decrypt,
    #[error("vault record {index}: {msg}")]
    Record { index: usize, msg: String },
    #[error("master key must be 64 hex characters")]
    MasterKey,
    #[error(transparent)]
    Crypto(#[from] CryptoError),
}

/// The Agent master key, supplied through configuration.
pub struct MasterKey(Zeroizing<[u8; 32]>);

impl MasterKey {
    pub fn from_bytes(bytes: [u8; 32]) -> Self {
        MasterKey(Zeroizing::new(bytes))
    }

    pub fn from_hex(s: &str) -> Result<Self, VaultError> {
        let mut out = [0u8; 32];
        hex::decode_to_slice(s.trim(), &mut out).map_err(|_| VaultError::MasterKey)?;
        Ok(Self::from_bytes(out))
    }

    fn key(&self, rng: &mut Entropy) -> Result<SymmetricKey, CryptoError> {
        SymmetricKey::from_bytes(*self.0, rng)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
struct Body {
    nonce_iv: String,
    body: String,
    auth_tag: String,
    aad_hash: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum VaultRecord {
    Identity {
        id: PrincipalId,
        /// PKCS#8 DER, base64.
        private_key: String,
    },
    User {
        id: PrincipalId,
        /// PKCS#1 DER, base64.
        public_key: String,
    },
    Data {
        data_id: DataId,
        owner_id: PrincipalId,
        classification: DataClassification,
        created_at: Tick,
        private_key: String,
        granted: Vec<GrantId>,
        denied: Vec<RequestId>,
    },
    Pending {
        request_id: RequestId,
        data_id: DataId,
        applicant_id: PrincipalId,
        purpose: String,
        created_at: Tick,
    },
    Grant {
        grant_id: GrantId,
        data_id: DataId,
        applicant_id: PrincipalId,
        request_id: RequestId,
        expiry: Tick,
        one_time: bool,
        expired: bool,
    },
    RequestSeen {
        request_id: RequestId,
    },
    Nonce {
        sender: PrincipalId,
        nonce: String,
        timestamp: Tick,
    },
    Counter {
        next_grant: u64,
    },
}

impl VaultRecord {
    /// Every base64 private key held in this record.
    pub fn private_key_der(&self) -> Option<Zeroizing<Vec<u8>>> {
        match self {
            VaultRecord::Identity { private_key, .. } | VaultRecord::Data { private_key, .. } => {
                unb64(private_key, "private_key").ok().map(Zeroizing::new)
            }
            _ => None,
        }
    }
}

pub fn seal_vault(records: &[VaultRecord], master: &MasterKey, rng: &mut Entropy) -> Result<String, VaultError> {
    let header = serde_json::to_string(&Header {
        format: VAULT_FORMAT.to_owned(),
        version: VAULT_VERSION,
    })
    .expect("header serializes");
    let mut plain = Zeroizing::new(String::new());
    for r in records {
        plain.push_str(&serde_json::to_string(r).expect("record serializes"));
        plain.push('\n');
    }
    let key = master.key(rng)?;
    let ct = sym_encrypt(&key, plain.as_bytes(), header.as_bytes())?;
    let body = serde_json::to_string(&Body {
        nonce_iv: b64(&ct.nonce_iv),
        body: b64(&ct.body),
        auth_tag: b64(&ct.auth_tag),
        aad_hash: b64(&ct.aad_hash),
    })
    .expect("body serializes");
    Ok(format!("{header}\n{body}\n"))
}

pub fn open_vault(text: &str, master: &MasterKey) -> Result<Vec<VaultRecord>, VaultError> {
    let mut lines = text.lines();
    let header_line = lines.next().ok_or(VaultError::Header)?;
    let header: Header = serde_json::from_str(header_line).map_err(|_| VaultError::Header)?;
    if header.format != VAULT_FORMAT {
        return Err(VaultError::Header);
    }
    if header.version != VAULT_VERSION {
        return Err(VaultError::Version(header.version));
    }
    let body: Body = lines
        .next()
        .and_then(|l| serde_json::from_str(l).ok())
        .ok_or(VaultError::Body)?;
    if lines.next().is_some() {
        return Err(VaultError::Body);
    }
    let arr = |s: &str| unb64(s, "vault").map_err(|_| VaultError::Body);
    let ct = SymCiphertext {
        nonce_iv: arr(&body.nonce_iv)?.try_into().map_err(|_| VaultError::Body)?,
        body: arr(&body.body)?,
        auth_tag: arr(&body.auth_tag)?.try_into().map_err(|_| VaultError::Body)?,
        aad_hash: arr(&body.aad_hash)?.try_into().map_err(|_| VaultError::Body)?,
    };
    let key = master.key(&mut Entropy::os())?;
    let plain = Zeroizing::new(sym_decrypt(&key, &ct, header_line.as_bytes()).map_err(|_| VaultError::Decrypt)?);
    let plain = std::str::from_utf8(&plain).map_err(|_| VaultError::Body)?;
    plain
        .lines()
        .enumerate()
        .map(|(index, l)| {
            serde_json::from_str(l).map_err(|e| VaultError::Record {
                index,
                msg: e.to_string(),
            })
        })
        .collect()
}
