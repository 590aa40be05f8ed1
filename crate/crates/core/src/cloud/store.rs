//! Persisted cloud store: a versioned header line followed by one JSON record
//! per line. Data records carry only ciphertext, the wrapped main key and the
//! data public key.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::DataRecord;
use crate::crypto::{KeyId, PublicKey, SymCiphertext, WrappedKey};
use crate::protocol::transcript::{b64, unb64, unb64_array, RecordError};
use crate::protocol::{DataClassification, DataId, GrantId, PrincipalId, Tick};

pub const STORE_FORMAT: &str = "dualguard-cloud-store";
pub const STORE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("line 1: missing or malformed store header")]
    Header,
    #[error("line 1: unsupported store version {0}")]
    Version(u32),
    #[error("line {line}: {msg}")]
    Record { line: usize, msg: String },
    #[error("store ends without a newline (truncated)")]
    Truncated,
    #[error("header announces {expected} records, found {found}")]
    Count { expected: usize, found: usize },
}

impl StoreError {
    /// 1-based line of the first bad record, when there is one.
    pub fn line(&self) -> Option<usize> {
        match self {
            StoreError::Header | StoreError::Version(_) => Some(1),
            StoreError::Record { line, .. } => Some(*line),
            StoreError::Count { found, .. } => Some(found + 2),
            StoreError::Truncated => None,
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
    version: u32,
    records: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StoreRecord {
    Notice {
        data_id: DataId,
        owner_id: PrincipalId,
        classification: DataClassification,
        data_public_key: String,
    },
    Data {
        data_id: DataId,
        owner_id: PrincipalId,
        classification: DataClassification,
        data_public_key: String,
        wrapping_key_id: String,
        wrapped_main_key: String,
        nonce_iv: String,
        body: String,
        auth_tag: String,
        aad_hash: String,
    },
    Redeemed {
        grant_id: GrantId,
        expiry: Tick,
    },
}

/// Everything the cloud server persists.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CloudStore {
    /// Public keys received from the Agent, with the owner they belong to.
    pub notices: Vec<(DataId, PrincipalId, DataClassification, PublicKey)>,
    pub records: Vec<DataRecord>,
    pub redeemed: Vec<(GrantId, Tick)>,
}

impl From<&DataRecord> for StoreRecord {
    fn from(r: &DataRecord) -> Self {
        StoreRecord::Data {
            data_id: r.data_id.clone(),
            owner_id: r.owner_id.clone(),
            classification: r.classification,
            data_public_key: b64(&r.data_public_key.to_der()),
            wrapping_key_id: r.wrapped_main_key.wrapping_key_id.to_string(),
            wrapped_main_key: b64(&r.wrapped_main_key.blob),
            nonce_iv: b64(&r.ciphertext.nonce_iv),
            body: b64(&r.ciphertext.body),
            auth_tag: b64(&r.ciphertext.auth_tag),
            aad_hash: b64(&r.ciphertext.aad_hash),
        }
    }
}

fn public_key(s: &str) -> Result<PublicKey, String> {
    let der = unb64(s, "data_public_key").map_err(|e| e.to_string())?;
    PublicKey::from_der(&der).map_err(|e| e.to_string())
}

fn data_record(r: StoreRecord) -> Result<DataRecord, String> {
    let StoreRecord::Data {
        data_id,
        owner_id,
        classification,
        data_public_key,
        wrapping_key_id,
        wrapped_main_key,
        nonce_iv,
        body,
        auth_tag,
        aad_hash,
    } = r
    else {
        unreachable!()
    };
    let msg = |e: RecordError| e.to_string();
    Ok(DataRecord {
        data_id,
        owner_id,
        classification,
        ciphertext: SymCiphertext {
            nonce_iv: unb64_array(&nonce_iv, "nonce_iv").map_err(msg)?,
            body: unb64(&body, "body").map_err(msg)?,
            auth_tag: unb64_array(&auth_tag, "auth_tag").map_err(msg)?,
            aad_hash: unb64_array(&aad_hash, "aad_hash").map_err(msg)?,
        },
        wrapped_main_key: WrappedKey {
            wrapping_key_id: KeyId::new(wrapping_key_id),
            blob: unb64(&wrapped_main_key, "wrapped_main_key").map_err(msg)?,
        },
        data_public_key: public_key(&data_public_key)?,
    })
}

impl CloudStore {
    pub fn to_text(&self) -> String {
        let mut lines: Vec<String> = Vec::new();
        for (data_id, owner_id, classification, key) in &self.notices {
            lines.push(json(&StoreRecord::Notice {
                data_id: data_id.clone(),
                owner_id: owner_id.clone(),
                classification: *classification,
                data_public_key: b64(&key.to_der()),
            }));
        }
        for r in &self.records {
            lines.push(json(&StoreRecord::from(r)));
        }
        for (grant_id, expiry) in &self.redeemed {
            lines.push(json(&StoreRecord::Redeemed {
                grant_id: grant_id.clone(),
                expiry: *expiry,
            }));
        }
        let header = Header {
            format: STORE_FORMAT.to_owned(),
            version: STORE_VERSION,
            records: lines.len(),
        };
        let mut out = serde_json::to_string(&header).expect("header serializes");
        out.push('\n');
        for l in lines {
            out.push_str(&l);
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, StoreError> {
        let body = text.strip_suffix('\n').ok_or(StoreError::Truncated)?;
        let mut lines = body.split('\n');
        let header: Header = lines
            .next()
            .and_then(|l| serde_json::from_str(l).ok())
            .ok_or(StoreError::Header)?;
        if header.format != STORE_FORMAT {
            return Err(StoreError::Header);
        }
        if header.version != STORE_VERSION {
            return Err(StoreError::Version(header.version));
        }
        let mut store = CloudStore::default();
        let mut found = 0;
        for (i, l) in lines.enumerate() {
            let line = i + 2;
            let bad = |msg: String| StoreError::Record { line, msg };
            let rec: StoreRecord = serde_json::from_str(l).map_err(|e| bad(e.to_string()))?;
            match rec {
                StoreRecord::Notice {
                    data_id,
                    owner_id,
                    classification,
                    data_public_key,
                } => store
                    .notices
                    .push((data_id, owner_id, classification, public_key(&data_public_key).map_err(bad)?)),
                r @ StoreRecord::Data { .. } => store.records.push(data_record(r).map_err(bad)?),
                StoreRecord::Redeemed { grant_id, expiry } => store.redeemed.push((grant_id, expiry)),
            }
            found += 1;
        }
        if found != header.records {
            return Err(StoreError::Count {
                expected: header.records,
                found,
            });
        }
        Ok(store)
    }
}

fn json(r: &StoreRecord) -> String {
    serde_json::to_string(r).expect("record serializes")
}
