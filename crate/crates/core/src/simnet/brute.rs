//! Adversary decryption oracle.
//!
//! Tries every key the adversary holds or can derive against every
//! ciphertext it holds, feeding anything recovered (wrapped keys, private
//! keys carried in grants, binding layers) back in until nothing new turns
//! up. Symmetric candidates also include values derived from public keys, so
//! a design that keyed the main layer off public material would be caught.

use std::collections::{HashMap, HashSet};

use sha2::{Digest, Sha256};
use zeroize::Zeroizing;

use super::AdversaryState;
use crate::cloud::record_aad;
use crate::crypto::{decrypt_labeled, split_inner, sym_decrypt_raw, KeyId, PrivateKey, SymCiphertext, WRAP_LABEL};
use crate::protocol::{CloudAccess, DataId, DataResponse, DataUpload, GrantIssue, MsgType, OwnerVerification, Payload, BINDING_LABEL};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SuccessKind {
    /// A wrapped key opened.
    Unwrap,
    /// An owner binding layer opened.
    BindingOpen,
    /// A symmetric ciphertext opened.
    Decrypt,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Success {
    pub kind: SuccessKind,
    /// Where the ciphertext came from.
    pub source: String,
    /// Which key opened it.
    pub key: String,
    /// Whether the recovered plaintext is (or contains) stored data.
    pub data_bearing: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Recovered {
    pub source: String,
    pub data_id: DataId,
    pub plaintext: Vec<u8>,
}

#[derive(Clone, Debug, Default)]
pub struct TryReport {
    pub attempts: u64,
    pub successes: Vec<Success>,
    pub recovered: Vec<Recovered>,
}

impl TryReport {
    pub fn data_bearing(&self) -> usize {
        self.successes.iter().filter(|s| s.data_bearing).count()
    }
}

type RsaMemo = HashMap<(KeyId, [u8; 32], &'static str), Option<Zeroizing<Vec<u8>>>>;

/// Memoizes RSA attempts, which dominate the cost, across calls.
#[derive(Default)]
pub struct TryCache {
    rsa: RsaMemo,
}

impl TryCache {
    fn decrypt(&mut self, blob: &[u8], key: &PrivateKey, label: &'static str) -> Option<Zeroizing<Vec<u8>>> {
        let k = (key.key_id().clone(), Sha256::digest(blob).into(), label);
        self.rsa
            .entry(k)
            .or_insert_with(|| decrypt_labeled(blob, key, label).ok())
            .clone()
    }
}

struct Blob {
    source: String,
    bytes: Vec<u8>,
    labels: &'static [&'static str],
}

enum CtKind {
    Sealed(MsgType),
    Record(DataId),
}

struct Ct {
    source: String,
    ct: SymCiphertext,
    aad: Vec<u8>,
    kind: CtKind,
}

const WRAP_ONLY: &[&str] = &[WRAP_LABEL];
const BINDING_ONLY: &[&str] = &[BINDING_LABEL];

pub fn adversary_try_decrypt(state: &AdversaryState, cache: &mut TryCache) -> TryReport {
    let mut report = TryReport::default();
    let mut keys: Vec<(String, PrivateKey)> = Vec::new();
    let mut key_ids = HashSet::new();
    for (origin, k) in &state.private_keys {
        if key_ids.insert(k.key_id().clone()) {
            keys.push((origin.clone(), k.clone()));
        }
    }
    let mut syms: Vec<(String, Zeroizing<[u8; 32]>)> = Vec::new();
    for pk in &state.public_keys {
        let der = pk.to_der();
        syms.push((format!("sha256(public key {})", pk.key_id()), Zeroizing::new(Sha256::digest(&der).into())));
        let mut head = [0u8; 32];
        head.copy_from_slice(&der[..32]);
        syms.push((format!("prefix(public key {})", pk.key_id()), Zeroizing::new(head)));
    }
    let mut blobs = Vec::new();
    let mut cts = Vec::new();
    for (source, e) in &state.envelopes {
        if let Payload::Sealed(sp) = &e.payload {
            blobs.push(Blob {
                source: format!("{source} wrapped key"),
                bytes: sp.ephemeral_wrapped_key.blob.clone(),
                labels: WRAP_ONLY,
            });
            cts.push(Ct {
                source: format!("{source} body"),
                ct: sp.body.clone(),
                aad: sp.aad(&e.context()),
                kind: CtKind::Sealed(e.msg_type),
            });
        }
    }
    for (source, r) in &state.records {
        blobs.push(Blob {
            source: format!("{source} wrapped main key"),
            bytes: r.wrapped_main_key.blob.clone(),
            labels: WRAP_ONLY,
        });
        cts.push(Ct {
            source: format!("{source} ciphertext"),
            ct: r.ciphertext.clone(),
            aad: record_aad(&r.data_id, &r.owner_id, r.classification),
            kind: CtKind::Record(r.data_id.clone()),
        });
    }

    let mut tried_rsa = HashSet::new();
    let mut tried_sym = HashSet::new();
    loop {
        let mut progress = false;
        for ki in 0..keys.len() {
            for bi in 0..blobs.len() {
                if !tried_rsa.insert((ki, bi)) {
                    continue;
                }
                for &label in blobs[bi].labels {
                    report.attempts += 1;
                    let Some(pt) = cache.decrypt(&blobs[bi].bytes, &keys[ki].1, label) else {
                        continue;
                    };
                    progress = true;
                    let binding = label == BINDING_LABEL;
                    report.successes.push(Success {
                        kind: if binding { SuccessKind::BindingOpen } else { SuccessKind::Unwrap },
                        source: blobs[bi].source.clone(),
                        key: keys[ki].0.clone(),
                        data_bearing: false,
                    });
                    if !binding {
                        if let Ok(k) = <[u8; 32]>::try_from(pt.as_slice()) {
                            syms.push((format!("unwrapped from {}", blobs[bi].source), Zeroizing::new(k)));
                        }
                    }
                }
            }
        }
        for si in 0..syms.len() {
            for ci in 0..cts.len() {
                if !tried_sym.insert((si, ci)) {
                    continue;
                }
                report.attempts += 1;
                let c = &cts[ci];
                let Ok(pt) = sym_decrypt_raw(&syms[si].1, &c.ct, &c.aad) else {
                    continue;
                };
                let pt = Zeroizing::new(pt);
                progress = true;
                let mut data_bearing = false;
                match &c.kind {
                    CtKind::Record(data_id) => {
                        data_bearing = true;
                        report.recovered.push(Recovered {
                            source: c.source.clone(),
                            data_id: data_id.clone(),
                            plaintext: pt.to_vec(),
                        });
                    }
                    CtKind::Sealed(t) => {
                        let payload = Zeroizing::new(split_inner(&pt).map(|(_, p)| p).unwrap_or_default());
                        match t {
                            MsgType::GrantIssue | MsgType::CloudAccess => {
                                let der = if *t == MsgType::GrantIssue {
                                    GrantIssue::decode(&payload).ok().map(|g| g.data_private_key)
                                } else {
                                    CloudAccess::decode(&payload).ok().map(|g| g.data_private_key)
                                };
                                if let Some(k) = der.and_then(|d| PrivateKey::from_der(&d).ok()) {
                                    if key_ids.insert(k.key_id().clone()) {
                                        keys.push((format!("data key carried in {}", c.source), k));
                                    }
                                }
                            }
                            MsgType::DataUpload => {
                                if let Ok(u) = DataUpload::decode(&payload) {
                                    data_bearing = true;
                                    report.recovered.push(Recovered {
                                        source: c.source.clone(),
                                        data_id: u.data_id,
                                        plaintext: u.plaintext.to_vec(),
                                    });
                                }
                            }
                            MsgType::DataResponse => {
                                if let Ok(r) = DataResponse::decode(&payload) {
                                    data_bearing = true;
                                    report.recovered.push(Recovered {
                                        source: c.source.clone(),
                                        data_id: r.data_id,
                                        plaintext: r.plaintext.to_vec(),
                                    });
                                }
                            }
                            MsgType::OwnerVerification => {
                                if let Ok(v) = OwnerVerification::decode(&payload) {
                                    blobs.push(Blob {
                                        source: format!("{} binding layer", c.source),
                                        bytes: v.inner_layer,
                                        labels: BINDING_ONLY,
                                    });
                                }
                            }
                            _ => {}
                        }
                    }
                }
                report.successes.push(Success {
                    kind: SuccessKind::Decrypt,
                    source: c.source.clone(),
                    key: syms[si].0.clone(),
                    data_bearing,
                });
            }
        }
        if !progress {
            break;
        }
    }
    report
}
