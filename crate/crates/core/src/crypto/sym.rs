use aes_gcm::aead::{AeadInPlace, KeyInit};
use aes_gcm::{Aes256Gcm, Nonce, Tag};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::keys::SymmetricKey;
use super::CryptoError;

/// AES-256-GCM output. `aad_hash` is the SHA-256 of the associated data the
/// ciphertext was bound to; the associated data itself travels separately.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SymCiphertext {
    pub nonce_iv: [u8; 12],
    pub body: Vec<u8>,
    pub auth_tag: [u8; 16],
    pub aad_hash: [u8; 32],
}

#[cfg(test)]
thread_local! {
    // A deterministic replay may re-encrypt the same message under the same
    // key and nonce; only a different message under a used pair is reuse.
    static ISSUED_NONCES: std::cell::RefCell<std::collections::HashMap<(super::KeyId, [u8; 12]), [u8; 32]>> =
        Default::default();
}

pub fn sym_encrypt(
    key: &SymmetricKey,
    plaintext: &[u8],
    aad: &[u8],
) -> Result<SymCiphertext, CryptoError> {
    let nonce_iv = key.next_nonce()?;
    #[cfg(test)]
    ISSUED_NONCES.with(|seen| {
        let msg: [u8; 32] = Sha256::new().chain_update(plaintext).chain_update(aad).finalize().into();
        let prev = *seen.borrow_mut().entry((key.key_id().clone(), nonce_iv)).or_insert(msg);
        assert_eq!(prev, msg, "nonce reused under {}", key.key_id());
    });
    let cipher = Aes256Gcm::new_from_slice(key.expose()).expect("32-byte key");
    let mut body = plaintext.to_vec();
    let tag = cipher
        .encrypt_in_place_detached(Nonce::from_slice(&nonce_iv), aad, &mut body)
        .map_err(|_| CryptoError::AuthFailure)?;
    Ok(SymCiphertext {
        nonce_iv,
        body,
        auth_tag: tag.into(),
        aad_hash: Sha256::digest(aad).into(),
    })
}

/// Returns the plaintext or a single `AuthFailure`; wrong key, wrong
/// associated data and any modification are indistinguishable.
pub fn sym_decrypt(key: &SymmetricKey, ct: &SymCiphertext, aad: &[u8]) -> Result<Vec<u8>, CryptoError> {
    sym_decrypt_raw(key.expose(), ct, aad)
}

pub(crate) fn sym_decrypt_raw(key: &[u8; 32], ct: &SymCiphertext, aad: &[u8]) -> Result<Vec<u8>, CryptoError> {
    let aad_hash: [u8; 32] = Sha256::digest(aad).into();
    if aad_hash != ct.aad_hash {
        return Err(CryptoError::AuthFailure);
    }
    let cipher = Aes256Gcm::new_from_slice(key).expect("32-byte key");
    let mut body = ct.body.clone();
    cipher
        .decrypt_in_place_detached(
            Nonce::from_slice(&ct.nonce_iv),
            aad,
            &mut body,
            Tag::from_slice(&ct.auth_tag),
        )
        .map_err(|_| CryptoError::AuthFailure)?;
    Ok(body)
}
