use rsa::{Oaep, Pss};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use zeroize::Zeroizing;

use super::entropy::Entropy;
use super::keys::{KeyId, PrivateKey, PublicKey, SymmetricKey, SYMMETRIC_KEY_LEN};
use super::CryptoError;
use crate::codec::CanonicalWriter;

const SIGNATURE_CONTEXT: &str = "dualguard/v1/signature";
pub(crate) const WRAP_LABEL: &str = "dualguard/v1/wrap";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Signature {
    pub signer_key_id: KeyId,
    pub sig_bytes: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WrappedKey {
    pub wrapping_key_id: KeyId,
    pub blob: Vec<u8>,
}

fn signing_digest(msg: &[u8]) -> [u8; 32] {
    let mut w = CanonicalWriter::with_tag(SIGNATURE_CONTEXT);
    w.bytes(msg);
    Sha256::digest(w.finish()).into()
}

/// RSASSA-PSS/SHA-256 over the domain-separated message.
pub fn sign(msg: &[u8], key: &PrivateKey, rng: &mut Entropy) -> Result<Signature, CryptoError> {
    let digest = signing_digest(msg);
    let sig_bytes = key
        .rsa()
        .sign_with_rng(rng, Pss::new::<Sha256>(), &digest)
        .map_err(|_| CryptoError::Entropy)?;
    Ok(Signature {
        signer_key_id: key.key_id().clone(),
        sig_bytes,
    })
}

/// `false` for any mismatch, including a signature that names a different
/// signing key or is not even well formed.
pub fn verify(msg: &[u8], sig: &Signature, key: &PublicKey) -> bool {
    if &sig.signer_key_id != key.key_id() || sig.sig_bytes.len() != key.size() {
        return false;
    }
    key.rsa()
        .verify(Pss::new::<Sha256>(), &signing_digest(msg), &sig.sig_bytes)
        .is_ok()
}

/// RSAES-OAEP/SHA-256 under a caller-chosen label.
pub fn encrypt_labeled(
    msg: &[u8],
    key: &PublicKey,
    label: &str,
    rng: &mut Entropy,
) -> Result<Vec<u8>, CryptoError> {
    key.rsa()
        .encrypt(rng, Oaep::new_with_label::<Sha256, _>(label), msg)
        .map_err(|_| CryptoError::MalformedPublicKey)
}

/// Counterpart of [`encrypt_labeled`]. Failure carries no detail.
pub fn decrypt_labeled(blob: &[u8], key: &PrivateKey, label: &str) -> Result<Zeroizing<Vec<u8>>, CryptoError> {
    if blob.len() != key.public_key().size() {
        return Err(CryptoError::Unwrap);
    }
    key.rsa()
        .decrypt(Oaep::new_with_label::<Sha256, _>(label), blob)
        .map(Zeroizing::new)
        .map_err(|_| CryptoError::Unwrap)
}

/// Wraps exactly one 32-byte secret. Anything else is refused so that bulk
/// material has to go through a sealed payload.
pub fn wrap_secret(secret: &[u8], key: &PublicKey, rng: &mut Entropy) -> Result<WrappedKey, CryptoError> {
    if secret.len() != SYMMETRIC_KEY_LEN {
        return Err(CryptoError::WrapCapacity(secret.len()));
    }
    Ok(WrappedKey {
        wrapping_key_id: key.key_id().clone(),
        blob: encrypt_labeled(secret, key, WRAP_LABEL, rng)?,
    })
}

pub fn wrap_key(k: &SymmetricKey, key: &PublicKey, rng: &mut Entropy) -> Result<WrappedKey, CryptoError> {
    wrap_secret(k.expose(), key, rng)
}

pub(crate) fn unwrap_raw(w: &WrappedKey, key: &PrivateKey) -> Result<Zeroizing<[u8; 32]>, CryptoError> {
    let plain = decrypt_labeled(&w.blob, key, WRAP_LABEL)?;
    let bytes: [u8; 32] = plain.as_slice().try_into().map_err(|_| CryptoError::Unwrap)?;
    Ok(Zeroizing::new(bytes))
}

pub fn unwrap_key(w: &WrappedKey, key: &PrivateKey, rng: &mut Entropy) -> Result<SymmetricKey, CryptoError> {
    let raw = unwrap_raw(w, key)?;
    SymmetricKey::from_bytes(*raw, rng)
}
