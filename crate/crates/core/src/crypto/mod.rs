//! Cryptographic operations shared by every principal.
//!
//! Main layer: AES-256-GCM under a per-object [`SymmetricKey`]. Secondary
//! layer: RSA-2048, OAEP for key wrapping and PSS for signatures. The
//! primitives come from the RustCrypto `aes-gcm` and `rsa` crates; this module
//! owns key lifecycle, domain separation and the sealed transport format.

mod asym;
mod entropy;
mod keys;
mod seal;
mod sym;

use thiserror::Error;

pub use asym::{
    decrypt_labeled, encrypt_labeled, sign, unwrap_key, verify, wrap_key, wrap_secret, Signature,
    WrappedKey,
};
pub use entropy::Entropy;
pub use keys::{
    gen_asymmetric_keypair, gen_symmetric_key, KeyId, KeyOwner, KeyPair, KeySource, PrivateKey,
    PublicKey, SymmetricKey, KEY_CACHE_ENV, MODULUS_BITS, SYMMETRIC_KEY_LEN,
};
pub use seal::{open, seal, unseal_unverified, SealedPayload};
pub use sym::{sym_decrypt, sym_encrypt, SymCiphertext};

pub(crate) use asym::WRAP_LABEL;
pub(crate) use seal::split_inner;
pub(crate) use sym::sym_decrypt_raw;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CryptoError {
    #[error("entropy source failure")]
    Entropy,
    #[error("key generation failed")]
    KeyGen,
    #[error("authentication failed")]
    AuthFailure,
    #[error("nonce space of key {0} exhausted; rotate the key")]
    NonceExhausted(KeyId),
    #[error("key wrap takes exactly 32 bytes, got {0}")]
    WrapCapacity(usize),
    #[error("key unwrap failed")]
    Unwrap,
    #[error("malformed public key")]
    MalformedPublicKey,
    #[error("malformed private key")]
    MalformedPrivateKey,
    #[error("sealed payload signature invalid")]
    SealSignature,
    #[error("sealed payload could not be opened")]
    SealConfidentiality,
}

#[cfg(test)]
pub(crate) mod test_keys {
    use std::sync::atomic::{AtomicU64, Ordering};

    use super::*;

    pub(crate) fn pair(label: &str) -> KeyPair {
        KeySource::Deterministic { key_seed: 0x5eed }
            .keypair(label, KeyOwner::User)
            .unwrap()
    }

    /// A fresh deterministic stream per call, so no two tests share nonces.
    pub(crate) fn rng() -> Entropy {
        static NEXT: AtomicU64 = AtomicU64::new(0);
        Entropy::derive(NEXT.fetch_add(1, Ordering::Relaxed), "unit-tests")
    }
}
