use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::{Arc, Mutex, OnceLock};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rsa::pkcs1::{DecodeRsaPublicKey, EncodeRsaPublicKey};
use rsa::pkcs8::{DecodePrivateKey, EncodePrivateKey};
use rsa::traits::PublicKeyParts;
use rsa::{RsaPrivateKey, RsaPublicKey};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use zeroize::Zeroizing;

use super::entropy::{derive_seed, Entropy};
use super::CryptoError;

pub const MODULUS_BITS: usize = 2048;
pub const SYMMETRIC_KEY_LEN: usize = 32;

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct KeyId(String);

impl KeyId {
    pub fn new(id: impl Into<String>) -> Self {
        KeyId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for KeyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Role tag of an asymmetric key pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KeyOwner {
    User,
    Data,
}

impl KeyOwner {
    pub fn as_str(self) -> &'static str {
        match self {
            KeyOwner::User => "user",
            KeyOwner::Data => "data",
        }
    }
}

#[derive(Clone, PartialEq, Eq)]
pub struct PublicKey {
    key: RsaPublicKey,
    key_id: KeyId,
}

impl PublicKey {
    fn from_rsa(key: RsaPublicKey) -> Self {
        let der = key
            .to_pkcs1_der()
            .expect("RSA public key always encodes")
            .into_vec();
        let digest = Sha256::digest(&der);
        let key_id = KeyId(format!("rsa:{}", hex::encode(&digest[..8])));
        PublicKey { key, key_id }
    }

    /// PKCS#1 `RSAPublicKey` DER.
    pub fn to_der(&self) -> Vec<u8> {
        self.key
            .to_pkcs1_der()
            .expect("RSA public key always encodes")
            .into_vec()
    }

    pub fn from_der(der: &[u8]) -> Result<Self, CryptoError> {
        let key = RsaPublicKey::from_pkcs1_der(der).map_err(|_| CryptoError::MalformedPublicKey)?;
        if key.size() * 8 != MODULUS_BITS {
            return Err(CryptoError::MalformedPublicKey);
        }
        Ok(Self::from_rsa(key))
    }

    pub fn key_id(&self) -> &KeyId {
        &self.key_id
    }

    pub fn modulus_bits(&self) -> usize {
        self.key.n().bits()
    }

    /// Modulus size in bytes; also the length of every ciphertext and
    /// signature made with this key.
    pub fn size(&self) -> usize {
        self.key.size()
    }

    pub(crate) fn rsa(&self) -> &RsaPublicKey {
        &self.key
    }
}

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_tuple("PublicKey").field(&self.key_id.0).finish()
    }
}

#[derive(Clone)]
pub struct PrivateKey {
    key: RsaPrivateKey,
    key_id: KeyId,
}

impl PrivateKey {
    fn from_rsa(key: RsaPrivateKey) -> Self {
        let key_id = PublicKey::from_rsa(key.to_public_key()).key_id;
        PrivateKey { key, key_id }
    }

    /// PKCS#8 `PrivateKeyInfo` DER.
    pub fn to_der(&self) -> Zeroizing<Vec<u8>> {
        Zeroizing::new(
            self.key
                .to_pkcs8_der()
                .expect("RSA private key always encodes")
                .as_bytes()
                .to_vec(),
        )
    }

    pub fn from_der(der: &[u8]) -> Result<Self, CryptoError> {
        let key = RsaPrivateKey::from_pkcs8_der(der).map_err(|_| CryptoError::MalformedPrivateKey)?;
        if key.size() * 8 != MODULUS_BITS {
            return Err(CryptoError::MalformedPrivateKey);
        }
        Ok(Self::from_rsa(key))
    }

    pub fn key_id(&self) -> &KeyId {
        &self.key_id
    }

    pub fn public_key(&self) -> PublicKey {
        PublicKey::from_rsa(self.key.to_public_key())
    }

    pub(crate) fn rsa(&self) -> &RsaPrivateKey {
        &self.key
    }
}

impl fmt::Debug for PrivateKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_tuple("PrivateKey").field(&self.key_id.0).finish()
    }
}

#[derive(Clone, Debug)]
pub struct KeyPair {
    pub public: PublicKey,
    pub private: PrivateKey,
    pub owner: KeyOwner,
}

impl KeyPair {
    pub fn key_id(&self) -> &KeyId {
        &self.public.key_id
    }

    pub fn from_private_key(private: PrivateKey, owner: KeyOwner) -> Self {
        KeyPair {
            public: private.public_key(),
            private,
            owner,
        }
    }

    fn from_private(key: RsaPrivateKey, owner: KeyOwner) -> Self {
        let private = PrivateKey::from_rsa(key);
        KeyPair {
            public: private.public_key(),
            private,
            owner,
        }
    }

    /// Pairwise consistency check of the provider: the private components are
    /// validated and a sign/verify round trip succeeds.
    pub fn self_test(&self, rng: &mut Entropy) -> Result<(), CryptoError> {
        self.private.key.validate().map_err(|_| CryptoError::KeyGen)?;
        let probe = b"dualguard pairwise consistency";
        let sig = super::sign(probe, &self.private, rng)?;
        if super::verify(probe, &sig, &self.public) {
            Ok(())
        } else {
            Err(CryptoError::KeyGen)
        }
    }
}

/// Fresh 2048-bit RSA key pair.
pub fn gen_asymmetric_keypair(owner: KeyOwner, rng: &mut Entropy) -> Result<KeyPair, CryptoError> {
    let key = RsaPrivateKey::new(rng, MODULUS_BITS).map_err(|_| CryptoError::KeyGen)?;
    Ok(KeyPair::from_private(key, owner))
}

/// Where asymmetric key pairs come from.
///
/// Deterministic key pairs are a pure function of `(key_seed, label)` and are
/// memoized process-wide, since 2048-bit generation dominates simulation cost.
#[derive(Clone, Debug)]
pub enum KeySource {
    Os,
    Deterministic { key_seed: u64 },
}

impl KeySource {
    pub fn is_deterministic(&self) -> bool {
        matches!(self, KeySource::Deterministic { .. })
    }

    pub fn keypair(&self, label: &str, owner: KeyOwner) -> Result<KeyPair, CryptoError> {
        match self {
            KeySource::Os => gen_asymmetric_keypair(owner, &mut Entropy::os()),
            KeySource::Deterministic { key_seed } => {
                let seed = derive_seed(b"dualguard/keypair", *key_seed, label);
                let key = deterministic_key(seed)?;
                Ok(KeyPair::from_private(key, owner))
            }
        }
    }
}

type KeySlot = Arc<OnceLock<Option<RsaPrivateKey>>>;

fn deterministic_key(seed: [u8; 32]) -> Result<RsaPrivateKey, CryptoError> {
    static CACHE: OnceLock<Mutex<HashMap<[u8; 32], KeySlot>>> = OnceLock::new();
    let slot = CACHE
        .get_or_init(Default::default)
        .lock()
        .unwrap()
        .entry(seed)
        .or_default()
        .clone();
    // Generated outside the map lock; concurrent callers for the same seed
    // wait on the slot instead of repeating the work.
    slot.get_or_init(|| {
        let dir = key_cache_dir();
        if let Some(key) = dir.as_deref().and_then(|d| disk_load(d, &seed)) {
            return Some(key);
        }
        let key = RsaPrivateKey::new(&mut ChaCha20Rng::from_seed(seed), MODULUS_BITS).ok()?;
        if let Some(d) = dir.as_deref() {
            disk_store(d, &seed, &key);
        }
        Some(key)
    })
    .clone()
    .ok_or(CryptoError::KeyGen)
}

/// Environment variable naming a directory that persists deterministic key
/// pairs across processes. Unset means memory only.
pub const KEY_CACHE_ENV: &str = "DUALGUARD_KEY_CACHE";

fn key_cache_dir() -> Option<PathBuf> {
    static DIR: OnceLock<Option<PathBuf>> = OnceLock::new();
    DIR.get_or_init(|| std::env::var_os(KEY_CACHE_ENV).filter(|v| !v.is_empty()).map(PathBuf::from))
        .clone()
}

fn disk_path(dir: &Path, seed: &[u8; 32]) -> PathBuf {
    dir.join(format!("{}.der", hex::encode(seed)))
}

/// A cached entry is only a hint: it must parse and be a key of the
/// expected size, otherwise the pair is regenerated.
fn disk_load(dir: &Path, seed: &[u8; 32]) -> Option<RsaPrivateKey> {
    let der = Zeroizing::new(std::fs::read(disk_path(dir, seed)).ok()?);
    let key = RsaPrivateKey::from_pkcs8_der(&der).ok()?;
    (key.size() * 8 == MODULUS_BITS && key.validate().is_ok()).then_some(key)
}

fn disk_store(dir: &Path, seed: &[u8; 32], key: &RsaPrivateKey) {
    static TMP: AtomicU32 = AtomicU32::new(0);
    let Ok(der) = key.to_pkcs8_der() else { return };
    let path = disk_path(dir, seed);
    let tmp = path.with_extension(format!("tmp.{}.{}", std::process::id(), TMP.fetch_add(1, Ordering::Relaxed)));
    let written = std::fs::create_dir_all(dir).and_then(|_| std::fs::write(&tmp, der.as_bytes()));
    if written.and_then(|_| std::fs::rename(&tmp, &path)).is_err() {
        let _ = std::fs::remove_file(&tmp);
    }
}

/// 256-bit secret for the main (symmetric) layer.
///
/// Each instance carries its own nonce space: a random 8-byte prefix fixed at
/// creation followed by a 4-byte counter. The counter is the only mutable
/// state and is advanced atomically; the type is deliberately not `Clone`.
pub struct SymmetricKey {
    bytes: Zeroizing<[u8; SYMMETRIC_KEY_LEN]>,
    key_id: KeyId,
    nonce_prefix: [u8; 8],
    counter: AtomicU32,
}

impl SymmetricKey {
    /// Imports existing key material with a fresh nonce prefix.
    pub fn from_bytes(bytes: [u8; SYMMETRIC_KEY_LEN], rng: &mut Entropy) -> Result<Self, CryptoError> {
        let bytes = Zeroizing::new(bytes);
        let mut id = [0u8; 8];
        let mut nonce_prefix = [0u8; 8];
        rng.try_fill_bytes(&mut id).map_err(|_| CryptoError::Entropy)?;
        rng.try_fill_bytes(&mut nonce_prefix)
            .map_err(|_| CryptoError::Entropy)?;
        Ok(SymmetricKey {
            bytes,
            key_id: KeyId(format!("sym:{}", hex::encode(id))),
            nonce_prefix,
            counter: AtomicU32::new(0),
        })
    }

    pub fn key_id(&self) -> &KeyId {
        &self.key_id
    }

    pub fn expose(&self) -> &[u8; SYMMETRIC_KEY_LEN] {
        &self.bytes
    }

    pub(crate) fn next_nonce(&self) -> Result<[u8; 12], CryptoError> {
        let n = self
            .counter
            .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |c| c.checked_add(1))
            .map_err(|_| CryptoError::NonceExhausted(self.key_id.clone()))?;
        let mut nonce = [0u8; 12];
        nonce[..8].copy_from_slice(&self.nonce_prefix);
        nonce[8..].copy_from_slice(&n.to_be_bytes());
        Ok(nonce)
    }

    #[cfg(test)]
    pub(crate) fn set_counter(&self, n: u32) {
        self.counter.store(n, Ordering::SeqCst);
    }
}

impl fmt::Debug for SymmetricKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_tuple("SymmetricKey").field(&self.key_id.0).finish()
    }
}

pub fn gen_symmetric_key(rng: &mut Entropy) -> Result<SymmetricKey, CryptoError> {
    let mut bytes = [0u8; SYMMETRIC_KEY_LEN];
    rng.try_fill_bytes(&mut bytes).map_err(|_| CryptoError::Entropy)?;
    SymmetricKey::from_bytes(bytes, rng)
}
