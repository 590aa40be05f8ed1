//! Sign-then-seal transport for payloads of any length.
//!
//! The sender signs `(context, recipient key id, payload)`, then encrypts the
//! signature together with the payload under a fresh ephemeral key which is
//! wrapped to the recipient. The signature travels inside the ciphertext, so
//! an observer holding only public keys cannot test guesses of the payload.

use serde::{Deserialize, Serialize};

use super::asym::{sign, unwrap_key, unwrap_raw, verify, wrap_key, Signature, WrappedKey};
use super::entropy::Entropy;
use super::keys::{gen_symmetric_key, KeyId, PrivateKey, PublicKey};
use super::sym::{sym_decrypt, sym_decrypt_raw, sym_encrypt, SymCiphertext};
use super::CryptoError;
use crate::codec::{CanonicalReader, CanonicalWriter};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SealedPayload {
    pub ephemeral_wrapped_key: WrappedKey,
    pub body: SymCiphertext,
}

impl SealedPayload {
    /// Associated data binding the body to its context and wrapped key.
    pub fn aad(&self, context: &[u8]) -> Vec<u8> {
        seal_aad(context, &self.ephemeral_wrapped_key)
    }
}

fn seal_aad(context: &[u8], wrapped: &WrappedKey) -> Vec<u8> {
    let mut w = CanonicalWriter::with_tag("dualguard/v1/seal-aad");
    w.bytes(context)
        .str(wrapped.wrapping_key_id.as_str())
        .bytes(&wrapped.blob);
    w.finish()
}

fn signed_part(context: &[u8], recipient: &KeyId, payload: &[u8]) -> Vec<u8> {
    let mut w = CanonicalWriter::with_tag("dualguard/v1/seal");
    w.bytes(context).str(recipient.as_str()).bytes(payload);
    w.finish()
}

pub fn seal(
    payload: &[u8],
    context: &[u8],
    sender: &PrivateKey,
    recipient: &PublicKey,
    rng: &mut Entropy,
) -> Result<SealedPayload, CryptoError> {
    let sig = sign(&signed_part(context, recipient.key_id(), payload), sender, rng)?;
    let eph = gen_symmetric_key(rng)?;
    let ephemeral_wrapped_key = wrap_key(&eph, recipient, rng)?;
    let mut inner = CanonicalWriter::new();
    inner
        .str(sig.signer_key_id.as_str())
        .bytes(&sig.sig_bytes)
        .bytes(payload);
    let body = sym_encrypt(&eph, &inner.finish(), &seal_aad(context, &ephemeral_wrapped_key))?;
    Ok(SealedPayload {
        ephemeral_wrapped_key,
        body,
    })
}

pub(crate) fn split_inner(inner: &[u8]) -> Result<(Signature, Vec<u8>), CryptoError> {
    let mut r = CanonicalReader::new(inner);
    let signer_key_id = KeyId::new(r.string().map_err(|_| CryptoError::SealConfidentiality)?);
    let sig_bytes = r.bytes().map_err(|_| CryptoError::SealConfidentiality)?.to_vec();
    let payload = r.bytes().map_err(|_| CryptoError::SealConfidentiality)?.to_vec();
    r.finish().map_err(|_| CryptoError::SealConfidentiality)?;
    Ok((
        Signature {
            signer_key_id,
            sig_bytes,
        },
        payload,
    ))
}

/// Opens and authenticates. Nothing is returned unless both the
/// confidentiality layer and the sender's signature check out.
pub fn open(
    sp: &SealedPayload,
    context: &[u8],
    recipient: &PrivateKey,
    sender: &PublicKey,
    rng: &mut Entropy,
) -> Result<Vec<u8>, CryptoError> {
    let eph = unwrap_key(&sp.ephemeral_wrapped_key, recipient, rng)
        .map_err(|_| CryptoError::SealConfidentiality)?;
    let inner = sym_decrypt(&eph, &sp.body, &sp.aad(context))
        .map_err(|_| CryptoError::SealConfidentiality)?;
    let (sig, payload) = split_inner(&inner)?;
    if !verify(&signed_part(context, recipient.key_id(), &payload), &sig, sender) {
        return Err(CryptoError::SealSignature);
    }
    Ok(payload)
}

/// Confidentiality layer only: what an attacker holding `recipient` would
/// get, without needing to know who sent it.
pub fn unseal_unverified(
    sp: &SealedPayload,
    context: &[u8],
    recipient: &PrivateKey,
) -> Result<Vec<u8>, CryptoError> {
    let eph = unwrap_raw(&sp.ephemeral_wrapped_key, recipient)?;
    let inner = sym_decrypt_raw(&eph, &sp.body, &sp.aad(context))?;
    split_inner(&inner).map(|(_, payload)| payload)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::test_keys::{pair, rng};
    use crate::crypto::KeyOwner;
    use proptest::prelude::*;

    #[test]
    fn round_trip_and_wrong_keys() {
        let (alice, bob, eve) = (pair("alice"), pair("bob"), pair("eve"));
        let mut rng = rng();
        let sp = seal(b"secret", b"ctx", &alice.private, &bob.public, &mut rng).unwrap();
        assert_eq!(open(&sp, b"ctx", &bob.private, &alice.public, &mut rng).unwrap(), b"secret");
        assert_eq!(
            open(&sp, b"ctx", &eve.private, &alice.public, &mut rng).unwrap_err(),
            CryptoError::SealConfidentiality
        );
        assert_eq!(
            open(&sp, b"ctx", &bob.private, &eve.public, &mut rng).unwrap_err(),
            CryptoError::SealSignature
        );
        assert_eq!(
            open(&sp, b"other", &bob.private, &alice.public, &mut rng).unwrap_err(),
            CryptoError::SealConfidentiality
        );
        assert!(unseal_unverified(&sp, b"ctx", &eve.private).is_err());
        assert_eq!(unseal_unverified(&sp, b"ctx", &bob.private).unwrap(), b"secret");
    }

    #[test]
    fn forged_by_key_holder_fails_signature() {
        // eve knows bob's public key and can seal to him, but cannot sign as alice
        let (alice, bob, eve) = (pair("alice"), pair("bob"), pair("eve"));
        let mut rng = rng();
        let sp = seal(b"forged", b"ctx", &eve.private, &bob.public, &mut rng).unwrap();
        assert_eq!(
            open(&sp, b"ctx", &bob.private, &alice.public, &mut rng).unwrap_err(),
            CryptoError::SealSignature
        );
    }

    #[test]
    fn serialized_private_key_round_trips() {
        let (alice, bob) = (pair("alice"), pair("bob"));
        let data = crate::crypto::KeySource::Deterministic { key_seed: 99 }
            .keypair("data:doc", KeyOwner::Data)
            .unwrap();
        let der = data.private.to_der();
        assert!(der.len() > 1024 && der.len() < 4096, "PKCS#8 length {}", der.len());
        let mut payload = der.to_vec();
        payload.resize(4096, 0xa5);
        let mut rng = rng();
        let sp = seal(&payload, b"grant", &alice.private, &bob.public, &mut rng).unwrap();
        let opened = open(&sp, b"grant", &bob.private, &alice.public, &mut rng).unwrap();
        assert_eq!(opened, payload);
        let back = PrivateKey::from_der(&opened[..der.len()]).unwrap();
        assert_eq!(back.key_id(), data.key_id());
    }

    #[test]
    fn exhaustive_single_bit_tamper_on_small_payload() {
        let (alice, bob) = (pair("alice"), pair("bob"));
        let mut rng = rng();
        let sp = seal(b"hi", b"c", &alice.private, &bob.public, &mut rng).unwrap();
        // body fields: every bit; wrapped blob: every byte (each flip costs a private-key op)
        let body_bits = (12 + sp.body.body.len() + 16 + 32) * 8;
        for bit in 0..body_bits {
            let mut m = sp.clone();
            let (mut i, mask) = (bit / 8, 1u8 << (bit % 8));
            if i < 12 {
                m.body.nonce_iv[i] ^= mask;
            } else {
                i -= 12;
                if i < m.body.body.len() {
                    m.body.body[i] ^= mask;
                } else {
                    i -= m.body.body.len();
                    if i < 16 {
                        m.body.auth_tag[i] ^= mask;
                    } else {
                        m.body.aad_hash[i - 16] ^= mask;
                    }
                }
            }
            assert!(open(&m, b"c", &bob.private, &alice.public, &mut rng).is_err(), "body bit {bit}");
        }
        for byte in 0..sp.ephemeral_wrapped_key.blob.len() {
            let mut m = sp.clone();
            m.ephemeral_wrapped_key.blob[byte] ^= 0x01;
            assert!(open(&m, b"c", &bob.private, &alice.public, &mut rng).is_err(), "blob byte {byte}");
        }
        let mut m = sp.clone();
        m.ephemeral_wrapped_key.wrapping_key_id = KeyId::new("rsa:0000000000000000");
        assert!(open(&m, b"c", &bob.private, &alice.public, &mut rng).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn seal_open_property(payload in proptest::collection::vec(any::<u8>(), 0..2048), ctx in proptest::collection::vec(any::<u8>(), 0..32)) {
            let (alice, bob) = (pair("alice"), pair("bob"));
            let mut rng = rng();
            let sp = seal(&payload, &ctx, &alice.private, &bob.public, &mut rng).unwrap();
            prop_assert_eq!(open(&sp, &ctx, &bob.private, &alice.public, &mut rng).unwrap(), payload);
        }
    }
}
