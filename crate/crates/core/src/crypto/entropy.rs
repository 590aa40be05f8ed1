use rand::rngs::OsRng;
use rand::{CryptoRng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

/// Randomness for every key, nonce and padding draw.
///
/// `Os` is the production source. `Seeded` replaces it in deterministic test
/// runs so that a simulation is a pure function of its seed; principals
/// refuse it when configured for production.
#[derive(Clone, Debug)]
pub enum Entropy {
    Os,
    Seeded(Box<ChaCha20Rng>),
}

impl Entropy {
    pub fn os() -> Self {
        Entropy::Os
    }

    pub fn seeded(seed: [u8; 32]) -> Self {
        Entropy::Seeded(Box::new(ChaCha20Rng::from_seed(seed)))
    }

    /// Independent stream for `label` under a run seed.
    pub fn derive(seed: u64, label: &str) -> Self {
        Self::seeded(derive_seed(b"dualguard/entropy", seed, label))
    }

    pub fn is_deterministic(&self) -> bool {
        matches!(self, Entropy::Seeded(_))
    }
}

pub(crate) fn derive_seed(domain: &[u8], seed: u64, label: &str) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update((domain.len() as u32).to_be_bytes());
    h.update(domain);
    h.update(seed.to_be_bytes());
    h.update((label.len() as u32).to_be_bytes());
    h.update(label.as_bytes());
    h.finalize().into()
}

impl RngCore for Entropy {
    fn next_u32(&mut self) -> u32 {
        match self {
            Entropy::Os => OsRng.next_u32(),
            Entropy::Seeded(r) => r.next_u32(),
        }
    }

    fn next_u64(&mut self) -> u64 {
        match self {
            Entropy::Os => OsRng.next_u64(),
            Entropy::Seeded(r) => r.next_u64(),
        }
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        match self {
            Entropy::Os => OsRng.fill_bytes(dest),
            Entropy::Seeded(r) => r.fill_bytes(dest),
        }
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> Result<(), rand::Error> {
        match self {
            Entropy::Os => OsRng.try_fill_bytes(dest),
            Entropy::Seeded(r) => r.try_fill_bytes(dest),
        }
    }
}

impl CryptoRng for Entropy {}
