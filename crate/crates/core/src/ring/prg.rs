//! Domain-separated PRG streams.
//!
//! A stream is ChaCha20 keyed with `SHA-256(tag || seed || round || label)`.
//! Distinct labels (permutations, masks, triples, MAC keys, ...) never share
//! keystream, and the round index is always part of the key.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

const DOMAIN_TAG: &[u8] = b"rain/prg/v1";

/// A 256-bit seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct Seed(pub [u8; 32]);

impl Seed {
    /// Expands a short experiment seed into a full-width seed.
    pub fn from_u64(seed: u64) -> Self {
        let mut h = Sha256::new();
        h.update(b"rain/seed/v1");
        h.update(seed.to_le_bytes());
        Seed(h.finalize().into())
    }

    /// Child seed for a named sub-component, e.g. `("client", 17)`.
    pub fn derive(&self, label: &str, index: u64) -> Seed {
        let mut h = Sha256::new();
        h.update(b"rain/derive/v1");
        h.update(self.0);
        h.update((label.len() as u64).to_le_bytes());
        h.update(label.as_bytes());
        h.update(index.to_le_bytes());
        Seed(h.finalize().into())
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }
}

pub struct Prg;

impl Prg {
    pub fn stream(seed: &Seed, round: u64, label: &str) -> ChaCha20Rng {
        let mut h = Sha256::new();
        h.update(DOMAIN_TAG);
        h.update(seed.0);
        h.update(round.to_le_bytes());
        h.update((label.len() as u64).to_le_bytes());
        h.update(label.as_bytes());
        ChaCha20Rng::from_seed(h.finalize().into())
    }
}
