//! Deterministic randomness.
//!
//! Every random decision in the pipeline flows from one root seed through
//! named sub-seeds, so each component can be reproduced on its own.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Environment variable that overrides the root seed used by the CLI.
pub const SEED_ENV: &str = "QBIN_SEED";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Seed(pub u64);

impl Seed {
    /// Derives an independent sub-seed for the named purpose.
    pub fn derive(self, label: &str) -> Seed {
        let mut h = Sha256::new();
        h.update(self.0.to_le_bytes());
        h.update(label.as_bytes());
        let digest = h.finalize();
        let mut b = [0u8; 8];
        b.copy_from_slice(&digest[..8]);
        Seed(u64::from_le_bytes(b))
    }

    pub fn rng(self) -> ChaCha20Rng {
        ChaCha20Rng::seed_from_u64(self.0)
    }

    /// 32 bytes of key material bound to this seed and label.
    pub fn key_bytes(self, label: &str) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(b"qbin-key");
        h.update(self.0.to_le_bytes());
        h.update(label.as_bytes());
        h.finalize().into()
    }
}

impl From<u64> for Seed {
    fn from(v: u64) -> Self {
        Seed(v)
    }
}
