//! Seed derivation. Every random stream in a run comes from the run seed plus
//! a stage name and an index, so stages reproduce independently.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub fn derive_seed(seed: u64, stage: &str, index: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(stage.as_bytes());
    h.update([0u8]);
    h.update(index.to_le_bytes());
    let digest = h.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

pub fn stage_rng(seed: u64, stage: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, stage, index))
}

/// Hex SHA-256 of a byte string.
pub fn fingerprint(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derivation_separates_stages_and_indices() {
        let a = derive_seed(7, "collect", 0);
        assert_eq!(a, derive_seed(7, "collect", 0));
        assert_ne!(a, derive_seed(7, "collect", 1));
        assert_ne!(a, derive_seed(7, "mine", 0));
        assert_ne!(a, derive_seed(8, "collect", 0));
    }
}
