//! Seed derivation.
//!
//! Every random stream in a run is a ChaCha8 generator keyed by a child seed.
//! A child seed is the first eight bytes (little endian) of
//! `SHA-256(master_seed_le_bytes || "/" || label)`, where `label` names the
//! consumer, e.g. `"mnist/hierarchy"` or `"seqbench/L3/K8/rep0"`. Labels are
//! hierarchical, so a stage can derive further children from its own seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub fn derive_seed(parent: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(parent.to_le_bytes());
    h.update(b"/");
    h.update(label.as_bytes());
    let digest = h.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn child_rng(parent: u64, label: &str) -> ChaCha8Rng {
    rng(derive_seed(parent, label))
}

/// Lowercase hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}
