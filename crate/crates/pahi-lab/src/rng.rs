//! Seed derivation and deterministic sampling.
//!
//! Every stochastic component draws from its own ChaCha stream whose seed is
//! derived from the master seed and a component tag via SHA-256, so adding a
//! component never perturbs existing streams.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

use crate::Tensor;

/// Stable (master seed, tag) -> stream seed derivation.
pub fn derive_seed(master: u64, tag: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(master.to_le_bytes());
    hasher.update([0x1f]);
    hasher.update(tag.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest is long enough"))
}

pub fn stream(master: u64, tag: &str) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(derive_seed(master, tag))
}

pub fn rng_from_seed(seed: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(seed)
}

pub fn normal_vec(rng: &mut ChaCha12Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Standard-normal constant tensor of shape `[n]`.
pub fn normal_tensor(rng: &mut ChaCha12Rng, n: usize) -> Tensor {
    Tensor::from_vec([n], normal_vec(rng, n)).expect("shape/data consistent")
}

/// Matrix with i.i.d. N(0, scale^2) entries.
pub fn normal_matrix(rng: &mut ChaCha12Rng, rows: usize, cols: usize, scale: f64) -> Tensor {
    let data = normal_vec(rng, rows * cols)
        .into_iter()
        .map(|x| x * scale)
        .collect();
    Tensor::from_vec([rows, cols], data).expect("shape/data consistent")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_seeds_are_stable_and_tag_sensitive() {
        let a = derive_seed(42, "generator");
        let b = derive_seed(42, "generator");
        let c = derive_seed(42, "prompts");
        let d = derive_seed(43, "generator");
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
    }

    #[test]
    fn streams_replay_exactly() {
        let mut r1 = stream(7, "x");
        let mut r2 = stream(7, "x");
        assert_eq!(normal_vec(&mut r1, 8), normal_vec(&mut r2, 8));
    }
}
