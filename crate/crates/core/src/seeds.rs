//! Counter-based hashing: every random quantity of the model is a pure
//! function of a 64-bit seed and the lattice coordinates it is attached to.

use crate::lattice::{Site, MAX_DIM};

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

/// SplitMix64 finaliser.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[inline]
fn absorb(h: u64, v: u64) -> u64 {
    mix64(h.wrapping_add(GOLDEN) ^ v)
}

/// Stream labels keep the percolation, weight and permutation fields apart.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Percolation = 0x7065_7263,
    Weight = 0x7765_6967,
    WeightTime = 0x7774_696d,
    Permutation = 0x7065_726d,
}

/// Hash of `(seed, stream, site, counter)`.
#[inline]
pub fn hash_site(seed: u64, stream: Stream, site: &Site, counter: u64) -> u64 {
    let mut h = absorb(mix64(seed ^ stream as u64), counter);
    for c in &site.x[..MAX_DIM] {
        h = absorb(h, *c as u64);
    }
    absorb(h, site.n as u64)
}

/// Hash of `(seed, stream, a, b)` for keys that are not lattice sites.
#[inline]
pub fn hash2(seed: u64, stream: Stream, a: u64, b: u64) -> u64 {
    absorb(absorb(mix64(seed ^ stream as u64), a), b)
}

/// Uniform in `[0, 1)` from the top 53 bits.
#[inline]
pub fn unit_f64(h: u64) -> f64 {
    (h >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Derives an independent seed from `(master, label, index)`. Adding new
/// indices never changes the seeds of existing ones.
pub fn derive_seed(master: u64, label: &str, index: u64) -> u64 {
    let mut h = mix64(master ^ 0x6f70_6377_616c_6b00);
    for chunk in label.as_bytes().chunks(8) {
        let mut word = [0u8; 8];
        word[..chunk.len()].copy_from_slice(chunk);
        h = absorb(h, u64::from_le_bytes(word));
    }
    absorb(absorb(h, label.len() as u64), index)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derive_seed_separates_labels_and_indices() {
        let a = derive_seed(7, "replica", 0);
        assert_ne!(a, derive_seed(7, "replica", 1));
        assert_ne!(a, derive_seed(7, "environment", 0));
        assert_ne!(a, derive_seed(8, "replica", 0));
        assert_eq!(a, derive_seed(7, "replica", 0));
    }

    #[test]
    fn site_hash_depends_on_every_coordinate() {
        let s = Site::new(&[1, 2], 3);
        let base = hash_site(1, Stream::Percolation, &s, 0);
        assert_ne!(base, hash_site(1, Stream::Percolation, &Site::new(&[2, 1], 3), 0));
        assert_ne!(base, hash_site(1, Stream::Percolation, &Site::new(&[1, 2], 4), 0));
        assert_ne!(base, hash_site(1, Stream::Weight, &s, 0));
        assert_ne!(base, hash_site(1, Stream::Percolation, &s, 1));
    }

    #[test]
    fn unit_f64_range() {
        assert_eq!(unit_f64(0), 0.0);
        assert!(unit_f64(u64::MAX) < 1.0);
    }
}
