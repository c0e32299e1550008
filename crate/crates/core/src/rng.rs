//! Reproducible random streams.
//!
//! Every random number used by the library descends from one 64-bit seed.
//! A [`SeedTree`] names a node in a tree of streams; children are addressed
//! by a `(label, index)` pair, e.g. `root.child("replicate", 3).child("chain", 1)`.
//! Each node maps to a ChaCha8 key and stream id, so a stream's output depends
//! only on its path and never on how many other streams were drawn from or in
//! which order threads ran.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The concrete generator handed to every sampling routine.
pub type StreamRng = ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn hash_label(label: &str) -> u64 {
    // FNV-1a; fixed so labels map identically on every platform.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for byte in label.bytes() {
        h ^= u64::from(byte);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// A node in the tree of named random streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SeedTree {
    state: u64,
}

impl SeedTree {
    pub fn new(seed: u64) -> Self {
        SeedTree {
            state: splitmix64(seed),
        }
    }

    pub fn child(&self, label: &str, index: u64) -> Self {
        let mixed = splitmix64(self.state ^ hash_label(label));
        SeedTree {
            state: splitmix64(mixed ^ splitmix64(index.wrapping_add(GOLDEN))),
        }
    }

    /// A 64-bit seed for this node, for APIs that take a plain seed.
    pub fn seed(&self) -> u64 {
        self.state
    }

    /// Opens the stream at this node.
    pub fn rng(&self) -> StreamRng {
        let mut key = [0u8; 32];
        let mut s = self.state;
        for chunk in key.chunks_exact_mut(8) {
            s = splitmix64(s);
            chunk.copy_from_slice(&s.to_le_bytes());
        }
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(splitmix64(self.state ^ GOLDEN));
        rng
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn same_path_same_stream() {
        let a: Vec<u64> = SeedTree::new(42).child("chain", 1).rng().random_iter().take(8).collect();
        let b: Vec<u64> = SeedTree::new(42).child("chain", 1).rng().random_iter().take(8).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn siblings_and_labels_differ() {
        let root = SeedTree::new(7);
        let x: u64 = root.child("chain", 0).rng().random();
        let y: u64 = root.child("chain", 1).rng().random();
        let z: u64 = root.child("replicate", 0).rng().random();
        assert_ne!(x, y);
        assert_ne!(x, z);
        assert_ne!(root.child("a", 1), root.child("a", 1).child("a", 1));
    }

    #[test]
    fn golden_first_draw() {
        // Frozen so that any change to stream derivation is caught.
        let first: u64 = SeedTree::new(42).rng().random();
        let again: u64 = SeedTree::new(42).rng().random();
        assert_eq!(first, again);
        assert_ne!(first, SeedTree::new(43).rng().random::<u64>());
        assert_eq!(first, 1_833_544_657_878_729_736);
    }
}
