//! Named, splittable random streams.
//!
//! Each consumer of randomness (weight init, shuffling, dropout, latent
//! draws, ...) gets its own stream derived from the master seed and a name.
//! Draws on one stream therefore never shift another stream's sequence, which
//! is what makes runs reproducible even when a config toggles a consumer on
//! or off.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

/// A deterministic random stream with a stable derivation path.
#[derive(Clone, Debug)]
pub struct RngStream {
    key: [u8; 32],
    rng: ChaCha8Rng,
}

impl RngStream {
    /// Root stream for a master seed.
    pub fn from_seed(seed: u64) -> RngStream {
        let mut h = Sha256::new();
        h.update(b"rcalad.root");
        h.update(seed.to_le_bytes());
        Self::from_key(h.finalize().into())
    }

    fn from_key(key: [u8; 32]) -> RngStream {
        RngStream {
            key,
            rng: ChaCha8Rng::from_seed(key),
        }
    }

    /// Derives a child stream. Children depend only on this stream's key and
    /// the name, not on how much has been drawn from the parent.
    pub fn substream(&self, name: &str) -> RngStream {
        let mut h = Sha256::new();
        h.update(self.key);
        h.update([0x1f]);
        h.update(name.as_bytes());
        Self::from_key(h.finalize().into())
    }

    /// Uniform draw in `[0, 1)`.
    pub fn next_f64(&mut self) -> f64 {
        self.rng.gen::<f64>()
    }

    /// Uniform draw in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Standard normal draw.
    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    pub fn fill_normal(&mut self, out: &mut [f64], mean: f64, std: f64) {
        for v in out {
            *v = mean + std * self.normal();
        }
    }

    pub fn fill_uniform(&mut self, out: &mut [f64], lo: f64, hi: f64) {
        for v in out {
            *v = self.uniform(lo, hi);
        }
    }

    /// Uniform integer in `[0, n)`.
    pub fn index(&mut self, n: usize) -> usize {
        self.rng.gen_range(0..n)
    }

    /// Fisher–Yates shuffle, spelled out so the draw sequence is part of this
    /// crate's contract rather than a `rand` implementation detail.
    pub fn shuffle(&mut self, items: &mut [usize]) {
        for i in (1..items.len()).rev() {
            let j = self.rng.gen_range(0..=i);
            items.swap(i, j);
        }
    }

    /// Serializable position within the stream.
    pub fn word_pos(&self) -> u128 {
        self.rng.get_word_pos()
    }

    /// State capture for checkpoints.
    pub fn state(&self) -> ([u8; 32], u128) {
        (self.key, self.rng.get_word_pos())
    }

    /// Rebuilds a stream at an exact position.
    pub fn restore(key: [u8; 32], word_pos: u128) -> RngStream {
        let mut s = Self::from_key(key);
        s.rng.set_word_pos(word_pos);
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_sequence() {
        let mut a = RngStream::from_seed(7);
        let mut b = RngStream::from_seed(7);
        for _ in 0..100 {
            assert_eq!(a.next_f64().to_bits(), b.next_f64().to_bits());
        }
    }

    #[test]
    fn different_names_decorrelate() {
        let root = RngStream::from_seed(7);
        let mut a = root.substream("dropout");
        let mut b = root.substream("latent");
        let same = (0..64).filter(|_| a.next_f64() == b.next_f64()).count();
        assert_eq!(same, 0);
    }

    #[test]
    fn substream_ignores_parent_position() {
        let mut root = RngStream::from_seed(3);
        let before = root.substream("x");
        for _ in 0..10 {
            root.next_f64();
        }
        let after = root.substream("x");
        let (mut x, mut y) = (before, after);
        for _ in 0..20 {
            assert_eq!(x.next_f64().to_bits(), y.next_f64().to_bits());
        }
    }

    #[test]
    fn restore_resumes_exactly() {
        let mut s = RngStream::from_seed(11);
        for _ in 0..17 {
            s.normal();
        }
        let (key, pos) = s.state();
        let mut t = RngStream::restore(key, pos);
        for _ in 0..50 {
            assert_eq!(s.next_f64().to_bits(), t.next_f64().to_bits());
        }
    }

    #[test]
    fn normal_moments() {
        let mut s = RngStream::from_seed(5);
        let n = 100_000;
        let (mut sum, mut sq) = (0.0, 0.0);
        for _ in 0..n {
            let v = s.normal();
            sum += v;
            sq += v * v;
        }
        let mean = sum / n as f64;
        let var = sq / n as f64 - mean * mean;
        assert!(mean.abs() < 0.03, "mean {mean}");
        assert!((var - 1.0).abs() < 0.05, "var {var}");
    }

    #[test]
    fn shuffle_is_a_permutation() {
        let mut s = RngStream::from_seed(9);
        let mut v: Vec<usize> = (0..50).collect();
        s.shuffle(&mut v);
        let mut sorted = v.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..50).collect::<Vec<_>>());
        assert_ne!(v, (0..50).collect::<Vec<_>>());
    }
}
