use rand_chacha::ChaCha20Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

/// Named substreams. Each id selects an independent ChaCha stream under the
/// same key, so consumers of one stream never perturb another.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StreamId {
    Init,
    Shuffle,
    Noise,
    Data,
}

impl StreamId {
    pub const ALL: [StreamId; 4] = [StreamId::Init, StreamId::Shuffle, StreamId::Noise, StreamId::Data];

    fn index(self) -> u64 {
        match self {
            StreamId::Init => 0,
            StreamId::Shuffle => 1,
            StreamId::Noise => 2,
            StreamId::Data => 3,
        }
    }
}

/// Counter-based random stream keyed by `(seed, stream-id, counter)`.
///
/// Normals come from Box–Muller over consecutive uniforms; both outputs of a
/// pair are used, the second one is held as a spare.
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    id: StreamId,
    core: ChaCha20Rng,
    spare_normal: Option<f64>,
}

impl RngStream {
    pub fn new(seed: u64, id: StreamId) -> Self {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&seed.to_le_bytes());
        let mut core = ChaCha20Rng::from_seed(key);
        core.set_stream(id.index());
        Self {
            seed,
            id,
            core,
            spare_normal: None,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn id(&self) -> StreamId {
        self.id
    }

    /// Number of 32-bit words consumed so far.
    pub fn counter(&self) -> u128 {
        self.core.get_word_pos()
    }

    pub fn next_u64(&mut self) -> u64 {
        self.core.next_u64()
    }

    /// Uniform draw in `[0, 1)` with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn standard_normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        // 1 - u lies in (0, 1], keeping the log finite
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (TAU * u2).sin_cos();
        self.spare_normal = Some(r * s);
        r * c
    }

    /// Unbiased integer in `[0, n)` by rejection sampling.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "below(0)");
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let v = self.next_u64();
            if v < zone {
                return v % n;
            }
        }
    }

    /// Fisher–Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }

    /// `k` distinct indices from `0..n`, in draw order (partial Fisher–Yates).
    pub fn sample_indices(&mut self, n: usize, k: usize) -> Vec<usize> {
        let k = k.min(n);
        let mut pool: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = i + self.below((n - i) as u64) as usize;
            pool.swap(i, j);
        }
        pool.truncate(k);
        pool
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_key_same_sequence() {
        let mut a = RngStream::new(7, StreamId::Noise);
        let mut b = RngStream::new(7, StreamId::Noise);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn streams_differ() {
        let draw = |id| {
            let mut r = RngStream::new(7, id);
            (0..8).map(|_| r.next_u64()).collect::<Vec<_>>()
        };
        for (i, a) in StreamId::ALL.iter().enumerate() {
            for b in &StreamId::ALL[i + 1..] {
                assert_ne!(draw(*a), draw(*b));
            }
        }
        let mut s1 = RngStream::new(1, StreamId::Init);
        let mut s2 = RngStream::new(2, StreamId::Init);
        assert_ne!(s1.next_u64(), s2.next_u64());
    }

    #[test]
    fn independent_streams_are_uncorrelated() {
        let mut a = RngStream::new(11, StreamId::Shuffle);
        let mut b = RngStream::new(11, StreamId::Noise);
        let n = 100_000;
        let (mut sab, mut sa, mut sb) = (0.0, 0.0, 0.0);
        for _ in 0..n {
            let (x, y) = (a.uniform() - 0.5, b.uniform() - 0.5);
            sab += x * y;
            sa += x * x;
            sb += y * y;
        }
        let corr = sab / (sa * sb).sqrt();
        // 4 standard errors of a null correlation
        assert!(corr.abs() < 4.0 / (n as f64).sqrt(), "corr {corr}");
    }

    #[test]
    fn uniform_range_and_counter() {
        let mut r = RngStream::new(3, StreamId::Data);
        assert_eq!(r.counter(), 0);
        for _ in 0..10_000 {
            let u = r.uniform();
            assert!((0.0..1.0).contains(&u));
        }
        assert_eq!(r.counter(), 20_000);
    }

    #[test]
    fn sample_indices_distinct() {
        let mut r = RngStream::new(5, StreamId::Data);
        let mut idx = r.sample_indices(50, 20);
        idx.sort_unstable();
        idx.dedup();
        assert_eq!(idx.len(), 20);
        assert!(idx.iter().all(|&i| i < 50));
        assert_eq!(r.sample_indices(3, 10).len(), 3);
    }

    #[test]
    fn shuffle_is_permutation() {
        let mut r = RngStream::new(9, StreamId::Shuffle);
        let mut v: Vec<usize> = (0..100).collect();
        r.shuffle(&mut v);
        assert_ne!(v, (0..100).collect::<Vec<_>>());
        v.sort_unstable();
        assert_eq!(v, (0..100).collect::<Vec<_>>());
    }
}
