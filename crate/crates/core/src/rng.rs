//! Counter-based random streams.
//!
//! Every random quantity in the toolkit is a pure function of a 64-bit seed
//! and a short list of integer words (a cell address, a sample index, ...).
//! Nothing carries hidden state between draws, so results do not depend on
//! evaluation order or on how work is split across threads.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[inline]
fn absorb(state: u64, word: u64) -> u64 {
    mix64(state.wrapping_add(GOLDEN) ^ mix64(word.wrapping_add(GOLDEN)))
}

/// Hashes `seed` together with `words` into one 64-bit key.
pub fn hash_words(seed: u64, words: &[u64]) -> u64 {
    words.iter().fold(mix64(seed ^ GOLDEN), |h, &w| absorb(h, w))
}

/// Derives an independent seed from a parent seed and a tag path.
pub fn derive_seed(seed: u64, words: &[u64]) -> u64 {
    hash_words(seed, words)
}

/// Maps a 64-bit key to a uniform double in `[0, 1)` using its top 53 bits.
#[inline]
pub fn unit_f64(key: u64) -> f64 {
    (key >> 11) as f64 * (1.0 / 9_007_199_254_740_992.0)
}

/// Partially absorbed key for the draws of one tree level: `(seed, depth)`.
#[derive(Debug, Clone, Copy)]
pub struct LevelKey(u64);

impl LevelKey {
    pub fn new(seed: u64, depth: u32) -> Self {
        LevelKey(hash_words(seed, &[0x6365_6c6c, depth as u64]))
    }

    /// Uniform draw attached to the cell with integer coordinates `(x, y)`.
    #[inline]
    pub fn uniform(self, x: u32, y: u32) -> f64 {
        unit_f64(absorb(absorb(self.0, x as u64), y as u64))
    }
}

/// A reproducible stream: the `i`-th output is `hash(base, i)`.
#[derive(Debug, Clone)]
pub struct Stream {
    base: u64,
    counter: u64,
}

impl Stream {
    pub fn new(seed: u64, words: &[u64]) -> Self {
        Stream {
            base: hash_words(seed, words),
            counter: 0,
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        let out = absorb(self.base, self.counter);
        self.counter += 1;
        out
    }

    pub fn uniform(&mut self) -> f64 {
        unit_f64(self.next_u64())
    }

    /// Uniform in `[lo, hi)`.
    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform index in `0..n` (n > 0).
    pub fn index(&mut self, n: usize) -> usize {
        ((self.uniform() * n as f64) as usize).min(n - 1)
    }
}
