//! Deterministic, counter-based random number generation.
//!
//! Checkpoints store seeds instead of weights, so every random draw in this
//! crate must be reproducible bit-for-bit across runs, platforms, and
//! versions of the library. To guarantee that, the generator is implemented
//! here from scratch (a splitmix64-style counter construction) rather than
//! delegated to an external crate whose stream could change under us.
//!
//! The design is counter-based: output `i` of a stream is a pure function
//! `mix64(key + (i+1) * GAMMA)` of the stream key and the index. That makes
//! substreams cheap — any (seed, tag, index) tuple derives an independent
//! key — so consumers can draw, say, column 17 of a projection matrix
//! without generating columns 0..16 first. Construction order never affects
//! values, which is what lets parallel code stay deterministic.
//!
//! Scheme id 1 (recorded in checkpoint headers) refers to exactly the
//! constants and algorithms in this file: splitmix64 mixing, 53-bit
//! uniforms, Box–Muller normals, rejection-sampled bounded integers, and
//! Fisher–Yates shuffles.

/// Weyl-sequence increment (odd, from the golden ratio); standard splitmix64.
const GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// Identifies the stream scheme implemented by this module.
pub const RNG_SCHEME_ID: u8 = 1;

/// splitmix64 finalizer: a bijective avalanche mix of a 64-bit word.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a stream key from a seed and an arbitrary list of tag words.
///
/// With no tags the key is the seed itself, so a bare [`Stream`] replays the
/// classic splitmix64 sequence for that seed. Each tag is folded in through
/// two rounds of the mixer — the inner round before the tag is added, the
/// outer round after — so `(seed, [a, b])` and `(seed, [b, a])` give
/// unrelated keys and no two tags produce streams that are shifted copies of
/// one another. Used to give every column, block, epoch, or bootstrap
/// resample its own independent stream.
pub fn stream_key(seed: u64, tags: &[u64]) -> u64 {
    let mut k = seed;
    for &t in tags {
        k = mix64(mix64(k ^ GAMMA).wrapping_add(t.wrapping_mul(GAMMA)));
    }
    k
}

/// A deterministic stream of pseudo-random values.
///
/// Equivalent to splitmix64 seeded with the key: the i-th raw output is
/// `mix64(key + (i+1)*GAMMA)`. The struct only tracks the counter, so
/// cloning or reconstructing a stream at the same key replays it exactly.
#[derive(Debug, Clone)]
pub struct Stream {
    key: u64,
    counter: u64,
    /// Cached second Box–Muller output, returned by the next `normal()` call.
    spare_normal: Option<f64>,
}

impl Stream {
    /// Stream for a bare seed (tag list empty).
    pub fn new(seed: u64) -> Self {
        Self::tagged(seed, &[])
    }

    /// Stream for `(seed, tags)`; distinct tags yield independent streams.
    pub fn tagged(seed: u64, tags: &[u64]) -> Self {
        Stream { key: stream_key(seed, tags), counter: 0, spare_normal: None }
    }

    /// Next raw 64-bit output.
    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.counter += 1;
        mix64(self.key.wrapping_add(self.counter.wrapping_mul(GAMMA)))
    }

    /// Uniform in [0, 1) with 53 bits of precision.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [lo, hi).
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Standard normal via Box–Muller on two fresh uniforms.
    ///
    /// Pairs are generated together and the second value cached, so a
    /// sequence of `normal()` calls consumes uniforms deterministically.
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        // u1 in (0, 1] so the log is finite.
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = std::f64::consts::TAU * u2;
        self.spare_normal = Some(r * theta.sin());
        r * theta.cos()
    }

    /// Uniform integer in [0, n). Rejection sampling keeps it unbiased.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "below(0) is undefined");
        // Reject draws above the largest multiple of n to avoid modulo bias.
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let x = self.next_u64();
            if x < zone {
                return x % n;
            }
        }
    }

    /// Random sign, ±1 with equal probability.
    #[inline]
    pub fn sign(&mut self) -> f64 {
        if self.next_u64() & 1 == 0 {
            1.0
        } else {
            -1.0
        }
    }

    /// Fisher–Yates shuffle.
    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            xs.swap(i, j);
        }
    }

    /// Random permutation of 0..n.
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut p: Vec<usize> = (0..n).collect();
        self.shuffle(&mut p);
        p
    }

    /// Fills `out` with i.i.d. standard normals.
    pub fn fill_normal(&mut self, out: &mut [f64]) {
        for x in out.iter_mut() {
            *x = self.normal();
        }
    }
}
