//! Stateless counter-based random numbers.
//!
//! Every draw is a pure function of `(seed, stream, a, b)`, so any subset of
//! the draws can be reproduced by any worker in any order. The block cipher
//! is Philox4x32 with 10 rounds.

const PHILOX_M0: u32 = 0xD251_1F53;
const PHILOX_M1: u32 = 0xCD9E_8D57;
const PHILOX_W0: u32 = 0x9E37_79B9;
const PHILOX_W1: u32 = 0xBB67_AE85;

/// Above this mean, Poisson draws are split into independent chunks.
const POISSON_CHUNK_MEAN: f64 = 30.0;

#[inline]
fn mulhilo(a: u32, b: u32) -> (u32, u32) {
    let p = u64::from(a) * u64::from(b);
    ((p >> 32) as u32, p as u32)
}

/// Philox4x32-10 block function.
#[inline]
pub fn philox4x32_10(counter: [u32; 4], key: [u32; 2]) -> [u32; 4] {
    let mut ctr = counter;
    let mut k = key;
    for round in 0..10 {
        if round > 0 {
            k[0] = k[0].wrapping_add(PHILOX_W0);
            k[1] = k[1].wrapping_add(PHILOX_W1);
        }
        let (hi0, lo0) = mulhilo(PHILOX_M0, ctr[0]);
        let (hi1, lo1) = mulhilo(PHILOX_M1, ctr[2]);
        ctr = [hi1 ^ ctr[1] ^ k[0], lo1, hi0 ^ ctr[3] ^ k[1], lo0];
    }
    ctr
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Named independent streams derived from one seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    /// Recurrent connectivity draws, keyed by (source, target).
    Connectome,
    /// External Poisson drive, keyed by (neuron, timestep).
    External,
    /// Initial membrane potentials, keyed by (neuron, 0).
    InitialState,
}

impl Stream {
    fn tag(self) -> u64 {
        match self {
            Stream::Connectome => u64::from_le_bytes(*b"connect\0"),
            Stream::External => u64::from_le_bytes(*b"ext\0\0\0\0\0"),
            Stream::InitialState => u64::from_le_bytes(*b"init\0\0\0\0"),
        }
    }
}

/// A keyed generator bound to one (seed, stream) pair.
#[derive(Debug, Clone, Copy)]
pub struct KeyedRng {
    key: [u32; 2],
}

impl KeyedRng {
    pub fn new(seed: u64, stream: Stream) -> Self {
        let k = splitmix64(seed ^ splitmix64(stream.tag()));
        Self {
            key: [k as u32, (k >> 32) as u32],
        }
    }

    #[inline]
    pub fn block(&self, a: u64, b: u64) -> [u32; 4] {
        philox4x32_10([a as u32, (a >> 32) as u32, b as u32, (b >> 32) as u32], self.key)
    }

    /// Uniform in [0, 1) with 53 bits of resolution.
    #[inline]
    pub fn uniform(&self, a: u64, b: u64) -> f64 {
        let w = self.block(a, b);
        words_to_unit(w[0], w[1])
    }

    /// Bernoulli trial with success probability `p`.
    #[inline]
    pub fn bernoulli(&self, a: u64, b: u64, p: f64) -> bool {
        self.uniform(a, b) < p
    }

    /// Poisson draw with the given mean. Means above 30 are split into
    /// `ceil(mean / 30)` independent chunks whose counts are summed; `a`
    /// must be below 2^32 so that the chunk index can occupy the upper half.
    pub fn poisson(&self, a: u64, b: u64, mean: f64) -> u64 {
        if !(mean > 0.0) {
            return 0;
        }
        let chunks = chunk_count(mean);
        let chunk_mean = mean / chunks as f64;
        (0..chunks)
            .map(|c| poisson_inversion(self.chunk_uniform(a, b, c), chunk_mean))
            .sum()
    }

    /// Same draw as [`KeyedRng::poisson`] for the table's mean, without
    /// recomputing the CDF.
    #[inline]
    pub fn poisson_from(&self, a: u64, b: u64, table: &PoissonTable) -> u64 {
        (0..table.chunks).map(|c| table.invert(self.chunk_uniform(a, b, c))).sum()
    }

    #[inline]
    fn chunk_uniform(&self, a: u64, b: u64, chunk: u64) -> f64 {
        debug_assert!(a < (1 << 32));
        let w = self.block(a | ((chunk / 2) << 32), b);
        if chunk % 2 == 0 {
            words_to_unit(w[0], w[1])
        } else {
            words_to_unit(w[2], w[3])
        }
    }
}

/// Precomputed Poisson CDF for one mean.
#[derive(Debug, Clone, PartialEq)]
pub struct PoissonTable {
    chunks: u64,
    /// cdf[k] = P(X <= k) per chunk, up to the tail limit (exclusive).
    cdf: Vec<f64>,
}

impl PoissonTable {
    pub fn new(mean: f64) -> Self {
        if !(mean > 0.0) {
            return Self { chunks: 0, cdf: Vec::new() };
        }
        let chunks = chunk_count(mean);
        let m = mean / chunks as f64;
        let limit = tail_limit(m);
        let mut cdf = Vec::with_capacity(limit as usize);
        let mut p = (-m).exp();
        let mut acc = p;
        for k in 0..limit {
            cdf.push(acc);
            p *= m / (k + 1) as f64;
            acc += p;
        }
        Self { chunks, cdf }
    }

    #[inline]
    fn invert(&self, u: f64) -> u64 {
        self.cdf.iter().position(|&c| u < c).unwrap_or(self.cdf.len()) as u64
    }
}

fn chunk_count(mean: f64) -> u64 {
    (mean / POISSON_CHUNK_MEAN).ceil().max(1.0) as u64
}

/// The tail bound guards against the cdf rounding below u forever.
fn tail_limit(mean: f64) -> u64 {
    (mean + 40.0 * mean.sqrt() + 40.0) as u64
}

#[inline]
fn words_to_unit(hi: u32, lo: u32) -> f64 {
    let bits = ((u64::from(hi) << 32) | u64::from(lo)) >> 11;
    bits as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Sequential-search inversion of the Poisson CDF.
fn poisson_inversion(u: f64, mean: f64) -> u64 {
    let mut k = 0u64;
    let mut p = (-mean).exp();
    let mut cdf = p;
    let limit = tail_limit(mean);
    while u >= cdf && k < limit {
        k += 1;
        p *= mean / k as f64;
        cdf += p;
    }
    k
}
