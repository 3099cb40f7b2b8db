//! SplitMix64: the generator behind every randomized selection.
//!
//! State update `s += 0x9E3779B97F4A7C15`, output mixed by the standard
//! SplitMix64 finalizer. Uniforms take the top 53 bits. The sequence is a
//! pure function of the seed, identical on every platform.

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeededRng {
    seed: u64,
    state: u64,
    position: u64,
}

#[inline]
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            state: seed,
            position: 0,
        }
    }

    /// Independent stream for one series, derived from a master seed and the
    /// series id (FNV-1a over the id bytes, then mixed with the seed).
    pub fn substream(master: u64, id: &str) -> Self {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in id.as_bytes() {
            h ^= u64::from(*b);
            h = h.wrapping_mul(0x0000_0100_0000_01B3);
        }
        Self::new(mix(master ^ mix(h.wrapping_add(GOLDEN_GAMMA))))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Number of values drawn so far.
    pub fn position(&self) -> u64 {
        self.position
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        self.position += 1;
        mix(self.state)
    }

    /// Uniform in `[0, 1)`.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// `true` with probability `p` (always consumes one draw).
    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.next_f64() < p
    }
}
