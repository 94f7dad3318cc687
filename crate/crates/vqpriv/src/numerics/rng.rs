//! Deterministic random streams.
//!
//! The generator is xoshiro256++ seeded through SplitMix64, both with their
//! published constants, so a stream is fully determined by its 64-bit seed.
//! Child streams are derived from `(seed, label, index)` — never from the
//! parent's running state — so a component re-run in isolation sees exactly
//! the draws it saw inside a full run.

use crate::error::{Error, Result};

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// A seeded random stream.
///
/// `position` counts the values handed to the caller (one per `next_u64`,
/// `uniform` or `below` call; `n` per `gaussian(n)` call), independent of how
/// many raw generator words were consumed internally.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    position: u64,
    state: [u64; 4],
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        let mut sm = seed;
        let state = [
            splitmix64(&mut sm),
            splitmix64(&mut sm),
            splitmix64(&mut sm),
            splitmix64(&mut sm),
        ];
        RngStream {
            seed,
            position: 0,
            state,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn position(&self) -> u64 {
        self.position
    }

    /// Derives an independent child stream from `(seed, label, index)`.
    ///
    /// The derivation uses only the parent's seed, not its position, so the
    /// same `(label, index)` always names the same stream.
    pub fn child(&self, label: &str, index: u64) -> RngStream {
        RngStream::new(Self::derive_seed(self.seed, label, index))
    }

    /// Child-seed derivation: two SplitMix64 steps over the parent seed mixed
    /// with an FNV-1a hash of the label and the index.
    pub fn derive_seed(parent_seed: u64, label: &str, index: u64) -> u64 {
        let mut s = parent_seed ^ fnv1a(label.as_bytes());
        let first = splitmix64(&mut s);
        let mut s2 = first ^ index;
        splitmix64(&mut s2)
    }

    /// xoshiro256++ step; does not advance `position`.
    fn next_raw(&mut self) -> u64 {
        let s = &mut self.state;
        let result = s[0]
            .wrapping_add(s[3])
            .rotate_left(23)
            .wrapping_add(s[0]);
        let t = s[1] << 17;
        s[2] ^= s[0];
        s[3] ^= s[1];
        s[1] ^= s[2];
        s[0] ^= s[3];
        s[2] ^= t;
        s[3] = s[3].rotate_left(45);
        result
    }

    pub fn next_u64(&mut self) -> u64 {
        self.position += 1;
        self.next_raw()
    }

    /// Uniform draw in `[0, 1)` using the top 53 bits.
    pub fn uniform(&mut self) -> f64 {
        self.position += 1;
        self.unit_from_raw()
    }

    fn unit_from_raw(&mut self) -> f64 {
        (self.next_raw() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Unbiased uniform integer in `[0, n)` (Lemire's multiply-with-rejection).
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "below(0) is meaningless");
        self.position += 1;
        loop {
            let x = self.next_raw();
            let m = (x as u128) * (n as u128);
            let low = m as u64;
            if low < n {
                let threshold = n.wrapping_neg() % n;
                if low < threshold {
                    continue;
                }
            }
            return (m >> 64) as u64;
        }
    }

    /// `n` standard-normal draws via Box-Muller pairs. Advances `position`
    /// by exactly `n`; a spare half-pair is discarded.
    pub fn gaussian(&mut self, n: usize) -> Result<Vec<f64>> {
        if n == 0 {
            return Err(Error::EmptyInput { op: "gaussian" });
        }
        let mut out = Vec::with_capacity(n + 1);
        while out.len() < n {
            // 1 - u in (0, 1] keeps the log finite.
            let u1 = 1.0 - self.unit_from_raw();
            let u2 = self.unit_from_raw();
            let radius = (-2.0 * u1.ln()).sqrt();
            let angle = 2.0 * std::f64::consts::PI * u2;
            out.push(radius * angle.cos());
            out.push(radius * angle.sin());
        }
        out.truncate(n);
        self.position += n as u64;
        Ok(out)
    }

    /// In-place Fisher-Yates shuffle; advances `position` by `len - 1`.
    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            xs.swap(i, j);
        }
    }
}
