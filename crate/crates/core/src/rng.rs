//! Deterministic random streams.
//!
//! A run owns one master seed. Every consumer (DoE, each chain of each level,
//! each optimizer restart, oracle chunks, replications) pulls an independent
//! ChaCha stream derived from the master seed and a stable name, so results
//! are bit-reproducible and independent of evaluation order or thread count.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::math::{fnv1a64, std_normal_quantile};

/// The generator used everywhere in the crate.
pub type RunRng = ChaCha12Rng;

/// Factory for named, independent random substreams of one master seed.
#[derive(Clone, Copy, Debug)]
pub struct SeedStreams {
    master: u64,
}

impl SeedStreams {
    pub fn new(master: u64) -> Self {
        Self { master }
    }

    pub fn master(&self) -> u64 {
        self.master
    }

    /// Stream identified by a name alone.
    pub fn named(&self, name: &str) -> RunRng {
        self.stream(fnv1a64(name.as_bytes()))
    }

    /// Stream identified by a name and one index (e.g. a restart number).
    pub fn indexed(&self, name: &str, index: u64) -> RunRng {
        let mut h = fnv1a64(name.as_bytes());
        h = mix(h, index);
        self.stream(h)
    }

    /// Stream identified by a name and two indices (e.g. level and chain).
    pub fn indexed2(&self, name: &str, a: u64, b: u64) -> RunRng {
        let mut h = fnv1a64(name.as_bytes());
        h = mix(h, a);
        h = mix(h, b);
        self.stream(h)
    }

    fn stream(&self, id: u64) -> RunRng {
        let mut rng = RunRng::seed_from_u64(self.master);
        rng.set_stream(id);
        rng
    }
}

/// Continue an FNV-1a hash over the little-endian bytes of `v`.
fn mix(h: u64, v: u64) -> u64 {
    let mut h = h;
    for b in v.to_le_bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Uniform draw on the open interval (0,1).
///
/// 53-bit mantissa construction; the zero value (probability 2^-53) is
/// rejected so downstream inverse-CDF transforms never see an endpoint.
pub fn unit_open(rng: &mut RunRng) -> f64 {
    loop {
        let v = (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        if v > 0.0 {
            return v;
        }
    }
}

/// Standard-normal draw by inverse-CDF transform of one uniform.
pub fn standard_normal(rng: &mut RunRng) -> f64 {
    std_normal_quantile(unit_open(rng))
}
