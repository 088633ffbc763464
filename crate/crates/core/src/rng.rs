//! Keyed randomness.
//!
//! Every random draw in a simulation comes from a generator keyed by the
//! master seed plus the identity of what is being drawn (a person and a step,
//! a pair and a step, ...). Draws therefore do not depend on iteration order
//! or on how many other entities exist.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub(crate) enum Stream {
    Ids = 1,
    InitialInfected = 2,
    Placement = 3,
    Anchor = 4,
    Noise = 5,
    Oracle = 6,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub(crate) fn key(seed: u64, stream: Stream, parts: &[u64]) -> u64 {
    let mut h = splitmix(seed ^ splitmix(stream as u64));
    for &p in parts {
        h = splitmix(h ^ p);
    }
    h
}

pub(crate) fn keyed(seed: u64, stream: Stream, parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(key(seed, stream, parts))
}

pub(crate) fn split_u128(v: u128) -> [u64; 2] {
    [(v >> 64) as u64, v as u64]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keys_separate_streams_and_parts() {
        let a = key(1, Stream::Placement, &[1, 2]);
        assert_ne!(a, key(1, Stream::Noise, &[1, 2]));
        assert_ne!(a, key(1, Stream::Placement, &[2, 1]));
        assert_ne!(a, key(2, Stream::Placement, &[1, 2]));
        assert_eq!(a, key(1, Stream::Placement, &[1, 2]));
    }
}
