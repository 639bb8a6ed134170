//! Deterministic seeding. Every random stream in the project is derived from a
//! single master seed plus a textual tag and an index, so reruns with the same
//! config are bit-exact and substreams never alias across components.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Derives a substream seed from `(master, tag, index)`.
pub fn derive(master: u64, tag: &str, index: u64) -> u64 {
    let mut state = master ^ fnv1a(tag.as_bytes());
    let _ = splitmix64(&mut state);
    state ^= index.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    splitmix64(&mut state)
}

/// Builds the deterministic RNG for a derived substream.
pub fn rng_from(master: u64, tag: &str, index: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(derive(master, tag, index))
}

/// Uniform draw in the open interval (0, 1); safe as input to log transforms.
pub fn uniform_open(rng: &mut impl Rng) -> f64 {
    let u: f64 = rng.gen();
    u.clamp(1e-12, 1.0 - 1e-12)
}

/// Standard Gumbel(0, 1) draw.
pub fn gumbel(rng: &mut impl Rng) -> f64 {
    -(-uniform_open(rng).ln()).ln()
}

/// Standard normal draw via Box-Muller.
pub fn normal(rng: &mut impl Rng) -> f64 {
    let u1 = uniform_open(rng);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}
