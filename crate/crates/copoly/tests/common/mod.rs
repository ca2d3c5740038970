//! Shared helpers for the integration suites.

/// Deterministic 64-bit mixer for generating test parameter triples.
pub fn splitmix(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E3779B97F4A7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Uniform draw in [0, 1) from the mixer.
pub fn uniform(state: &mut u64) -> f64 {
    (splitmix(state) >> 11) as f64 / 9007199254740992.0
}
