//! Deterministic random streams.
//!
//! Every random quantity is drawn from a ChaCha8 stream whose key is expanded
//! from the run's 64-bit base seed (`ChaCha8Rng::seed_from_u64`) and whose
//! 64-bit stream id is `(domain << 56) | index`. A disorder realization `k`
//! reads stream `(DISORDER, k)`; a quantum trajectory `i` reads stream
//! `(TRAJECTORY, i)` and consumes exactly one `u64` per site per time step in
//! site order, so the word offset of the draw for `(step, site)` is fixed and
//! the stream behaves as a counter-based generator keyed by
//! `(base_seed, trajectory, site, step)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum Domain {
    Disorder = 1,
    Trajectory = 2,
}

pub fn stream(base_seed: u64, domain: Domain, index: u64) -> ChaCha8Rng {
    debug_assert!(index < (1 << 56));
    let mut rng = ChaCha8Rng::seed_from_u64(base_seed);
    rng.set_stream(((domain as u64) << 56) | index);
    rng
}

/// Uniform draw in `[0, 1)` with 53 random bits.
#[inline]
pub fn uniform(rng: &mut ChaCha8Rng) -> f64 {
    use rand::RngCore;
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}
