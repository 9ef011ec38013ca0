//! Seed derivation.
//!
//! Every random quantity is drawn from a [`ChaCha8Rng`]. A replication seed is
//! derived from the master seed and the replication index with SplitMix64, so
//! replication `r` of a Monte Carlo run can be regenerated on its own. Within a
//! replication each purpose gets its own ChaCha stream (see [`Stream`]), which
//! keeps, for example, the covariates identical whether or not the discrete
//! observation points are drawn afterwards.

use rand_chacha::ChaCha8Rng;
use rand_core::SeedableRng;

/// Independent ChaCha streams used inside one replication.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Lattice = 0,
    Covariates = 1,
    Errors = 2,
    Observations = 3,
}

/// SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of replication `rep` under `master`.
pub fn replication_seed(master: u64, rep: u64) -> u64 {
    splitmix64(splitmix64(master) ^ rep.wrapping_mul(0xD1B5_4A32_D192_ED03))
}

/// Generator for one purpose of one replication.
pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}
