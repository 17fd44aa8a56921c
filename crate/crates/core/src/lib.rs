pub mod error;
pub mod hermite;
pub mod evolve;
pub mod spectral;
pub mod stats;
pub mod estlab;
pub mod growth;
pub mod io;
pub mod selftest;

pub use error::{Error, Result};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Deterministic generator for stream `stream` of run seed `seed`.
pub fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
