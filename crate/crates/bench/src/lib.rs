//! Fixtures shared by the benchmarks.

use phnls::evolve::{InitialData, Normalization};
use phnls::spectral::{BasisSpec, SpectralField};
use std::sync::Arc;

/// Unit-`H¹` coherent Gaussian moving along x.
pub fn gaussian(spec: &Arc<BasisSpec>) -> SpectralField {
    InitialData::CoherentGaussian {
        center: [0.0, 0.0],
        momentum: [1.0, 0.0],
        width: 1.0,
        normalization: Normalization::H1(1.0),
    }
    .build(spec, 0)
    .expect("fixture builds")
}

/// Random datum with every mode populated.
pub fn random(spec: &Arc<BasisSpec>, seed: u64) -> SpectralField {
    InitialData::RandomSobolev { s: 0.0, decay: 1e9, normalization: Normalization::L2(1.0) }
        .build(spec, seed)
        .expect("fixture builds")
}
