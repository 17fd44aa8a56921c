//! Fast invariant suite behind `phnls selftest`.

use crate::evolve::{simulate, InitialData, Normalization, Sign, SimConfig};
use crate::hermite::{hermite_analyze, hermite_synthesize, HermiteBasis};
use crate::spectral::{lp_project, BasisParams, BasisSpec, LpKind, Padding, SpectralField, Transform, C64};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::time::Instant;

#[derive(Debug, Clone, Default)]
pub struct SelftestOptions {
    /// Perturbs one Gauss–Hermite weight before the quadrature checks.
    pub corrupt_quadrature: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub tolerance: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelftestSummary {
    pub version: String,
    pub passed: bool,
    pub checks: Vec<Check>,
    pub failures: Vec<String>,
}

fn random_field(spec: &std::sync::Arc<BasisSpec>, seed: u64, decay: f64) -> SpectralField {
    let mut rng = crate::seeded_rng(seed, 0);
    let mut u = SpectralField::zeros(spec);
    u.map_modes(|_, _, lam, _| {
        let a: f64 = StandardNormal.sample(&mut rng);
        let b: f64 = StandardNormal.sample(&mut rng);
        C64::new(a, b) * (-lam / decay).exp()
    });
    u
}

fn rel(a: &SpectralField, b: &SpectralField) -> f64 {
    a.sub(b).norm() / b.norm()
}

fn orthonormality(basis: &HermiteBasis) -> f64 {
    basis.orthonormality_defect()
}

fn hermite_roundtrip(basis: &HermiteBasis) -> f64 {
    let mut rng = crate::seeded_rng(11, 0);
    let c: Vec<C64> = (0..basis.modes())
        .map(|_| C64::new(StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng)))
        .collect();
    let back = hermite_analyze(&hermite_synthesize(&c, basis).expect("sizes match"), basis).expect("sizes match");
    let num: f64 = c.iter().zip(&back).map(|(a, b)| (a - b).norm_sqr()).sum();
    let den: f64 = c.iter().map(|a| a.norm_sqr()).sum();
    (num / den).sqrt()
}

fn transform_roundtrip() -> f64 {
    let spec = BasisSpec::new(8.0, 64, 48).expect("valid spec");
    let u = random_field(&spec, 3, 1e9);
    [Padding::None, Padding::TwoThirds, Padding::Exact]
        .iter()
        .map(|&p| {
            let tr = Transform::new(&spec, p);
            rel(&tr.to_spectral(&tr.to_physical(&u)).expect("grid matches"), &u)
        })
        .fold(0.0, f64::max)
}

fn projector_algebra() -> f64 {
    let spec = BasisSpec::new(2.0, 32, 64).expect("valid spec");
    let u = random_field(&spec, 5, 1e9);
    let lp = |f: &SpectralField, n, kind| lp_project(f, n, kind).expect("dyadic N");
    let mut sum = lp(&u, 1, LpKind::S);
    let mut n = 2;
    while ((n * n) as f64) < 4.0 * spec.lambda_max() {
        sum = sum.add(&lp(&u, n, LpKind::Delta));
        n *= 2;
    }
    let telescoping = rel(&sum, &u);
    let separated = lp(&lp(&u, 4, LpKind::Delta), 16, LpKind::Delta).norm() / u.norm();
    let d = lp(&u, 4, LpKind::Delta);
    let absorbed = rel(&lp(&d, 16, LpKind::S), &d);
    telescoping.max(separated).max(absorbed)
}

/// Relative mass and energy drift of a one-second defocusing run.
fn conservation() -> (f64, f64) {
    let init = InitialData::CoherentGaussian {
        center: [0.3, 0.2],
        momentum: [1.0, 0.0],
        width: 1.0,
        normalization: Normalization::H1(1.0),
    };
    let mut cfg = SimConfig::new(BasisParams { lx: 8.0, nx: 64, k: 40, nodes: None }, Sign::Plus, 1e-3, 1.0, init);
    cfg.output_every = 100;
    let out = simulate(&cfg).expect("selftest run is well posed");
    let o0 = out.observables[0];
    out.observables.iter().fold((0.0f64, 0.0f64), |(m, e), o| {
        (m.max((o.mass / o0.mass - 1.0).abs()), e.max((o.energy / o0.energy - 1.0).abs()))
    })
}

pub fn run_selftest(opts: &SelftestOptions) -> SelftestSummary {
    let mut basis = HermiteBasis::new(128).expect("K = 128 builds");
    if opts.corrupt_quadrature {
        basis.corrupt_for_testing();
    }
    let mut checks = Vec::new();
    let mut record = |name: &str, tolerance: f64, f: &mut dyn FnMut() -> f64| {
        let start = Instant::now();
        let value = f();
        checks.push(Check {
            name: name.into(),
            passed: value <= tolerance,
            value,
            tolerance,
            seconds: start.elapsed().as_secs_f64(),
        });
    };
    record("discrete-orthonormality", 1e-9, &mut || orthonormality(&basis));
    record("hermite-roundtrip", 1e-10, &mut || hermite_roundtrip(&basis));
    record("transform-roundtrip", 1e-10, &mut transform_roundtrip);
    record("projector-algebra", 1e-12, &mut projector_algebra);
    let mut energy = 0.0;
    record("mass-conservation", 1e-10, &mut || {
        let (m, e) = conservation();
        energy = e;
        m
    });
    record("energy-conservation", 1e-5, &mut || energy);
    let failures: Vec<String> = checks.iter().filter(|c| !c.passed).map(|c| c.name.clone()).collect();
    SelftestSummary { version: crate::io::VERSION.into(), passed: failures.is_empty(), checks, failures }
}
