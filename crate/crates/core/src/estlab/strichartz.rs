//! Local Strichartz norms of free solutions.

use super::{cell, echo, judge_stability, random_localized, sample_rng, EstimateReport, Expectation, SweepPlan, VERSION};
use crate::error::{Error, Result};
use crate::evolve::linear_propagate;
use crate::spectral::{BasisSpec, Padding, SpectralField, Trajectory, Transform};
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::sync::Arc;

/// A Lebesgue exponent in `[1, ∞]`. Serialized as a number or `"inf"`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Exponent {
    Finite(f64),
    Infinite,
}

impl Exponent {
    pub fn reciprocal(self) -> f64 {
        match self {
            Exponent::Finite(p) => 1.0 / p,
            Exponent::Infinite => 0.0,
        }
    }
}

impl Serialize for Exponent {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Exponent::Finite(p) => s.serialize_f64(*p),
            Exponent::Infinite => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Exponent {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(p) if p >= 1.0 && p.is_finite() => Ok(Exponent::Finite(p)),
            Raw::Num(p) => Err(serde::de::Error::custom(format!("exponent {p} outside [1, inf)"))),
            Raw::Str(s) if s == "inf" => Ok(Exponent::Infinite),
            Raw::Str(s) => Err(serde::de::Error::custom(format!("expected a number or \"inf\", got {s:?}"))),
        }
    }
}

fn admissible(q: Exponent, r: Exponent) -> Result<f64> {
    let r = match r {
        Exponent::Finite(r) if r >= 2.0 => r,
        _ => return Err(Error::InvalidArgument("r must be finite and at least 2".into())),
    };
    if (q.reciprocal() - (0.5 - 1.0 / r)).abs() > 1e-12 {
        return Err(Error::InvalidArgument(format!("(q, r) = ({q:?}, {r}) violates 1/q = 1/2 - 1/r")));
    }
    Ok(r)
}

/// `‖u‖_{L^q_t L^r_z}` over the frames of `traj`: `L^r` per frame on the
/// dealiased grid of `transform` (Parseval for `r = 2`), then the trapezoid rule
/// in time or the maximum for `q = ∞`.
pub fn strichartz_norm(traj: &Trajectory, q: Exponent, r: f64, transform: &Transform) -> Result<f64> {
    if !(r >= 1.0 && r.is_finite()) {
        return Err(Error::InvalidArgument(format!("r = {r} must be finite and at least 1")));
    }
    let per_frame: Vec<f64> = traj
        .frames
        .iter()
        .map(|u| {
            if r == 2.0 {
                u.norm()
            } else {
                let p = transform.to_physical(u);
                let f: Vec<f64> = p.data.iter().map(|c| c.norm().powf(r)).collect();
                transform.integrate(&f).max(0.0).powf(1.0 / r)
            }
        })
        .collect();
    Ok(match q {
        Exponent::Infinite => per_frame.iter().cloned().fold(0.0, f64::max),
        Exponent::Finite(q) => {
            let v: Vec<f64> = per_frame.iter().map(|x| x.powf(q)).collect();
            super::trapezoid(&v, traj.dt).powf(1.0 / q)
        }
    })
}

fn free_trajectory(phi: &SpectralField, frames: usize, dt: f64) -> Result<Trajectory> {
    Trajectory::new(0.0, dt, (0..frames).map(|n| linear_propagate(phi, n as f64 * dt)).collect())
}

/// Spec with twice the Fourier rows and Hermite modes.
pub(crate) fn doubled(spec: &Arc<BasisSpec>) -> Result<Arc<BasisSpec>> {
    BasisSpec::new(spec.lx(), 2 * spec.nx(), 2 * spec.modes())
}

/// Largest `‖e^{itA}φ‖_{L^q L^r} / ‖φ‖` over random data, at `spec` and at twice
/// its resolution and frame count. Data live on `spec` and are embedded.
pub fn verify_strichartz(spec: &Arc<BasisSpec>, q: Exponent, r: Exponent, plan: &SweepPlan) -> Result<EstimateReport> {
    plan.validate()?;
    let r = admissible(q, r)?;
    let fine = doubled(spec)?;
    let decay = spec.lambda_max() / 8.0;
    let data: Vec<SpectralField> = (0..plan.samples)
        .map(|i| random_localized(spec, &mut sample_rng(plan.seed, 0, i), |l| (-l / decay).exp()))
        .collect::<Result<_>>()?;
    let base_frames = plan.frames();
    let mut cells = Vec::new();
    for (level, target) in [spec, &fine].into_iter().enumerate() {
        let frames = (base_frames - 1) * (1 << level) + 1;
        let dt = plan.horizon / (frames - 1) as f64;
        let tr = Transform::new(target, Padding::Exact);
        let values: Vec<f64> = data
            .par_iter()
            .map(|phi| {
                let phi = phi.embed(target)?;
                let traj = free_trajectory(&phi, frames, dt)?;
                Ok(strichartz_norm(&traj, q, r, &tr)? / phi.norm())
            })
            .collect::<Result<_>>()?;
        let label = if level == 0 { "base" } else { "doubled" };
        let mut c = cell(label, target.nx() as f64, &values, 1.0)?;
        c.n = Some(target.nx() as u32);
        cells.push(c);
    }
    let max_factor = 2.0;
    let (factor, verdict) = judge_stability(&cells[0], &cells[1], max_factor);
    Ok(EstimateReport {
        estimate: "strichartz".into(),
        version: VERSION.into(),
        config: echo(spec, plan, serde_json::json!({ "q": q, "r": r, "decay": decay })),
        cells,
        fit: None,
        expectation: Expectation::Stable { max_factor },
        observed: Some(factor),
        verdict,
        notes: vec!["observed is the ratio of largest sample ratios between resolutions".into()],
    })
}
