//! Bernstein inequalities for the projectors `S_N`.
//!
//! Samples are randomly centred and phased copies of the kernel of `Δ_N`,
//! `u = ψ_N(A) δ_{z₀}`, the data that saturate these inequalities. `L²` norms
//! come from Parseval; other norms from a patch of radius `48/N` around `z₀`,
//! which holds all but about `1e-5` of the kernel's mass.

use super::{cell, echo, judge_slope, sample_rng, support, EstimateReport, Expectation, Op, SliceEvaluator, SweepPlan, VERSION};
use crate::error::{Error, Result};
use crate::hermite::hermite_eval_all;
use crate::spectral::{lp_block, lp_profile, BasisSpec, SpectralField, C64};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::f64::consts::PI;
use std::sync::Arc;

const PATCH_POINTS: usize = 384;
/// Patch radius times `N`.
const PATCH_REACH: f64 = 48.0;

/// `Lx = 2`, `Nx = 128`, `K = max(N², 16)`: holds the spectrum of `S_N` for `N ≤ 64`.
pub fn bernstein_spec(n: u32) -> Result<Arc<BasisSpec>> {
    BasisSpec::new(2.0, 128, ((n * n) as usize).max(16))
}

struct Sample {
    u: SpectralField,
    center: (f64, f64),
}

fn kernel_sample(spec: &Arc<BasisSpec>, n: u32, rng: &mut ChaCha8Rng) -> Result<Sample> {
    let lx = spec.lx();
    let x0 = lx * (2.0 * rng.random::<f64>() - 1.0);
    let y0 = 2.0 * (2.0 * rng.random::<f64>() - 1.0);
    let phase = C64::from_polar(1.0, 2.0 * PI * rng.random::<f64>());
    let mut h = vec![0.0; spec.modes()];
    hermite_eval_all(y0, &mut h);
    let n2 = (n * n) as f64;
    let norm = 1.0 / (2.0 * lx).sqrt();
    let mut u = SpectralField::zeros(spec);
    u.map_modes(|row, k, lam, _| {
        let w = lp_block(lam, n2);
        if w == 0.0 {
            return C64::new(0.0, 0.0);
        }
        phase * C64::from_polar(w * h[k] * norm, -spec.xi(row) * x0)
    });
    if u.norm() == 0.0 {
        return Err(Error::EmptySample(format!("no resolved mode in the block N = {n}")));
    }
    Ok(Sample { u, center: (x0, y0) })
}

fn uniform(a: f64, b: f64, n: usize, closed: bool) -> Vec<f64> {
    let h = (b - a) / if closed { (n - 1) as f64 } else { n as f64 };
    (0..n).map(|i| a + i as f64 * h).collect()
}

/// `‖u‖_{L^p}` on the patch around `center`.
fn patch_norm(u: &SpectralField, p: f64, center: (f64, f64), radius: f64) -> f64 {
    let spec = u.spec();
    let lx = spec.lx();
    let (xs, hx) = if radius >= lx {
        (uniform(center.0 - lx, center.0 + lx, PATCH_POINTS, false), 2.0 * lx / PATCH_POINTS as f64)
    } else {
        (uniform(center.0 - radius, center.0 + radius, PATCH_POINTS, true), 2.0 * radius / (PATCH_POINTS - 1) as f64)
    };
    let ys = uniform(center.1 - radius, center.1 + radius, PATCH_POINTS, true);
    let hy = 2.0 * radius / (PATCH_POINTS - 1) as f64;
    let (rows, kmax) = support(u);
    let ev = SliceEvaluator::new(ys, xs, kmax.max(1), false);
    let vals = ev.eval(spec, u.coeffs(), &rows, &[Op::Value]).pop().expect("one operator");
    let sum: f64 = vals.iter().map(|v| v.norm().powf(p)).sum();
    (sum * hx * hy).powf(1.0 / p)
}

fn lebesgue(u: &SpectralField, p: u32, center: (f64, f64), radius: f64) -> f64 {
    if p == 2 {
        u.norm()
    } else {
        patch_norm(u, p as f64, center, radius)
    }
}

/// Fitted `N`-slope of `‖A^{s/2} S_N u‖_{L^q} / ‖u‖_{L^p}` over `plan.n`,
/// expected `s + 2/p - 2/q`.
pub fn verify_bernstein(p: u32, q: u32, s: u32, plan: &SweepPlan) -> Result<EstimateReport> {
    plan.validate()?;
    let allowed = [2, 4, 8];
    if !allowed.contains(&p) || !allowed.contains(&q) || p > q {
        return Err(Error::InvalidArgument(format!("need p <= q in {{2, 4, 8}}, got p = {p}, q = {q}")));
    }
    if s > 2 {
        return Err(Error::InvalidArgument(format!("s must be 0, 1 or 2, got {s}")));
    }
    if plan.n.len() < 2 {
        return Err(Error::InvalidArgument("at least two values of N are needed for a slope".into()));
    }
    let expected = s as f64 + 2.0 / p as f64 - 2.0 / q as f64;
    let mut cells = Vec::new();
    for (ci, &n) in plan.n.iter().enumerate() {
        if n > 64 {
            return Err(Error::Resolution(format!("N = {n} exceeds the resolvable range N <= 64")));
        }
        let spec = bernstein_spec(n)?;
        let n2 = (n * n) as f64;
        let radius = PATCH_REACH / n as f64;
        let values: Vec<f64> = (0..plan.samples)
            .into_par_iter()
            .map(|i| {
                let smp = kernel_sample(&spec, n, &mut sample_rng(plan.seed, ci, i))?;
                let mut v = smp.u.clone();
                v.map_modes(|_, _, lam, c| c * lp_profile(lam / n2) * lam.powf(s as f64 / 2.0));
                Ok(lebesgue(&v, q, smp.center, radius) / lebesgue(&smp.u, p, smp.center, radius))
            })
            .collect::<Result<_>>()?;
        let mut c = cell(format!("N={n}"), n as f64, &values, (n as f64).powf(expected))?;
        c.n = Some(n);
        cells.push(c);
    }
    let expectation = Expectation::Band { expected, tolerance: 0.15 };
    let (fit, observed, verdict) = judge_slope(&cells, expectation)?;
    Ok(EstimateReport {
        estimate: "bernstein".into(),
        version: VERSION.into(),
        config: echo(&*bernstein_spec(plan.n[0])?, plan, serde_json::json!({ "p": p, "q": q, "s": s })),
        cells,
        fit,
        expectation,
        observed,
        verdict,
        notes: vec!["samples are randomly centred kernels of the Littlewood-Paley block".into()],
    })
}
