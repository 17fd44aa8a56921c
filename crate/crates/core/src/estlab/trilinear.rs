//! Trilinear estimate in dual form:
//! `|∫∫ χu₁ χu₂ conj(χu₃) conj(χu₀)| ≤ C ‖u₀‖_{X^{-s,b'}} ‖u₁‖_{X^{s,b}} ‖u₂‖_{X^{ε,b}} ‖u₃‖_{X^{ε,b}}`.

use super::strichartz::doubled;
use super::{cell, echo, judge_stability, random_localized, sample_rng, Envelope, EstimateReport, Expectation, Op, SliceEvaluator, SweepPlan, VERSION};
use crate::error::{Error, Result};
use crate::evolve::linear_propagate;
use crate::hermite::gauss_hermite_nodes;
use crate::spectral::{bourgain_norm, BasisSpec, BourgainParams, SpectralField, Trajectory, Window, C64};
use rayon::prelude::*;
use std::f64::consts::SQRT_2;
use std::sync::Arc;

/// Base resolution of the trilinear experiment: `Lx = 8`, `Nx = 32`, `K = 16`.
pub fn trilinear_spec() -> Arc<BasisSpec> {
    BasisSpec::new(8.0, 32, 16).expect("valid spec")
}

/// Evaluator on which `∫ f₁ f₂ f₃ f₀ dz` of four fields of `spec` is exact:
/// `2Nx` points in `x` and a Gauss–Hermite rule contracted by `1/√2` in `y`.
pub(crate) struct QuarticGrid {
    ev: SliceEvaluator,
    weights: Vec<f64>,
    hx: f64,
    rows: Vec<usize>,
}

impl QuarticGrid {
    pub(crate) fn new(spec: &BasisSpec) -> Result<Self> {
        let k = spec.modes();
        let rule = gauss_hermite_nodes(2 * k + 1)?;
        let ys: Vec<f64> = rule.nodes.iter().map(|t| t / SQRT_2).collect();
        let weights = rule.scaled_weights.iter().map(|w| w / SQRT_2).collect();
        let mx = 2 * spec.nx();
        let hx = 2.0 * spec.lx() / mx as f64;
        let xs: Vec<f64> = (0..mx).map(|i| -spec.lx() + i as f64 * hx).collect();
        Ok(QuarticGrid { ev: SliceEvaluator::new(ys, xs, k, false), weights, hx, rows: (0..spec.nx()).collect() })
    }

    fn values(&self, u: &SpectralField) -> Vec<C64> {
        self.ev.eval(u.spec(), u.coeffs(), &self.rows, &[Op::Value]).pop().expect("one operator")
    }

    /// `∫ u₁ u₂ conj(u₃) conj(u₀) dz`.
    pub(crate) fn pairing(&self, u: [&SpectralField; 4]) -> C64 {
        let v: Vec<Vec<C64>> = u.iter().map(|f| self.values(f)).collect();
        let mx = self.ev.xs.len();
        let mut total = C64::new(0.0, 0.0);
        for (i, w) in self.weights.iter().enumerate() {
            let mut row = C64::new(0.0, 0.0);
            for p in i * mx..(i + 1) * mx {
                row += v[1][p] * v[2][p] * (v[3][p] * v[0][p]).conj();
            }
            total += row * *w;
        }
        total * self.hx
    }
}

/// `∫∫ χ⁴ u₁ u₂ conj(u₃) conj(u₀) dz dt` over four trajectories on a common
/// frame grid, `χ` being the smooth window of `window`. Time by trapezoid.
pub fn trilinear_pairing(traj: [&Trajectory; 4], window: Window) -> Result<C64> {
    let t = traj[0];
    for other in &traj[1..] {
        if other.len() != t.len() || other.dt != t.dt || other.t0 != t.t0 || !other.spec.compatible(&t.spec) {
            return Err(Error::Shape("trajectories must share spec and frame grid".into()));
        }
    }
    let grid = QuarticGrid::new(&t.spec)?;
    let vals: Vec<C64> = (0..t.len())
        .map(|n| {
            let chi = window.eval(t.time(n)).powi(4);
            grid.pairing([&traj[0].frames[n], &traj[1].frames[n], &traj[2].frames[n], &traj[3].frames[n]]) * chi
        })
        .collect();
    let dt = t.dt;
    let sum: C64 = vals.iter().sum::<C64>() - (vals[0] + vals[vals.len() - 1]) * 0.5;
    Ok(sum * dt)
}

fn enveloped(phi: &SpectralField, env: &Envelope, frames: usize, dt: f64) -> Result<Trajectory> {
    let f = (0..frames)
        .map(|n| {
            let t = n as f64 * dt;
            linear_propagate(phi, t).scaled(env.eval(t))
        })
        .collect();
    Trajectory::new(0.0, dt, f)
}

/// Largest dual-pairing ratio over random enveloped free solutions at the
/// base resolution and at doubled `Nx`, `K` and frame count.
pub fn verify_trilinear(spec: &Arc<BasisSpec>, plan: &SweepPlan) -> Result<EstimateReport> {
    plan.validate()?;
    let (b, bp) = (plan.b_embed, plan.b_prime);
    if !(bp > 0.0 && bp < 0.5 && b > 0.5 && b + bp < 1.0) {
        return Err(Error::InvalidArgument(format!("need 0 < b' < 1/2 < b and b + b' < 1, got b = {b}, b' = {bp}")));
    }
    let fine = doubled(spec)?;
    let decay = spec.lambda_max() / 8.0;
    type Data = ([SpectralField; 4], [Envelope; 4]);
    let data: Vec<Data> = (0..plan.samples)
        .map(|i| {
            let mut rng = sample_rng(plan.seed, 0, i);
            let mut f = Vec::with_capacity(4);
            for _ in 0..4 {
                f.push(random_localized(spec, &mut rng, |l| (-l / decay).exp())?);
            }
            let e = [(); 4].map(|_| Envelope::random(&mut rng));
            Ok((f.try_into().expect("four fields"), e))
        })
        .collect::<Result<_>>()?;
    let params = [
        BourgainParams::new(-plan.s, bp),
        BourgainParams::new(plan.s, b),
        BourgainParams::new(plan.epsilon, b),
        BourgainParams::new(plan.epsilon, b),
    ];
    let base_frames = plan.frames();
    let mut cells = Vec::new();
    for (level, target) in [spec, &fine].into_iter().enumerate() {
        let frames = (base_frames - 1) * (1 << level) + 1;
        let dt = plan.horizon / (frames - 1) as f64;
        let window = Window::new(0.0, plan.horizon);
        let values: Vec<f64> = data
            .par_iter()
            .map(|(f, e)| {
                let mut trajs = Vec::with_capacity(4);
                for i in 0..4 {
                    trajs.push(enveloped(&f[i].embed(target)?, &e[i], frames, dt)?);
                }
                let mut denom = 1.0;
                for i in 0..4 {
                    denom *= bourgain_norm(&trajs[i], &params[i])?;
                }
                let p = trilinear_pairing([&trajs[0], &trajs[1], &trajs[2], &trajs[3]], window)?;
                Ok(p.norm() / denom)
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
        estimate: "trilinear".into(),
        version: VERSION.into(),
        config: echo(spec, plan, serde_json::json!({ "decay": decay })),
        cells,
        fit: None,
        expectation: Expectation::Stable { max_factor },
        observed: Some(factor),
        verdict,
        notes: vec!["observed is the ratio of largest sample ratios between resolutions".into()],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hermite::{quadruple_product, HermiteBasis};

    #[test]
    fn single_mode_closed_form() {
        let spec = trilinear_spec();
        let (j, k) = (3, 5);
        let phi = SpectralField::unit(&spec, j, k).unwrap();
        let frames = 257;
        let dt = 1.0 / 256.0;
        let traj = enveloped(&phi, &Envelope::constant(), frames, dt).unwrap();
        let w = Window::new(0.0, 1.0);
        let p = trilinear_pairing([&traj, &traj, &traj, &traj], w).unwrap();
        let fine = 200_000;
        let chi4: f64 = (0..=fine)
            .map(|n| {
                let c = if n == 0 || n == fine { 0.5 } else { 1.0 };
                c * w.eval(n as f64 / fine as f64).powi(4)
            })
            .sum::<f64>()
            / fine as f64;
        let hb = HermiteBasis::with_nodes(16, 64).unwrap();
        let exact = chi4 * quadruple_product(k, k, k, k, &hb).unwrap() / (2.0 * spec.lx());
        assert!((p.re - exact).abs() < 1e-6 * exact && p.im.abs() < 1e-12, "{p} vs {exact}");
    }

    #[test]
    fn zero_factor_gives_zero() {
        let spec = trilinear_spec();
        let mut rng = sample_rng(1, 0, 0);
        let u = random_localized(&spec, &mut rng, |l| (-l / 8.0).exp()).unwrap();
        let a = enveloped(&u, &Envelope::constant(), 17, 1.0 / 16.0).unwrap();
        let z = enveloped(&SpectralField::zeros(&spec), &Envelope::constant(), 17, 1.0 / 16.0).unwrap();
        let p = trilinear_pairing([&a, &a, &z, &a], Window::new(0.0, 1.0)).unwrap();
        assert_eq!(p, C64::new(0.0, 0.0));
    }

    #[test]
    fn quartic_grid_is_exact() {
        let spec = BasisSpec::new(2.0, 16, 6).unwrap();
        let g = QuarticGrid::new(&spec).unwrap();
        let hb = HermiteBasis::with_nodes(6, 40).unwrap();
        // the x integral of e^{i(ξ₁+ξ₂-ξ₃-ξ₀)x} / (2Lx)² is 1/(2Lx) when the frequencies cancel
        let f = |j, k| SpectralField::unit(&spec, j, k).unwrap();
        let p = g.pairing([&f(1, 2), &f(2, 3), &f(3, 5), &f(4, 4)]);
        let exact = quadruple_product(2, 3, 5, 4, &hb).unwrap() / 4.0;
        assert!((p.re - exact).abs() < 1e-14 && p.im.abs() < 1e-14, "{p} vs {exact}");
        let p = g.pairing([&f(1, 2), &f(2, 3), &f(2, 5), &f(4, 4)]);
        assert!(p.norm() < 1e-15);
    }

    #[test]
    fn stable_and_deterministic() {
        let plan = SweepPlan { samples: 8, frames_per_unit: 64, ..SweepPlan::default() };
        let spec = trilinear_spec();
        let r = verify_trilinear(&spec, &plan).unwrap();
        assert_eq!(r.verdict, super::super::Verdict::Pass, "{:?}", r.observed);
        assert_eq!(r, verify_trilinear(&spec, &plan).unwrap());
    }
}
