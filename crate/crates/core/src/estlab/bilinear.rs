//! Bilinear estimates for a high-frequency free solution `e^{itA}Δ_N φ₁` times a
//! low-frequency one `e^{itA}Δ_M φ₂`.
//!
//! One battery run draws the data once per cell and records the `L²`, `H¹` and
//! Bourgain-normalized quantities together. Products are sampled on a uniform
//! tensor grid that resolves `|uv|²` exactly in `x` and spectrally in `y`; the
//! window in `y` covers the support of the low-frequency factor.

use super::{
    cell, echo, judge_slope, random_localized, sample_rng, trapezoid, window_samples, CellReport, Envelope,
    EstimateReport, Expectation, Op, SliceEvaluator, SweepPlan, VERSION,
};
use crate::error::{Error, Result};
use crate::spectral::{lp_block, lp_profile, time_sobolev_norm, BasisSpec, SpectralField, C64};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::sync::Arc;

/// `Lx = 1`, `Nx = 64`, `K = 4096`: holds `Δ_N` for `N ≤ 64`.
pub fn bilinear_spec() -> Arc<BasisSpec> {
    BasisSpec::new(1.0, 64, 4096).expect("valid spec")
}

/// Per-sample quantities of one cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BilinearSample {
    /// `∫₀ᵀ ‖uv‖²_{L²} dt`.
    pub l2: f64,
    /// `∫₀ᵀ ‖uv‖²_{H¹} dt` when requested.
    pub h1: Option<f64>,
    /// `‖χu χv‖_{L²L²} / (‖χu‖_{X^{0,b}} ‖χv‖_{X^{0,b}})` for enveloped data.
    pub bourgain: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BilinearCell {
    pub m: u32,
    pub n: u32,
    pub samples: Vec<BilinearSample>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BilinearBattery {
    pub plan: SweepPlan,
    pub cells: Vec<BilinearCell>,
}

fn block_weight(n: u32) -> impl Fn(f64) -> f64 {
    let n2 = (n * n) as f64;
    move |lam| if n == 1 { lp_profile(lam) } else { lp_block(lam, n2) }
}

/// Largest `|j|` whose row meets the spectral support of the block `n`.
fn max_row(spec: &BasisSpec, n: u32) -> i64 {
    let top = 2.0 * (n * n) as f64;
    let step = PI / spec.lx();
    ((top - 1.0).max(0.0).sqrt() / step).floor() as i64
}

/// Sampling grid of a cell.
pub(crate) struct Grid {
    ev: SliceEvaluator,
    hx: f64,
    hy: f64,
    with_h1: bool,
}

pub(crate) fn grid_for(spec: &BasisSpec, m: u32, n: u32, with_h1: bool) -> Grid {
    let (lo, hi) = (m.min(n) as f64, m.max(n) as f64);
    let reach = (2.0 * lo * lo).sqrt() + 4.5;
    let band = std::f64::consts::SQRT_2 * (lo + hi) + 10.0;
    let ny = (2.0 * reach * band / PI).ceil() as usize + 1;
    let hy = 2.0 * reach / (ny - 1) as f64;
    let ys: Vec<f64> = (0..ny).map(|i| -reach + i as f64 * hy).collect();
    let j = max_row(spec, m) + max_row(spec, n);
    let mx = ((2 * j + 1) as usize + 1).next_power_of_two();
    let hx = 2.0 * spec.lx() / mx as f64;
    let xs: Vec<f64> = (0..mx).map(|i| -spec.lx() + i as f64 * hx).collect();
    let kmax = ((2 * hi as usize * hi as usize) / 2 + 1).min(spec.modes());
    Grid { ev: SliceEvaluator::new(ys, xs, kmax, with_h1), hx, hy, with_h1 }
}

/// A field gathered onto its support rows, with eigenvalues for time stepping.
pub(crate) struct Packed {
    rows: Vec<usize>,
    g: Vec<C64>,
    lam: Vec<f64>,
}

impl Packed {
    pub(crate) fn new(u: &SpectralField, grid: &Grid) -> Result<Self> {
        let spec = u.spec();
        let kmax = grid.ev.kmax();
        let (rows, used) = super::support(u);
        if used > kmax {
            return Err(Error::Resolution(format!("field uses {used} Hermite modes, grid holds {kmax}")));
        }
        let g = grid.ev.gather(spec, u.coeffs(), &rows);
        let nr = rows.len();
        let mut lam = vec![0.0; g.len()];
        for (r, &row) in rows.iter().enumerate() {
            for m in 0..kmax {
                lam[m * nr + r] = spec.eigenvalue(row, m);
            }
        }
        Ok(Packed { rows, g, lam })
    }

    fn at(&self, t: f64) -> Vec<C64> {
        self.g.iter().zip(&self.lam).map(|(c, l)| c * C64::from_polar(1.0, l * t)).collect()
    }
}

/// `(‖w‖²_{L²}, ‖w‖²_{H¹})` of `w = e^{itA}u · e^{itA}v` on the grid.
pub(crate) fn frame_integrals(spec: &BasisSpec, grid: &Grid, u: &Packed, v: &Packed, t: f64) -> (f64, f64) {
    let ops: &[Op] = if grid.with_h1 { &[Op::Value, Op::Dx, Op::Dy] } else { &[Op::Value] };
    let fu = grid.ev.eval_gathered(spec, &u.at(t), &u.rows, ops);
    let fv = grid.ev.eval_gathered(spec, &v.at(t), &v.rows, ops);
    let nx = grid.ev.xs.len();
    let mut l2 = 0.0;
    let mut h1 = 0.0;
    for (iy, &y) in grid.ev.ys.iter().enumerate() {
        for ix in 0..nx {
            let p = iy * nx + ix;
            let w = (fu[0][p] * fv[0][p]).norm_sqr();
            l2 += w;
            if grid.with_h1 {
                let wx = fu[1][p] * fv[0][p] + fu[0][p] * fv[1][p];
                let wy = fu[2][p] * fv[0][p] + fu[0][p] * fv[2][p];
                h1 += wx.norm_sqr() + wy.norm_sqr() + y * y * w;
            }
        }
    }
    let area = grid.hx * grid.hy;
    (l2 * area, h1 * area)
}

/// Time integrals of one sample.
pub(crate) fn bilinear_sample(
    spec: &BasisSpec,
    grid: &Grid,
    u: &SpectralField,
    v: &SpectralField,
    envelopes: (&Envelope, &Envelope),
    plan: &SweepPlan,
) -> Result<BilinearSample> {
    let (nu, nv) = (u.norm(), v.norm());
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::EmptySample("bilinear input has zero norm".into()));
    }
    let (pu, pv) = (Packed::new(u, grid)?, Packed::new(v, grid)?);
    let dt = plan.frame_dt();
    let chi = window_samples(plan);
    let mut l2 = Vec::with_capacity(chi.len());
    let mut h1 = Vec::with_capacity(chi.len());
    let mut windowed = Vec::with_capacity(chi.len());
    let (mut sa, mut sb) = (Vec::with_capacity(chi.len()), Vec::with_capacity(chi.len()));
    for (n, &c) in chi.iter().enumerate() {
        let t = n as f64 * dt;
        let (a, b) = (envelopes.0.eval(t) * c, envelopes.1.eval(t) * c);
        let (il2, ih1) = frame_integrals(spec, grid, &pu, &pv, t);
        l2.push(il2);
        h1.push(ih1);
        windowed.push((a * b).norm_sqr() * il2);
        sa.push(a);
        sb.push(b);
    }
    let scale = (nu * nv).powi(2);
    let na = time_sobolev_norm(&sa, dt, plan.b) * nu;
    let nb = time_sobolev_norm(&sb, dt, plan.b) * nv;
    Ok(BilinearSample {
        l2: trapezoid(&l2, dt) / scale,
        h1: grid.with_h1.then(|| trapezoid(&h1, dt) / scale),
        bourgain: trapezoid(&windowed, dt).sqrt() / (na * nb),
    })
}

/// Runs every cell `M ≤ N` of the plan on random block-localized data.
/// `N = 1` uses `S_1` in place of `Δ_1`.
pub fn bilinear_battery(plan: &SweepPlan, with_h1: bool) -> Result<BilinearBattery> {
    plan.validate()?;
    let spec = bilinear_spec();
    let mut pairs = Vec::new();
    for &m in &plan.m {
        for &n in &plan.n {
            if m <= n {
                if n > 64 {
                    return Err(Error::Resolution(format!("N = {n} exceeds the resolvable range N <= 64")));
                }
                pairs.push((m, n));
            }
        }
    }
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("no cell with M <= N".into()));
    }
    let mut cells = Vec::new();
    for (ci, &(m, n)) in pairs.iter().enumerate() {
        let grid = grid_for(&spec, m, n, with_h1);
        let samples = (0..plan.samples)
            .into_par_iter()
            .map(|i| {
                let mut rng = sample_rng(plan.seed, ci, i);
                let u = random_localized(&spec, &mut rng, block_weight(n))?;
                let v = random_localized(&spec, &mut rng, block_weight(m))?;
                let (a, b) = (Envelope::random(&mut rng), Envelope::random(&mut rng));
                bilinear_sample(&spec, &grid, &u, &v, (&a, &b), plan)
            })
            .collect::<Result<Vec<_>>>()?;
        cells.push(BilinearCell { m, n, samples });
    }
    Ok(BilinearBattery { plan: plan.clone(), cells })
}

impl BilinearBattery {
    fn report(
        &self,
        name: &str,
        value: impl Fn(&BilinearSample) -> Option<f64>,
        normalizer: impl Fn(f64, f64) -> f64,
        expectation: Expectation,
    ) -> Result<EstimateReport> {
        let mut cells: Vec<CellReport> = Vec::new();
        for c in &self.cells {
            let vals: Vec<f64> = c
                .samples
                .iter()
                .map(|s| value(s).ok_or_else(|| Error::InvalidArgument(format!("battery lacks {name} data"))))
                .collect::<Result<_>>()?;
            let mut rep = cell(format!("M={},N={}", c.m, c.n), c.n as f64, &vals, normalizer(c.m as f64, c.n as f64))?;
            rep.m = Some(c.m);
            rep.n = Some(c.n);
            cells.push(rep);
        }
        let m0 = self.cells[0].m;
        let fitted: Vec<CellReport> = cells.iter().filter(|c| c.m == Some(m0)).cloned().collect();
        let (fit, observed, verdict) = if fitted.len() >= 2 {
            judge_slope(&fitted, expectation)?
        } else {
            (None, None, super::Verdict::Inconclusive)
        };
        Ok(EstimateReport {
            estimate: name.into(),
            version: VERSION.into(),
            config: echo(&bilinear_spec(), &self.plan, serde_json::json!({})),
            cells,
            fit,
            expectation,
            observed,
            verdict,
            notes: vec![format!("slope fitted against N over the cells with M = {m0}")],
        })
    }

    pub fn l2_report(&self) -> Result<EstimateReport> {
        self.report("bilinear-l2", |s| Some(s.l2), |m, n| m / n, Expectation::Band { expected: -1.0, tolerance: 0.3 })
    }

    pub fn h1_report(&self) -> Result<EstimateReport> {
        self.report("bilinear-h1", |s| s.h1, |m, n| m * n, Expectation::Band { expected: 1.0, tolerance: 0.3 })
    }

    pub fn bourgain_report(&self) -> Result<EstimateReport> {
        let d = self.plan.delta;
        self.report(
            "bilinear-bourgain",
            |s| Some(s.bourgain),
            |m, n| m.powf(d) * (m / n).powf(0.5 - d),
            Expectation::Band { expected: -(0.5 - d), tolerance: 0.2 },
        )
    }
}

/// Fitted `N`-slope of `∫₀ᵀ‖uv‖²_{L²}`, expected `-1`.
pub fn verify_bilinear_l2(plan: &SweepPlan) -> Result<EstimateReport> {
    bilinear_battery(plan, false)?.l2_report()
}

/// Fitted `N`-slope of `∫₀ᵀ‖uv‖²_{H¹}`, expected `1`.
pub fn verify_bilinear_h1(plan: &SweepPlan) -> Result<EstimateReport> {
    bilinear_battery(plan, true)?.h1_report()
}

/// Fitted `N`-slope of the Bourgain-normalized product, expected `-(1/2 - δ)`.
pub fn verify_bilinear_bourgain(plan: &SweepPlan) -> Result<EstimateReport> {
    if !(plan.b > 0.0 && plan.b < 0.5) {
        return Err(Error::InvalidArgument(format!("b must lie in (0, 1/2), got {}", plan.b)));
    }
    bilinear_battery(plan, false)?.bourgain_report()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hermite::{quadruple_product, HermiteBasis};

    fn tiny_plan() -> SweepPlan {
        SweepPlan { samples: 8, m: vec![1], n: vec![1, 2, 4], frames_per_unit: 32, ..SweepPlan::default() }
    }

    #[test]
    fn single_mode_closed_form() {
        let spec = bilinear_spec();
        let (j, k) = (2i64, 3usize);
        let u = SpectralField::unit(&spec, j, k).unwrap();
        let grid = grid_for(&spec, 8, 8, true);
        let plan = SweepPlan { frames_per_unit: 32, ..SweepPlan::default() };
        let e = Envelope::constant();
        let s = bilinear_sample(&spec, &grid, &u, &u, (&e, &e), &plan).unwrap();
        let hb = HermiteBasis::with_nodes(16, 64).unwrap();
        let q = |a: usize, b: usize, c: usize, d: usize| quadruple_product(a, b, c, d, &hb).unwrap();
        let lx2 = 2.0 * spec.lx();
        let xi = PI * j as f64 / spec.lx();
        let (lo, hi) = ((k as f64 / 2.0).sqrt(), ((k + 1) as f64 / 2.0).sqrt());
        let h4 = q(k, k, k, k);
        // (h h')² and (y h)² h² through the ladder relations
        let dd = lo * lo * q(k, k, k - 1, k - 1) - 2.0 * lo * hi * q(k, k, k - 1, k + 1) + hi * hi * q(k, k, k + 1, k + 1);
        let yy = lo * lo * q(k, k, k - 1, k - 1) + 2.0 * lo * hi * q(k, k, k - 1, k + 1) + hi * hi * q(k, k, k + 1, k + 1);
        let l2 = h4 / lx2;
        let h1 = (4.0 * xi * xi * h4 + 4.0 * dd + yy) / lx2;
        assert!((s.l2 - l2).abs() < 1e-6 * l2, "{} vs {l2}", s.l2);
        assert!((s.h1.unwrap() - h1).abs() < 1e-6 * h1, "{:?} vs {h1}", s.h1);
    }

    #[test]
    fn symmetric_and_phase_invariant() {
        let spec = bilinear_spec();
        let mut rng = sample_rng(4, 0, 0);
        let u = random_localized(&spec, &mut rng, block_weight(4)).unwrap();
        let v = random_localized(&spec, &mut rng, block_weight(2)).unwrap();
        let plan = SweepPlan { frames_per_unit: 16, ..SweepPlan::default() };
        let grid = grid_for(&spec, 2, 4, true);
        let e = Envelope::constant();
        let a = bilinear_sample(&spec, &grid, &u, &v, (&e, &e), &plan).unwrap();
        let b = bilinear_sample(&spec, &grid, &v, &u, (&e, &e), &plan).unwrap();
        let rot = |f: &SpectralField, th: f64| f.scaled(C64::from_polar(1.0, th));
        let c = bilinear_sample(&spec, &grid, &rot(&u, 0.7), &rot(&v, -2.1), (&e, &e), &plan).unwrap();
        for (x, y) in [(a.l2, b.l2), (a.l2, c.l2), (a.h1.unwrap(), b.h1.unwrap()), (a.h1.unwrap(), c.h1.unwrap())] {
            assert!((x - y).abs() < 1e-12 * x, "{x} vs {y}");
        }
    }

    #[test]
    fn free_data_matches_windowed_l2() {
        let spec = bilinear_spec();
        let mut rng = sample_rng(9, 0, 0);
        let u = random_localized(&spec, &mut rng, block_weight(4)).unwrap();
        let v = random_localized(&spec, &mut rng, block_weight(1)).unwrap();
        let plan = SweepPlan { frames_per_unit: 128, ..SweepPlan::default() };
        let grid = grid_for(&spec, 1, 4, false);
        let e = Envelope::constant();
        let s = bilinear_sample(&spec, &grid, &u, &v, (&e, &e), &plan).unwrap();
        // with constant envelopes only the window separates the two quantities
        let chi: Vec<C64> = window_samples(&plan).into_iter().map(|c| C64::new(c, 0.0)).collect();
        let chi4: Vec<f64> = chi.iter().map(|c| c.re.powi(4)).collect();
        let dt = plan.frame_dt();
        let factor = trapezoid(&chi4, dt).sqrt() / time_sobolev_norm(&chi, dt, plan.b).powi(2);
        let ratio = s.bourgain / (factor * s.l2.sqrt());
        assert!(ratio > 0.5 && ratio < 2.0, "{ratio}");
    }

    #[test]
    fn zero_factor_is_empty_sample() {
        let spec = bilinear_spec();
        let u = SpectralField::unit(&spec, 0, 0).unwrap();
        let z = SpectralField::zeros(&spec);
        let grid = grid_for(&spec, 1, 1, false);
        let e = Envelope::constant();
        let r = bilinear_sample(&spec, &grid, &u, &z, (&e, &e), &SweepPlan::default());
        assert!(matches!(r, Err(Error::EmptySample(_))));
    }

    #[test]
    fn battery_reports() {
        let bat = bilinear_battery(&tiny_plan(), true).unwrap();
        assert_eq!(bat.cells.len(), 3);
        for rep in [bat.l2_report().unwrap(), bat.h1_report().unwrap(), bat.bourgain_report().unwrap()] {
            assert!(rep.fit.is_some() && rep.observed.unwrap().is_finite());
            for c in &rep.cells {
                assert!(c.max_ratio.is_finite() && c.max_ratio > 0.0);
            }
        }
        assert!(!bilinear_battery(&tiny_plan(), false).unwrap().h1_report().is_ok());
        assert_eq!(bat, bilinear_battery(&tiny_plan(), true).unwrap());
    }
}
