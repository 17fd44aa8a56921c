//! Sobolev-norm growth tracking, comparability of `∂ₜᵏu` with `iᵏAᵏu`, and the
//! integrands of the modified energies.

use crate::error::{Error, Result};
use crate::evolve::{apply_a, cubic_derivative, simulate_with, time_derivatives, Observer, Sign, SimConfig, MAX_TIME_DERIVATIVE};
use crate::spectral::{sobolev_norm, Padding, PhysicalField, SpectralField, Trajectory, Transform, C64};
use crate::stats::{fit_line, LineFit};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

const I: C64 = C64 { re: 0.0, im: 1.0 };

/// Largest `max/min` of `‖u‖_{H¹}` accepted as bounded.
pub const H1_RATIO_LIMIT: f64 = 1.5;
/// Coarsest frame step accepted by [`energy_derivative_check`].
pub const MAX_CHECK_STEP: f64 = 1e-2;

/// Which flow generates the time derivatives: `κ = 0` or `κ = ±1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Flow {
    Linear,
    Cubic(Sign),
}

impl Flow {
    pub fn kappa(self) -> f64 {
        match self {
            Flow::Linear => 0.0,
            Flow::Cubic(s) => s.value(),
        }
    }
}

impl From<Sign> for Flow {
    fn from(s: Sign) -> Self {
        Flow::Cubic(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrowthPoint {
    pub t: f64,
    /// `‖u‖_{H^{2k}}`.
    pub h2k: f64,
    pub h1: f64,
    pub mass: f64,
    pub energy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthReport {
    pub version: String,
    pub k: u32,
    pub horizon: f64,
    pub stride: usize,
    pub config: SimConfig,
    pub series: Vec<GrowthPoint>,
    /// Fitted exponent of `‖u‖_{H^{2k}} ≈ C⟨t⟩^α` over the second half of the run.
    pub alpha: f64,
    /// 95% confidence interval of `alpha`.
    pub alpha_ci: [f64; 2],
    pub fit: LineFit,
    pub fit_from: f64,
    /// `(2/3)(2k-1)`.
    pub bound: f64,
    /// `max/min` of the `H¹` column.
    pub h1_ratio: f64,
    /// Largest relative deviation of mass and energy from their initial values.
    pub mass_drift: f64,
    pub energy_drift: f64,
}

pub const SERIES_HEADER: &str = "t,h2k,h1,mass,energy";

impl GrowthReport {
    /// Base name of the output files, e.g. `growth_seed0_k1_sign+1_T100`.
    pub fn file_stem(&self) -> String {
        let sign = if self.config.sign.is_defocusing() { "+1" } else { "-1" };
        format!("growth_seed{}_k{}_sign{}_T{}", self.config.seed, self.k, sign, self.horizon)
    }

    pub fn series_csv(&self) -> String {
        let mut s = String::from(SERIES_HEADER);
        s.push('\n');
        for p in &self.series {
            s.push_str(&format!("{:?},{:?},{:?},{:?},{:?}\n", p.t, p.h2k, p.h1, p.mass, p.energy));
        }
        s
    }
}

pub fn growth_bound(k: u32) -> f64 {
    2.0 / 3.0 * (2.0 * k as f64 - 1.0)
}

fn japanese(t: f64) -> f64 {
    (1.0 + t * t).sqrt()
}

fn relative_drift(v: impl Iterator<Item = f64> + Clone) -> f64 {
    let first = v.clone().next().unwrap_or(0.0);
    let scale = first.abs().max(f64::MIN_POSITIVE);
    v.map(|x| (x - first).abs() / scale).fold(0.0, f64::max)
}

/// Runs `config` to `horizon`, records `‖u‖_{H^{2k}}` every `stride` steps and
/// fits `α` by least squares of `log‖u‖_{H^{2k}}` on `log⟨t⟩`, `⟨t⟩ = (1+t²)^{1/2}`,
/// over `t ≥ horizon/2`.
pub fn track_growth(config: &SimConfig, k: u32, horizon: f64, stride: usize) -> Result<GrowthReport> {
    if !(1..=2).contains(&k) {
        return Err(Error::InvalidArgument(format!("k must be 1 or 2, got {k}")));
    }
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::InvalidArgument(format!("horizon must be positive, got {horizon}")));
    }
    if stride == 0 {
        return Err(Error::InvalidArgument("stride must be at least 1".into()));
    }
    let cfg = SimConfig { t_end: horizon, output_every: stride, ..config.clone() };
    let spec = cfg.validate()?;
    let observer = Observer::new(&spec, cfg.kappa());
    let s = 2.0 * k as f64;
    let mut series = Vec::new();
    simulate_with(&cfg, |t, u| {
        if series.is_empty() && u.norm() == 0.0 {
            return Err(Error::InvalidArgument("growth of the zero datum is undefined".into()));
        }
        let o = observer.observe(t, u);
        series.push(GrowthPoint { t, h2k: sobolev_norm(u, s), h1: o.h1, mass: o.mass, energy: o.energy });
        Ok(())
    })?;
    let (hmax, hmin) = series.iter().fold((0.0f64, f64::INFINITY), |(a, b), p| (a.max(p.h1), b.min(p.h1)));
    let h1_ratio = hmax / hmin;
    if !(h1_ratio < H1_RATIO_LIMIT) {
        return Err(Error::AssumptionViolated(format!(
            "H1 norm ranges over a factor {h1_ratio:.3} (limit {H1_RATIO_LIMIT})"
        )));
    }
    let fit_from = horizon / 2.0;
    let tail: Vec<&GrowthPoint> = series.iter().filter(|p| p.t >= fit_from).collect();
    let xs: Vec<f64> = tail.iter().map(|p| japanese(p.t).ln()).collect();
    let ys: Vec<f64> = tail.iter().map(|p| p.h2k.ln()).collect();
    let fit = fit_line(&xs, &ys)?;
    let half = if fit.points > 2 {
        let t = StudentsT::new(0.0, 1.0, (fit.points - 2) as f64).map_err(|e| Error::Numerical(e.to_string()))?;
        t.inverse_cdf(0.975) * fit.slope_stderr
    } else {
        f64::INFINITY
    };
    Ok(GrowthReport {
        version: crate::estlab::VERSION.into(),
        k,
        horizon,
        stride,
        mass_drift: relative_drift(series.iter().map(|p| p.mass)),
        energy_drift: relative_drift(series.iter().map(|p| p.energy)),
        config: cfg,
        series,
        alpha: fit.slope,
        alpha_ci: [fit.slope - half, fit.slope + half],
        fit,
        fit_from,
        bound: growth_bound(k),
        h1_ratio,
    })
}

/// `(‖∂ₜᵏu - iᵏAᵏu‖_{H^s}, ‖u‖_{H^{s+2k-1}})` at one time slice.
pub fn comparability_check(u: &SpectralField, k: usize, s: u32, flow: impl Into<Flow>) -> Result<(f64, f64)> {
    if k > 2 {
        return Err(Error::Unsupported(format!("comparability is checked for k <= 2, got {k}")));
    }
    if s > 2 {
        return Err(Error::InvalidArgument(format!("s must be 0, 1 or 2, got {s}")));
    }
    let (dk, _) = crate::evolve::time_derivative(u, k, flow.into().kappa())?;
    let mut free = u.clone();
    for _ in 0..k {
        free = apply_a(&free);
        free.scale(I);
    }
    let rhs_order = s as f64 + 2.0 * k as f64 - 1.0;
    Ok((sobolev_norm(&dk.sub(&free), s as f64), sobolev_norm(u, rhs_order)))
}

/// Spatial operator `L` of the modified-energy integrands.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpatialOp {
    Dx,
    Dy,
    /// Multiplication by `⟨y⟩ = (1+y²)^{1/2}`.
    JapaneseY,
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Conj {
    U,
    UBar,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TermKind {
    /// `m₁+m₂+m₃ = k`.
    S,
    /// `n₁+n₂+n₃ = k+1` with `n₁ ≤ k`.
    R,
}

/// `∫ ∂ₜᵏLu₀ ∂ₜ^{m₁}Lu₁ ∂ₜ^{m₂}u₂ ∂ₜ^{m₃}u₃ dz`, each `uᵢ` being `u` or `ū`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnergyTermSpec {
    pub op: SpatialOp,
    pub pattern: [Conj; 4],
    pub kind: TermKind,
    pub k: usize,
    pub orders: [usize; 3],
}

impl EnergyTermSpec {
    pub fn validate(&self) -> Result<()> {
        let sum: usize = self.orders.iter().sum();
        match self.kind {
            TermKind::S if sum != self.k => {
                return Err(Error::InvalidArgument(format!("S-type orders must sum to k = {}, got {sum}", self.k)))
            }
            TermKind::R if sum != self.k + 1 || self.orders[0] > self.k => {
                return Err(Error::InvalidArgument(format!(
                    "R-type orders must sum to k+1 = {} with n1 <= k, got {:?}",
                    self.k + 1,
                    self.orders
                )))
            }
            _ => {}
        }
        let top = self.max_order();
        if top > MAX_TIME_DERIVATIVE {
            return Err(Error::Unsupported(format!(
                "time derivative of order {top} exceeds the cap {MAX_TIME_DERIVATIVE}"
            )));
        }
        Ok(())
    }

    fn max_order(&self) -> usize {
        self.orders.iter().copied().max().unwrap_or(0).max(self.k)
    }
}

fn samples(tr: &Transform, f: &SpectralField, op: SpatialOp) -> PhysicalField {
    match op {
        SpatialOp::Identity => tr.to_physical(f),
        SpatialOp::Dy => tr.to_physical_dy(f),
        SpatialOp::Dx => {
            let spec = f.spec().clone();
            let mut g = f.clone();
            g.map_modes(|row, _, _, c| c * C64::new(0.0, spec.xi(row)));
            tr.to_physical(&g)
        }
        SpatialOp::JapaneseY => {
            let mut p = tr.to_physical(f);
            let mx = p.mx;
            for (i, &y) in tr.y_nodes().iter().enumerate() {
                p.data[i * mx..(i + 1) * mx].iter_mut().for_each(|v| *v *= japanese(y));
            }
            p
        }
    }
}

/// Evaluates one modified-energy integrand on the dealiased grid. The time
/// derivatives are generated by `flow`.
pub fn modified_energy_term(u: &SpectralField, term: &EnergyTermSpec, flow: impl Into<Flow>) -> Result<C64> {
    term.validate()?;
    let d = time_derivatives(u, term.max_order(), flow.into().kappa())?;
    let tr = Transform::new(u.spec(), Padding::Exact);
    let order = [term.k, term.orders[0], term.orders[1], term.orders[2]];
    let factors: Vec<PhysicalField> = (0..4)
        .map(|i| {
            let op = if i < 2 { term.op } else { SpatialOp::Identity };
            let mut p = samples(&tr, &d.orders[order[i]], op);
            if term.pattern[i] == Conj::UBar {
                p.data.iter_mut().for_each(|v| *v = v.conj());
            }
            p
        })
        .collect();
    let prod: Vec<C64> = (0..factors[0].data.len())
        .map(|n| factors[0].data[n] * factors[1].data[n] * factors[2].data[n] * factors[3].data[n])
        .collect();
    let v = tr.integrate_complex(&prod);
    if !v.is_finite() {
        return Err(Error::Numerical("modified-energy integrand is not finite".into()));
    }
    Ok(v)
}

/// Both sides of `d/dt ½‖∂ₜᵏAu‖² = -κ Re⟨P∂ₜᵏ(|u|²u), A∂ₜᵏ⁺¹u⟩` at the interior frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyCheck {
    pub k: usize,
    pub times: Vec<f64>,
    /// Centred difference of `½‖∂ₜᵏAu‖²`.
    pub lhs: Vec<f64>,
    pub rhs: Vec<f64>,
    pub residual: Vec<f64>,
}

impl EnergyCheck {
    pub fn max_residual(&self) -> f64 {
        self.residual.iter().fold(0.0, |a, r| a.max(r.abs()))
    }
}

/// Checks the exact energy identity along `traj`. The trajectory must come
/// from the flow named by `flow`.
pub fn energy_derivative_check(traj: &Trajectory, k: usize, flow: impl Into<Flow>) -> Result<EnergyCheck> {
    if k > 1 {
        return Err(Error::Unsupported(format!("the energy identity is checked for k <= 1, got {k}")));
    }
    if traj.dt > MAX_CHECK_STEP {
        return Err(Error::Resolution(format!(
            "frame step {} is too coarse for centred differences; record frames at most {MAX_CHECK_STEP} apart",
            traj.dt
        )));
    }
    if traj.len() < 3 {
        return Err(Error::InvalidArgument("the identity needs at least three frames".into()));
    }
    let kappa = flow.into().kappa();
    let tr = Transform::new(&traj.spec, Padding::Exact);
    let energy = |u: &SpectralField| -> Result<f64> {
        let d = time_derivatives(u, k, kappa)?;
        Ok(0.5 * apply_a(&d.orders[k]).norm_sqr())
    };
    let levels: Vec<f64> = traj.frames.iter().map(energy).collect::<Result<_>>()?;
    let mut out = EnergyCheck { k, times: vec![], lhs: vec![], rhs: vec![], residual: vec![] };
    for n in 1..traj.len() - 1 {
        let lhs = (levels[n + 1] - levels[n - 1]) / (2.0 * traj.dt);
        let rhs = if kappa == 0.0 {
            0.0
        } else {
            let d = time_derivatives(&traj.frames[n], k, kappa)?;
            let phys: Vec<PhysicalField> = d.orders.iter().map(|f| tr.to_physical(f)).collect();
            let nk = tr.to_spectral(&cubic_derivative(&phys, k))?;
            let mut w = apply_a(&d.orders[k]);
            w.axpy(C64::new(kappa, 0.0), &nk);
            w.scale(I);
            -kappa * nk.inner(&apply_a(&w)).re
        };
        out.times.push(traj.time(n));
        out.lhs.push(lhs);
        out.rhs.push(rhs);
        out.residual.push(lhs - rhs);
    }
    Ok(out)
}
