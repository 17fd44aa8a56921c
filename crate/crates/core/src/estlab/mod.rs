//! Randomized sweeps that measure the scaling exponents of linear and
//! multilinear estimates for `A`.
//!
//! Each experiment samples spectrally localized data per cell, records the
//! sample ratios, and fits a log-log slope across cells or compares two
//! resolutions. Cells draw from independent generator streams derived from
//! `(seed, cell, sample)`, so results do not depend on thread scheduling.

mod bernstein;
mod bilinear;
mod orthogonality;
mod strichartz;
mod trilinear;

pub use bernstein::{bernstein_spec, verify_bernstein};
pub use bilinear::{
    bilinear_battery, bilinear_spec, verify_bilinear_bourgain, verify_bilinear_h1, verify_bilinear_l2, BilinearBattery,
    BilinearCell, BilinearSample,
};
pub use orthogonality::{
    orthogonality_spec, quadruple_integral_exact, quadruple_integral_quadrature, verify_almost_orthogonality, LogValue,
};
pub use strichartz::{strichartz_norm, verify_strichartz, Exponent};
pub use trilinear::{trilinear_pairing, trilinear_spec, verify_trilinear};

use crate::error::{Error, Result};
use crate::hermite::hermite_eval_all;
use crate::spectral::{zgemm, BasisSpec, SpectralField, C64};
use crate::stats::{fit_loglog, LineFit};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::sync::Arc;

/// Fits with `R²` below this are reported as inconclusive.
pub const MIN_R2: f64 = 0.9;

fn default_m() -> Vec<u32> {
    vec![4]
}
fn default_n() -> Vec<u32> {
    vec![8, 16, 32, 64]
}
fn default_lambda0() -> Vec<u32> {
    vec![16, 24, 32, 48, 64]
}

/// Sweep parameters shared by every experiment. Fields an experiment does
/// not use are ignored by it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepPlan {
    /// Low dyadic frequencies.
    pub m: Vec<u32>,
    /// High dyadic frequencies.
    pub n: Vec<u32>,
    /// High shell indices for the quadruple products.
    pub lambda0: Vec<u32>,
    /// Low shell indices `λ₁, λ₂, λ₃`.
    pub lambda_low: [u32; 3],
    pub samples: usize,
    pub seed: u64,
    /// Time horizon `T`.
    pub horizon: f64,
    /// Modulation exponent for estimates with `b < 1/2`.
    pub b: f64,
    /// Modulation exponent for the embedding side (`b > 1/2`).
    pub b_embed: f64,
    /// Dual modulation exponent `b'`.
    pub b_prime: f64,
    pub delta: f64,
    pub epsilon: f64,
    /// Regularity `s` of the trilinear estimate.
    pub s: f64,
    pub frames_per_unit: usize,
    /// Allows violated preconditions and records the result without a verdict.
    pub diagnostic: bool,
}

impl Default for SweepPlan {
    fn default() -> Self {
        SweepPlan {
            m: default_m(),
            n: default_n(),
            lambda0: default_lambda0(),
            lambda_low: [2, 2, 2],
            samples: 32,
            seed: 0,
            horizon: 1.0,
            b: 0.4,
            b_embed: 0.6,
            b_prime: 0.35,
            delta: 0.1,
            epsilon: 0.1,
            s: 1.0,
            frames_per_unit: 128,
            diagnostic: false,
        }
    }
}

impl SweepPlan {
    pub fn validate(&self) -> Result<()> {
        if self.samples < 8 {
            return Err(Error::InvalidArgument(format!("at least 8 samples per cell, got {}", self.samples)));
        }
        if !(self.horizon > 0.0) {
            return Err(Error::InvalidArgument("horizon must be positive".into()));
        }
        if self.frames_per_unit < 16 {
            return Err(Error::InvalidArgument("at least 16 frames per unit time".into()));
        }
        for &v in self.m.iter().chain(&self.n) {
            if !crate::spectral::is_dyadic(v) {
                return Err(Error::InvalidArgument(format!("{v} is not a power of two")));
            }
        }
        Ok(())
    }

    pub(crate) fn frames(&self) -> usize {
        (self.horizon * self.frames_per_unit as f64).round() as usize + 1
    }

    pub(crate) fn frame_dt(&self) -> f64 {
        self.horizon / (self.frames() - 1) as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
    /// Diagnostic runs record values without judging them.
    Recorded,
}

/// What an experiment is checked against.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Expectation {
    /// Fitted slope within `expected ± tolerance`.
    Band { expected: f64, tolerance: f64 },
    /// Fitted slope at most `limit`.
    AtMost { limit: f64 },
    /// Largest sample ratio changes by less than `max_factor` between resolutions.
    Stable { max_factor: f64 },
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub label: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub m: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda0: Option<u32>,
    /// Abscissa of the fit.
    pub x: f64,
    pub samples: usize,
    /// Sample values divided by the predicted size.
    pub max_ratio: f64,
    pub mean_ratio: f64,
    /// Sample values before normalization by the predicted size.
    pub max_value: f64,
    pub mean_value: f64,
    /// `log10` of the largest and mean values; `None` when they vanish.
    pub log10_max_value: Option<f64>,
    pub log10_mean_value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub estimate: String,
    pub version: String,
    /// Echo of the basis spec and plan that produced the report.
    pub config: serde_json::Value,
    pub cells: Vec<CellReport>,
    pub fit: Option<LineFit>,
    pub expectation: Expectation,
    /// Slope or stability factor compared against the expectation.
    pub observed: Option<f64>,
    pub verdict: Verdict,
    pub notes: Vec<String>,
}

pub use crate::io::VERSION;

impl EstimateReport {
    /// Flattened rows for plotting.
    pub fn csv_rows(&self) -> Vec<Vec<String>> {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:?}")).unwrap_or_default();
        let optu = |v: Option<u32>| v.map(|x| x.to_string()).unwrap_or_default();
        self.cells
            .iter()
            .map(|c| {
                vec![
                    self.estimate.clone(),
                    c.label.clone(),
                    optu(c.m),
                    optu(c.n),
                    optu(c.lambda0),
                    format!("{:?}", c.x),
                    c.samples.to_string(),
                    format!("{:?}", c.max_ratio),
                    format!("{:?}", c.mean_ratio),
                    format!("{:?}", c.max_value),
                    format!("{:?}", c.mean_value),
                    opt(c.log10_max_value),
                    opt(c.log10_mean_value),
                ]
            })
            .collect()
    }

    pub const CSV_HEADER: [&'static str; 13] = [
        "estimate",
        "label",
        "m",
        "n",
        "lambda0",
        "x",
        "samples",
        "max_ratio",
        "mean_ratio",
        "max_value",
        "mean_value",
        "log10_max_value",
        "log10_mean_value",
    ];
}

/// Summarizes per-sample values and their normalizer into a cell.
pub(crate) fn cell(label: impl Into<String>, x: f64, values: &[f64], normalizer: f64) -> Result<CellReport> {
    if values.is_empty() {
        return Err(Error::EmptySample("cell has no samples".into()));
    }
    if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::Numerical("sample value is negative or not finite".into()));
    }
    let max = values.iter().cloned().fold(0.0, f64::max);
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let lg = |v: f64| (v > 0.0).then(|| v.log10());
    Ok(CellReport {
        label: label.into(),
        m: None,
        n: None,
        lambda0: None,
        x,
        samples: values.len(),
        max_ratio: max / normalizer,
        mean_ratio: mean / normalizer,
        max_value: max,
        mean_value: mean,
        log10_max_value: lg(max),
        log10_mean_value: lg(mean),
    })
}

/// Fits the cell means and judges the slope.
pub(crate) fn judge_slope(cells: &[CellReport], expectation: Expectation) -> Result<(Option<LineFit>, Option<f64>, Verdict)> {
    let x: Vec<f64> = cells.iter().map(|c| c.x).collect();
    let y: Vec<f64> = cells.iter().map(|c| c.mean_value).collect();
    let fit = fit_loglog(&x, &y)?;
    let verdict = slope_verdict(&fit, expectation);
    Ok((Some(fit), Some(fit.slope), verdict))
}

pub(crate) fn slope_verdict(fit: &LineFit, expectation: Expectation) -> Verdict {
    if !fit.slope.is_finite() {
        return Verdict::Fail;
    }
    if fit.r2 < MIN_R2 {
        return Verdict::Inconclusive;
    }
    let ok = match expectation {
        Expectation::Band { expected, tolerance } => (fit.slope - expected).abs() <= tolerance,
        Expectation::AtMost { limit } => fit.slope <= limit,
        _ => true,
    };
    if ok {
        Verdict::Pass
    } else {
        Verdict::Fail
    }
}

/// Stability of the largest ratio between a base and a refined cell.
pub(crate) fn judge_stability(base: &CellReport, refined: &CellReport, max_factor: f64) -> (f64, Verdict) {
    let (a, b) = (base.max_ratio, refined.max_ratio);
    let factor = if a > 0.0 && b > 0.0 { (a / b).max(b / a) } else { f64::INFINITY };
    (factor, if factor < max_factor { Verdict::Pass } else { Verdict::Fail })
}

pub(crate) fn echo<T: Serialize>(spec: &BasisSpec, plan: &SweepPlan, extra: T) -> serde_json::Value {
    serde_json::json!({ "spec": spec.params(), "plan": plan, "parameters": extra })
}

/// Generator for sample `sample` of cell `cell`.
pub(crate) fn sample_rng(seed: u64, cell: usize, sample: usize) -> ChaCha8Rng {
    crate::seeded_rng(seed, ((cell as u64) << 32) | sample as u64)
}

pub(crate) fn complex_gaussian(rng: &mut ChaCha8Rng) -> C64 {
    let a: f64 = StandardNormal.sample(rng);
    let b: f64 = StandardNormal.sample(rng);
    C64::new(a, b) * std::f64::consts::FRAC_1_SQRT_2
}

/// I.i.d. complex Gaussian coefficients times `weight(λ)`, normalized in `L²`.
pub(crate) fn random_localized(
    spec: &Arc<BasisSpec>,
    rng: &mut ChaCha8Rng,
    weight: impl Fn(f64) -> f64,
) -> Result<SpectralField> {
    let mut u = SpectralField::zeros(spec);
    u.map_modes(|_, _, lam, _| {
        let w = weight(lam);
        if w == 0.0 {
            C64::new(0.0, 0.0)
        } else {
            complex_gaussian(rng) * w
        }
    });
    let n = u.norm();
    if n == 0.0 {
        return Err(Error::EmptySample("the localization window contains no resolved mode".into()));
    }
    u.scale(C64::new(1.0 / n, 0.0));
    Ok(u)
}

/// Smooth random time envelope `1 + Σ aₘ e^{i(ωₘ t + θₘ)}`.
#[derive(Debug, Clone)]
pub(crate) struct Envelope {
    terms: Vec<(f64, f64, f64)>,
}

impl Envelope {
    pub(crate) fn random(rng: &mut ChaCha8Rng) -> Self {
        let terms = (0..3)
            .map(|_| (0.3 * rng.random::<f64>(), 2.0 * PI * 4.0 * (rng.random::<f64>() - 0.5), 2.0 * PI * rng.random::<f64>()))
            .collect();
        Envelope { terms }
    }

    #[cfg(test)]
    pub(crate) fn constant() -> Self {
        Envelope { terms: Vec::new() }
    }

    pub(crate) fn eval(&self, t: f64) -> C64 {
        let mut v = C64::new(1.0, 0.0);
        for &(a, w, th) in &self.terms {
            v += C64::from_polar(a, w * t + th);
        }
        v
    }
}

/// Rows holding nonzero coefficients and one past the largest nonzero Hermite index.
pub(crate) fn support(u: &SpectralField) -> (Vec<usize>, usize) {
    let k = u.spec().modes();
    let mut rows = Vec::new();
    let mut kmax = 0;
    for row in 0..u.spec().nx() {
        let r = &u.coeffs()[row * k..(row + 1) * k];
        if let Some(last) = r.iter().rposition(|c| c.norm_sqr() != 0.0) {
            rows.push(row);
            kmax = kmax.max(last + 1);
        }
    }
    (rows, kmax)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Op {
    Value,
    Dx,
    Dy,
}

/// Evaluates fields on a tensor grid of arbitrary points, touching only a
/// given set of Fourier rows and the first `kmax` Hermite functions.
pub(crate) struct SliceEvaluator {
    pub ys: Vec<f64>,
    pub xs: Vec<f64>,
    kmax: usize,
    table: Vec<f64>,
    dtable: Option<Vec<f64>>,
}

impl SliceEvaluator {
    pub(crate) fn new(ys: Vec<f64>, xs: Vec<f64>, kmax: usize, with_dy: bool) -> Self {
        let ny = ys.len();
        let mut table = vec![0.0; ny * kmax];
        for (i, &y) in ys.iter().enumerate() {
            hermite_eval_all(y, &mut table[i * kmax..(i + 1) * kmax]);
        }
        let dtable = with_dy.then(|| {
            let mut d = vec![0.0; ny * kmax];
            for (i, &y) in ys.iter().enumerate() {
                crate::hermite::hermite_deriv_from_values(
                    y,
                    &table[i * kmax..(i + 1) * kmax],
                    &mut d[i * kmax..(i + 1) * kmax],
                );
            }
            d
        });
        SliceEvaluator { ys, xs, kmax, table, dtable }
    }

    /// Gathers `coeffs` on `rows` into a `kmax × rows` matrix.
    pub(crate) fn gather(&self, spec: &BasisSpec, coeffs: &[C64], rows: &[usize]) -> Vec<C64> {
        let k = spec.modes();
        let kk = self.kmax.min(k);
        let nr = rows.len();
        let mut g = vec![C64::new(0.0, 0.0); self.kmax * nr];
        for (r, &row) in rows.iter().enumerate() {
            for m in 0..kk {
                g[m * nr + r] = coeffs[row * k + m];
            }
        }
        g
    }

    fn stage_y(&self, table: &[f64], g: &[C64], nr: usize) -> Vec<C64> {
        let ny = self.ys.len();
        let mut out = vec![C64::new(0.0, 0.0); ny * nr];
        if nr == 0 {
            return out;
        }
        let gp = g.as_ptr() as *const f64;
        let op = out.as_mut_ptr() as *mut f64;
        for part in 0..2 {
            // SAFETY: `table` is ny×kmax, `g` kmax×nr complex, `out` ny×nr complex.
            unsafe {
                crate::spectral::gemm(
                    ny,
                    self.kmax,
                    nr,
                    table.as_ptr(),
                    self.kmax as isize,
                    1,
                    gp.add(part),
                    2 * nr as isize,
                    2,
                    op.add(part),
                    2 * nr as isize,
                    2,
                );
            }
        }
        out
    }

    fn x_matrix(&self, spec: &BasisSpec, rows: &[usize], dx: bool) -> Vec<C64> {
        let norm = 1.0 / (2.0 * spec.lx()).sqrt();
        let nx = self.xs.len();
        let mut e = vec![C64::new(0.0, 0.0); rows.len() * nx];
        for (r, &row) in rows.iter().enumerate() {
            let xi = spec.xi(row);
            let f = if dx { C64::new(0.0, xi * norm) } else { C64::new(norm, 0.0) };
            for (m, &x) in self.xs.iter().enumerate() {
                e[r * nx + m] = f * C64::from_polar(1.0, xi * x);
            }
        }
        e
    }

    /// Samples `out[iy * nx + ix]` of each requested operator applied to the field.
    pub(crate) fn eval(&self, spec: &BasisSpec, coeffs: &[C64], rows: &[usize], ops: &[Op]) -> Vec<Vec<C64>> {
        let g = self.gather(spec, coeffs, rows);
        self.eval_gathered(spec, &g, rows, ops)
    }

    pub(crate) fn kmax(&self) -> usize {
        self.kmax
    }

    /// As [`Self::eval`] for coefficients already gathered into `kmax × rows` layout.
    pub(crate) fn eval_gathered(&self, spec: &BasisSpec, g: &[C64], rows: &[usize], ops: &[Op]) -> Vec<Vec<C64>> {
        let nr = rows.len();
        let (ny, nx) = (self.ys.len(), self.xs.len());
        let mut plain: Option<Vec<C64>> = None;
        let mut results = Vec::with_capacity(ops.len());
        for &op in ops {
            let t = match op {
                Op::Value | Op::Dx => {
                    if plain.is_none() {
                        plain = Some(self.stage_y(&self.table, g, nr));
                    }
                    plain.as_ref().expect("computed above")
                }
                Op::Dy => {
                    let d = self.dtable.as_ref().expect("evaluator built without derivative table");
                    results.push(self.finish(spec, &self.stage_y(d, g, nr), rows, false, ny, nx));
                    continue;
                }
            };
            results.push(self.finish(spec, t, rows, op == Op::Dx, ny, nx));
        }
        results
    }

    fn finish(&self, spec: &BasisSpec, t: &[C64], rows: &[usize], dx: bool, ny: usize, nx: usize) -> Vec<C64> {
        let e = self.x_matrix(spec, rows, dx);
        let mut out = vec![C64::new(0.0, 0.0); ny * nx];
        zgemm(ny, rows.len(), nx, t, &e, &mut out);
        out
    }
}

/// `∫ f` by the composite trapezoid rule on uniform samples.
pub(crate) fn trapezoid(values: &[f64], h: f64) -> f64 {
    match values.len() {
        0 | 1 => 0.0,
        n => h * (values.iter().sum::<f64>() - 0.5 * (values[0] + values[n - 1])),
    }
}

/// Window `χ` on `[0, T]` sampled on the sweep's frame grid.
pub(crate) fn window_samples(plan: &SweepPlan) -> Vec<f64> {
    let w = crate::spectral::Window::new(0.0, plan.horizon);
    (0..plan.frames()).map(|n| w.eval(n as f64 * plan.frame_dt())).collect()
}
