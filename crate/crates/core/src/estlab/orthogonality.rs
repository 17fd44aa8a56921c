//! Almost orthogonality of one high spectral shell against three low ones:
//! `∫ f₀ f₁ f₂ f₃ dz` with `f_j = 1_{λ_j} f_j`.
//!
//! The `x` integral forces `j₀ = -(j₁ + j₂ + j₃)`. The `y` integral is
//! `Q(k₀) = ⟨h_{k₀}, p_{k₁} p_{k₂} p_{k₃} e^{-3y²/2}⟩` where `h_k = p_k e^{-y²/2}`.
//! `Q` is computed exactly by applying `p_{k₁}(Y) p_{k₂}(Y) p_{k₃}(Y)` to the
//! Hermite coefficients of `e^{-3y²/2}`, `Y` being multiplication by `y`.
//! Coefficients are carried scaled by `2^{k/2}` because they decay like
//! `2^{-k/2}` and leave the floating-point range for the shells of interest.

use super::{echo, random_localized, sample_rng, CellReport, EstimateReport, Expectation, Verdict, SweepPlan, MIN_R2, VERSION};
use crate::error::{Error, Result};
use crate::hermite::gauss_hermite_nodes;
use crate::spectral::{in_shell, BasisSpec, SpectralField, C64};
use crate::stats::fit_line;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::f64::consts::{LN_2, PI, SQRT_2};
use std::sync::Arc;

/// Precondition constant: `λ₀ ≥ 8 max(λ₁, λ₂, λ₃)`.
pub const C0: u32 = 8;
/// Largest `|∫|` accepted for data whose `x` frequencies cannot cancel.
pub const X_DOMINATED_TOLERANCE: f64 = 1e-12;

/// A complex number `mantissa · 10^{log10_scale}`, for values below the `f64` range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogValue {
    pub mantissa: C64,
    pub log10_scale: f64,
}

impl LogValue {
    pub fn from_c64(v: C64) -> Self {
        LogValue { mantissa: v, log10_scale: 0.0 }
    }

    /// `log10 |v|`, `-∞` for zero.
    pub fn log10_abs(&self) -> f64 {
        self.mantissa.norm().log10() + self.log10_scale
    }

    /// The value as `f64`, zero when it underflows.
    pub fn abs(&self) -> f64 {
        self.mantissa.norm() * 10f64.powf(self.log10_scale)
    }
}

/// `Lx = 4`, `Nx = 256` and enough Hermite modes for the shell `λ0`.
pub fn orthogonality_spec(lambda0: u32) -> Result<Arc<BasisSpec>> {
    let top = (lambda0 as usize + 1).pow(2);
    BasisSpec::new(4.0, 256, top / 2 + 1)
}

/// Scaled coefficients `ẽ_k = 2^{k/2} ⟨h_k, e^{-3y²/2}⟩`, `k < len`.
fn gaussian_coefficients(len: usize) -> Vec<f64> {
    let mut e = vec![0.0; len];
    let mut v = (PI / 2.0).sqrt() * PI.powf(-0.25);
    for m in 0..len.div_ceil(2) {
        e[2 * m] = v;
        let mf = m as f64;
        v *= -((2.0 * mf + 1.0) / (2.0 * mf + 2.0)).sqrt();
    }
    e
}

/// `Y` in scaled coordinates: `(Yẽ)_k = √k ẽ_{k-1} + √(k+1)/2 ẽ_{k+1}`.
fn apply_y(v: &[f64], out: &mut [f64]) {
    let n = v.len();
    for k in 0..n {
        let lo = if k > 0 { (k as f64).sqrt() * v[k - 1] } else { 0.0 };
        let hi = if k + 1 < n { ((k + 1) as f64).sqrt() / 2.0 * v[k + 1] } else { 0.0 };
        out[k] = lo + hi;
    }
}

/// `p_k(Y) v` by the normalized three-term recurrence.
fn apply_poly(k: usize, v: &[f64]) -> Vec<f64> {
    let mut prev = vec![0.0; v.len()];
    let mut cur: Vec<f64> = v.iter().map(|x| x * PI.powf(-0.25)).collect();
    let mut tmp = vec![0.0; v.len()];
    for n in 0..k {
        apply_y(&cur, &mut tmp);
        let nf = n as f64;
        let a = (2.0 / (nf + 1.0)).sqrt();
        let b = (nf / (nf + 1.0)).sqrt();
        for i in 0..v.len() {
            tmp[i] = a * tmp[i] - b * prev[i];
        }
        std::mem::swap(&mut prev, &mut cur);
        std::mem::swap(&mut cur, &mut tmp);
    }
    cur
}

/// Scaled `Q(k₀) 2^{k₀/2}` for `k₀ < len`.
fn scaled_q(triple: [usize; 3], len: usize) -> Vec<f64> {
    let deg: usize = triple.iter().sum();
    let mut v = gaussian_coefficients(len + deg + 2);
    for &k in &triple {
        v = apply_poly(k, &v);
    }
    v.truncate(len);
    v
}

fn nonzero_modes(f: &SpectralField) -> Vec<(i64, usize, C64)> {
    let spec = f.spec();
    let k = spec.modes();
    f.coeffs()
        .iter()
        .enumerate()
        .filter(|(_, c)| c.norm_sqr() != 0.0)
        .map(|(i, &c)| (spec.j_of_row(i / k), i % k, c))
        .collect()
}

/// `∫ f₀ f₁ f₂ f₃ dz` in coefficient space. Exact up to rounding for any
/// fields, but the cost grows with the product of the supports of `f₁, f₂, f₃`.
pub fn quadruple_integral_exact(f: [&SpectralField; 4]) -> Result<LogValue> {
    let spec = f[0].spec();
    if f.iter().any(|g| !g.spec().compatible(spec)) {
        return Err(Error::Shape("fields live on different specs".into()));
    }
    let k = spec.modes();
    let low: Vec<Vec<(i64, usize, C64)>> = f[1..].iter().map(|g| nonzero_modes(g)).collect();
    let mut tables: HashMap<[usize; 3], Vec<f64>> = HashMap::new();
    let mut terms: Vec<(usize, C64)> = Vec::new();
    for &(j1, k1, c1) in &low[0] {
        for &(j2, k2, c2) in &low[1] {
            for &(j3, k3, c3) in &low[2] {
                let Some(row0) = spec.row_of_j(-(j1 + j2 + j3)) else { continue };
                let mut key = [k1, k2, k3];
                key.sort_unstable();
                let q = tables.entry(key).or_insert_with(|| scaled_q(key, k));
                let c = c1 * c2 * c3;
                for k0 in ((k1 + k2 + k3) % 2..k).step_by(2) {
                    let c0 = f[0].coeffs()[row0 * k + k0];
                    if c0.norm_sqr() != 0.0 && q[k0] != 0.0 {
                        terms.push((k0, c0 * c * q[k0]));
                    }
                }
            }
        }
    }
    let norm = 1.0 / (2.0 * spec.lx());
    let Some(kmin) = terms.iter().map(|t| t.0).min() else {
        return Ok(LogValue::from_c64(C64::new(0.0, 0.0)));
    };
    let mut sum = C64::new(0.0, 0.0);
    for (k0, v) in terms {
        sum += v * (-0.5 * LN_2 * (k0 - kmin) as f64).exp();
    }
    Ok(LogValue { mantissa: sum * norm, log10_scale: -0.5 * kmin as f64 * LN_2 / std::f64::consts::LN_10 })
}

/// `∫ f₀ f₁ f₂ f₃ dz` by quadrature: `4Nx` trapezoid points in `x` and a
/// Gauss–Hermite rule contracted by `1/√2` in `y`, which integrates the
/// product of four Hermite functions exactly.
pub fn quadruple_integral_quadrature(f: [&SpectralField; 4]) -> Result<C64> {
    let spec = f[0].spec();
    if f.iter().any(|g| !g.spec().compatible(spec)) {
        return Err(Error::Shape("fields live on different specs".into()));
    }
    let supports: Vec<(Vec<usize>, usize)> = f.iter().map(|g| super::support(g)).collect();
    let kmax = supports.iter().map(|s| s.1).max().unwrap_or(0).max(1);
    let degree: usize = supports.iter().map(|s| s.1.saturating_sub(1)).sum();
    let rule = gauss_hermite_nodes(degree / 2 + 2)?;
    let ys: Vec<f64> = rule.nodes.iter().map(|t| t / SQRT_2).collect();
    let mx = 4 * spec.nx();
    let hx = 2.0 * spec.lx() / mx as f64;
    let xs: Vec<f64> = (0..mx).map(|i| -spec.lx() + i as f64 * hx).collect();
    let ev = super::SliceEvaluator::new(ys, xs, kmax, false);
    let mut prod = vec![C64::new(1.0, 0.0); rule.len() * mx];
    for (g, (rows, _)) in f.iter().zip(&supports) {
        let vals = ev.eval(spec, g.coeffs(), rows, &[super::Op::Value]).pop().expect("one operator");
        prod.iter_mut().zip(&vals).for_each(|(p, v)| *p *= v);
    }
    let mut total = C64::new(0.0, 0.0);
    for (i, w) in rule.scaled_weights.iter().enumerate() {
        total += prod[i * mx..(i + 1) * mx].iter().sum::<C64>() * (w / SQRT_2);
    }
    Ok(total * hx)
}

fn shell(l: u32) -> impl Fn(f64) -> f64 {
    move |lam| if in_shell(lam, l) { 1.0 } else { 0.0 }
}

/// `log10` of the mean of values given as `log10`.
fn log10_mean(logs: &[f64]) -> Option<f64> {
    let top = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !top.is_finite() {
        return None;
    }
    let s: f64 = logs.iter().map(|l| 10f64.powf(l - top)).sum();
    Some(top + (s / logs.len() as f64).log10())
}

fn log_cell(label: String, lambda0: u32, logs: &[f64]) -> CellReport {
    let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mean = log10_mean(logs);
    let lift = |v: Option<f64>| v.map(|l| 10f64.powf(l)).unwrap_or(0.0);
    let maxv = max.is_finite().then_some(max);
    CellReport {
        label,
        m: None,
        n: None,
        lambda0: Some(lambda0),
        x: lambda0 as f64,
        samples: logs.len(),
        max_ratio: lift(maxv),
        mean_ratio: lift(mean),
        max_value: lift(maxv),
        mean_value: lift(mean),
        log10_max_value: maxv,
        log10_mean_value: mean,
    }
}

fn draw(spec: &Arc<BasisSpec>, shells: [u32; 4], seed: u64, cell: usize, i: usize, x_dominated: bool) -> Result<[SpectralField; 4]> {
    let mut rng = sample_rng(seed, cell, i);
    let l0 = shells[0] as f64;
    let f0 = if x_dominated {
        let mut f = random_localized(spec, &mut rng, shell(shells[0]))?;
        f.map_modes(|row, _, _, c| if spec.xi(row).powi(2) >= l0 * l0 / 2.0 { c } else { C64::new(0.0, 0.0) });
        let n = f.norm();
        if n == 0.0 {
            return Err(Error::EmptySample("no x-dominated mode in the shell".into()));
        }
        f.scaled(C64::new(1.0 / n, 0.0))
    } else {
        random_localized(spec, &mut rng, shell(shells[0]))?
    };
    let f1 = random_localized(spec, &mut rng, shell(shells[1]))?;
    let f2 = random_localized(spec, &mut rng, shell(shells[2]))?;
    let f3 = random_localized(spec, &mut rng, shell(shells[3]))?;
    Ok([f0, f1, f2, f3])
}

/// Decay in `λ₀` of `|∫ 1_{λ₀}f₀ 1_{λ₁}f₁ 1_{λ₂}f₂ 1_{λ₃}f₃| / Π‖f_j‖` over
/// random unit data, with an `x`-dominated control cell at the smallest `λ₀`.
/// Diagnostic plans may violate the precondition; their cells use quadrature
/// and carry no verdict.
pub fn verify_almost_orthogonality(plan: &SweepPlan) -> Result<EstimateReport> {
    plan.validate()?;
    let low = plan.lambda_low;
    let lmax = *low.iter().max().expect("three shells");
    if plan.lambda0.is_empty() {
        return Err(Error::InvalidArgument("no lambda0 given".into()));
    }
    let violated: Vec<u32> = plan.lambda0.iter().copied().filter(|&l0| l0 < C0 * lmax).collect();
    if !violated.is_empty() && !plan.diagnostic {
        return Err(Error::InvalidArgument(format!(
            "lambda0 = {violated:?} violates lambda0 >= {C0} max(lambda1, lambda2, lambda3) = {}",
            C0 * lmax
        )));
    }
    let top = *plan.lambda0.iter().max().expect("nonempty");
    let spec = orthogonality_spec(top.max(lmax))?;
    let mut cells = Vec::new();
    for (ci, &l0) in plan.lambda0.iter().enumerate() {
        let shells = [l0, low[0], low[1], low[2]];
        let quadrature = l0 < C0 * lmax;
        let logs: Vec<f64> = (0..plan.samples)
            .into_par_iter()
            .map(|i| {
                let [f0, f1, f2, f3] = draw(&spec, shells, plan.seed, ci, i, false)?;
                if quadrature {
                    Ok(quadruple_integral_quadrature([&f0, &f1, &f2, &f3])?.norm().log10())
                } else {
                    Ok(quadruple_integral_exact([&f0, &f1, &f2, &f3])?.log10_abs())
                }
            })
            .collect::<Result<_>>()?;
        cells.push(log_cell(format!("lambda0={l0}"), l0, &logs));
    }
    let mut notes = Vec::new();
    let l0 = *plan.lambda0.iter().min().expect("nonempty");
    let xspec = orthogonality_spec(l0.max(lmax))?;
    let xcell = plan.lambda0.len();
    let xvals: Vec<f64> = (0..plan.samples)
        .into_par_iter()
        .map(|i| {
            let [f0, f1, f2, f3] = draw(&xspec, [l0, low[0], low[1], low[2]], plan.seed, xcell, i, true)?;
            Ok(quadruple_integral_quadrature([&f0, &f1, &f2, &f3])?.norm())
        })
        .collect::<Result<_>>()?;
    let xmax = xvals.iter().cloned().fold(0.0, f64::max);
    let mut xc = super::cell(format!("x-dominated,lambda0={l0}"), l0 as f64, &xvals, 1.0)?;
    xc.lambda0 = Some(l0);

    let expectation = Expectation::AtMost { limit: -8.0 };
    let main: Vec<&CellReport> = cells.iter().collect();
    let (fit, observed, verdict) = if plan.diagnostic && !violated.is_empty() {
        notes.push("diagnostic run with the precondition violated; no verdict".into());
        (None, None, Verdict::Recorded)
    } else {
        let pts: Vec<(f64, f64)> = main
            .iter()
            .filter_map(|c| c.log10_mean_value.map(|y| (c.x.log10(), y)))
            .collect();
        if pts.len() != main.len() || pts.len() < 2 {
            return Err(Error::EmptySample("a shell pairing vanished identically".into()));
        }
        let (x, y): (Vec<f64>, Vec<f64>) = pts.iter().cloned().unzip();
        let fit = fit_line(&x, &y)?;
        let secants: Vec<f64> = pts.windows(2).map(|w| (w[1].1 - w[0].1) / (w[1].0 - w[0].0)).collect();
        notes.push(format!("secant slopes between consecutive lambda0: {secants:?}"));
        let mut v = super::slope_verdict(&fit, expectation);
        if fit.r2 < MIN_R2 {
            notes.push("decay is faster than any power, so the log-log fit is curved".into());
        }
        if xmax > X_DOMINATED_TOLERANCE {
            notes.push(format!("x-dominated pairing {xmax:e} exceeds {X_DOMINATED_TOLERANCE:e}"));
            v = Verdict::Fail;
        }
        (Some(fit), Some(fit.slope), v)
    };
    cells.push(xc);
    Ok(EstimateReport {
        estimate: "almost-orth".into(),
        version: VERSION.into(),
        config: echo(&spec, plan, serde_json::json!({ "c0": C0 })),
        cells,
        fit,
        expectation,
        observed,
        verdict,
        notes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hermite::hermite_eval_all;

    #[test]
    fn gaussian_coefficients_match_quadrature() {
        // 2^{k/2}∫h_k e^{-3y²/2} on a fine trapezoid grid
        let e = gaussian_coefficients(40);
        let h = 0.01;
        let mut acc = vec![0.0; 40];
        let mut vals = vec![0.0; 40];
        for i in -1500..=1500 {
            let y = i as f64 * h;
            hermite_eval_all(y, &mut vals);
            for k in 0..40 {
                acc[k] += h * vals[k] * (-1.5 * y * y).exp();
            }
        }
        for k in 0..40 {
            let scaled = acc[k] * 2f64.powf(k as f64 / 2.0);
            assert!((scaled - e[k]).abs() < 1e-10, "k = {k}: {scaled} vs {}", e[k]);
        }
    }

    #[test]
    fn scaled_q_matches_quadruple_products() {
        let basis = crate::hermite::HermiteBasis::with_nodes(60, 200).unwrap();
        for triple in [[0usize, 0, 0], [1, 2, 4], [3, 3, 2]] {
            let q = scaled_q(triple, 60);
            for k0 in 0..60 {
                let direct = crate::hermite::quadruple_product(k0, triple[0], triple[1], triple[2], &basis).unwrap();
                let ours = q[k0] * 2f64.powf(-(k0 as f64) / 2.0);
                assert!((direct - ours).abs() < 1e-12 * (1.0 + direct.abs() * 2f64.powf(k0 as f64 / 2.0)), "{triple:?}, k0 = {k0}: {direct} vs {ours}");
            }
        }
    }

    #[test]
    fn exact_matches_quadrature() {
        let spec = orthogonality_spec(8).unwrap();
        for i in 0..3 {
            let [f0, f1, f2, f3] = draw(&spec, [8, 1, 1, 1], 11, 0, i, false).unwrap();
            let ex = quadruple_integral_exact([&f0, &f1, &f2, &f3]).unwrap();
            let qu = quadruple_integral_quadrature([&f0, &f1, &f2, &f3]).unwrap();
            let exv = ex.mantissa * 10f64.powf(ex.log10_scale);
            assert!((exv - qu).norm() < 1e-10 * qu.norm().max(1e-300), "{exv} vs {qu}");
            assert!(qu.norm() > 1e-12);
        }
    }

    #[test]
    fn low_shells_against_reference() {
        // λ0 = 4 against three copies of the shell 1, checked against Gauss–Hermite
        // quadrature with a rule much larger than the polynomial degree
        let spec = orthogonality_spec(4).unwrap();
        let [f0, f1, f2, f3] = draw(&spec, [4, 1, 1, 1], 2, 0, 0, false).unwrap();
        let ex = quadruple_integral_exact([&f0, &f1, &f2, &f3]).unwrap();
        let wide = BasisSpec::with_nodes(spec.lx(), spec.nx(), spec.modes(), 12 * spec.modes()).unwrap();
        let f: Vec<SpectralField> = [&f0, &f1, &f2, &f3].iter().map(|g| g.embed(&wide).unwrap()).collect();
        let tr = crate::spectral::Transform::with_points(&wide, 4 * spec.nx());
        let p: Vec<_> = f.iter().map(|g| tr.to_physical(g)).collect();
        let prod: Vec<C64> = (0..p[0].data.len()).map(|i| p[0].data[i] * p[1].data[i] * p[2].data[i] * p[3].data[i]).collect();
        let reference = tr.integrate_complex(&prod);
        let exv = ex.mantissa * 10f64.powf(ex.log10_scale);
        assert!((exv - reference).norm() < 1e-9 * reference.norm(), "{exv} vs {reference}");
    }

    #[test]
    fn log_mean() {
        let m = log10_mean(&[-300.0, -300.0]).unwrap();
        assert!((m + 300.0).abs() < 1e-12);
        let m = log10_mean(&[0.0, f64::NEG_INFINITY]).unwrap();
        assert!((m - 0.5f64.log10()).abs() < 1e-12);
        assert!(log10_mean(&[f64::NEG_INFINITY]).is_none());
    }

    #[test]
    fn precondition_enforced() {
        let plan = SweepPlan { samples: 8, lambda0: vec![8], lambda_low: [2, 2, 2], ..SweepPlan::default() };
        assert!(matches!(verify_almost_orthogonality(&plan), Err(Error::InvalidArgument(_))));
        let diag = SweepPlan { diagnostic: true, ..plan };
        let rep = verify_almost_orthogonality(&diag).unwrap();
        assert_eq!(rep.verdict, Verdict::Recorded);
        assert!(rep.cells[0].log10_mean_value.unwrap() > -6.0);
    }

    #[test]
    fn small_sweep_decays() {
        let plan = SweepPlan { samples: 8, lambda0: vec![8, 12, 16], lambda_low: [1, 1, 1], ..SweepPlan::default() };
        let rep = verify_almost_orthogonality(&plan).unwrap();
        assert!(rep.observed.unwrap() < -8.0, "{:?}", rep.observed);
        let x = rep.cells.last().unwrap();
        assert!(x.max_value < X_DOMINATED_TOLERANCE, "{}", x.max_value);
    }
}
