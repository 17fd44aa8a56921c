//! Mixed Fourier×Hermite coefficient space for `A = -∂x² - ∂y² + y²`.
//!
//! A field is stored as coefficients `c[j,k]` of `e^{iξ_j x} h_k(y) / √(2Lx)` on
//! the torus `x ∈ [-Lx, Lx)` with `ξ_j = πj/Lx`, `j ∈ [-Nx/2, Nx/2)`, `k < K`.
//! Rows are ordered by increasing `j`, so row `r` holds `j = r - Nx/2`.
//! Both transforms are unitary and the symbol of `A` on mode `(j,k)` is
//! `ξ_j² + 2k + 1`.

use crate::error::{Error, Result};
use crate::hermite::HermiteBasis;
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::sync::{Arc, OnceLock};

pub type C64 = Complex64;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

/// Plain parameters of a [`BasisSpec`], used for configs and file headers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisParams {
    pub lx: f64,
    pub nx: usize,
    pub k: usize,
    /// Gauss–Hermite node count; `None` means `2K`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nodes: Option<usize>,
}

impl Default for BasisParams {
    fn default() -> Self {
        BasisParams { lx: 16.0, nx: 256, k: 128, nodes: None }
    }
}

/// Discretization of the coefficient space. The Hermite rule and table are
/// built on first use, so specs with very large `K` stay cheap when only
/// coefficient-space operations are needed.
#[derive(Debug)]
pub struct BasisSpec {
    lx: f64,
    nx: usize,
    k: usize,
    nodes: usize,
    basis: OnceLock<Arc<HermiteBasis>>,
}

impl BasisSpec {
    pub fn new(lx: f64, nx: usize, k: usize) -> Result<Arc<Self>> {
        Self::with_nodes(lx, nx, k, 2 * k)
    }

    pub fn with_nodes(lx: f64, nx: usize, k: usize, nodes: usize) -> Result<Arc<Self>> {
        if !(lx > 0.0 && lx.is_finite()) {
            return Err(Error::InvalidArgument(format!("Lx must be positive, got {lx}")));
        }
        if nx == 0 || nx % 2 != 0 {
            return Err(Error::InvalidArgument(format!("Nx must be even and positive, got {nx}")));
        }
        if k == 0 {
            return Err(Error::InvalidArgument("K must be at least 1".into()));
        }
        if nodes < k {
            return Err(Error::Resolution(format!("{nodes} Hermite nodes cannot resolve K = {k}")));
        }
        Ok(Arc::new(BasisSpec { lx, nx, k, nodes, basis: OnceLock::new() }))
    }

    pub fn from_params(p: &BasisParams) -> Result<Arc<Self>> {
        Self::with_nodes(p.lx, p.nx, p.k, p.nodes.unwrap_or(2 * p.k))
    }

    /// Default resolution: `Lx = 16`, `Nx = 256`, `K = 128`.
    pub fn default_spec() -> Arc<Self> {
        Self::from_params(&BasisParams::default()).expect("default spec is valid")
    }

    pub fn params(&self) -> BasisParams {
        let nodes = if self.nodes == 2 * self.k { None } else { Some(self.nodes) };
        BasisParams { lx: self.lx, nx: self.nx, k: self.k, nodes }
    }

    pub fn lx(&self) -> f64 {
        self.lx
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn modes(&self) -> usize {
        self.k
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    /// Number of coefficients `Nx·K`.
    pub fn len(&self) -> usize {
        self.nx * self.k
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn basis(&self) -> &Arc<HermiteBasis> {
        self.basis.get_or_init(|| {
            Arc::new(HermiteBasis::with_nodes(self.k, self.nodes).expect("Gauss-Hermite construction"))
        })
    }

    /// Signed Fourier index of row `r`.
    pub fn j_of_row(&self, row: usize) -> i64 {
        row as i64 - (self.nx / 2) as i64
    }

    /// Row holding Fourier index `j`, if resolved.
    pub fn row_of_j(&self, j: i64) -> Option<usize> {
        let r = j + (self.nx / 2) as i64;
        (r >= 0 && (r as usize) < self.nx).then_some(r as usize)
    }

    pub fn xi(&self, row: usize) -> f64 {
        PI * self.j_of_row(row) as f64 / self.lx
    }

    pub fn eigenvalue(&self, row: usize, k: usize) -> f64 {
        let xi = self.xi(row);
        xi * xi + (2 * k + 1) as f64
    }

    /// Largest resolved eigenvalue `(πNx/(2Lx))² + 2K - 1`.
    pub fn lambda_max(&self) -> f64 {
        let x = PI * self.nx as f64 / (2.0 * self.lx);
        x * x + (2 * self.k - 1) as f64
    }

    /// Uniform x-grid with `m` points, `x_i = -Lx + 2Lx·i/m`.
    pub fn x_grid(&self, m: usize) -> Vec<f64> {
        (0..m).map(|i| -self.lx + 2.0 * self.lx * i as f64 / m as f64).collect()
    }

    /// True when both specs describe the same coefficient space.
    pub fn compatible(&self, other: &BasisSpec) -> bool {
        self.lx == other.lx && self.nx == other.nx && self.k == other.k
    }
}

/// Coefficient array of a function of `(x, y)`.
#[derive(Debug, Clone)]
pub struct SpectralField {
    spec: Arc<BasisSpec>,
    coeffs: Vec<C64>,
}

impl SpectralField {
    pub fn zeros(spec: &Arc<BasisSpec>) -> Self {
        SpectralField { spec: spec.clone(), coeffs: vec![ZERO; spec.len()] }
    }

    pub fn from_coeffs(spec: &Arc<BasisSpec>, coeffs: Vec<C64>) -> Result<Self> {
        if coeffs.len() != spec.len() {
            return Err(Error::Shape(format!(
                "expected {}x{} coefficients, got {}",
                spec.nx(),
                spec.modes(),
                coeffs.len()
            )));
        }
        Ok(SpectralField { spec: spec.clone(), coeffs })
    }

    /// Unit coefficient at Fourier index `j`, Hermite index `k`.
    pub fn unit(spec: &Arc<BasisSpec>, j: i64, k: usize) -> Result<Self> {
        let row = spec
            .row_of_j(j)
            .filter(|_| k < spec.modes())
            .ok_or_else(|| Error::InvalidArgument(format!("mode ({j},{k}) not resolved")))?;
        let mut f = Self::zeros(spec);
        f.coeffs[row * spec.modes() + k] = C64::new(1.0, 0.0);
        Ok(f)
    }

    pub fn spec(&self) -> &Arc<BasisSpec> {
        &self.spec
    }

    pub fn coeffs(&self) -> &[C64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [C64] {
        &mut self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<C64> {
        self.coeffs
    }

    pub fn get(&self, j: i64, k: usize) -> C64 {
        match self.spec.row_of_j(j) {
            Some(r) if k < self.spec.modes() => self.coeffs[r * self.spec.modes() + k],
            _ => ZERO,
        }
    }

    pub fn norm_sqr(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm_sqr()).sum()
    }

    /// `L²` norm by Parseval.
    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    /// `⟨self, other⟩ = Σ self · conj(other)`.
    pub fn inner(&self, other: &SpectralField) -> C64 {
        self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a * b.conj()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|c| c.re.is_finite() && c.im.is_finite())
    }

    pub fn scale(&mut self, a: C64) {
        self.coeffs.iter_mut().for_each(|c| *c *= a);
    }

    pub fn scaled(&self, a: C64) -> Self {
        let mut f = self.clone();
        f.scale(a);
        f
    }

    /// `self += a · other`.
    pub fn axpy(&mut self, a: C64, other: &SpectralField) {
        for (c, o) in self.coeffs.iter_mut().zip(&other.coeffs) {
            *c += a * o;
        }
    }

    pub fn sub(&self, other: &SpectralField) -> Self {
        let mut f = self.clone();
        f.axpy(C64::new(-1.0, 0.0), other);
        f
    }

    pub fn add(&self, other: &SpectralField) -> Self {
        let mut f = self.clone();
        f.axpy(C64::new(1.0, 0.0), other);
        f
    }

    /// Applies `f(row, k, λ, c) -> c'` to every coefficient.
    pub fn map_modes(&mut self, mut f: impl FnMut(usize, usize, f64, C64) -> C64) {
        let k = self.spec.modes();
        for row in 0..self.spec.nx() {
            let xi = self.spec.xi(row);
            for m in 0..k {
                let lambda = xi * xi + (2 * m + 1) as f64;
                let idx = row * k + m;
                self.coeffs[idx] = f(row, m, lambda, self.coeffs[idx]);
            }
        }
    }

    /// Largest eigenvalue among nonzero coefficients, or 0 for the zero field.
    pub fn support_lambda_max(&self) -> f64 {
        let k = self.spec.modes();
        let mut best = 0.0f64;
        for (idx, c) in self.coeffs.iter().enumerate() {
            if *c != ZERO {
                best = best.max(self.spec.eigenvalue(idx / k, idx % k));
            }
        }
        best
    }

    /// Copies the coefficients into another spec, dropping modes it cannot hold.
    pub fn embed(&self, target: &Arc<BasisSpec>) -> Result<SpectralField> {
        if self.spec.lx() != target.lx() {
            return Err(Error::InvalidArgument("embedding requires equal Lx".into()));
        }
        let mut out = SpectralField::zeros(target);
        let (ks, kt) = (self.spec.modes(), target.modes());
        for row in 0..self.spec.nx() {
            if let Some(tr) = target.row_of_j(self.spec.j_of_row(row)) {
                for m in 0..ks.min(kt) {
                    out.coeffs[tr * kt + m] = self.coeffs[row * ks + m];
                }
            }
        }
        Ok(out)
    }
}

/// x-direction oversampling of the physical grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Padding {
    /// `Nx` points: the collocation grid of the coefficient space.
    None,
    /// `3Nx/2` points (the 2/3 rule).
    #[default]
    TwoThirds,
    /// `2Nx` points: cubic products alias-free on the retained modes.
    Exact,
}

impl Padding {
    pub fn points(self, nx: usize) -> usize {
        match self {
            Padding::None => nx,
            Padding::TwoThirds => 3 * nx / 2,
            Padding::Exact => 2 * nx,
        }
    }
}

/// Samples on a tensor grid: `mx` uniform x points times the Hermite rule nodes.
/// Storage is node-major: `data[i * mx + m]` is the value at `(x_m, y_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhysicalField {
    pub mx: usize,
    pub ny: usize,
    pub data: Vec<C64>,
}

impl PhysicalField {
    pub fn zeros(mx: usize, ny: usize) -> Self {
        PhysicalField { mx, ny, data: vec![ZERO; mx * ny] }
    }

    pub fn at(&self, m: usize, i: usize) -> C64 {
        self.data[i * self.mx + m]
    }
}

/// Transform pair between coefficients and a physical grid, with cached FFT plans.
pub struct Transform {
    spec: Arc<BasisSpec>,
    mx: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    dtable: OnceLock<Vec<f64>>,
}

impl std::fmt::Debug for Transform {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Transform").field("spec", &self.spec.params()).field("mx", &self.mx).finish()
    }
}

/// `C = A·B` on strided real views. The caller guarantees the views are in bounds.
#[allow(clippy::too_many_arguments)]
pub(crate) unsafe fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: *const f64,
    rsa: isize,
    csa: isize,
    b: *const f64,
    rsb: isize,
    csb: isize,
    c: *mut f64,
    rsc: isize,
    csc: isize,
) {
    if m == 0 || n == 0 {
        return;
    }
    matrixmultiply::dgemm(m, k, n, 1.0, a, rsa, csa, b, rsb, csb, 0.0, c, rsc, csc);
}

/// `C = A·B` for dense row-major complex matrices `A: m×k`, `B: k×n`.
pub(crate) fn zgemm(m: usize, k: usize, n: usize, a: &[C64], b: &[C64], c: &mut [C64]) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let ap = a.as_ptr() as *const f64;
    let bp = b.as_ptr() as *const f64;
    let cp = c.as_mut_ptr() as *mut f64;
    let (rsa, rsb, rsc) = (2 * k as isize, 2 * n as isize, 2 * n as isize);
    // SAFETY: all views index inside the asserted lengths.
    unsafe {
        // re = Ar·Br - Ai·Bi, im = Ar·Bi + Ai·Br
        matrixmultiply::dgemm(m, k, n, 1.0, ap, rsa, 2, bp, rsb, 2, 0.0, cp, rsc, 2);
        matrixmultiply::dgemm(m, k, n, -1.0, ap.add(1), rsa, 2, bp.add(1), rsb, 2, 1.0, cp, rsc, 2);
        matrixmultiply::dgemm(m, k, n, 1.0, ap, rsa, 2, bp.add(1), rsb, 2, 0.0, cp.add(1), rsc, 2);
        matrixmultiply::dgemm(m, k, n, 1.0, ap.add(1), rsa, 2, bp, rsb, 2, 1.0, cp.add(1), rsc, 2);
    }
}

impl Transform {
    pub fn new(spec: &Arc<BasisSpec>, padding: Padding) -> Self {
        Self::with_points(spec, padding.points(spec.nx()))
    }

    /// Transform on an x-grid of `mx ≥ Nx` points.
    pub fn with_points(spec: &Arc<BasisSpec>, mx: usize) -> Self {
        assert!(mx >= spec.nx(), "physical grid must hold every Fourier mode");
        let mut planner = FftPlanner::new();
        Transform {
            spec: spec.clone(),
            mx,
            fwd: planner.plan_fft_forward(mx),
            inv: planner.plan_fft_inverse(mx),
            dtable: OnceLock::new(),
        }
    }

    pub fn spec(&self) -> &Arc<BasisSpec> {
        &self.spec
    }

    pub fn mx(&self) -> usize {
        self.mx
    }

    pub fn ny(&self) -> usize {
        self.spec.nodes()
    }

    pub fn dx(&self) -> f64 {
        2.0 * self.spec.lx() / self.mx as f64
    }

    pub fn y_nodes(&self) -> &[f64] {
        &self.spec.basis().rule().nodes
    }

    /// Compensated y weights `w_i e^{y_i²}`.
    pub fn y_weights(&self) -> &[f64] {
        &self.spec.basis().rule().scaled_weights
    }

    pub fn x_points(&self) -> Vec<f64> {
        self.spec.x_grid(self.mx)
    }

    /// Table of `h_k'(y_i)` in the layout of the basis table.
    pub fn derivative_table(&self) -> &[f64] {
        self.dtable.get_or_init(|| {
            let basis = self.spec.basis();
            let k = basis.modes();
            let mut out = vec![0.0; basis.table().len()];
            for (i, &y) in basis.rule().nodes.iter().enumerate() {
                let vals = &basis.table()[i * k..(i + 1) * k];
                crate::hermite::hermite_deriv_from_values(y, vals, &mut out[i * k..(i + 1) * k]);
            }
            out
        })
    }

    fn row_blocks(&self) -> [(usize, usize); 2] {
        let half = self.spec.nx() / 2;
        // (first row, first FFT column) for j ≥ 0 and j < 0
        [(half, 0), (0, self.mx - half)]
    }

    /// Physical samples of `field`.
    pub fn to_physical(&self, field: &SpectralField) -> PhysicalField {
        self.synthesize(field.coeffs(), self.spec.basis().table())
    }

    /// Physical samples of `∂y field`.
    pub fn to_physical_dy(&self, field: &SpectralField) -> PhysicalField {
        self.synthesize(field.coeffs(), self.derivative_table())
    }

    /// Samples at arbitrary y points given their Hermite table `table[i*K + k] = h_k(y_i)`.
    pub fn to_physical_on(&self, field: &SpectralField, table: &[f64]) -> PhysicalField {
        self.synthesize(field.coeffs(), table)
    }

    fn synthesize(&self, coeffs: &[C64], table: &[f64]) -> PhysicalField {
        let spec = &self.spec;
        let (nx, k, mx) = (spec.nx(), spec.modes(), self.mx);
        let ny = table.len() / k;
        assert_eq!(coeffs.len(), nx * k);
        assert_eq!(table.len(), ny * k);
        let norm = 1.0 / (2.0 * spec.lx()).sqrt();
        let mut scaled = coeffs.to_vec();
        for row in 0..nx {
            let s = if spec.j_of_row(row).rem_euclid(2) == 0 { norm } else { -norm };
            scaled[row * k..(row + 1) * k].iter_mut().for_each(|c| *c *= s);
        }
        let mut out = PhysicalField::zeros(mx, ny);
        let half = nx / 2;
        let sp = scaled.as_ptr() as *const f64;
        let op = out.data.as_mut_ptr() as *mut f64;
        for (row0, col0) in self.row_blocks() {
            for part in 0..2 {
                // SAFETY: the views stay inside `scaled` (nx·k complex) and `out` (ny·mx complex).
                unsafe {
                    gemm(
                        ny,
                        k,
                        half,
                        table.as_ptr(),
                        k as isize,
                        1,
                        sp.add(2 * row0 * k + part),
                        2,
                        2 * k as isize,
                        op.add(2 * col0 + part),
                        2 * mx as isize,
                        2,
                    );
                }
            }
        }
        let mut scratch = vec![ZERO; self.inv.get_inplace_scratch_len()];
        self.inv.process_with_scratch(&mut out.data, &mut scratch);
        out
    }

    /// Coefficients of physical samples on this grid, truncated to the basis.
    pub fn to_spectral(&self, phys: &PhysicalField) -> Result<SpectralField> {
        let spec = &self.spec;
        let (nx, k, ny, mx) = (spec.nx(), spec.modes(), spec.nodes(), self.mx);
        if phys.mx != mx || phys.ny != ny || phys.data.len() != mx * ny {
            return Err(Error::Shape(format!(
                "expected {mx}x{ny} physical samples, got {}x{}",
                phys.mx, phys.ny
            )));
        }
        let mut buf = phys.data.clone();
        let mut scratch = vec![ZERO; self.fwd.get_inplace_scratch_len()];
        self.fwd.process_with_scratch(&mut buf, &mut scratch);
        let mut coeffs = vec![ZERO; nx * k];
        let half = nx / 2;
        let wt = spec.basis().weighted_table();
        let bp = buf.as_ptr() as *const f64;
        let cp = coeffs.as_mut_ptr() as *mut f64;
        for (row0, col0) in self.row_blocks() {
            for part in 0..2 {
                // SAFETY: views stay inside `buf` (ny·mx complex) and `coeffs` (nx·k complex).
                unsafe {
                    gemm(
                        half,
                        ny,
                        k,
                        bp.add(2 * col0 + part),
                        2,
                        2 * mx as isize,
                        wt.as_ptr(),
                        k as isize,
                        1,
                        cp.add(2 * row0 * k + part),
                        2 * k as isize,
                        2,
                    );
                }
            }
        }
        let norm = (2.0 * spec.lx()).sqrt() / mx as f64;
        for row in 0..nx {
            let s = if spec.j_of_row(row).rem_euclid(2) == 0 { norm } else { -norm };
            coeffs[row * k..(row + 1) * k].iter_mut().for_each(|c| *c *= s);
        }
        SpectralField::from_coeffs(spec, coeffs)
    }

    /// `∫ f dz` for real samples `f` laid out like a [`PhysicalField`].
    pub fn integrate(&self, f: &[f64]) -> f64 {
        let w = self.y_weights();
        let mut total = 0.0;
        for (i, row) in f.chunks(self.mx).enumerate() {
            total += w[i] * row.iter().sum::<f64>();
        }
        total * self.dx()
    }

    /// `∫ f dz` for complex samples.
    pub fn integrate_complex(&self, f: &[C64]) -> C64 {
        let w = self.y_weights();
        let mut total = ZERO;
        for (i, row) in f.chunks(self.mx).enumerate() {
            total += row.iter().sum::<C64>() * w[i];
        }
        total * self.dx()
    }
}

/// Physical samples on the unpadded collocation grid.
pub fn to_physical(field: &SpectralField) -> PhysicalField {
    Transform::new(field.spec(), Padding::None).to_physical(field)
}

/// Inverse of [`to_physical`].
pub fn to_spectral(phys: &PhysicalField, spec: &Arc<BasisSpec>) -> Result<SpectralField> {
    Transform::new(spec, Padding::None).to_spectral(phys)
}

type Symbol = dyn Fn(f64, usize) -> C64 + Send + Sync;

/// Diagonal symbol `m(ξ, k)` acting on coefficients.
#[derive(Clone)]
pub struct Multiplier {
    symbol: Arc<Symbol>,
}

impl std::fmt::Debug for Multiplier {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("Multiplier")
    }
}

fn lambda_of(xi: f64, k: usize) -> f64 {
    xi * xi + (2 * k + 1) as f64
}

impl Multiplier {
    pub fn new(symbol: impl Fn(f64, usize) -> C64 + Send + Sync + 'static) -> Self {
        Multiplier { symbol: Arc::new(symbol) }
    }

    /// Real symbol of the eigenvalue `λ = ξ² + 2k + 1`.
    pub fn of_lambda(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Self::new(move |xi, k| C64::new(f(lambda_of(xi, k)), 0.0))
    }

    pub fn identity() -> Self {
        Self::new(|_, _| C64::new(1.0, 0.0))
    }

    /// `A^{s/2}`.
    pub fn power(s: f64) -> Self {
        Self::of_lambda(move |l| l.powf(s / 2.0))
    }

    /// `e^{-tA}`.
    pub fn heat(t: f64) -> Self {
        Self::of_lambda(move |l| (-t * l).exp())
    }

    /// `e^{itA}`.
    pub fn schrodinger(t: f64) -> Self {
        Self::new(move |xi, k| C64::from_polar(1.0, t * lambda_of(xi, k)))
    }

    /// `S_N` or `Δ_N`.
    pub fn lp(n: u32, kind: LpKind) -> Self {
        let n2 = (n as f64) * (n as f64);
        match kind {
            LpKind::S => Self::of_lambda(move |l| lp_profile(l / n2)),
            LpKind::Delta => Self::of_lambda(move |l| lp_block(l, n2)),
        }
    }

    /// Indicator of `√λ ∈ [l, l+1)`.
    pub fn indicator(l: u32) -> Self {
        Self::of_lambda(move |lam| if in_shell(lam, l) { 1.0 } else { 0.0 })
    }

    pub fn eval(&self, xi: f64, k: usize) -> C64 {
        (self.symbol)(xi, k)
    }

    /// Pointwise product of two symbols.
    pub fn then(&self, other: &Multiplier) -> Multiplier {
        let (a, b) = (self.symbol.clone(), other.symbol.clone());
        Multiplier::new(move |xi, k| a(xi, k) * b(xi, k))
    }
}

/// `c'[j,k] = m(ξ_j, k) c[j,k]`. Non-finite symbol values on nonzero modes are errors.
pub fn apply_multiplier(field: &SpectralField, m: &Multiplier) -> Result<SpectralField> {
    let spec = field.spec().clone();
    let k = spec.modes();
    let mut out = field.clone();
    for row in 0..spec.nx() {
        let xi = spec.xi(row);
        for mode in 0..k {
            let idx = row * k + mode;
            let c = field.coeffs[idx];
            let s = m.eval(xi, mode);
            if !(s.re.is_finite() && s.im.is_finite()) {
                if c != ZERO {
                    return Err(Error::Numerical(format!(
                        "symbol is not finite at populated mode (j={}, k={mode})",
                        spec.j_of_row(row)
                    )));
                }
                out.coeffs[idx] = ZERO;
            } else {
                out.coeffs[idx] = c * s;
            }
        }
    }
    Ok(out)
}

/// Smooth cutoff: 1 on `[0,1]`, 0 on `[2,∞)`, and in between
/// `g(2-r) / (g(2-r) + g(r-1))` with `g(s) = e^{-1/s}`.
pub fn lp_profile(r: f64) -> f64 {
    if r <= 1.0 {
        1.0
    } else if r >= 2.0 {
        0.0
    } else {
        let g = |s: f64| (-1.0 / s).exp();
        let a = g(2.0 - r);
        a / (a + g(r - 1.0))
    }
}

/// `ψ_N(λ) = φ(λ/N²) - φ(4λ/N²)` with `n2 = N²`.
pub fn lp_block(lambda: f64, n2: f64) -> f64 {
    lp_profile(lambda / n2) - lp_profile(4.0 * lambda / n2)
}

pub(crate) fn in_shell(lambda: f64, l: u32) -> bool {
    let r = lambda.sqrt();
    r >= l as f64 && r < (l + 1) as f64
}

/// Littlewood–Paley projector kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LpKind {
    /// `S_N = φ(A/N²)`.
    S,
    /// `Δ_N = ψ_N(A)`, `N ≥ 2`.
    Delta,
}

pub fn is_dyadic(n: u32) -> bool {
    n >= 1 && n.is_power_of_two()
}

pub fn lp_project(field: &SpectralField, n: u32, kind: LpKind) -> Result<SpectralField> {
    if !is_dyadic(n) {
        return Err(Error::InvalidArgument(format!("N = {n} is not a power of two")));
    }
    if kind == LpKind::Delta && n < 2 {
        return Err(Error::InvalidArgument("the N = 1 block belongs to S_1".into()));
    }
    apply_multiplier(field, &Multiplier::lp(n, kind))
}

pub fn indicator_project(field: &SpectralField, l: u32) -> SpectralField {
    apply_multiplier(field, &Multiplier::indicator(l)).expect("indicator symbol is finite")
}

/// `(Σ λ^s |c|²)^{1/2}`.
pub fn sobolev_norm(field: &SpectralField, s: f64) -> f64 {
    let spec = field.spec();
    let k = spec.modes();
    let mut total = 0.0;
    for row in 0..spec.nx() {
        let xi2 = spec.xi(row).powi(2);
        for (m, c) in field.coeffs[row * k..(row + 1) * k].iter().enumerate() {
            let n2 = c.norm_sqr();
            if n2 != 0.0 {
                total += (xi2 + (2 * m + 1) as f64).powf(s) * n2;
            }
        }
    }
    total.sqrt()
}

/// Applies multiplication by `y` to a Hermite coefficient vector, growing it by one.
fn times_y(v: &[C64]) -> Vec<C64> {
    let mut out = vec![ZERO; v.len() + 1];
    for (k, c) in v.iter().enumerate() {
        // y h_k = √((k+1)/2) h_{k+1} + √(k/2) h_{k-1}
        out[k + 1] += c * ((k + 1) as f64 / 2.0).sqrt();
        if k > 0 {
            out[k - 1] += c * (k as f64 / 2.0).sqrt();
        }
    }
    out
}

/// `(‖D^s u‖² + ‖⟨y⟩^s u‖²)^{1/2}` for even integer `s`, with `D^s = (-∂x² - ∂y²)^{s/2}`.
///
/// Evaluated exactly in coefficient space: `-∂y² = (2k+1) - y²` and `y` acts on
/// Hermite coefficients by the ladder relation, so each power lengthens the
/// Hermite vector by two and no quadrature is involved.
pub fn equivalent_norm(field: &SpectralField, s: f64) -> Result<f64> {
    if !(s >= 0.0 && s.fract() == 0.0 && (s as i64) % 2 == 0) {
        return Err(Error::Unsupported(format!("equivalent norm needs a non-negative even s, got {s}")));
    }
    let p = (s / 2.0) as usize;
    let spec = field.spec();
    let k = spec.modes();
    let mut total = 0.0;
    for row in 0..spec.nx() {
        let xi2 = spec.xi(row).powi(2);
        let base = &field.coeffs[row * k..(row + 1) * k];
        if base.iter().all(|c| *c == ZERO) {
            continue;
        }
        let mut flat = base.to_vec();
        let mut moment = base.to_vec();
        for _ in 0..p {
            let y2 = times_y(&times_y(&flat));
            let mut next = y2.iter().map(|c| -c).collect::<Vec<_>>();
            for (m, c) in flat.iter().enumerate() {
                next[m] += c * (xi2 + (2 * m + 1) as f64);
            }
            flat = next;
            let y2 = times_y(&times_y(&moment));
            let mut next = y2;
            for (m, c) in moment.iter().enumerate() {
                next[m] += c;
            }
            moment = next;
        }
        total += flat.iter().map(|c| c.norm_sqr()).sum::<f64>();
        total += moment.iter().map(|c| c.norm_sqr()).sum::<f64>();
    }
    Ok(total.sqrt())
}

/// Uniformly sampled sequence of fields.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub spec: Arc<BasisSpec>,
    pub t0: f64,
    pub dt: f64,
    pub frames: Vec<SpectralField>,
}

impl Trajectory {
    pub fn new(t0: f64, dt: f64, frames: Vec<SpectralField>) -> Result<Self> {
        if frames.len() < 2 {
            return Err(Error::InvalidArgument("a trajectory needs at least two frames".into()));
        }
        if !(dt > 0.0) {
            return Err(Error::InvalidArgument(format!("frame step must be positive, got {dt}")));
        }
        let spec = frames[0].spec().clone();
        if frames.iter().any(|f| !f.spec().compatible(&spec)) {
            return Err(Error::Shape("trajectory frames use different specs".into()));
        }
        Ok(Trajectory { spec, t0, dt, frames })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn time(&self, n: usize) -> f64 {
        self.t0 + n as f64 * self.dt
    }

    pub fn t_end(&self) -> f64 {
        self.time(self.frames.len() - 1)
    }
}

/// Smooth time window: `χ(t) = φ(4|t - c| / L)` on `[start, end]`, equal to 1 on
/// the middle half and vanishing at both ends.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub start: f64,
    pub end: f64,
}

impl Window {
    pub fn new(start: f64, end: f64) -> Self {
        Window { start, end }
    }

    pub fn eval(&self, t: f64) -> f64 {
        let len = self.end - self.start;
        let c = 0.5 * (self.start + self.end);
        lp_profile(4.0 * (t - c).abs() / len)
    }
}

/// Exponents and window of a Bourgain norm. `window: None` spans the whole trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BourgainParams {
    pub s: f64,
    pub b: f64,
    #[serde(default)]
    pub window: Option<Window>,
}

impl BourgainParams {
    pub fn new(s: f64, b: f64) -> Self {
        BourgainParams { s, b, window: None }
    }
}

fn japanese(x: f64) -> f64 {
    (1.0 + x * x).sqrt()
}

/// FFT length used for the time transform of `frames` samples spaced `dt`.
/// The padding keeps the trapezoid sum over frequencies accurate for the smooth
/// weight `⟨τ⟩^{2b}`.
pub fn time_fft_len(frames: usize, dt: f64) -> usize {
    let span = (frames - 1) as f64 * dt;
    let need = ((2.0 * span + 24.0) / dt).ceil() as usize;
    need.max(2 * frames).next_power_of_two()
}

struct TimeSetup {
    window: Vec<f64>,
    times: Vec<f64>,
    p: usize,
    fft: Arc<dyn Fft<f64>>,
}

fn bourgain_setup(traj: &Trajectory, params: &BourgainParams) -> Result<TimeSetup> {
    let f = traj.len();
    if f < 16 {
        return Err(Error::Resolution(format!("Bourgain norm needs at least 16 frames, got {f}")));
    }
    if !(0.0..=1.0).contains(&params.b) {
        return Err(Error::InvalidArgument(format!("b must lie in [0,1], got {}", params.b)));
    }
    let lam = traj.frames.iter().map(|u| u.support_lambda_max()).fold(0.0, f64::max);
    if traj.dt * lam > PI {
        return Err(Error::Resolution(format!(
            "frame step {} with populated eigenvalue {lam:.3} breaks dt*lambda <= pi; use dt <= {:.3e}",
            traj.dt,
            PI / lam
        )));
    }
    let w = params.window.unwrap_or(Window::new(traj.t0, traj.t_end()));
    if w.start < traj.t0 - 1e-12 || w.end > traj.t_end() + 1e-12 || w.end <= w.start {
        return Err(Error::InvalidArgument("window must lie inside the frame range".into()));
    }
    let times: Vec<f64> = (0..f).map(|n| traj.time(n)).collect();
    let window = times.iter().map(|&t| w.eval(t)).collect();
    let p = time_fft_len(f, traj.dt);
    let fft = FftPlanner::new().plan_fft_forward(p);
    Ok(TimeSetup { window, times, p, fft })
}

fn bourgain_impl(traj: &Trajectory, params: &BourgainParams, conjugated: bool) -> Result<f64> {
    let setup = bourgain_setup(traj, params)?;
    let spec = &traj.spec;
    let (k, f, p) = (spec.modes(), traj.len(), setup.p);
    let dt = traj.dt;
    let period = 2.0 * PI / dt;
    let dw = period / p as f64;
    let mut buf = vec![ZERO; p];
    let mut scratch = vec![ZERO; setup.fft.get_inplace_scratch_len()];
    let mut total = 0.0;
    for idx in 0..spec.len() {
        if traj.frames.iter().all(|u| u.coeffs[idx] == ZERO) {
            continue;
        }
        let lambda = spec.eigenvalue(idx / k, idx % k);
        buf.iter_mut().for_each(|v| *v = ZERO);
        for n in 0..f {
            let mut v = traj.frames[n].coeffs[idx] * setup.window[n];
            if conjugated {
                v *= C64::from_polar(1.0, -lambda * setup.times[n]);
            }
            buf[n] = v;
        }
        setup.fft.process_with_scratch(&mut buf, &mut scratch);
        let mut acc = 0.0;
        for (m, v) in buf.iter().enumerate() {
            let mm = if m < p / 2 { m as f64 } else { m as f64 - p as f64 };
            let omega = mm * dw;
            let modulation = if conjugated {
                omega
            } else {
                let shift = ((lambda - omega) / period).round();
                omega + shift * period - lambda
            };
            acc += japanese(modulation).powf(2.0 * params.b) * v.norm_sqr();
        }
        // |dt·DFT|² / (P dt) per bin
        total += lambda.powf(params.s) * acc * dt / p as f64;
    }
    Ok(total.sqrt())
}

/// `‖f‖_{H^b}` of a compactly supported time signal sampled at spacing `dt`,
/// by zero-padded DFT and the weight `⟨τ⟩^{2b}`.
pub fn time_sobolev_norm(samples: &[C64], dt: f64, b: f64) -> f64 {
    let p = time_fft_len(samples.len(), dt);
    let mut buf = vec![ZERO; p];
    buf[..samples.len()].copy_from_slice(samples);
    FftPlanner::new().plan_fft_forward(p).process(&mut buf);
    let dw = 2.0 * PI / (p as f64 * dt);
    let mut acc = 0.0;
    for (m, v) in buf.iter().enumerate() {
        let mm = if m < p / 2 { m as f64 } else { m as f64 - p as f64 };
        acc += japanese(mm * dw).powf(2.0 * b) * v.norm_sqr();
    }
    (acc * dt / p as f64).sqrt()
}

/// Windowed `X^{s,b}` norm: `‖⟨τ⟩^b A^{s/2} (e^{-itA} χu)^(τ)‖` from the
/// conjugated trajectory. Spatial weight is `λ^{s/2}`, the symbol of `A^{s/2}`.
pub fn bourgain_norm(traj: &Trajectory, params: &BourgainParams) -> Result<f64> {
    bourgain_impl(traj, params, true)
}

/// Same norm from the direct space-time transform of `χu` with modulation
/// weight `⟨τ - λ⟩^{2b}`, each frequency bin unwrapped to the alias nearest `λ`.
pub fn bourgain_norm_direct(traj: &Trajectory, params: &BourgainParams) -> Result<f64> {
    bourgain_impl(traj, params, false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_field(spec: &Arc<BasisSpec>, seed: u64, decay: f64) -> SpectralField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut f = SpectralField::zeros(spec);
        f.map_modes(|_, _, lam, _| {
            let a = (-lam / decay).exp();
            C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5) * a
        });
        f
    }

    fn rel(a: &SpectralField, b: &SpectralField) -> f64 {
        a.sub(b).norm() / b.norm().max(1e-300)
    }

    #[test]
    fn spec_validation() {
        assert!(BasisSpec::new(1.0, 7, 4).is_err());
        assert!(BasisSpec::new(0.0, 8, 4).is_err());
        assert!(BasisSpec::new(1.0, 8, 0).is_err());
        let s = BasisSpec::default_spec();
        let x = PI * 256.0 / 32.0;
        assert!((s.lambda_max() - (x * x + 255.0)).abs() < 1e-12);
        let g = s.x_grid(256);
        assert_eq!(g[0], -16.0);
        assert!((g[1] - g[0] - 0.125).abs() < 1e-15);
    }

    #[test]
    fn single_mode_from_physical() {
        let spec = BasisSpec::new(4.0, 16, 8).unwrap();
        let tr = Transform::new(&spec, Padding::None);
        let xs = tr.x_points();
        let ys = tr.y_nodes().to_vec();
        let mut phys = PhysicalField::zeros(tr.mx(), tr.ny());
        let xi1 = PI / 4.0;
        for (i, &y) in ys.iter().enumerate() {
            for (m, &x) in xs.iter().enumerate() {
                phys.data[i * tr.mx() + m] = C64::from_polar(1.0, xi1 * x)
                    * crate::hermite::hermite_eval(0, y)
                    / (8.0f64).sqrt();
            }
        }
        let f = tr.to_spectral(&phys).unwrap();
        let unit = SpectralField::unit(&spec, 1, 0).unwrap();
        assert!(f.sub(&unit).norm() < 1e-12);
        let back = tr.to_physical(&unit);
        let err: f64 = back.data.iter().zip(&phys.data).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(err < 1e-13);
    }

    #[test]
    fn zero_field_maps_to_zero() {
        let spec = BasisSpec::new(2.0, 8, 4).unwrap();
        let z = SpectralField::zeros(&spec);
        let p = to_physical(&z);
        assert!(p.data.iter().all(|v| *v == ZERO));
        let back = to_spectral(&p, &spec).unwrap();
        assert!(back.coeffs().iter().all(|v| *v == ZERO));
    }

    #[test]
    fn shape_mismatch_rejected() {
        let spec = BasisSpec::new(2.0, 8, 4).unwrap();
        let p = PhysicalField::zeros(7, 8);
        assert!(matches!(to_spectral(&p, &spec), Err(Error::Shape(_))));
        assert!(matches!(SpectralField::from_coeffs(&spec, vec![ZERO; 3]), Err(Error::Shape(_))));
    }

    #[test]
    fn roundtrips_with_padding() {
        let spec = BasisSpec::new(3.0, 32, 24).unwrap();
        let u = random_field(&spec, 7, 1e9);
        for pad in [Padding::None, Padding::TwoThirds, Padding::Exact] {
            let tr = Transform::new(&spec, pad);
            let back = tr.to_spectral(&tr.to_physical(&u)).unwrap();
            assert!(rel(&back, &u) < 1e-12, "{pad:?}");
        }
        // physical -> spectral -> physical on band-limited samples
        let tr = Transform::new(&spec, Padding::None);
        let p = tr.to_physical(&u);
        let p2 = tr.to_physical(&tr.to_spectral(&p).unwrap());
        let num: f64 = p.data.iter().zip(&p2.data).map(|(a, b)| (a - b).norm_sqr()).sum();
        let den: f64 = p.data.iter().map(|a| a.norm_sqr()).sum();
        assert!((num / den).sqrt() < 1e-12);
    }

    #[test]
    fn derivative_table_matches_ladder() {
        let spec = BasisSpec::new(2.0, 8, 12).unwrap();
        let tr = Transform::new(&spec, Padding::None);
        let u = random_field(&spec, 3, 1e9);
        let dy = tr.to_physical_dy(&u);
        // ∂y h_k = √(k/2) h_{k-1} - √((k+1)/2) h_{k+1}; drop the top mode so the result stays in the basis
        let mut trimmed = u.clone();
        trimmed.map_modes(|_, k, _, c| if k + 1 == 12 { ZERO } else { c });
        let mut d = SpectralField::zeros(&spec);
        for row in 0..8 {
            for k in 0..11 {
                let c = trimmed.coeffs()[row * 12 + k];
                if k > 0 {
                    d.coeffs_mut()[row * 12 + k - 1] += c * (k as f64 / 2.0).sqrt();
                }
                d.coeffs_mut()[row * 12 + k + 1] -= c * ((k + 1) as f64 / 2.0).sqrt();
            }
        }
        let dy_trim = tr.to_physical_dy(&trimmed);
        let expect = tr.to_physical(&d);
        let err = dy_trim.data.iter().zip(&expect.data).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(err < 1e-12);
        assert_eq!(dy.data.len(), expect.data.len());
    }

    #[test]
    fn parseval_on_grid() {
        let spec = BasisSpec::new(5.0, 32, 20).unwrap();
        let u = random_field(&spec, 11, 1e9);
        let tr = Transform::new(&spec, Padding::None);
        let p = tr.to_physical(&u);
        let dens: Vec<f64> = p.data.iter().map(|v| v.norm_sqr()).collect();
        let phys = tr.integrate(&dens);
        assert!((phys - u.norm_sqr()).abs() <= 1e-12 * u.norm_sqr());
    }

    #[test]
    fn multiplier_examples() {
        let spec = BasisSpec::new(PI, 8, 4).unwrap();
        let u = SpectralField::unit(&spec, 0, 0).unwrap();
        assert!(rel(&apply_multiplier(&u, &Multiplier::power(1.0)).unwrap(), &u) < 1e-15);
        let v = SpectralField::unit(&spec, 1, 1).unwrap();
        let w = apply_multiplier(&v, &Multiplier::power(1.0)).unwrap();
        assert!((w.get(1, 1) - C64::new(2.0, 0.0)).norm() < 1e-15);
        let r = random_field(&spec, 1, 1e9);
        assert_eq!(apply_multiplier(&r, &Multiplier::identity()).unwrap().coeffs(), r.coeffs());
        assert_eq!(apply_multiplier(&r, &Multiplier::heat(0.0)).unwrap().coeffs(), r.coeffs());
        let h = apply_multiplier(&u, &Multiplier::heat(1.0)).unwrap();
        assert!((h.get(0, 0).re - (-1.0f64).exp()).abs() < 1e-16);
    }

    #[test]
    fn nonfinite_symbol_on_populated_mode() {
        let spec = BasisSpec::new(PI, 8, 4).unwrap();
        let m = Multiplier::new(|xi, k| if xi == 0.0 && k == 0 { C64::new(f64::NAN, 0.0) } else { C64::new(1.0, 0.0) });
        let u = SpectralField::unit(&spec, 0, 0).unwrap();
        assert!(matches!(apply_multiplier(&u, &m), Err(Error::Numerical(_))));
        let v = SpectralField::unit(&spec, 1, 0).unwrap();
        assert!(apply_multiplier(&v, &m).is_ok());
    }

    #[test]
    fn sobolev_examples() {
        let spec = BasisSpec::new(PI, 8, 4).unwrap();
        let v = SpectralField::unit(&spec, 1, 1).unwrap();
        assert!((sobolev_norm(&v, 3.0) - 4f64.powf(1.5)).abs() < 1e-12);
        let r = random_field(&spec, 5, 1e9);
        assert!((sobolev_norm(&r, 0.0) - r.norm()).abs() < 1e-14);
    }

    #[test]
    fn equivalent_norm_examples() {
        let spec = BasisSpec::new(2.0, 8, 6).unwrap();
        let u = SpectralField::unit(&spec, 0, 0).unwrap();
        assert!((equivalent_norm(&u, 0.0).unwrap() - 2f64.sqrt()).abs() < 1e-14);
        // ‖(1-y²)h0‖² + ‖(1+y²)h0‖² = 3/4 + 11/4
        assert!((equivalent_norm(&u, 2.0).unwrap() - 3.5f64.sqrt()).abs() < 1e-14);
        assert!(matches!(equivalent_norm(&u, 1.0), Err(Error::Unsupported(_))));
        assert!(matches!(equivalent_norm(&u, 0.5), Err(Error::Unsupported(_))));
    }

    #[test]
    fn equivalent_norm_matches_quadrature() {
        // independent check of the s = 2 flat part on a dense grid for a single x-mode
        let spec = BasisSpec::new(2.0, 8, 10).unwrap();
        let mut u = SpectralField::zeros(&spec);
        let coeffs = [0.3, -0.2, 0.5, 0.1, 0.0, 0.25, 0.0, 0.0, 0.05, 0.0];
        for (k, c) in coeffs.iter().enumerate() {
            u.coeffs_mut()[spec.row_of_j(1).unwrap() * 10 + k] = C64::new(*c, 0.0);
        }
        let xi = PI / 2.0;
        let h = 1e-3;
        let mut flat = 0.0;
        let mut moment = 0.0;
        for i in -14000..=14000 {
            let y = i as f64 * h;
            let mut vals = vec![0.0; 12];
            crate::hermite::hermite_eval_all(y, &mut vals);
            let f: f64 = coeffs.iter().enumerate().map(|(k, c)| c * vals[k]).sum();
            // -f'' = ((2k+1) - y²) h_k summed
            let fpp: f64 = coeffs.iter().enumerate().map(|(k, c)| c * ((2 * k + 1) as f64 - y * y) * vals[k]).sum();
            flat += (xi * xi * f + fpp).powi(2) * h;
            moment += ((1.0 + y * y) * f).powi(2) * h;
        }
        let expect = (flat + moment).sqrt();
        assert!((equivalent_norm(&u, 2.0).unwrap() - expect).abs() < 1e-9 * expect);
    }

    #[test]
    fn norm_equivalence_is_resolution_stable() {
        let mut ratios = Vec::new();
        for (nx, k) in [(32, 24), (64, 48)] {
            let spec = BasisSpec::new(4.0, nx, k).unwrap();
            let base = BasisSpec::new(4.0, 32, 24).unwrap();
            let mut lo = f64::INFINITY;
            let mut hi = 0.0f64;
            for seed in 0..100 {
                let u = random_field(&base, seed, 12.0).embed(&spec).unwrap();
                let r = sobolev_norm(&u, 2.0) / equivalent_norm(&u, 2.0).unwrap();
                lo = lo.min(r);
                hi = hi.max(r);
            }
            assert!(lo > 0.0 && hi.is_finite());
            ratios.push((lo, hi));
        }
        let (a, b) = (ratios[0], ratios[1]);
        assert!((a.0 / b.0 - 1.0).abs() < 0.1 && (a.1 / b.1 - 1.0).abs() < 0.1);
    }

    #[test]
    fn lp_examples() {
        let spec = BasisSpec::new(PI, 16, 40).unwrap();
        // λ = 16 = N² at (j=0, k) with 2k+1 = 16 impossible; use ξ=1,k=7: 1+15=16
        let u = SpectralField::unit(&spec, 1, 7).unwrap();
        let d = lp_project(&u, 4, LpKind::Delta).unwrap();
        assert_eq!(d.get(1, 7), C64::new(1.0, 0.0));
        assert!(matches!(lp_project(&u, 3, LpKind::S), Err(Error::InvalidArgument(_))));
        assert!(matches!(lp_project(&u, 1, LpKind::Delta), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn telescoping_partition() {
        let spec = BasisSpec::new(2.0, 16, 20).unwrap();
        let u = random_field(&spec, 9, 1e9);
        let mut nmax = 1u32;
        while ((nmax as f64).powi(2)) < 2.0 * spec.lambda_max() {
            nmax *= 2;
        }
        let mut sum = lp_project(&u, 1, LpKind::S).unwrap();
        let mut n = 2;
        while n <= nmax {
            sum = sum.add(&lp_project(&u, n, LpKind::Delta).unwrap());
            n *= 2;
        }
        assert!(rel(&sum, &u) < 1e-12);
        assert!(rel(&lp_project(&u, nmax, LpKind::S).unwrap(), &u) == 0.0);
    }

    #[test]
    fn projector_algebra() {
        let spec = BasisSpec::new(2.0, 32, 64).unwrap();
        let u = random_field(&spec, 4, 1e9);
        for (n, m) in [(4u32, 16u32), (2, 8), (8, 32)] {
            let dd = lp_project(&lp_project(&u, n, LpKind::Delta).unwrap(), m, LpKind::Delta).unwrap();
            assert_eq!(dd.norm(), 0.0);
        }
        for (n, m) in [(8u32, 4u32), (16, 8), (16, 2)] {
            let dm = lp_project(&u, m, LpKind::Delta).unwrap();
            let sd = lp_project(&dm, n, LpKind::S).unwrap();
            assert_eq!(sd.coeffs(), dm.coeffs());
        }
    }

    #[test]
    fn indicator_decomposition() {
        let spec = BasisSpec::new(2.0, 16, 12).unwrap();
        let u0 = SpectralField::unit(&spec, 0, 0).unwrap();
        assert_eq!(indicator_project(&u0, 1).get(0, 0), C64::new(1.0, 0.0));
        let u = random_field(&spec, 2, 1e9);
        let lmax = spec.lambda_max().sqrt().ceil() as u32;
        let mut sum = SpectralField::zeros(&spec);
        let pieces: Vec<_> = (0..=lmax).map(|l| indicator_project(&u, l)).collect();
        for p in &pieces {
            sum = sum.add(p);
        }
        assert_eq!(sum.coeffs(), u.coeffs());
        for a in 0..pieces.len() {
            for b in 0..a {
                assert_eq!(pieces[a].inner(&pieces[b]), ZERO);
            }
        }
    }

    proptest! {
        #[test]
        fn dyadic_partition_of_unity(lam in 1.0f64..1.0e6) {
            let mut total = lp_profile(lam);
            let mut n = 2.0f64;
            while n * n < 4.0 * lam {
                total += lp_block(lam, n * n);
                n *= 2.0;
            }
            total += lp_block(lam, n * n);
            total += lp_block(lam, 4.0 * n * n);
            prop_assert!((total - 1.0).abs() < 1e-14);
        }

        #[test]
        fn profile_is_monotone_and_bounded(a in 0.0f64..3.0, b in 0.0f64..3.0) {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(lp_profile(lo) >= lp_profile(hi));
            prop_assert!((0.0..=1.0).contains(&lp_profile(a)));
        }

        #[test]
        fn multiplier_composition(seed in 0u64..500, s1 in -2.0f64..2.0, t in 0.0f64..1.0) {
            let spec = BasisSpec::new(2.0, 8, 6).unwrap();
            let u = random_field(&spec, seed, 1e9);
            let (m1, m2) = (Multiplier::power(s1), Multiplier::schrodinger(t));
            let a = apply_multiplier(&apply_multiplier(&u, &m2).unwrap(), &m1).unwrap();
            let b = apply_multiplier(&u, &m1.then(&m2)).unwrap();
            for (x, y) in a.coeffs().iter().zip(b.coeffs()) {
                prop_assert!((x - y).norm() <= 1e-15 * x.norm().max(1e-300) * 4.0);
            }
        }

        #[test]
        fn sobolev_monotone_in_s(seed in 0u64..500, s in -3.0f64..3.0, ds in 0.0f64..2.0) {
            let spec = BasisSpec::new(2.0, 8, 6).unwrap();
            let u = random_field(&spec, seed, 1e9);
            prop_assert!(sobolev_norm(&u, s + ds) >= sobolev_norm(&u, s) * (1.0 - 1e-14));
        }

        #[test]
        fn parseval_exact(seed in 0u64..200) {
            let spec = BasisSpec::new(3.0, 16, 10).unwrap();
            let u = random_field(&spec, seed, 1e9);
            let tr = Transform::new(&spec, Padding::TwoThirds);
            let dens: Vec<f64> = tr.to_physical(&u).data.iter().map(|v| v.norm_sqr()).collect();
            prop_assert!((tr.integrate(&dens) - u.norm_sqr()).abs() <= 1e-12 * u.norm_sqr());
        }
    }

    fn free_traj(phi: &SpectralField, t0: f64, dt: f64, frames: usize, env: impl Fn(f64) -> C64) -> Trajectory {
        let fr = (0..frames)
            .map(|n| {
                let t = t0 + n as f64 * dt;
                apply_multiplier(phi, &Multiplier::schrodinger(t)).unwrap().scaled(env(t))
            })
            .collect();
        Trajectory::new(t0, dt, fr).unwrap()
    }

    /// `‖χ a‖_{H^b}` by a fine DFT of the window alone.
    fn window_hb(w: Window, b: f64, env: impl Fn(f64) -> C64) -> f64 {
        let n = 4001;
        let dt = (w.end - w.start) / (n - 1) as f64;
        let p = 1 << 20;
        let mut buf = vec![ZERO; p];
        for i in 0..n {
            let t = w.start + i as f64 * dt;
            buf[i] = env(t) * w.eval(t);
        }
        FftPlanner::new().plan_fft_forward(p).process(&mut buf);
        let dw = 2.0 * PI / (p as f64 * dt);
        let mut acc = 0.0;
        for (m, v) in buf.iter().enumerate() {
            let mm = if m < p / 2 { m as f64 } else { m as f64 - p as f64 };
            acc += japanese(mm * dw).powf(2.0 * b) * v.norm_sqr();
        }
        (acc * dt / p as f64).sqrt()
    }

    #[test]
    fn bourgain_free_solution() {
        let spec = BasisSpec::new(2.0, 8, 6).unwrap();
        let phi = random_field(&spec, 21, 1e9);
        let frames = 257;
        let dt = 1.0 / 256.0;
        let traj = free_traj(&phi, 0.0, dt, frames, |_| C64::new(1.0, 0.0));
        let p = BourgainParams::new(1.0, 0.4);
        let got = bourgain_norm(&traj, &p).unwrap();
        let expect = window_hb(Window::new(0.0, 1.0), 0.4, |_| C64::new(1.0, 0.0)) * sobolev_norm(&phi, 1.0);
        assert!((got / expect - 1.0).abs() < 0.01, "{got} vs {expect}");
    }

    #[test]
    fn bourgain_zero_exponents_is_space_time_l2() {
        let spec = BasisSpec::new(2.0, 8, 6).unwrap();
        let phi = random_field(&spec, 3, 1e9);
        let dt = 1.0 / 128.0;
        let traj = free_traj(&phi, 0.5, dt, 129, |t| C64::new(1.0 + t, 0.3 * t));
        let w = Window::new(0.5, traj.t_end());
        let mut l2 = 0.0;
        for n in 0..traj.len() {
            l2 += (w.eval(traj.time(n)) * traj.frames[n].norm()).powi(2) * dt;
        }
        let b = bourgain_norm(&traj, &BourgainParams::new(0.0, 0.0)).unwrap();
        assert!((b - l2.sqrt()).abs() < 1e-12 * b);
    }

    #[test]
    fn bourgain_forms_agree() {
        let spec = BasisSpec::new(2.0, 8, 6).unwrap();
        let dt = 1.0 / 128.0;
        for seed in 0..3 {
            let phi = random_field(&spec, seed, 1e9);
            let traj = free_traj(&phi, 0.0, dt, 129, |t| C64::from_polar(1.0 + 0.5 * (3.0 * t).sin(), 2.0 * t));
            for (s, b) in [(0.0, 0.4), (1.0, 0.6), (-1.0, 0.35)] {
                let p = BourgainParams::new(s, b);
                let a = bourgain_norm(&traj, &p).unwrap();
                let d = bourgain_norm_direct(&traj, &p).unwrap();
                assert!((a - d).abs() <= 1e-8 * a, "{a} vs {d}");
            }
        }
    }

    #[test]
    fn bourgain_resolution_errors() {
        let spec = BasisSpec::new(2.0, 8, 6).unwrap();
        let phi = random_field(&spec, 1, 1e9);
        let short = free_traj(&phi, 0.0, 0.01, 10, |_| C64::new(1.0, 0.0));
        assert!(matches!(bourgain_norm(&short, &BourgainParams::new(0.0, 0.4)), Err(Error::Resolution(_))));
        let coarse = free_traj(&phi, 0.0, 0.5, 20, |_| C64::new(1.0, 0.0));
        assert!(matches!(bourgain_norm(&coarse, &BourgainParams::new(0.0, 0.4)), Err(Error::Resolution(_))));
    }

    #[test]
    fn dyadic_shift_bounds() {
        let spec = BasisSpec::new(2.0, 32, 64).unwrap();
        let dt = 1.0 / 400.0;
        for (n, delta) in [(4u32, 0.5), (8, -0.7), (8, 1.0)] {
            let phi = lp_project(&random_field(&spec, n as u64, 1e9), n, LpKind::Delta).unwrap();
            let traj = free_traj(&phi, 0.0, dt, 201, |t| C64::new(1.0, t));
            let a = bourgain_norm(&traj, &BourgainParams::new(0.3 + delta, 0.4)).unwrap();
            let b = bourgain_norm(&traj, &BourgainParams::new(0.3, 0.4)).unwrap();
            let r = a / ((n as f64).powf(delta) * b);
            let lim = 2f64.powf(delta.abs());
            assert!(r >= 1.0 / lim && r <= lim, "{r}");
        }
    }

    #[test]
    fn l4_l2_embedding_bounded() {
        // ‖u‖_{L⁴_t L²} / ‖u‖_{X^{0,0.3}} over modulated free solutions
        let spec = BasisSpec::new(2.0, 8, 6).unwrap();
        let dt = 1.0 / 128.0;
        let mut worst = 0.0f64;
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for seed in 0..100 {
            let phi = random_field(&spec, seed, 1e9);
            let (f1, a1) = (rng.random::<f64>() * 20.0, rng.random::<f64>());
            let traj = free_traj(&phi, 0.0, dt, 129, |t| C64::new(1.0 + a1 * (f1 * t).cos(), 0.0));
            let w = Window::new(0.0, 1.0);
            let mut l4 = 0.0;
            for n in 0..traj.len() {
                l4 += (w.eval(traj.time(n)) * traj.frames[n].norm()).powi(4) * dt;
            }
            let x = bourgain_norm(&traj, &BourgainParams::new(0.0, 0.3)).unwrap();
            worst = worst.max(l4.powf(0.25) / x);
        }
        assert!(worst.is_finite() && worst < 3.0, "{worst}");
    }
}
