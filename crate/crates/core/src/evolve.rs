//! Propagators and integrators for `i∂ₜu + Au + κ|u|²u = 0`.
//!
//! `κ = σ·g` with sign `σ = ±1` and coupling `g ≥ 0`. `σ = +1` is the
//! defocusing case: the conserved energy `½‖A^{1/2}u‖² + (κ/4)∫|u|⁴` is then
//! positive. Solutions satisfy `∂ₜu = i(Au + κ|u|²u)` and the Duhamel formula
//! `u(t) = e^{itA}φ + iκ∫₀ᵗ e^{i(t-τ)A}(|u|²u)(τ) dτ`.

use crate::error::{Error, Result};
use crate::hermite::hermite_eval_all;
use crate::spectral::{
    apply_multiplier, gemm, sobolev_norm, BasisParams, BasisSpec, Multiplier, Padding, PhysicalField,
    SpectralField, Trajectory, Transform, C64,
};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::sync::Arc;

const I: C64 = C64 { re: 0.0, im: 1.0 };

/// Sign of the cubic term. `Plus` (+1) is defocusing, `Minus` (-1) focusing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "i8", into = "i8")]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    pub fn value(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }

    pub fn is_defocusing(self) -> bool {
        self == Sign::Plus
    }
}

impl TryFrom<i8> for Sign {
    type Error = String;
    fn try_from(v: i8) -> std::result::Result<Self, String> {
        match v {
            1 => Ok(Sign::Plus),
            -1 => Ok(Sign::Minus),
            _ => Err(format!("sign must be +1 or -1, got {v}")),
        }
    }
}

impl From<Sign> for i8 {
    fn from(s: Sign) -> i8 {
        s.value() as i8
    }
}

/// `e^{itA}`: exact unitary flow of the linear part.
pub fn linear_propagate(field: &SpectralField, t: f64) -> SpectralField {
    let mut out = field.clone();
    out.map_modes(|_, _, lam, c| c * C64::from_polar(1.0, t * lam));
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HeatMethod {
    Spectral,
    Mehler,
}

/// `e^{-tA}` by spectral multiplication or by physical-space kernel quadrature.
pub fn heat_propagate(field: &SpectralField, t: f64, method: HeatMethod) -> Result<SpectralField> {
    match method {
        HeatMethod::Spectral => {
            if t < 0.0 {
                return Err(Error::InvalidArgument(format!("heat flow needs t >= 0, got {t}")));
            }
            apply_multiplier(field, &Multiplier::heat(t))
        }
        HeatMethod::Mehler => mehler(field, t),
    }
}

/// Gaussian `(4πt)^{-1/2} e^{-d²/4t}` summed over the x-period until images fall below 1e-16.
fn periodized_gaussian(d: f64, t: f64, period: f64) -> f64 {
    let g = |z: f64| (-(z * z) / (4.0 * t)).exp();
    let mut total = g(d);
    for n in 1.. {
        let a = g(d + n as f64 * period);
        let b = g(d - n as f64 * period);
        total += a + b;
        if a < 1e-16 && b < 1e-16 {
            break;
        }
    }
    total / (4.0 * PI * t).sqrt()
}

/// Heat kernel of `-∂y² + y²`: `(2π sinh 2t)^{-1/2} exp(-[½coth 2t (y² + y'²) - yy'/sinh 2t])`.
fn mehler_y(y: f64, yp: f64, t: f64) -> f64 {
    let sh = (2.0 * t).sinh();
    let coth = 1.0 / (2.0 * t).tanh();
    (-(0.5 * coth * (y * y + yp * yp) - y * yp / sh)).exp() / (2.0 * PI * sh).sqrt()
}

fn mehler(field: &SpectralField, t: f64) -> Result<SpectralField> {
    if !(t > 0.0) {
        return Err(Error::InvalidArgument(format!("Mehler kernel needs t > 0, got {t}")));
    }
    let spec = field.spec();
    let k = spec.modes();
    let tr = Transform::with_points(spec, 2 * spec.nx());
    let mx = tr.mx();
    // uniform source grid in y wide enough for every retained Hermite function
    let reach = ((2 * k + 1) as f64).sqrt();
    let ymax = reach + 10.0;
    let h = PI / (reach + 6.0 + (2.0 / (2.0 * t).tanh() * 37.0).sqrt());
    let nsrc = (2.0 * ymax / h).ceil() as usize + 1;
    let h = 2.0 * ymax / (nsrc - 1) as f64;
    let ysrc: Vec<f64> = (0..nsrc).map(|l| -ymax + l as f64 * h).collect();
    let mut table = vec![0.0; nsrc * k];
    for (l, &y) in ysrc.iter().enumerate() {
        hermite_eval_all(y, &mut table[l * k..(l + 1) * k]);
    }
    let src = tr.to_physical_on(field, &table);

    let dx = tr.dx();
    let period = 2.0 * spec.lx();
    let xs = tr.x_points();
    let mut circ = vec![0.0; mx * mx];
    for m in 0..mx {
        for mp in 0..mx {
            circ[m * mx + mp] = dx * periodized_gaussian(xs[m] - xs[mp], t, period);
        }
    }
    let mut xconv = PhysicalField::zeros(mx, nsrc);
    let ny = tr.ny();
    let mut kern = vec![0.0; ny * nsrc];
    for (i, &y) in tr.y_nodes().iter().enumerate() {
        for (l, &yp) in ysrc.iter().enumerate() {
            kern[i * nsrc + l] = h * mehler_y(y, yp, t);
        }
    }
    let mut out = PhysicalField::zeros(mx, ny);
    let sp = src.data.as_ptr() as *const f64;
    let xp = xconv.data.as_mut_ptr() as *mut f64;
    for part in 0..2 {
        // SAFETY: every view is inside its nsrc·mx or ny·mx complex buffer.
        unsafe {
            gemm(
                nsrc,
                mx,
                mx,
                sp.add(part),
                2 * mx as isize,
                2,
                circ.as_ptr(),
                1,
                mx as isize,
                xp.add(part),
                2 * mx as isize,
                2,
            );
        }
    }
    let xp = xconv.data.as_ptr() as *const f64;
    let op = out.data.as_mut_ptr() as *mut f64;
    for part in 0..2 {
        // SAFETY: as above.
        unsafe {
            gemm(
                ny,
                nsrc,
                mx,
                kern.as_ptr(),
                nsrc as isize,
                1,
                xp.add(part),
                2 * mx as isize,
                2,
                op.add(part),
                2 * mx as isize,
                2,
            );
        }
    }
    tr.to_spectral(&out)
}

fn check_finite(u: &SpectralField) -> Result<()> {
    if u.is_finite() {
        Ok(())
    } else {
        Err(Error::Numerical("field contains NaN or Inf".into()))
    }
}

/// Strang splitting `L(dt/2) N(dt) L(dt/2)` with exact substeps.
/// `N(τ)` multiplies by `e^{iκτ|u|²}` on the physical grid.
#[derive(Debug)]
pub struct SplitStep {
    transform: Transform,
    half: Vec<C64>,
    dt: f64,
    kappa: f64,
}

impl SplitStep {
    pub fn new(spec: &Arc<BasisSpec>, dt: f64, kappa: f64, padding: Padding) -> Self {
        let mut phases = SpectralField::zeros(spec);
        phases.map_modes(|_, _, lam, _| C64::from_polar(1.0, 0.5 * dt * lam));
        SplitStep { transform: Transform::new(spec, padding), half: phases.into_coeffs(), dt, kappa }
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn transform(&self) -> &Transform {
        &self.transform
    }

    fn half_linear(&self, u: &mut SpectralField) {
        u.coeffs_mut().iter_mut().zip(&self.half).for_each(|(c, p)| *c *= p);
    }

    /// Exact flow of `i∂ₜu + κ|u|²u = 0` over time `tau`, then projection.
    pub fn nonlinear(&self, u: &SpectralField, tau: f64) -> Result<SpectralField> {
        if self.kappa == 0.0 {
            return Ok(u.clone());
        }
        let mut p = self.transform.to_physical(u);
        let a = self.kappa * tau;
        p.data.iter_mut().for_each(|v| *v *= C64::from_polar(1.0, a * v.norm_sqr()));
        self.transform.to_spectral(&p)
    }

    pub fn step(&self, u: &SpectralField) -> Result<SpectralField> {
        check_finite(u)?;
        let mut v = u.clone();
        self.half_linear(&mut v);
        let mut v = self.nonlinear(&v, self.dt)?;
        self.half_linear(&mut v);
        check_finite(&v)?;
        Ok(v)
    }
}

/// One Strang step with the default 2/3-rule padding.
pub fn nls_step(field: &SpectralField, dt: f64, kappa: f64) -> Result<SpectralField> {
    SplitStep::new(field.spec(), dt, kappa, Padding::TwoThirds).step(field)
}

/// How the overall size of an initial datum is fixed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub enum Normalization {
    /// Multiply the raw profile by this factor.
    Amplitude(f64),
    /// Rescale to this `H¹` norm.
    H1(f64),
    /// Rescale to this `L²` norm.
    L2(f64),
}

impl Default for Normalization {
    fn default() -> Self {
        Normalization::Amplitude(1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplicitMode {
    pub j: i64,
    pub k: usize,
    pub re: f64,
    pub im: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InitialData {
    /// `exp(-(x-x0)²/(2w²) + i p x) · exp(-(y-y0)²/2 + i q y)`.
    CoherentGaussian {
        #[serde(default)]
        center: [f64; 2],
        #[serde(default)]
        momentum: [f64; 2],
        #[serde(default = "one")]
        width: f64,
        #[serde(default)]
        normalization: Normalization,
    },
    /// Complex Gaussian coefficients times `λ^{-s/2} e^{-λ/decay}`.
    RandomSobolev {
        s: f64,
        decay: f64,
        #[serde(default)]
        normalization: Normalization,
    },
    ExplicitCoefficients { modes: Vec<ExplicitMode> },
}

fn one() -> f64 {
    1.0
}

fn normalize(mut u: SpectralField, n: Normalization) -> Result<SpectralField> {
    let (current, target) = match n {
        Normalization::Amplitude(a) => (1.0, a),
        Normalization::H1(v) => (sobolev_norm(&u, 1.0), v),
        Normalization::L2(v) => (u.norm(), v),
    };
    if current == 0.0 && target != 0.0 {
        return Err(Error::InvalidArgument("cannot rescale a zero datum".into()));
    }
    let f = if target == 0.0 { 0.0 } else { target / current };
    u.scale(C64::new(f, 0.0));
    Ok(u)
}

impl InitialData {
    pub fn build(&self, spec: &Arc<BasisSpec>, seed: u64) -> Result<SpectralField> {
        let u = match self {
            InitialData::CoherentGaussian { center, momentum, width, normalization } => {
                if !(*width > 0.0) {
                    return Err(Error::InvalidArgument("Gaussian width must be positive".into()));
                }
                let tr = Transform::new(spec, Padding::None);
                let xs = tr.x_points();
                let mut p = PhysicalField::zeros(tr.mx(), tr.ny());
                for (i, &y) in tr.y_nodes().iter().enumerate() {
                    let gy = C64::from_polar((-(y - center[1]).powi(2) / 2.0).exp(), momentum[1] * y);
                    for (m, &x) in xs.iter().enumerate() {
                        let gx = C64::from_polar(
                            (-(x - center[0]).powi(2) / (2.0 * width * width)).exp(),
                            momentum[0] * x,
                        );
                        p.data[i * tr.mx() + m] = gx * gy;
                    }
                }
                normalize(tr.to_spectral(&p)?, *normalization)?
            }
            InitialData::RandomSobolev { s, decay, normalization } => {
                if !(*decay > 0.0) {
                    return Err(Error::InvalidArgument("decay must be positive".into()));
                }
                let mut rng = crate::seeded_rng(seed, 0);
                let mut u = SpectralField::zeros(spec);
                u.map_modes(|_, _, lam, _| {
                    let g: f64 = StandardNormal.sample(&mut rng);
                    let h: f64 = StandardNormal.sample(&mut rng);
                    C64::new(g, h) * (lam.powf(-s / 2.0) * (-lam / decay).exp() / 2f64.sqrt())
                });
                normalize(u, *normalization)?
            }
            InitialData::ExplicitCoefficients { modes } => {
                let mut u = SpectralField::zeros(spec);
                let k = spec.modes();
                for m in modes {
                    let row = spec
                        .row_of_j(m.j)
                        .filter(|_| m.k < k)
                        .ok_or_else(|| Error::InvalidArgument(format!("mode ({},{}) not resolved", m.j, m.k)))?;
                    u.coeffs_mut()[row * k + m.k] = C64::new(m.re, m.im);
                }
                u
            }
        };
        if !sobolev_norm(&u, 2.0).is_finite() {
            return Err(Error::Numerical("initial datum has infinite H2 norm".into()));
        }
        Ok(u)
    }
}

fn default_coupling() -> f64 {
    1.0
}

fn default_blowup() -> f64 {
    1e6
}

fn default_stride() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    #[serde(default)]
    pub spec: BasisParams,
    pub sign: Sign,
    /// Scale `g` of the cubic term; 0 gives the linear flow.
    #[serde(default = "default_coupling")]
    pub coupling: f64,
    pub dt: f64,
    pub t_end: f64,
    /// Record every `output_every`-th step.
    #[serde(default = "default_stride")]
    pub output_every: usize,
    pub initial: InitialData,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub padding: Padding,
    /// Abort when `‖u‖_{H¹}` exceeds this multiple of its initial value.
    #[serde(default = "default_blowup")]
    pub blowup_factor: f64,
}

impl SimConfig {
    pub fn new(spec: BasisParams, sign: Sign, dt: f64, t_end: f64, initial: InitialData) -> Self {
        SimConfig {
            spec,
            sign,
            coupling: 1.0,
            dt,
            t_end,
            output_every: 1,
            initial,
            seed: 0,
            padding: Padding::TwoThirds,
            blowup_factor: 1e6,
        }
    }

    pub fn kappa(&self) -> f64 {
        self.sign.value() * self.coupling
    }

    pub fn steps(&self) -> usize {
        (self.t_end / self.dt).round() as usize
    }

    /// Checks the invariants and returns the built spec.
    pub fn validate(&self) -> Result<Arc<BasisSpec>> {
        let spec = BasisSpec::from_params(&self.spec)?;
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidArgument(format!("dt must be positive, got {}", self.dt)));
        }
        let lam = spec.lambda_max();
        if self.dt * lam > PI {
            return Err(Error::Resolution(format!(
                "dt = {} breaks phase resolution dt*lambda_max <= pi (lambda_max = {lam:.4}); use dt <= {:.4e}",
                self.dt,
                PI / lam
            )));
        }
        if self.t_end < self.dt {
            return Err(Error::InvalidArgument(format!("t_end = {} is shorter than dt", self.t_end)));
        }
        if self.output_every == 0 {
            return Err(Error::InvalidArgument("output_every must be at least 1".into()));
        }
        if !(self.coupling >= 0.0) {
            return Err(Error::InvalidArgument("coupling must be non-negative".into()));
        }
        Ok(spec)
    }
}

/// Scalar diagnostics of one frame. `mass` is `‖u‖²_{L²}`, `h_s` is `‖A^{s/2}u‖`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observables {
    pub t: f64,
    pub mass: f64,
    pub energy: f64,
    pub h1: f64,
    pub h2: f64,
    pub h4: f64,
}

/// Evaluates observables; the quartic integral uses the alias-free grid.
#[derive(Debug)]
pub struct Observer {
    transform: Transform,
    kappa: f64,
}

impl Observer {
    pub fn new(spec: &Arc<BasisSpec>, kappa: f64) -> Self {
        Observer { transform: Transform::new(spec, Padding::Exact), kappa }
    }

    pub fn quartic(&self, u: &SpectralField) -> f64 {
        let p = self.transform.to_physical(u);
        let f: Vec<f64> = p.data.iter().map(|v| v.norm_sqr().powi(2)).collect();
        self.transform.integrate(&f)
    }

    pub fn energy(&self, u: &SpectralField) -> f64 {
        let kin = 0.5 * sobolev_norm(u, 1.0).powi(2);
        if self.kappa == 0.0 {
            kin
        } else {
            kin + 0.25 * self.kappa * self.quartic(u)
        }
    }

    pub fn observe(&self, t: f64, u: &SpectralField) -> Observables {
        Observables {
            t,
            mass: u.norm_sqr(),
            energy: self.energy(u),
            h1: sobolev_norm(u, 1.0),
            h2: sobolev_norm(u, 2.0),
            h4: sobolev_norm(u, 4.0),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimOutput {
    pub trajectory: Trajectory,
    pub observables: Vec<Observables>,
}

/// Runs the split-step integrator and calls `record(t, u)` at step 0, every
/// `output_every` steps, and at the final step.
pub fn simulate_with(cfg: &SimConfig, mut record: impl FnMut(f64, &SpectralField) -> Result<()>) -> Result<()> {
    let spec = cfg.validate()?;
    let u0 = cfg.initial.build(&spec, cfg.seed)?;
    simulate_from(&u0, cfg, &mut record)
}

/// As [`simulate_with`] from an explicit datum.
pub fn simulate_from(
    u0: &SpectralField,
    cfg: &SimConfig,
    record: &mut dyn FnMut(f64, &SpectralField) -> Result<()>,
) -> Result<()> {
    cfg.validate()?;
    let stepper = SplitStep::new(u0.spec(), cfg.dt, cfg.kappa(), cfg.padding);
    let n = cfg.steps();
    let limit = cfg.blowup_factor * sobolev_norm(u0, 1.0);
    let mut u = u0.clone();
    record(0.0, &u)?;
    for step in 1..=n {
        u = stepper.step(&u)?;
        let t = step as f64 * cfg.dt;
        let h1 = sobolev_norm(&u, 1.0);
        if h1 > limit {
            return Err(Error::BlowUpDetected { t, h1, limit });
        }
        if step % cfg.output_every == 0 || step == n {
            record(t, &u)?;
        }
    }
    Ok(())
}

/// Runs a simulation and keeps every recorded frame.
pub fn simulate(cfg: &SimConfig) -> Result<SimOutput> {
    let spec = cfg.validate()?;
    let observer = Observer::new(&spec, cfg.kappa());
    let mut frames = Vec::new();
    let mut obs = Vec::new();
    let mut times = Vec::new();
    simulate_with(cfg, |t, u| {
        obs.push(observer.observe(t, u));
        frames.push(u.clone());
        times.push(t);
        Ok(())
    })?;
    // a final partial stride breaks uniform spacing; drop that frame from the trajectory
    let frame_dt = cfg.dt * cfg.output_every as f64;
    let uniform = frames.len() >= 2 && ((times[times.len() - 1] - times[times.len() - 2]) - frame_dt).abs() < 1e-9 * frame_dt;
    let mut traj_frames = frames;
    if !uniform && traj_frames.len() > 2 {
        traj_frames.pop();
    }
    let trajectory = if traj_frames.len() >= 2 {
        Trajectory::new(0.0, frame_dt, traj_frames)?
    } else {
        let f = traj_frames.pop().expect("at least one frame");
        Trajectory::new(0.0, frame_dt, vec![f.clone(), f])?
    };
    Ok(SimOutput { trajectory, observables: obs })
}

#[derive(Debug, Clone)]
pub struct PicardOutput {
    /// `u⁽⁰⁾, u⁽¹⁾, …` on the common time grid.
    pub iterates: Vec<Trajectory>,
    /// `d_n = sup_t ‖u⁽ⁿ⁾ - u⁽ⁿ⁻¹⁾‖_{H¹}` for `n ≥ 1`.
    pub differences: Vec<f64>,
    /// False when some difference after the third fails to decrease.
    pub contracting: bool,
}

/// Nonlinearity `|u|²u` projected onto the basis.
#[derive(Debug)]
pub struct Cubic {
    transform: Transform,
}

impl Cubic {
    pub fn new(spec: &Arc<BasisSpec>, padding: Padding) -> Self {
        Cubic { transform: Transform::new(spec, padding) }
    }

    pub fn apply(&self, u: &SpectralField) -> Result<SpectralField> {
        let mut p = self.transform.to_physical(u);
        p.data.iter_mut().for_each(|v| *v *= v.norm_sqr());
        self.transform.to_spectral(&p)
    }
}

/// Picard iteration of the Duhamel map on `[0, T]` with `steps` trapezoid intervals.
pub fn picard_iterate(phi: &SpectralField, t_end: f64, iters: usize, kappa: f64, steps: usize) -> Result<PicardOutput> {
    if !(t_end > 0.0 && t_end <= 1.0) {
        return Err(Error::InvalidArgument(format!("Picard horizon must lie in (0, 1], got {t_end}")));
    }
    if iters < 2 {
        return Err(Error::InvalidArgument("at least two Picard iterations are required".into()));
    }
    if steps < 1 {
        return Err(Error::InvalidArgument("at least one time step is required".into()));
    }
    check_finite(phi)?;
    let h = t_end / steps as f64;
    let times: Vec<f64> = (0..=steps).map(|n| n as f64 * h).collect();
    let free: Vec<SpectralField> = times.iter().map(|&t| linear_propagate(phi, t)).collect();
    let cubic = Cubic::new(phi.spec(), Padding::TwoThirds);
    let mut iterates = vec![Trajectory::new(0.0, h, free)?];
    let mut differences = Vec::new();
    for _ in 0..iters {
        let prev = iterates.last().expect("nonempty");
        // w(τ) = e^{-iτA} N(u(τ)); cumulative trapezoid gives ∫₀ᵗ w
        let mut acc = SpectralField::zeros(phi.spec());
        let mut last_w: Option<SpectralField> = None;
        let mut frames = Vec::with_capacity(steps + 1);
        for (n, &t) in times.iter().enumerate() {
            let w = linear_propagate(&cubic.apply(&prev.frames[n])?, -t);
            if let Some(lw) = &last_w {
                acc.axpy(C64::new(0.5 * h, 0.0), lw);
                acc.axpy(C64::new(0.5 * h, 0.0), &w);
            }
            last_w = Some(w);
            let mut v = phi.clone();
            v.axpy(I * kappa, &acc);
            frames.push(linear_propagate(&v, t));
        }
        let d = frames
            .iter()
            .zip(&prev.frames)
            .map(|(a, b)| sobolev_norm(&a.sub(b), 1.0))
            .fold(0.0, f64::max);
        check_finite(&frames[steps])?;
        differences.push(d);
        iterates.push(Trajectory::new(0.0, h, frames)?);
    }
    let contracting = differences.windows(2).skip(2).all(|w| w[1] < w[0] || w[0] == 0.0);
    Ok(PicardOutput { iterates, differences, contracting })
}

/// `∂ₜʲu` for `j = 0..=m` at one time slice, from the equation alone.
#[derive(Debug, Clone)]
pub struct TimeDerivatives {
    pub orders: Vec<SpectralField>,
    /// Largest relative `L²` mass of `∂ₜʲ(|u|²u)` lost when projecting onto the basis.
    pub projection_loss: f64,
}

pub const MAX_TIME_DERIVATIVE: usize = 4;

fn factorial(n: usize) -> f64 {
    (1..=n).map(|v| v as f64).product()
}

/// Computes `∂ₜʲ(|u|²u)` on the physical grid from the samples of `∂ₜᵃu`, `a ≤ j`.
pub(crate) fn cubic_derivative(phys: &[PhysicalField], j: usize) -> PhysicalField {
    let (mx, ny) = (phys[0].mx, phys[0].ny);
    let mut out = PhysicalField::zeros(mx, ny);
    for a in 0..=j {
        for b in 0..=j - a {
            let c = j - a - b;
            let w = factorial(j) / (factorial(a) * factorial(b) * factorial(c));
            for (o, ((pa, pb), pc)) in out
                .data
                .iter_mut()
                .zip(phys[a].data.iter().zip(&phys[b].data).zip(&phys[c].data))
            {
                *o += pa * pb * pc.conj() * w;
            }
        }
    }
    out
}

/// `A u` on the coefficient array.
pub fn apply_a(u: &SpectralField) -> SpectralField {
    let mut v = u.clone();
    v.map_modes(|_, _, lam, c| c * lam);
    v
}

/// Recursion `∂ₜʲ⁺¹u = i(A∂ₜʲu + κ∂ₜʲ(|u|²u))` with Leibniz expansion of the cubic term.
pub fn time_derivatives(u: &SpectralField, m: usize, kappa: f64) -> Result<TimeDerivatives> {
    if m > MAX_TIME_DERIVATIVE {
        return Err(Error::Unsupported(format!(
            "time derivatives above order {MAX_TIME_DERIVATIVE} exhaust the resolution (asked for {m})"
        )));
    }
    check_finite(u)?;
    let tr = Transform::new(u.spec(), Padding::Exact);
    let mut orders = vec![u.clone()];
    let mut phys = vec![tr.to_physical(u)];
    let mut loss = 0.0f64;
    for j in 0..m {
        let mut next = apply_a(&orders[j]);
        if kappa != 0.0 {
            let nj = cubic_derivative(&phys, j);
            let grid: f64 = tr.integrate(&nj.data.iter().map(|v| v.norm_sqr()).collect::<Vec<_>>());
            let proj = tr.to_spectral(&nj)?;
            if grid > 0.0 {
                loss = loss.max(((grid - proj.norm_sqr()).max(0.0) / grid).sqrt());
            }
            next.axpy(C64::new(kappa, 0.0), &proj);
        }
        next.scale(I);
        check_finite(&next)?;
        phys.push(tr.to_physical(&next));
        orders.push(next);
    }
    Ok(TimeDerivatives { orders, projection_loss: loss })
}

/// `∂ₜᵐu` and the projection-loss diagnostic.
pub fn time_derivative(u: &SpectralField, m: usize, kappa: f64) -> Result<(SpectralField, f64)> {
    let mut d = time_derivatives(u, m, kappa)?;
    let f = d.orders.pop().expect("order zero is always present");
    Ok((f, d.projection_loss))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn small_spec() -> Arc<BasisSpec> {
        BasisSpec::new(8.0, 32, 16).unwrap()
    }

    /// Resolves the test Gaussians to roundoff under one cubic step.
    fn step_spec() -> Arc<BasisSpec> {
        BasisSpec::new(8.0, 64, 40).unwrap()
    }

    fn gaussian(spec: &Arc<BasisSpec>, amp: f64) -> SpectralField {
        InitialData::CoherentGaussian {
            center: [0.3, 0.2],
            momentum: [1.0, 0.0],
            width: 1.0,
            normalization: Normalization::Amplitude(amp),
        }
        .build(spec, 0)
        .unwrap()
    }

    fn random(spec: &Arc<BasisSpec>, seed: u64, decay: f64) -> SpectralField {
        InitialData::RandomSobolev { s: 0.0, decay, normalization: Normalization::L2(1.0) }
            .build(spec, seed)
            .unwrap()
    }

    fn rel(a: &SpectralField, b: &SpectralField) -> f64 {
        a.sub(b).norm() / b.norm()
    }

    #[test]
    fn sign_serde() {
        assert_eq!(serde_json::to_string(&Sign::Plus).unwrap(), "1");
        assert_eq!(serde_json::from_str::<Sign>("-1").unwrap(), Sign::Minus);
        assert!(serde_json::from_str::<Sign>("0").is_err());
    }

    #[test]
    fn linear_examples() {
        let spec = small_spec();
        let u = random(&spec, 1, 20.0);
        assert_eq!(linear_propagate(&u, 0.0).coeffs(), u.coeffs());
        let e = SpectralField::unit(&spec, 0, 0).unwrap();
        let v = linear_propagate(&e, PI);
        assert!((v.get(0, 0) - C64::new(-1.0, 0.0)).norm() < 1e-15);
        for s in [-1.0, 0.0, 1.0, 2.0] {
            let a = sobolev_norm(&linear_propagate(&u, 0.77), s);
            assert!((a - sobolev_norm(&u, s)).abs() <= 1e-13 * a);
        }
    }

    #[test]
    fn heat_examples() {
        let spec = small_spec();
        let e = SpectralField::unit(&spec, 0, 0).unwrap();
        let v = heat_propagate(&e, 1.0, HeatMethod::Spectral).unwrap();
        assert!((v.get(0, 0).re - (-1.0f64).exp()).abs() < 1e-16);
        let u = random(&spec, 2, 20.0);
        assert_eq!(heat_propagate(&u, 0.0, HeatMethod::Spectral).unwrap().coeffs(), u.coeffs());
        assert!(matches!(heat_propagate(&u, 0.0, HeatMethod::Mehler), Err(Error::InvalidArgument(_))));
        assert!(matches!(heat_propagate(&u, -1.0, HeatMethod::Mehler), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn mehler_matches_spectral_small() {
        let spec = small_spec();
        let u = random(&spec, 3, 30.0);
        for t in [0.05, 0.1, 0.5] {
            let a = heat_propagate(&u, t, HeatMethod::Spectral).unwrap();
            let b = heat_propagate(&u, t, HeatMethod::Mehler).unwrap();
            assert!(rel(&b, &a) < 1e-6, "t={t}: {}", rel(&b, &a));
        }
    }

    #[test]
    fn heat_preserves_positivity() {
        let spec = small_spec();
        let tr = Transform::new(&spec, Padding::None);
        let u = gaussian(&spec, 1.0);
        // real non-negative datum: the centered Gaussian without momentum
        let g = InitialData::CoherentGaussian {
            center: [0.0, 0.0],
            momentum: [0.0, 0.0],
            width: 1.5,
            normalization: Normalization::default(),
        }
        .build(&spec, 0)
        .unwrap();
        let v = heat_propagate(&g, 0.1, HeatMethod::Spectral).unwrap();
        let p = tr.to_physical(&v);
        let min = p.data.iter().map(|c| c.re).fold(f64::INFINITY, f64::min);
        assert!(min >= -1e-10, "{min}");
        assert!(u.norm() > 0.0);
    }

    #[test]
    fn group_law() {
        let spec = small_spec();
        let u = random(&spec, 4, 20.0);
        let a = linear_propagate(&linear_propagate(&u, 0.3), 1.1);
        let b = linear_propagate(&u, 1.4);
        assert!(rel(&a, &b) < 1e-13);
    }

    #[test]
    fn step_examples() {
        let spec = small_spec();
        let z = SpectralField::zeros(&spec);
        assert_eq!(nls_step(&z, 1e-3, 1.0).unwrap().norm(), 0.0);
        let u = gaussian(&spec, 1.0);
        let lin = nls_step(&u, 1e-3, 0.0).unwrap();
        assert!(rel(&lin, &linear_propagate(&u, 1e-3)) < 1e-15);
        let mut bad = u.clone();
        bad.coeffs_mut()[0] = C64::new(f64::NAN, 0.0);
        assert!(matches!(nls_step(&bad, 1e-3, 1.0), Err(Error::Numerical(_))));
    }

    #[test]
    fn step_mass_and_reversibility() {
        let spec = step_spec();
        let u = gaussian(&spec, 1.5);
        let v = nls_step(&u, 1e-3, 1.0).unwrap();
        assert!((v.norm_sqr() / u.norm_sqr() - 1.0).abs() < 1e-12);
        let w = nls_step(&v, -1e-3, 1.0).unwrap();
        assert!(rel(&w, &u) < 1e-10, "{}", rel(&w, &u));
    }

    #[test]
    fn second_order_convergence() {
        let spec = step_spec();
        let u0 = gaussian(&spec, 1.5);
        let run = |dt: f64| {
            let s = SplitStep::new(&spec, dt, 1.0, Padding::TwoThirds);
            let mut u = u0.clone();
            for _ in 0..(1.0 / dt).round() as usize {
                u = s.step(&u).unwrap();
            }
            u
        };
        let reference = run(2.5e-4);
        let e: Vec<f64> = [4e-3, 2e-3, 1e-3].iter().map(|&dt| run(dt).sub(&reference).norm()).collect();
        // errors relative to a much finer run, so each halving should give ~4
        for w in e.windows(2) {
            let r = w[0] / w[1];
            assert!((r - 4.0).abs() < 0.5, "{e:?}");
        }
    }

    #[test]
    fn config_validation() {
        let init = InitialData::ExplicitCoefficients { modes: vec![ExplicitMode { j: 0, k: 0, re: 1.0, im: 0.0 }] };
        let mut cfg = SimConfig::new(BasisParams::default(), Sign::Plus, 1e-3, 1.0, init);
        assert!(cfg.validate().is_ok());
        cfg.dt = 1e-2;
        match cfg.validate() {
            Err(Error::Resolution(msg)) => assert!(msg.contains("use dt <=")),
            other => panic!("{other:?}"),
        }
        cfg.dt = -1.0;
        assert!(matches!(cfg.validate(), Err(Error::InvalidArgument(_))));
        cfg.dt = 1e-3;
        cfg.t_end = 1e-4;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn config_json() {
        let text = r#"{"sign": 1, "dt": 0.001, "t_end": 0.01,
            "initial": {"kind": "random-sobolev", "s": 1.0, "decay": 20.0, "normalization": {"h1": 1.0}}}"#;
        let cfg: SimConfig = serde_json::from_str(text).unwrap();
        assert_eq!(cfg.coupling, 1.0);
        assert_eq!(cfg.padding, Padding::TwoThirds);
        let bad = r#"{"sign": 1, "dt": 0.001, "t_end": 0.01, "typo": 3,
            "initial": {"kind": "random-sobolev", "s": 1.0, "decay": 20.0}}"#;
        assert!(serde_json::from_str::<SimConfig>(bad).is_err());
    }

    #[test]
    fn random_datum_is_seeded() {
        let spec = small_spec();
        let d = InitialData::RandomSobolev { s: 1.0, decay: 10.0, normalization: Normalization::H1(1.0) };
        let a = d.build(&spec, 5).unwrap();
        let b = d.build(&spec, 5).unwrap();
        let c = d.build(&spec, 6).unwrap();
        assert_eq!(a.coeffs(), b.coeffs());
        assert_ne!(a.coeffs(), c.coeffs());
        assert!((sobolev_norm(&a, 1.0) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn linear_run_preserves_norms() {
        let mut cfg = SimConfig::new(
            BasisParams { lx: 8.0, nx: 32, k: 16, nodes: None },
            Sign::Plus,
            1e-2,
            0.5,
            InitialData::RandomSobolev { s: 0.0, decay: 20.0, normalization: Normalization::L2(1.0) },
        );
        cfg.coupling = 0.0;
        cfg.output_every = 5;
        let out = simulate(&cfg).unwrap();
        assert_eq!(out.observables.len(), 11);
        let o0 = out.observables[0];
        for o in &out.observables {
            for (a, b) in [(o.mass, o0.mass), (o.h1, o0.h1), (o.h2, o0.h2), (o.h4, o0.h4)] {
                assert!((a / b - 1.0).abs() < 1e-12);
            }
        }
        assert_eq!(out.trajectory.len(), 11);
    }

    #[test]
    fn focusing_blowup_guard() {
        let mut cfg = SimConfig::new(
            BasisParams { lx: 8.0, nx: 32, k: 16, nodes: None },
            Sign::Minus,
            1e-3,
            0.05,
            InitialData::CoherentGaussian {
                center: [0.0, 0.0],
                momentum: [0.0, 0.0],
                width: 1.0,
                normalization: Normalization::Amplitude(3.0),
            },
        );
        cfg.blowup_factor = 1.0001;
        assert!(matches!(simulate(&cfg), Err(Error::BlowUpDetected { .. })));
    }

    #[test]
    fn picard_trivial_cases() {
        let spec = small_spec();
        let z = SpectralField::zeros(&spec);
        let out = picard_iterate(&z, 0.1, 3, 1.0, 20).unwrap();
        assert!(out.iterates.iter().all(|t| t.frames.iter().all(|f| f.norm() == 0.0)));
        let u = gaussian(&spec, 1.0);
        let lin = picard_iterate(&u, 0.1, 2, 0.0, 20).unwrap();
        for (a, b) in lin.iterates[1].frames.iter().zip(&lin.iterates[0].frames) {
            assert_eq!(a.coeffs(), b.coeffs());
        }
        assert!(picard_iterate(&u, 2.0, 3, 1.0, 20).is_err());
        assert!(picard_iterate(&u, 0.1, 1, 1.0, 20).is_err());
    }

    #[test]
    fn time_derivative_examples() {
        let spec = small_spec();
        let u = gaussian(&spec, 1.2);
        let (d0, _) = time_derivative(&u, 0, 1.0).unwrap();
        assert_eq!(d0.coeffs(), u.coeffs());
        let z = SpectralField::zeros(&spec);
        for m in 0..=4 {
            assert_eq!(time_derivative(&z, m, 1.0).unwrap().0.norm(), 0.0);
        }
        assert!(matches!(time_derivative(&u, 5, 1.0), Err(Error::Unsupported(_))));
        let (d1, loss) = time_derivative(&u, 1, 1.0).unwrap();
        let resid = d1.sub(&apply_a(&u).scaled(I));
        let n = Cubic::new(&spec, Padding::Exact).apply(&u).unwrap();
        assert!((resid.norm() - n.norm()).abs() < 1e-10 * n.norm());
        assert!(loss < 1e-2);
    }

    #[test]
    fn time_derivative_matches_finite_difference() {
        let spec = small_spec();
        let u = gaussian(&spec, 1.0);
        let d = time_derivatives(&u, 2, 1.0).unwrap();
        let h = 1e-3;
        let step = |dt: f64| {
            let s = SplitStep::new(&spec, dt / 8.0, 1.0, Padding::Exact);
            let mut v = u.clone();
            for _ in 0..8 {
                v = s.step(&v).unwrap();
            }
            v
        };
        let (p, m) = (step(h), step(-h));
        let fd1 = p.sub(&m).scaled(C64::new(0.5 / h, 0.0));
        assert!(rel(&fd1, &d.orders[1]) < 1e-4, "{}", rel(&fd1, &d.orders[1]));
        let fd2 = p.add(&m).sub(&u.scaled(C64::new(2.0, 0.0))).scaled(C64::new(1.0 / (h * h), 0.0));
        assert!(rel(&fd2, &d.orders[2]) < 1e-3, "{}", rel(&fd2, &d.orders[2]));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn step_conserves_mass(x0 in -2.0f64..2.0, y0 in -1.0f64..1.0, p in -2.0f64..2.0, amp in 0.1f64..2.0) {
            let spec = step_spec();
            let u = InitialData::CoherentGaussian {
                center: [x0, y0],
                momentum: [p, 0.0],
                width: 1.0,
                normalization: Normalization::Amplitude(amp),
            }
            .build(&spec, 0)
            .unwrap();
            let v = nls_step(&u, 1e-3, 1.0).unwrap();
            prop_assert!((v.norm_sqr() / u.norm_sqr() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn linear_isometry(seed in 0u64..1000, t in -5.0f64..5.0, s in -2.0f64..3.0) {
            let spec = BasisSpec::new(4.0, 16, 8).unwrap();
            let u = random(&spec, seed, 1e9);
            let a = sobolev_norm(&linear_propagate(&u, t), s);
            prop_assert!((a - sobolev_norm(&u, s)).abs() <= 1e-13 * a);
        }
    }
}
