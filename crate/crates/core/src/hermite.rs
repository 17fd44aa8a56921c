//! Hermite functions, Gauss–Hermite quadrature and the y-direction transforms.
//!
//! The normalized Hermite functions `h_k(y) = (2^k k! √π)^{-1/2} H_k(y) e^{-y²/2}`
//! are evaluated by the normalized three-term recurrence. The Gaussian factor is
//! carried as a separate logarithmic scale so the recurrence neither overflows
//! nor underflows at large `|y|`.

use crate::error::{Error, Result};
use num_complex::Complex64;
use std::f64::consts::{PI, SQRT_2};

/// Gauss–Hermite rule for the weight `e^{-y²}`.
///
/// `scaled_weights[i] = weights[i] * exp(nodes[i]²)` is stored separately because
/// the plain weights underflow for large rules while the scaled ones stay O(1).
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    pub scaled_weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Value of `h_k(y)`.
pub fn hermite_eval(k: usize, y: f64) -> f64 {
    let mut out = vec![0.0; k + 1];
    hermite_eval_all(y, &mut out);
    out[k]
}

/// Fills `out[k] = h_k(y)` for `k < out.len()`.
pub fn hermite_eval_all(y: f64, out: &mut [f64]) {
    let n = out.len();
    if n == 0 {
        return;
    }
    let mut scaled = ScaledRecurrence::new(y);
    for slot in out.iter_mut() {
        *slot = scaled.value();
        scaled.advance();
    }
}

/// Fills `out[k] = h_k'(y)` given `vals[k] = h_k(y)`, using `h_k' = -y h_k + √(2k) h_{k-1}`.
pub fn hermite_deriv_from_values(y: f64, vals: &[f64], out: &mut [f64]) {
    for k in 0..vals.len().min(out.len()) {
        let lower = if k > 0 { (2.0 * k as f64).sqrt() * vals[k - 1] } else { 0.0 };
        out[k] = -y * vals[k] + lower;
    }
}

/// Normalized recurrence with the value held as `v * exp(log_scale)`.
struct ScaledRecurrence {
    y: f64,
    k: usize,
    prev: f64,
    cur: f64,
    log_scale: f64,
    factor: f64,
}

const RESCALE_AT: f64 = 1e150;
const LN_RESCALE: f64 = 345.387_763_949_107_0; // ln(1e150)

impl ScaledRecurrence {
    fn new(y: f64) -> Self {
        let log_scale = -0.5 * y * y;
        ScaledRecurrence {
            y,
            k: 0,
            prev: 0.0,
            cur: PI.powf(-0.25),
            log_scale,
            factor: log_scale.exp(),
        }
    }

    fn value(&self) -> f64 {
        if self.log_scale > -700.0 {
            self.cur * self.factor
        } else if self.cur == 0.0 {
            0.0
        } else {
            (self.cur.abs().ln() + self.log_scale).exp().copysign(self.cur)
        }
    }

    fn advance(&mut self) {
        let k = self.k as f64;
        let next = self.y * (2.0 / (k + 1.0)).sqrt() * self.cur - (k / (k + 1.0)).sqrt() * self.prev;
        self.prev = self.cur;
        self.cur = next;
        self.k += 1;
        if self.cur.abs() > RESCALE_AT {
            self.cur /= RESCALE_AT;
            self.prev /= RESCALE_AT;
            self.log_scale += LN_RESCALE;
            self.factor = self.log_scale.exp();
        }
    }
}

/// Scaled pair `(v_{n-1}, v_n, log_scale)` with `h_m(y) = v_m e^{log_scale}`.
fn scaled_pair(n: usize, y: f64) -> (f64, f64, f64) {
    let mut r = ScaledRecurrence::new(y);
    for _ in 0..n {
        r.advance();
    }
    (r.prev, r.cur, r.log_scale)
}

/// Eigenvalues of a symmetric tridiagonal matrix by implicit QL.
/// `d` holds the diagonal, `e[i]` couples rows `i` and `i+1` (`e[n-1]` is ignored).
fn tridiagonal_eigenvalues(d: &mut [f64], e: &mut [f64]) -> Result<()> {
    let n = d.len();
    if n == 0 {
        return Ok(());
    }
    e[n - 1] = 0.0;
    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > 100 {
                return Err(Error::Numerical("tridiagonal QL did not converge".into()));
            }
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + r.copysign(g));
            let (mut s, mut c, mut p) = (1.0f64, 1.0f64, 0.0f64);
            let mut i = m;
            let mut deflated = false;
            while i > l {
                i -= 1;
                let f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    deflated = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
            }
            if deflated {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
    Ok(())
}

/// Gauss–Hermite nodes and weights for `∫ f(y) e^{-y²} dy`.
///
/// Nodes come from the Jacobi matrix eigenvalues, are polished by two Newton
/// steps on the normalized recurrence and then symmetrized. Weights use
/// `w_i e^{y_i²} = 1 / (n h_{n-1}(y_i)²)`.
pub fn gauss_hermite_nodes(n: usize) -> Result<QuadratureRule> {
    if n == 0 {
        return Err(Error::InvalidArgument("quadrature needs at least one node".into()));
    }
    let mut d = vec![0.0; n];
    let mut e: Vec<f64> = (1..=n).map(|i| (i as f64 / 2.0).sqrt()).collect();
    tridiagonal_eigenvalues(&mut d, &mut e)?;
    d.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let nf = n as f64;
    for y in d.iter_mut() {
        for _ in 0..2 {
            let (lower, upper, _) = scaled_pair(n, *y);
            let deriv = -*y * upper + (2.0 * nf).sqrt() * lower;
            if deriv != 0.0 {
                *y -= upper / deriv;
            }
        }
    }
    for i in 0..n / 2 {
        let a = 0.5 * (d[n - 1 - i] - d[i]);
        d[i] = -a;
        d[n - 1 - i] = a;
    }
    if n % 2 == 1 {
        d[n / 2] = 0.0;
    }

    let mut weights = Vec::with_capacity(n);
    let mut scaled = Vec::with_capacity(n);
    for &y in &d {
        let (lower, _, log_scale) = scaled_pair(n, y);
        // h_{n-1}(y)² = lower² e^{2 log_scale}
        let ln_h2 = 2.0 * (lower.abs().ln() + log_scale);
        let ws = (-ln_h2).exp() / nf;
        scaled.push(ws);
        weights.push((-ln_h2 - y * y).exp() / nf);
    }
    Ok(QuadratureRule { nodes: d, weights, scaled_weights: scaled })
}

/// Hermite modes `k < K` tabulated on a Gauss–Hermite rule.
#[derive(Debug, Clone)]
pub struct HermiteBasis {
    modes: usize,
    rule: QuadratureRule,
    table: Vec<f64>,
    weighted: Vec<f64>,
}

impl HermiteBasis {
    /// Basis with the default `2K`-node rule.
    pub fn new(modes: usize) -> Result<Self> {
        Self::with_nodes(modes, 2 * modes)
    }

    pub fn with_nodes(modes: usize, nodes: usize) -> Result<Self> {
        if modes == 0 {
            return Err(Error::InvalidArgument("Hermite basis needs K >= 1".into()));
        }
        if nodes < modes {
            return Err(Error::Resolution(format!(
                "{nodes} nodes cannot resolve {modes} Hermite modes"
            )));
        }
        let rule = gauss_hermite_nodes(nodes)?;
        let mut table = vec![0.0; nodes * modes];
        for (i, &y) in rule.nodes.iter().enumerate() {
            hermite_eval_all(y, &mut table[i * modes..(i + 1) * modes]);
        }
        let mut weighted = table.clone();
        for (i, row) in weighted.chunks_mut(modes).enumerate() {
            let w = rule.scaled_weights[i];
            row.iter_mut().for_each(|v| *v *= w);
        }
        Ok(HermiteBasis { modes, rule, table, weighted })
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    pub fn rule(&self) -> &QuadratureRule {
        &self.rule
    }

    pub fn nodes(&self) -> usize {
        self.rule.len()
    }

    /// Row-major `[node][mode]` table of `h_k(y_i)`.
    pub fn table(&self) -> &[f64] {
        &self.table
    }

    /// Same layout as [`table`](Self::table), premultiplied by the scaled weights.
    pub fn weighted_table(&self) -> &[f64] {
        &self.weighted
    }

    pub fn value(&self, node: usize, mode: usize) -> f64 {
        self.table[node * self.modes + mode]
    }

    /// Largest deviation of the discrete Gram matrix from the identity.
    pub fn orthonormality_defect(&self) -> f64 {
        let k = self.modes;
        let n = self.nodes();
        let mut worst = 0.0f64;
        for a in 0..k {
            for b in a..k {
                let mut s = 0.0;
                for i in 0..n {
                    s += self.weighted[i * k + a] * self.table[i * k + b];
                }
                let target = if a == b { 1.0 } else { 0.0 };
                worst = worst.max((s - target).abs());
            }
        }
        worst
    }

    /// Perturbs one quadrature weight. Used by fault-injection tests of the self-check.
    #[doc(hidden)]
    pub fn corrupt_for_testing(&mut self) {
        let i = self.nodes() / 2;
        self.rule.scaled_weights[i] *= 1.01;
        self.rule.weights[i] *= 1.01;
        let k = self.modes;
        for m in 0..k {
            self.weighted[i * k + m] = self.table[i * k + m] * self.rule.scaled_weights[i];
        }
    }
}

/// Coefficients `c_k = Σ_i w_i e^{y_i²} f(y_i) h_k(y_i)` for `k < K`.
pub fn hermite_analyze(samples: &[Complex64], basis: &HermiteBasis) -> Result<Vec<Complex64>> {
    let n = basis.nodes();
    if samples.len() != n {
        return Err(Error::Shape(format!("expected {n} samples, got {}", samples.len())));
    }
    let k = basis.modes();
    let mut out = vec![Complex64::new(0.0, 0.0); k];
    for (i, f) in samples.iter().enumerate() {
        let row = &basis.weighted[i * k..(i + 1) * k];
        for (c, &w) in out.iter_mut().zip(row) {
            *c += f * w;
        }
    }
    Ok(out)
}

/// Samples `f(y_i) = Σ_k c_k h_k(y_i)` on the rule nodes.
pub fn hermite_synthesize(coeffs: &[Complex64], basis: &HermiteBasis) -> Result<Vec<Complex64>> {
    let k = basis.modes();
    if coeffs.len() > k {
        return Err(Error::Shape(format!("{} coefficients exceed K = {k}", coeffs.len())));
    }
    let n = basis.nodes();
    let mut out = vec![Complex64::new(0.0, 0.0); n];
    for (i, f) in out.iter_mut().enumerate() {
        let row = &basis.table[i * k..i * k + coeffs.len()];
        *f = coeffs.iter().zip(row).map(|(c, &h)| c * h).sum();
    }
    Ok(out)
}

/// `∫ h_{k0} h_{k1} h_{k2} h_{k3} dy`.
///
/// The product is a polynomial of degree `Σk` times `e^{-2y²}`, so the rule is
/// applied at nodes contracted by `1/√2`, which integrates it exactly. Indices are
/// sorted first so every permutation takes the same arithmetic path.
pub fn quadruple_product(k0: usize, k1: usize, k2: usize, k3: usize, basis: &HermiteBasis) -> Result<f64> {
    let mut idx = [k0, k1, k2, k3];
    idx.sort_unstable();
    let k = basis.modes();
    if idx[3] >= k {
        return Err(Error::InvalidArgument(format!("mode {} outside K = {k}", idx[3])));
    }
    let total: usize = idx.iter().sum();
    let n = basis.nodes();
    if n < 2 * total + 8 {
        return Err(Error::Resolution(format!(
            "quadruple product of total degree {total} needs at least {} nodes, rule has {n}",
            2 * total + 8
        )));
    }
    if total % 2 == 1 {
        return Ok(0.0);
    }
    let rule = basis.rule();
    let mut vals = vec![0.0; idx[3] + 1];
    let mut sum = 0.0;
    for (t, w) in rule.nodes.iter().zip(&rule.scaled_weights) {
        let y = t / SQRT_2;
        hermite_eval_all(y, &mut vals);
        let prod = vals[idx[0]] * vals[idx[1]] * vals[idx[2]] * vals[idx[3]];
        sum += w / SQRT_2 * prod;
    }
    Ok(sum)
}
