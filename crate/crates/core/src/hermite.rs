//! Hermite polynomials, Hermite functions and Gauss-Hermite quadrature.
//!
//! The Hermite functions `ψ_n(x) = (2^n n! √π)^(-1/2) e^(-x²/2) H_n(x)` form an
//! orthonormal basis of `L²(ℝ, dx)`. They are evaluated with the normalized
//! three-term recurrence that carries the Gaussian factor from the first term,
//! so `H_n` itself is never formed and nothing overflows for moderate `n`, `|x|`.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest order accepted by [`eval_hermite_poly`] and [`HermiteBasis::new`].
pub const MAX_SUPPORTED_ORDER: usize = 128;

/// Default number of Gauss-Hermite nodes carried by a basis.
pub const DEFAULT_QUAD_NODES: usize = 200;

/// `π^(-1/4)`
pub const PI_POW_MINUS_QUARTER: f64 = 0.751_125_544_464_942_5;

const LN_2: f64 = std::f64::consts::LN_2;

/// Physicists' Hermite polynomial `H_n(x)` via `H_{n+1} = 2x H_n - 2n H_{n-1}`.
pub fn eval_hermite_poly(n: usize, x: f64) -> Result<f64> {
    if n > MAX_SUPPORTED_ORDER {
        return Err(Error::invalid(format!(
            "Hermite order {n} exceeds supported maximum {MAX_SUPPORTED_ORDER}"
        )));
    }
    let (mut prev, mut cur) = (1.0, 2.0 * x);
    if n == 0 {
        return Ok(prev);
    }
    for k in 1..n {
        let next = 2.0 * x * cur - 2.0 * k as f64 * prev;
        prev = cur;
        cur = next;
    }
    Ok(cur)
}

/// Normalization constants `(2^n n! √π)^(-1/2)` for `n = 0..=max_order`.
pub fn normalization_constants(max_order: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(max_order + 1);
    let mut c = PI_POW_MINUS_QUARTER;
    out.push(c);
    for n in 1..=max_order {
        c /= (2.0 * n as f64).sqrt();
        out.push(c);
    }
    out
}

/// Writes `ψ_0(x) … ψ_{out.len()-1}(x)` into `out`.
pub fn hermite_functions_into(x: f64, out: &mut [f64]) {
    if out.is_empty() {
        return;
    }
    let half_sq = 0.5 * x * x;
    if half_sq < 600.0 {
        out[0] = PI_POW_MINUS_QUARTER * (-half_sq).exp();
        if out.len() > 1 {
            out[1] = std::f64::consts::SQRT_2 * x * out[0];
        }
        for n in 1..out.len().saturating_sub(1) {
            let nf = n as f64;
            out[n + 1] = (2.0 / (nf + 1.0)).sqrt() * x * out[n] - (nf / (nf + 1.0)).sqrt() * out[n - 1];
        }
    } else {
        hermite_functions_far(x, out);
    }
}

/// Far-tail branch: run the polynomial part of the recurrence with a tracked
/// binary exponent and apply `e^(-x²/2)` in log space at the end.
fn hermite_functions_far(x: f64, out: &mut [f64]) {
    const RESCALE_AT: f64 = 1e150;
    const RESCALE_BITS: i32 = 498;
    let shrink = 2f64.powi(-RESCALE_BITS);
    let half_sq = 0.5 * x * x;
    let mut exps = vec![0i64; out.len()];
    let mut exp = 0i64;
    let (mut prev, mut cur) = (0.0, PI_POW_MINUS_QUARTER);
    out[0] = cur;
    for n in 0..out.len() - 1 {
        let nf = n as f64;
        let next = (2.0 / (nf + 1.0)).sqrt() * x * cur - (nf / (nf + 1.0)).sqrt() * prev;
        prev = cur;
        cur = next;
        if cur.abs() > RESCALE_AT {
            cur *= shrink;
            prev *= shrink;
            exp += RESCALE_BITS as i64;
        }
        out[n + 1] = cur;
        exps[n + 1] = exp;
    }
    for (v, e) in out.iter_mut().zip(&exps) {
        if *v != 0.0 {
            *v = v.signum() * (v.abs().ln() + *e as f64 * LN_2 - half_sq).exp();
        }
    }
}

/// A Gauss-Hermite rule for `∫ f(x) e^(-x²) dx`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadratureRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    /// `weights[j] · e^(x_j²)`, computed without forming the exponential.
    pub scaled_weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `∫ f(x) e^(-x²) dx`
    pub fn integrate_weighted(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * f(x)).sum()
    }

    /// `∫ f(x) dx` for `f` that decays like a Gaussian.
    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.scaled_weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }
}

/// Gauss-Hermite nodes and weights.
///
/// Nodes are the eigenvalues of the symmetric Jacobi matrix of the normalized
/// recurrence (Golub-Welsch), found by implicit QL and polished by Newton steps.
/// Weights use the Christoffel form `w_j = 1 / Σ_{k<n} p_k(x_j)²` with `p_k`
/// the orthonormal polynomials.
pub fn gauss_hermite(n: usize) -> Result<QuadratureRule> {
    if n == 0 {
        return Err(Error::invalid("quadrature needs at least one node"));
    }
    let mut diag = vec![0.0; n];
    let mut off: Vec<f64> = (1..n).map(|k| (k as f64 / 2.0).sqrt()).collect();
    off.push(0.0);
    tridiagonal_eigenvalues(&mut diag, &mut off)?;
    let mut nodes = diag;
    nodes.sort_by(|a, b| a.total_cmp(b));

    let nf = n as f64;
    for z in nodes.iter_mut() {
        for _ in 0..3 {
            let (p, dp) = orthonormal_with_derivative(n, *z, nf);
            if dp == 0.0 {
                break;
            }
            *z -= p / dp;
        }
    }
    // The rule is symmetric; enforce it exactly.
    for i in 0..n / 2 {
        let m = 0.5 * (nodes[n - 1 - i] - nodes[i]);
        nodes[i] = -m;
        nodes[n - 1 - i] = m;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }

    let mut psi = vec![0.0; n];
    let mut poly = vec![0.0; n];
    let mut weights = Vec::with_capacity(n);
    let mut scaled_weights = Vec::with_capacity(n);
    for &x in &nodes {
        poly_part_into(x, &mut poly);
        weights.push(1.0 / poly.iter().map(|v| v * v).sum::<f64>());
        hermite_functions_into(x, &mut psi);
        scaled_weights.push(1.0 / psi.iter().map(|v| v * v).sum::<f64>());
    }
    Ok(QuadratureRule {
        nodes,
        weights,
        scaled_weights,
    })
}

/// Orthonormal `p_n(z)` and its derivative `√(2n) p_{n-1}(z)`, with the
/// Gaussian factor folded in so the ratio stays representable far out.
fn orthonormal_with_derivative(n: usize, z: f64, nf: f64) -> (f64, f64) {
    let mut buf = vec![0.0; n + 1];
    hermite_functions_into(z, &mut buf);
    (buf[n], (2.0 * nf).sqrt() * buf[n - 1])
}

/// Eigenvalues of a symmetric tridiagonal matrix by implicit QL with Wilkinson
/// shifts. `diag` is overwritten with the eigenvalues; `off[i]` couples `i` and `i+1`.
fn tridiagonal_eigenvalues(diag: &mut [f64], off: &mut [f64]) -> Result<()> {
    let n = diag.len();
    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = diag[m].abs() + diag[m + 1].abs();
                if off[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > 60 {
                return Err(Error::NumericalAbort("tridiagonal QL did not converge".into()));
            }
            let mut g = (diag[l + 1] - diag[l]) / (2.0 * off[l]);
            let mut r = g.hypot(1.0);
            g = diag[m] - diag[l] + off[l] / (g + r.copysign(g));
            let (mut s, mut c, mut p) = (1.0, 1.0, 0.0);
            let mut i = m;
            let mut deflated = false;
            while i > l {
                i -= 1;
                let f = s * off[i];
                let b = c * off[i];
                r = f.hypot(g);
                off[i + 1] = r;
                if r == 0.0 {
                    diag[i + 1] -= p;
                    off[m] = 0.0;
                    deflated = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = diag[i + 1] - p;
                r = (diag[i] - g) * s + 2.0 * c * b;
                p = s * r;
                diag[i + 1] = g + p;
                g = c * r - b;
            }
            if deflated {
                continue;
            }
            diag[l] -= p;
            off[l] = g;
            off[m] = 0.0;
        }
    }
    Ok(())
}

/// Expansion coefficients `c_0 … c_N` in the Hermite-function basis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientVector {
    coeffs: Vec<f64>,
}

impl CoefficientVector {
    pub fn new(coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.is_empty() {
            return Err(Error::invalid("coefficient vector must have at least one entry"));
        }
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::invalid("coefficient vector contains non-finite entries"));
        }
        Ok(Self { coeffs })
    }

    pub fn zeros(order: usize) -> Self {
        Self {
            coeffs: vec![0.0; order + 1],
        }
    }

    pub fn basis_order(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.coeffs
    }
}

/// A truncated Hermite-function basis `ψ_0 … ψ_N` with its quadrature rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HermiteBasis {
    max_order: usize,
    norm_constants: Vec<f64>,
    quadrature: QuadratureRule,
    #[serde(default)]
    tampered: bool,
}

impl HermiteBasis {
    pub fn new(max_order: usize) -> Result<Self> {
        Self::with_quadrature(max_order, DEFAULT_QUAD_NODES.max(2 * max_order + 2))
    }

    pub fn with_quadrature(max_order: usize, quad_nodes: usize) -> Result<Self> {
        if max_order > MAX_SUPPORTED_ORDER {
            return Err(Error::invalid(format!(
                "basis order {max_order} exceeds supported maximum {MAX_SUPPORTED_ORDER}"
            )));
        }
        Ok(Self {
            max_order,
            norm_constants: normalization_constants(max_order),
            quadrature: gauss_hermite(quad_nodes)?,
            tampered: false,
        })
    }

    pub fn max_order(&self) -> usize {
        self.max_order
    }

    /// Number of basis functions, `N + 1`.
    pub fn len(&self) -> usize {
        self.max_order + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn norm_constants(&self) -> &[f64] {
        &self.norm_constants
    }

    pub fn quadrature(&self) -> &QuadratureRule {
        &self.quadrature
    }

    /// Fault-injection hook for self-tests: overwrite one normalization constant.
    #[doc(hidden)]
    pub fn corrupt_norm_constant(&mut self, n: usize, value: f64) {
        self.norm_constants[n] = value;
        self.tampered = true;
    }

    /// `ψ_n(x)`.
    pub fn eval(&self, n: usize, x: f64) -> Result<f64> {
        if n > self.max_order {
            return Err(Error::invalid(format!(
                "Hermite function index {n} out of range 0..={}",
                self.max_order
            )));
        }
        let mut buf = vec![0.0; n + 1];
        hermite_functions_into(x, &mut buf);
        Ok(buf[n] * self.correction(n))
    }

    fn correction(&self, n: usize) -> f64 {
        if self.tampered {
            self.norm_constants[n] / canonical_constant(n)
        } else {
            1.0
        }
    }

    fn apply_constants(&self, out: &mut [f64]) {
        if !self.tampered {
            return;
        }
        for (n, v) in out.iter_mut().enumerate() {
            *v *= self.correction(n);
        }
    }

    /// `[ψ_0(x), …, ψ_N(x)]`.
    pub fn feature_vector(&self, x: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        self.features_into(x, &mut out);
        out
    }

    /// Fills `out` (length `N + 1`) with `ψ_0(x) … ψ_N(x)`.
    pub fn features_into(&self, x: f64, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.len());
        hermite_functions_into(x, out);
        self.apply_constants(out);
    }

    /// Fills `values` and `derivs` (both length `N + 1`) with `ψ_n(x)` and `ψ_n'(x)`,
    /// using `ψ_n' = √(n/2) ψ_{n-1} - √((n+1)/2) ψ_{n+1}`. `scratch` needs length `N + 2`.
    pub fn features_with_derivatives(
        &self,
        x: f64,
        scratch: &mut [f64],
        values: &mut [f64],
        derivs: &mut [f64],
    ) {
        let len = self.len();
        hermite_functions_into(x, &mut scratch[..len + 1]);
        for n in 0..len {
            let nf = n as f64;
            let lower = if n > 0 { (nf / 2.0).sqrt() * scratch[n - 1] } else { 0.0 };
            derivs[n] = lower - ((nf + 1.0) / 2.0).sqrt() * scratch[n + 1];
            values[n] = scratch[n];
        }
        self.apply_constants(values);
        self.apply_constants(derivs);
    }

    /// Quadrature estimate of `∫ ψ_n ψ_m dx` for all `n, m ≤ N`.
    pub fn gram_matrix(&self) -> Result<Array2<f64>> {
        let len = self.len();
        if self.quadrature.len() < 2 * self.max_order + 2 {
            return Err(Error::invalid(format!(
                "gram matrix of order {} needs at least {} quadrature nodes, have {}",
                self.max_order,
                2 * self.max_order + 2,
                self.quadrature.len()
            )));
        }
        // ψ_n ψ_m e^(x²) is a polynomial, integrated exactly against e^(-x²).
        let mut gram = Array2::zeros((len, len));
        let mut buf = vec![0.0; len];
        for (&x, &w) in self.quadrature.nodes.iter().zip(&self.quadrature.weights) {
            poly_part_into(x, &mut buf);
            self.apply_constants(&mut buf);
            for n in 0..len {
                for m in 0..=n {
                    gram[[n, m]] += w * buf[n] * buf[m];
                }
            }
        }
        for n in 0..len {
            for m in 0..n {
                gram[[m, n]] = gram[[n, m]];
            }
        }
        Ok(gram)
    }

    /// Mean feature vector `(1/M) Σ_i Ψ(x_i)`.
    pub fn mean_features(&self, samples: &[f64]) -> Result<Vec<f64>> {
        if samples.is_empty() {
            return Err(Error::invalid("sample set is empty"));
        }
        if samples.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("sample set contains non-finite values"));
        }
        let mut acc = vec![0.0; self.len()];
        let mut buf = vec![0.0; self.len()];
        for &x in samples {
            self.features_into(x, &mut buf);
            for (a, b) in acc.iter_mut().zip(&buf) {
                *a += b;
            }
        }
        let m = samples.len() as f64;
        acc.iter_mut().for_each(|a| *a /= m);
        Ok(acc)
    }

    /// Monte Carlo projection `c_n = (1/M) Σ_i ψ_n(x_i)` of the sampled density.
    pub fn project_samples(&self, samples: &[f64]) -> Result<CoefficientVector> {
        if samples.len() < 2 {
            return Err(Error::invalid(format!(
                "projection needs at least 2 samples, got {}",
                samples.len()
            )));
        }
        CoefficientVector::new(self.mean_features(samples)?)
    }

    /// Quadrature projection `c_n = ∫ p(x) ψ_n(x) dx` of an analytic density.
    pub fn project_density(&self, density: impl Fn(f64) -> f64) -> Result<CoefficientVector> {
        let len = self.len();
        let mut acc = vec![0.0; len];
        let mut buf = vec![0.0; len];
        for (&x, &sw) in self.quadrature.nodes.iter().zip(&self.quadrature.scaled_weights) {
            let p = density(x);
            if p == 0.0 {
                continue;
            }
            self.features_into(x, &mut buf);
            for (a, b) in acc.iter_mut().zip(&buf) {
                *a += sw * p * b;
            }
        }
        CoefficientVector::new(acc)
    }

    /// `p̂(x) = Σ_n c_n ψ_n(x)` on each grid point. Values are not clamped.
    pub fn reconstruct_density(&self, coeffs: &CoefficientVector, grid: &[f64]) -> Result<Vec<f64>> {
        if coeffs.basis_order() > self.max_order {
            return Err(Error::invalid(format!(
                "coefficient order {} exceeds basis order {}",
                coeffs.basis_order(),
                self.max_order
            )));
        }
        let c = coeffs.as_slice();
        let mut buf = vec![0.0; c.len()];
        Ok(grid
            .iter()
            .map(|&x| {
                hermite_functions_into(x, &mut buf);
                self.apply_constants(&mut buf);
                c.iter().zip(&buf).map(|(a, b)| a * b).sum()
            })
            .collect())
    }

    /// Integral probability metric over the unit ball of `span{ψ_0 … ψ_N}`:
    /// `‖E_a[Ψ] - E_b[Ψ]‖₂`.
    pub fn hermite_ipm(&self, samples_a: &[f64], samples_b: &[f64]) -> Result<f64> {
        let ma = self.mean_features(samples_a)?;
        let mb = self.mean_features(samples_b)?;
        Ok(ma
            .iter()
            .zip(&mb)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt())
    }
}

fn canonical_constant(n: usize) -> f64 {
    let mut c = PI_POW_MINUS_QUARTER;
    for k in 1..=n {
        c /= (2.0 * k as f64).sqrt();
    }
    c
}

/// `e^(x²/2) ψ_n(x)` for `n < out.len()`: the normalized polynomial part.
fn poly_part_into(x: f64, out: &mut [f64]) {
    out[0] = PI_POW_MINUS_QUARTER;
    if out.len() > 1 {
        out[1] = std::f64::consts::SQRT_2 * x * out[0];
    }
    for n in 1..out.len().saturating_sub(1) {
        let nf = n as f64;
        out[n + 1] = (2.0 / (nf + 1.0)).sqrt() * x * out[n] - (nf / (nf + 1.0)).sqrt() * out[n - 1];
    }
}
