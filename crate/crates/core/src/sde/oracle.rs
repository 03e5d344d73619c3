use serde::{Deserialize, Serialize};

use super::process::{ProcessKind, ProcessSpec};
use crate::error::{Error, Result};
use crate::hermite::gauss_hermite;

/// Largest eigen-expansion index accepted by [`ou_eigen_coefficients`].
pub const MAX_EIGEN_ORDER: usize = 20;

/// `dX = κ(α - X) dt + σ dW`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OuParams {
    pub kappa: f64,
    pub alpha: f64,
    pub sigma: f64,
}

impl OuParams {
    pub fn new(kappa: f64, alpha: f64, sigma: f64) -> Result<Self> {
        if !(kappa > 0.0) || !(sigma > 0.0) || !alpha.is_finite() {
            return Err(Error::invalid(format!(
                "OU oracle needs kappa > 0 and sigma > 0, got kappa={kappa}, sigma={sigma}"
            )));
        }
        Ok(Self { kappa, alpha, sigma })
    }

    pub fn from_spec(spec: &ProcessSpec) -> Result<Self> {
        if spec.kind != ProcessKind::Ou {
            return Err(Error::invalid(format!("expected an OU spec, got {}", spec.kind)));
        }
        Self::new(spec.param("kappa")?, spec.param("alpha")?, spec.param("sigma")?)
    }

    pub fn transition_mean(&self, x0: f64, t: f64) -> f64 {
        let decay = (-self.kappa * t).exp();
        x0 * decay + self.alpha * (1.0 - decay)
    }

    pub fn transition_variance(&self, t: f64) -> f64 {
        self.stationary_variance() * -(-2.0 * self.kappa * t).exp_m1()
    }

    pub fn stationary_variance(&self) -> f64 {
        self.sigma * self.sigma / (2.0 * self.kappa)
    }
}

fn normal_pdf(x: f64, mean: f64, var: f64) -> f64 {
    (-(x - mean).powi(2) / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
}

/// Density of `X_t` given `X_0 = x0`.
pub fn ou_transition_density(params: &OuParams, x0: f64, t: f64, x: f64) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::invalid(format!("transition time must be positive, got {t}")));
    }
    Ok(normal_pdf(x, params.transition_mean(x0, t), params.transition_variance(t)))
}

/// Stationary density `N(α, σ²/(2κ))`.
pub fn ou_stationary_density(params: &OuParams, x: f64) -> f64 {
    normal_pdf(x, params.alpha, params.stationary_variance())
}

/// Coefficients of the transition density in the eigenbasis of the OU
/// generator: `c_n(t) = ∫ p(x, t | x0) γ_n(z) dx` with `z = (x - α)/s`,
/// `s² = σ²/(2κ)` and `γ_n = He_n / √(n!)` orthonormal under the stationary law.
///
/// Computed by Gauss-Hermite quadrature of the Gaussian transition density,
/// which is exact for these polynomial integrands.
pub fn ou_eigen_coefficients(params: &OuParams, x0: f64, t: f64, max_n: usize) -> Result<Vec<f64>> {
    if max_n > MAX_EIGEN_ORDER {
        return Err(Error::invalid(format!(
            "eigen order {max_n} exceeds stable maximum {MAX_EIGEN_ORDER}"
        )));
    }
    if !(t > 0.0) {
        return Err(Error::invalid(format!("transition time must be positive, got {t}")));
    }
    let s = params.stationary_variance().sqrt();
    let mean = (params.transition_mean(x0, t) - params.alpha) / s;
    let sd = (params.transition_variance(t)).sqrt() / s;
    let rule = gauss_hermite(MAX_EIGEN_ORDER + 4)?;
    let mut coeffs = vec![0.0; max_n + 1];
    let mut basis = vec![0.0; max_n + 1];
    for (&u, &w) in rule.nodes.iter().zip(&rule.weights) {
        let z = mean + std::f64::consts::SQRT_2 * sd * u;
        normalized_prob_hermite(z, &mut basis);
        for (c, b) in coeffs.iter_mut().zip(&basis) {
            *c += w * b;
        }
    }
    let norm = std::f64::consts::PI.sqrt();
    coeffs.iter_mut().for_each(|c| *c /= norm);
    Ok(coeffs)
}

/// `He_n(z) / √(n!)` via `γ_{n+1} = (z γ_n - √n γ_{n-1}) / √(n+1)`.
fn normalized_prob_hermite(z: f64, out: &mut [f64]) {
    out[0] = 1.0;
    if out.len() > 1 {
        out[1] = z;
    }
    for n in 1..out.len().saturating_sub(1) {
        let nf = n as f64;
        out[n + 1] = (z * out[n] - nf.sqrt() * out[n - 1]) / (nf + 1.0).sqrt();
    }
}
