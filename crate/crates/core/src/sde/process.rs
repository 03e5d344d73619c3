use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Benchmark process families.
///
/// `AbmGbm` is `dX = μ dt + σ dW`, i.e. arithmetic Brownian motion. The
/// benchmark table calls it GBM; the written equation is what is simulated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProcessKind {
    AbmGbm,
    Ou,
    Cir,
    PolyDrift,
    Neural,
}

impl ProcessKind {
    pub fn name(&self) -> &'static str {
        match self {
            ProcessKind::AbmGbm => "gbm",
            ProcessKind::Ou => "ou",
            ProcessKind::Cir => "cir",
            ProcessKind::PolyDrift => "poly",
            ProcessKind::Neural => "neural",
        }
    }
}

impl fmt::Display for ProcessKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ProcessKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gbm" | "abm" | "abm_gbm" => Ok(ProcessKind::AbmGbm),
            "ou" => Ok(ProcessKind::Ou),
            "cir" => Ok(ProcessKind::Cir),
            "poly" | "poly_drift" => Ok(ProcessKind::PolyDrift),
            "neural" => Ok(ProcessKind::Neural),
            other => Err(Error::invalid(format!(
                "unknown process '{other}' (expected gbm, ou, cir or poly)"
            ))),
        }
    }
}

/// A process family with named parameters and the initial-state law
/// `x0 ~ Uniform[x0_mean - x0_halfwidth, x0_mean + x0_halfwidth]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessSpec {
    pub kind: ProcessKind,
    pub params: BTreeMap<String, f64>,
    pub x0_mean: f64,
    pub x0_halfwidth: f64,
    /// Full truncation: clamp the state at zero inside drift and diffusion.
    pub positivity: bool,
}

impl ProcessSpec {
    pub fn new(
        kind: ProcessKind,
        params: &[(&str, f64)],
        x0_mean: f64,
        x0_halfwidth: f64,
    ) -> Result<Self> {
        let spec = Self {
            kind,
            params: params.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            x0_mean,
            x0_halfwidth,
            positivity: matches!(kind, ProcessKind::Cir | ProcessKind::PolyDrift),
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Benchmark parameters for each analytic family.
    pub fn benchmark(kind: ProcessKind) -> Result<Self> {
        match kind {
            ProcessKind::AbmGbm => Self::new(kind, &[("mu", 0.05), ("sigma", 0.02)], 20.0, 0.1),
            ProcessKind::Ou => Self::new(
                kind,
                &[("kappa", 0.0658), ("alpha", 23.0), ("sigma", 0.2213)],
                20.0,
                0.1,
            ),
            ProcessKind::Cir => Self::new(
                kind,
                &[("kappa", 0.0145), ("alpha", 23.0), ("sigma", 0.06521)],
                20.0,
                0.1,
            ),
            ProcessKind::PolyDrift => Self::new(
                kind,
                &[
                    ("alpha_m1", 0.01),
                    ("alpha_0", 0.01),
                    ("alpha_1", 0.001),
                    ("alpha_2", -4.604),
                    ("sigma", 0.1),
                ],
                20.0,
                0.1,
            ),
            ProcessKind::Neural => Err(Error::invalid("neural processes have no benchmark parameters")),
        }
    }

    pub fn param(&self, name: &str) -> Result<f64> {
        self.params
            .get(name)
            .copied()
            .ok_or_else(|| Error::invalid(format!("{} process is missing parameter '{name}'", self.kind)))
    }

    pub fn with_param(mut self, name: &str, value: f64) -> Result<Self> {
        self.params.insert(name.to_string(), value);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some((k, v)) = self.params.iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::invalid(format!("parameter {k} = {v} is not finite")));
        }
        if !self.x0_mean.is_finite() || !(self.x0_halfwidth >= 0.0) {
            return Err(Error::invalid("initial-state law must be finite with non-negative half-width"));
        }
        if let Some(s) = self.params.get("sigma") {
            if *s < 0.0 {
                return Err(Error::invalid(format!("sigma must be non-negative, got {s}")));
            }
        }
        if self.kind == ProcessKind::Cir && !self.positivity {
            let (k, a, s) = (self.param("kappa")?, self.param("alpha")?, self.param("sigma")?);
            if s * s > 2.0 * k * a {
                return Err(Error::invalid(
                    "CIR parameters violate the Feller condition and positivity scheme is disabled",
                ));
            }
        }
        if self.kind != ProcessKind::Neural {
            self.dynamics()?;
        }
        Ok(())
    }

    /// Parameters resolved into a closed-form drift/diffusion pair.
    pub fn dynamics(&self) -> Result<Dynamics> {
        Ok(match self.kind {
            ProcessKind::AbmGbm => Dynamics::Abm {
                mu: self.param("mu")?,
                sigma: self.param("sigma")?,
            },
            ProcessKind::Ou => Dynamics::Ou {
                kappa: self.param("kappa")?,
                alpha: self.param("alpha")?,
                sigma: self.param("sigma")?,
            },
            ProcessKind::Cir => Dynamics::Cir {
                kappa: self.param("kappa")?,
                alpha: self.param("alpha")?,
                sigma: self.param("sigma")?,
                truncate: self.positivity,
            },
            ProcessKind::PolyDrift => Dynamics::Poly {
                a_m1: self.param("alpha_m1")?,
                a0: self.param("alpha_0")?,
                a1: self.param("alpha_1")?,
                a2: self.param("alpha_2")?,
                sigma: self.param("sigma")?,
                truncate: self.positivity,
            },
            ProcessKind::Neural => {
                return Err(Error::invalid("neural process has no analytic drift or diffusion"))
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Dynamics {
    Abm { mu: f64, sigma: f64 },
    Ou { kappa: f64, alpha: f64, sigma: f64 },
    Cir { kappa: f64, alpha: f64, sigma: f64, truncate: bool },
    Poly { a_m1: f64, a0: f64, a1: f64, a2: f64, sigma: f64, truncate: bool },
}

impl Dynamics {
    #[inline]
    fn clamp(x: f64, truncate: bool) -> f64 {
        if truncate {
            x.max(0.0)
        } else {
            x
        }
    }

    #[inline]
    pub fn drift(&self, _t: f64, x: f64) -> Result<f64> {
        Ok(match *self {
            Dynamics::Abm { mu, .. } => mu,
            Dynamics::Ou { kappa, alpha, .. } => kappa * (alpha - x),
            Dynamics::Cir { kappa, alpha, truncate, .. } => kappa * (alpha - Self::clamp(x, truncate)),
            Dynamics::Poly { a_m1, a0, a1, a2, truncate, .. } => {
                let x = Self::clamp(x, truncate);
                if x == 0.0 {
                    return Err(Error::Domain("polynomial drift is singular at x = 0".into()));
                }
                a_m1 / x + a0 + a1 * x + a2 * x * x
            }
        })
    }

    #[inline]
    pub fn diffusion(&self, _t: f64, x: f64) -> Result<f64> {
        Ok(match *self {
            Dynamics::Abm { sigma, .. } | Dynamics::Ou { sigma, .. } => sigma,
            Dynamics::Cir { sigma, truncate, .. } => {
                let x = Self::clamp(x, truncate);
                if x < 0.0 {
                    return Err(Error::Domain(format!("CIR diffusion needs x >= 0, got {x}")));
                }
                sigma * x.sqrt()
            }
            Dynamics::Poly { sigma, truncate, .. } => {
                let x = Self::clamp(x, truncate);
                if x < 0.0 {
                    return Err(Error::Domain(format!("x^(3/2) diffusion needs x >= 0, got {x}")));
                }
                sigma * x * x.sqrt()
            }
        })
    }
}

/// Drift of an analytic process. The raw state is used: no truncation.
pub fn drift(spec: &ProcessSpec, t: f64, x: f64) -> Result<f64> {
    raw(spec)?.drift(t, x)
}

/// Diffusion of an analytic process. Negative states are rejected for the
/// square-root and `x^(3/2)` families.
pub fn diffusion(spec: &ProcessSpec, t: f64, x: f64) -> Result<f64> {
    raw(spec)?.diffusion(t, x)
}

fn raw(spec: &ProcessSpec) -> Result<Dynamics> {
    Ok(match spec.dynamics()? {
        Dynamics::Cir { kappa, alpha, sigma, .. } => Dynamics::Cir { kappa, alpha, sigma, truncate: false },
        Dynamics::Poly { a_m1, a0, a1, a2, sigma, .. } => Dynamics::Poly {
            a_m1,
            a0,
            a1,
            a2,
            sigma,
            truncate: false,
        },
        d => d,
    })
}
