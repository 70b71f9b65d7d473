//! Factor-market model: one risky asset whose drift and volatility depend on
//! an observable, non-tradable factor `Z`,
//!
//! ```text
//! dS = mu(Z) S dt + sigma(Z) S dW1
//! dZ = a(Z) dt + b(Z) (rho dW1 + rho_bar dW2)
//! ```
//!
//! with a constant riskless rate `r`. Coefficients come from parametric
//! families so configurations serialize and the assumption audit is well
//! defined.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math::{sqrt, tanh};

/// Parametric coefficient families.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ModelFamily {
    /// Constant `mu, sigma, a, b`: the Black–Scholes market with a dummy
    /// factor.
    ConstantCoefficients { mu: f64, sigma: f64, a: f64, b: f64 },
    /// Ornstein–Uhlenbeck factor with a tanh-shaped market price of risk:
    /// `a(z) = kappa (m - z)`, `b = beta`, `sigma = sigma0`,
    /// `mu(z) = r + sigma0 (lambda0 + lambda1 tanh z)`.
    OuTanh {
        kappa: f64,
        mean_level: f64,
        beta: f64,
        sigma0: f64,
        lambda0: f64,
        lambda1: f64,
    },
    /// Affine coefficients `c0 + c1 z` for user-defined experiments. Nothing
    /// is guaranteed by construction; run the audit.
    Affine {
        mu: [f64; 2],
        sigma: [f64; 2],
        a: [f64; 2],
        b: [f64; 2],
    },
}

impl ModelFamily {
    /// Black–Scholes market with market price of risk `lambda`.
    pub fn black_scholes(r: f64, lambda: f64, sigma: f64) -> Self {
        ModelFamily::ConstantCoefficients {
            mu: r + lambda * sigma,
            sigma,
            a: 0.0,
            b: 0.0,
        }
    }

    fn params(&self) -> Vec<f64> {
        match *self {
            ModelFamily::ConstantCoefficients { mu, sigma, a, b } => alloc::vec![mu, sigma, a, b],
            ModelFamily::OuTanh {
                kappa,
                mean_level,
                beta,
                sigma0,
                lambda0,
                lambda1,
            } => alloc::vec![kappa, mean_level, beta, sigma0, lambda0, lambda1],
            ModelFamily::Affine { mu, sigma, a, b } => {
                alloc::vec![mu[0], mu[1], sigma[0], sigma[1], a[0], a[1], b[0], b[1]]
            }
        }
    }
}

/// Thresholds the audit checks against.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuditThresholds {
    pub sigma_min: f64,
    /// Ellipticity floor: `b(z)^2 >= epsilon > 0`.
    pub epsilon: f64,
    pub lambda_max: f64,
}

impl Default for AuditThresholds {
    fn default() -> Self {
        AuditThresholds {
            sigma_min: 1e-6,
            epsilon: 1e-6,
            lambda_max: 10.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FactorMarketModel {
    pub family: ModelFamily,
    pub r: f64,
    pub rho: f64,
    pub horizon: f64,
}

impl FactorMarketModel {
    pub fn new(family: ModelFamily, r: f64, rho: f64, horizon: f64) -> Result<Self> {
        if !(r.is_finite() && r >= 0.0) {
            return Err(Error::param("r", "must be finite and non-negative"));
        }
        if !(rho.is_finite() && (-1.0..=1.0).contains(&rho)) {
            return Err(Error::param("rho", "must lie in [-1, 1]"));
        }
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::param("horizon_T", "must be finite and positive"));
        }
        if family.params().iter().any(|p| !p.is_finite()) {
            return Err(Error::param("params", "all family parameters must be finite"));
        }
        match family {
            ModelFamily::ConstantCoefficients { sigma, b, .. } => {
                if sigma <= 0.0 {
                    return Err(Error::param("sigma", "must be positive"));
                }
                if b < 0.0 {
                    return Err(Error::param("b", "must be non-negative"));
                }
            }
            ModelFamily::OuTanh {
                kappa,
                beta,
                sigma0,
                ..
            } => {
                if sigma0 <= 0.0 {
                    return Err(Error::param("sigma0", "must be positive"));
                }
                if beta <= 0.0 {
                    return Err(Error::param("beta", "must be positive"));
                }
                if kappa < 0.0 {
                    return Err(Error::param("kappa", "must be non-negative"));
                }
            }
            ModelFamily::Affine { .. } => {}
        }
        Ok(FactorMarketModel {
            family,
            r,
            rho,
            horizon,
        })
    }

    /// `sqrt(1 - rho^2)`.
    pub fn rho_bar(&self) -> f64 {
        sqrt((1.0 - self.rho * self.rho).max(0.0))
    }

    pub fn mu(&self, z: f64) -> f64 {
        match self.family {
            ModelFamily::ConstantCoefficients { mu, .. } => mu,
            ModelFamily::OuTanh {
                sigma0,
                lambda0,
                lambda1,
                ..
            } => self.r + sigma0 * (lambda0 + lambda1 * tanh(z)),
            ModelFamily::Affine { mu, .. } => mu[0] + mu[1] * z,
        }
    }

    pub fn sigma(&self, z: f64) -> f64 {
        match self.family {
            ModelFamily::ConstantCoefficients { sigma, .. } => sigma,
            ModelFamily::OuTanh { sigma0, .. } => sigma0,
            ModelFamily::Affine { sigma, .. } => sigma[0] + sigma[1] * z,
        }
    }

    pub fn a(&self, z: f64) -> f64 {
        match self.family {
            ModelFamily::ConstantCoefficients { a, .. } => a,
            ModelFamily::OuTanh {
                kappa, mean_level, ..
            } => kappa * (mean_level - z),
            ModelFamily::Affine { a, .. } => a[0] + a[1] * z,
        }
    }

    pub fn b(&self, z: f64) -> f64 {
        match self.family {
            ModelFamily::ConstantCoefficients { b, .. } => b,
            ModelFamily::OuTanh { beta, .. } => beta,
            ModelFamily::Affine { b, .. } => b[0] + b[1] * z,
        }
    }

    /// `(mu(z) - r) / sigma(z)` without the volatility check. Callers in the
    /// numerical core rely on a prior audit.
    #[inline]
    pub fn lambda(&self, z: f64) -> f64 {
        (self.mu(z) - self.r) / self.sigma(z)
    }

    /// Market price of risk `(mu(z) - r) / sigma(z)`.
    pub fn market_price_of_risk(&self, z: f64) -> Result<f64> {
        let sigma = self.sigma(z);
        if !(sigma > 0.0) {
            return Err(Error::NonPositiveVolatility { z, sigma });
        }
        Ok((self.mu(z) - self.r) / sigma)
    }

    /// Drift of the auxiliary factor in the linearized equations,
    /// `a(z) - 2 rho b(z) lambda(z)`.
    #[inline]
    pub fn shifted_drift(&self, z: f64) -> f64 {
        self.a(z) - 2.0 * self.rho * self.b(z) * self.lambda(z)
    }

    /// `2 rho^2 - 1`; its sign and size select the linearizing transform.
    pub fn case_gap(&self) -> f64 {
        2.0 * self.rho * self.rho - 1.0
    }

    /// Bounds the family guarantees by construction. Affine models declare
    /// nothing and get [`AuditThresholds::default`].
    pub fn declared_thresholds(&self) -> AuditThresholds {
        match self.family {
            ModelFamily::ConstantCoefficients { sigma, b, .. } => AuditThresholds {
                sigma_min: sigma,
                epsilon: b * b,
                lambda_max: self.lambda(0.0).abs(),
            },
            ModelFamily::OuTanh {
                beta,
                sigma0,
                lambda0,
                lambda1,
                ..
            } => AuditThresholds {
                sigma_min: sigma0,
                epsilon: beta * beta,
                lambda_max: lambda0.abs() + lambda1.abs(),
            },
            ModelFamily::Affine { .. } => AuditThresholds::default(),
        }
    }

    /// Default truncated factor domain: for an OU factor, the mean level plus
    /// or minus `n_sd` stationary standard deviations; a symmetric unit
    /// interval for constant coefficients.
    pub fn default_domain(&self, n_sd: f64) -> (f64, f64) {
        match self.family {
            ModelFamily::OuTanh {
                kappa,
                mean_level,
                beta,
                ..
            } if kappa > 0.0 => {
                let sd = beta / sqrt(2.0 * kappa);
                (mean_level - n_sd * sd, mean_level + n_sd * sd)
            }
            ModelFamily::OuTanh {
                mean_level, beta, ..
            } => {
                let sd = beta * sqrt(self.horizon);
                (mean_level - n_sd * sd, mean_level + n_sd * sd)
            }
            _ => (-1.0, 1.0),
        }
    }
}

/// Kind of threshold the audit found violated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Violation {
    /// `sigma <= 0` on `[z_from, z_to]` (sample hull).
    NonPositiveVolatility { z_from: f64, z_to: f64 },
    VolatilityBelowFloor { min_sigma: f64, sigma_min: f64 },
    Ellipticity { min_b2: f64, epsilon: f64 },
    UnboundedMarketPrice { max_abs_lambda: f64, lambda_max: f64 },
    NonFiniteCoefficient { z: f64 },
}

/// Largest finite-difference quotient `|f(z_{i+1}) - f(z_i)| / dz`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LipschitzQuotients {
    pub a: f64,
    pub b: f64,
    pub b_lambda: f64,
    pub lambda_sq: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditReport {
    pub z_lo: f64,
    pub z_hi: f64,
    pub n_samples: usize,
    pub thresholds: AuditThresholds,
    pub min_sigma: f64,
    pub min_b2: f64,
    /// Maximum of `|lambda|` over samples with positive volatility.
    pub max_abs_lambda: f64,
    pub lipschitz: LipschitzQuotients,
    pub violations: Vec<Violation>,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Audit against the family's declared thresholds.
pub fn audit_assumptions(
    model: &FactorMarketModel,
    z_lo: f64,
    z_hi: f64,
    n_samples: usize,
) -> Result<AuditReport> {
    audit_with(model, z_lo, z_hi, n_samples, model.declared_thresholds())
}

/// Samples the coefficients on a uniform grid and checks the standing
/// assumptions. A failed check is recorded in the report, not returned as an
/// error.
pub fn audit_with(
    model: &FactorMarketModel,
    z_lo: f64,
    z_hi: f64,
    n_samples: usize,
    thresholds: AuditThresholds,
) -> Result<AuditReport> {
    if !(z_lo < z_hi) || !z_lo.is_finite() || !z_hi.is_finite() {
        return Err(Error::param("audit domain", "requires finite z_lo < z_hi"));
    }
    if n_samples < 2 {
        return Err(Error::param("n_samples", "must be at least 2"));
    }
    // relative slack so that thresholds declared from the same parameters pass
    let slack = 1e-12;
    let dz = (z_hi - z_lo) / (n_samples - 1) as f64;
    let zs: Vec<f64> = (0..n_samples).map(|i| z_lo + dz * i as f64).collect();

    let mut violations = Vec::new();
    let mut min_sigma = f64::INFINITY;
    let mut min_b2 = f64::INFINITY;
    let mut max_abs_lambda: f64 = 0.0;
    let mut bad_sigma: Option<(f64, f64)> = None;

    struct Sample {
        a: f64,
        b: f64,
        b_lambda: f64,
        lambda_sq: f64,
    }
    let mut samples = Vec::with_capacity(n_samples);
    for &z in &zs {
        let (sigma, a, b) = (model.sigma(z), model.a(z), model.b(z));
        let mu = model.mu(z);
        if !(sigma.is_finite() && a.is_finite() && b.is_finite() && mu.is_finite()) {
            violations.push(Violation::NonFiniteCoefficient { z });
        }
        min_sigma = min_sigma.min(sigma);
        min_b2 = min_b2.min(b * b);
        let lambda = if sigma > 0.0 {
            let l = (mu - model.r) / sigma;
            max_abs_lambda = max_abs_lambda.max(l.abs());
            l
        } else {
            bad_sigma = Some(match bad_sigma {
                None => (z, z),
                Some((lo, _)) => (lo, z),
            });
            f64::NAN
        };
        samples.push(Sample {
            a,
            b,
            b_lambda: b * lambda,
            lambda_sq: lambda * lambda,
        });
    }

    let mut lip = LipschitzQuotients::default();
    for w in samples.windows(2) {
        let q = |f0: f64, f1: f64| (f1 - f0).abs() / dz;
        lip.a = lip.a.max(q(w[0].a, w[1].a));
        lip.b = lip.b.max(q(w[0].b, w[1].b));
        if w[0].b_lambda.is_finite() && w[1].b_lambda.is_finite() {
            lip.b_lambda = lip.b_lambda.max(q(w[0].b_lambda, w[1].b_lambda));
            lip.lambda_sq = lip.lambda_sq.max(q(w[0].lambda_sq, w[1].lambda_sq));
        }
    }

    if let Some((z_from, z_to)) = bad_sigma {
        violations.push(Violation::NonPositiveVolatility { z_from, z_to });
    } else if min_sigma < thresholds.sigma_min * (1.0 - slack) {
        violations.push(Violation::VolatilityBelowFloor {
            min_sigma,
            sigma_min: thresholds.sigma_min,
        });
    }
    if !(min_b2 > 0.0) || min_b2 < thresholds.epsilon * (1.0 - slack) {
        violations.push(Violation::Ellipticity {
            min_b2,
            epsilon: thresholds.epsilon,
        });
    }
    if max_abs_lambda > thresholds.lambda_max * (1.0 + slack) + slack {
        violations.push(Violation::UnboundedMarketPrice {
            max_abs_lambda,
            lambda_max: thresholds.lambda_max,
        });
    }

    Ok(AuditReport {
        z_lo,
        z_hi,
        n_samples,
        thresholds,
        min_sigma,
        min_b2,
        max_abs_lambda,
        lipschitz: lip,
        violations,
    })
}
