//! Saddle-point feedback controls read off the value surface.
//!
//! With `V = -x + G(z, t) y` the candidate saddle point is
//!
//! ```text
//! pi*   = -2 y G [lambda/sigma - (rho b / sigma) G_z / G] = 2 y G zeta
//! eta1* = -lambda
//! eta2* = -rho_bar b G_z / G
//! ```
//!
//! where `zeta = -[lambda/sigma - (rho b / sigma) G_z / G]` is the loading
//! shared by every strategy in this crate. For a fixed initial state the
//! Markov `pi*` can be replaced by the wealth feedback
//! `pi_hat = (x - x0 + 2 y0 G(z0, t0)) zeta`.

use crate::error::{Error, Result};
use crate::model::FactorMarketModel;
use crate::pde::PdeSolution;

/// Fixed initial condition `(x0, y0, z0, t0)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Anchor {
    pub x0: f64,
    pub y0: f64,
    pub z0: f64,
    pub t0: f64,
}

impl Anchor {
    pub fn new(x0: f64, y0: f64, z0: f64, t0: f64) -> Result<Self> {
        if !x0.is_finite() || !z0.is_finite() {
            return Err(Error::param("anchor", "x0 and z0 must be finite"));
        }
        if !(y0.is_finite() && y0 > 0.0) {
            return Err(Error::param("y0", "must be positive"));
        }
        if !(t0.is_finite() && t0 >= 0.0) {
            return Err(Error::param("t0", "must be non-negative"));
        }
        Ok(Anchor { x0, y0, z0, t0 })
    }
}

/// Coefficients and surface values at one `(z, t)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlPoint {
    pub lambda: f64,
    pub sigma: f64,
    pub b: f64,
    pub g: f64,
    pub g_z: f64,
    pub zeta: f64,
}

impl ControlPoint {
    #[inline]
    pub fn log_slope(&self) -> f64 {
        self.g_z / self.g
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ControlFields<'a> {
    pub sol: &'a PdeSolution,
    pub model: &'a FactorMarketModel,
    pub anchor: Anchor,
    g_anchor: f64,
}

impl<'a> ControlFields<'a> {
    pub fn new(sol: &'a PdeSolution, model: &'a FactorMarketModel, anchor: Anchor) -> Result<Self> {
        if !(anchor.t0 < model.horizon) {
            return Err(Error::param("t0", "must lie in [0, T)"));
        }
        let (g_anchor, _) = sol.eval_g(anchor.z0, anchor.t0)?;
        if !(g_anchor < 0.0) {
            return Err(Error::param("G(z0, t0)", "must be negative"));
        }
        Ok(ControlFields {
            sol,
            model,
            anchor,
            g_anchor,
        })
    }

    /// `G(z0, t0)`.
    pub fn g_anchor(&self) -> f64 {
        self.g_anchor
    }

    /// Wealth level at which the reduced strategy stops trading,
    /// `x0 - 2 y0 G(z0, t0)`.
    pub fn absorbing_level(&self) -> f64 {
        self.anchor.x0 - 2.0 * self.anchor.y0 * self.g_anchor
    }

    pub fn point(&self, z: f64, t: f64) -> Result<ControlPoint> {
        let (g, g_z) = self.sol.eval_g(z, t)?;
        let m = self.model;
        let lambda = m.lambda(z);
        let sigma = m.sigma(z);
        let b = m.b(z);
        let zeta = -(lambda / sigma - m.rho * b / sigma * (g_z / g));
        Ok(ControlPoint {
            lambda,
            sigma,
            b,
            g,
            g_z,
            zeta,
        })
    }

    pub fn zeta(&self, z: f64, t: f64) -> Result<f64> {
        Ok(self.point(z, t)?.zeta)
    }

    /// Markov saddle portfolio `pi*(y, z, t)`.
    pub fn optimal_pi(&self, y: f64, z: f64, t: f64) -> Result<f64> {
        if !(y > 0.0) {
            return Err(Error::param("y", "must be positive"));
        }
        let p = self.point(z, t)?;
        Ok(2.0 * y * p.g * p.zeta)
    }

    /// Market distortion at the saddle, `(-lambda, -rho_bar b G_z / G)`.
    pub fn optimal_eta(&self, z: f64, t: f64) -> Result<(f64, f64)> {
        let p = self.point(z, t)?;
        Ok(self.eta_at(&p))
    }

    #[inline]
    pub(crate) fn eta_at(&self, p: &ControlPoint) -> (f64, f64) {
        (-p.lambda, -self.model.rho_bar() * p.b * p.log_slope())
    }

    /// Market's best response to an arbitrary portfolio `pi`.
    pub fn inner_max_eta(&self, y: f64, z: f64, t: f64, pi: f64) -> Result<(f64, f64)> {
        if !(y > 0.0) {
            return Err(Error::param("y", "must be positive"));
        }
        let p = self.point(z, t)?;
        Ok(self.best_response_at(&p, y, pi))
    }

    #[inline]
    pub(crate) fn best_response_at(&self, p: &ControlPoint, y: f64, pi: f64) -> (f64, f64) {
        let m = self.model;
        let s = p.log_slope();
        (
            p.sigma * pi / (2.0 * y * p.g) - m.rho * p.b * s,
            -m.rho_bar() * p.b * s,
        )
    }

    /// Wealth-feedback form `(x - x0 + 2 y0 G(z0, t0)) zeta(z, t)`.
    pub fn reduced_pi(&self, x: f64, z: f64, t: f64) -> Result<f64> {
        let p = self.point(z, t)?;
        Ok((x - self.absorbing_level()) * p.zeta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelFamily;
    use crate::pde::{solve, GridSpec};

    fn bs_setup(lambda: f64, rho: f64) -> (FactorMarketModel, PdeSolution) {
        let m = FactorMarketModel::new(ModelFamily::black_scholes(0.02, lambda, 0.2), 0.02, rho, 1.0)
            .unwrap();
        let g = GridSpec::new(-1.0, 1.0, 21, 401).unwrap();
        let sol = solve(&m, &g).unwrap();
        (m, sol)
    }

    fn anchor(y0: f64) -> Anchor {
        Anchor::new(1.0, y0, 0.0, 0.0).unwrap()
    }

    #[test]
    fn anchor_validation() {
        assert!(Anchor::new(0.0, 0.0, 0.0, 0.0).is_err());
        assert!(Anchor::new(0.0, 1.0, 0.0, -0.1).is_err());
        let (m, sol) = bs_setup(0.4, 0.0);
        assert!(ControlFields::new(&sol, &m, Anchor::new(0.0, 1.0, 0.0, 1.0).unwrap()).is_err());
    }

    #[test]
    fn zeta_black_scholes() {
        let (m, sol) = bs_setup(0.4, 0.3);
        let f = ControlFields::new(&sol, &m, anchor(0.5)).unwrap();
        assert!((f.zeta(0.0, 0.2).unwrap() + 2.0).abs() < 1e-9);
    }

    #[test]
    fn zero_market_price_gives_trivial_controls() {
        let (m, sol) = bs_setup(0.0, 0.3);
        let f = ControlFields::new(&sol, &m, anchor(0.5)).unwrap();
        assert_eq!(f.zeta(0.1, 0.5).unwrap(), 0.0);
        assert_eq!(f.optimal_pi(0.5, 0.1, 0.5).unwrap(), 0.0);
        assert_eq!(f.optimal_eta(0.1, 0.5).unwrap(), (-0.0, -0.0));
        assert_eq!(f.reduced_pi(3.0, 0.1, 0.5).unwrap(), 0.0);
        assert_eq!(f.inner_max_eta(0.5, 0.1, 0.5, 0.0).unwrap(), (-0.0, -0.0));
    }

    #[test]
    fn optimal_pi_black_scholes_closed_form() {
        // 2 e^{0.16}
        let (m, sol) = bs_setup(0.4, 0.0);
        let f = ControlFields::new(&sol, &m, anchor(0.5)).unwrap();
        let pi = f.optimal_pi(0.5, 0.0, 0.0).unwrap();
        assert!((pi - 2.347_021_6).abs() < 1e-5, "{pi}");
        let pi2 = f.optimal_pi(1.0, 0.0, 0.0).unwrap();
        assert!((pi2 - 2.0 * pi).abs() < 1e-14);
    }

    #[test]
    fn eta_black_scholes() {
        let (m, sol) = bs_setup(0.4, 0.0);
        let f = ControlFields::new(&sol, &m, anchor(0.5)).unwrap();
        let (e1, e2) = f.optimal_eta(0.0, 0.5).unwrap();
        assert!((e1 + 0.4).abs() < 1e-12);
        assert!(e2.abs() < 1e-9);
    }

    #[test]
    fn full_correlation_kills_second_distortion() {
        let (m, sol) = bs_setup(0.4, 1.0);
        let f = ControlFields::new(&sol, &m, anchor(0.5)).unwrap();
        assert_eq!(f.optimal_eta(0.0, 0.5).unwrap().1, 0.0);
    }

    #[test]
    fn inner_max_at_saddle_portfolio_is_minus_lambda() {
        let (m, sol) = bs_setup(0.4, 0.6);
        let f = ControlFields::new(&sol, &m, anchor(0.5)).unwrap();
        for &(y, z, t) in &[(0.5, 0.0, 0.0), (2.0, 0.3, 0.7), (0.1, -0.9, 0.99)] {
            let pi = f.optimal_pi(y, z, t).unwrap();
            let (e1, _) = f.inner_max_eta(y, z, t, pi).unwrap();
            assert!((e1 + m.lambda(z)).abs() < 1e-12);
        }
    }

    #[test]
    fn reduced_pi_matches_markov_at_anchor() {
        let (m, sol) = bs_setup(0.4, 0.0);
        let f = ControlFields::new(&sol, &m, anchor(0.5)).unwrap();
        let a = f.reduced_pi(1.0, 0.0, 0.0).unwrap();
        let b = f.optimal_pi(0.5, 0.0, 0.0).unwrap();
        assert_eq!(a, b);
        assert!((a - 2.347_021_6).abs() < 1e-5);
        assert_eq!(f.reduced_pi(f.absorbing_level(), 0.2, 0.3).unwrap(), 0.0);
    }
}
