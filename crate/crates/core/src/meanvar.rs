//! Classical mean-variance counterpart.
//!
//! With `zeta` the loading of the monotone strategy,
//!
//! ```text
//! R_T = exp( int zeta (mu - r) - 1/2 zeta^2 sigma^2 ds + int zeta sigma dW1 ),
//! gamma*(A) = (A - x) E R_T / (1 - E R_T),
//! A*        = x + (1/2 theta) (1 - E R_T)^2 / Var R_T,
//! gamma*(A*) = (1/2 theta) (1 - E R_T) E R_T / Var R_T,
//! pi_mv     = (x - x0 - (1/2 theta)(1 - E R_T) / Var R_T) zeta.
//! ```
//!
//! The monotone strategy has intercept `x0 - 2 y0 G(z0, t0)` instead, so the
//! two coincide for `theta = (1 - E R_T) / (4 y0 |G(z0, t0)| Var R_T)`.
//!
//! `H` solves
//! `H_t + (a - 2 rho b lambda) H_z + 1/2 b^2 H_zz - rho^2 b^2 H_z^2 / H - lambda^2 H = 0`,
//! `H(z, T) = 1`, and `G = -1 / H`.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math::{exp, sqrt, Estimate};
use crate::mc::{map_indexed, path_rng, std_normal, McConfig};
use crate::model::FactorMarketModel;
use crate::pde::{
    level_z_derivative, linear_operator, solve, GridSpec, PdeSolution, Surface, ThetaStepper, THETA_SCHEME,
};
use crate::strategy::{Anchor, ControlFields};

/// `|1 - E R_T|` at or below this is treated as `E R_T = 1`.
pub const ER_TOL: f64 = 1e-10;

/// `Var R_T` at or below this is treated as zero.
pub const VAR_TOL: f64 = 1e-14;

fn check_er(er: f64) -> Result<()> {
    if !((1.0 - er).abs() > ER_TOL) {
        return Err(Error::DegenerateER { er });
    }
    Ok(())
}

fn check_var(var: f64) -> Result<()> {
    if !(var > VAR_TOL) {
        return Err(Error::DegenerateVariance { var });
    }
    Ok(())
}

fn check_theta(theta: f64) -> Result<()> {
    if !(theta > 0.0) || theta.is_nan() {
        return Err(Error::param("theta", "must be positive"));
    }
    Ok(())
}

/// Sample moments of `R_T`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RMoments {
    pub er: Estimate,
    pub er2: Estimate,
    /// `er2 - er^2` on the same sample.
    pub var_r: f64,
    /// Delta-method standard error of `var_r`.
    pub var_r_se: f64,
    pub excursion_fraction: f64,
}

/// Simulates `Z` under `P` from `(z0, 0)` and accumulates `R_T` by
/// exponential increments.
pub fn simulate_r(
    model: &FactorMarketModel,
    sol: &PdeSolution,
    z0: f64,
    cfg: &McConfig,
) -> Result<RMoments> {
    let fields = ControlFields::new(sol, model, Anchor::new(0.0, 1.0, z0, 0.0)?)?;
    let n = cfg.n_steps;
    let dt = model.horizon / n as f64;
    let sq = sqrt(dt);
    let (rho, rho_bar) = (model.rho, model.rho_bar());
    let signs: &[f64] = if cfg.antithetic { &[1.0, -1.0] } else { &[1.0] };
    let per_draw: Vec<Result<(f64, f64, usize)>> = map_indexed(cfg.n_draws(), cfg.parallel, |q| {
        let mut rng = path_rng(cfg.seed, q as u64);
        let normals: Vec<f64> = (0..2 * n).map(|_| std_normal(&mut rng)).collect();
        let (mut r1, mut r2, mut exc) = (0.0, 0.0, 0);
        for &sign in signs {
            let mut z = z0;
            let mut log_r = 0.0;
            for k in 0..n {
                let s = dt * k as f64;
                let zc = sol.clamp_z(z);
                if zc != z {
                    exc += 1;
                }
                let p = fields.point(zc, s)?;
                let dw1 = sign * sq * normals[2 * k];
                let dw2 = sign * sq * normals[2 * k + 1];
                let excess = model.mu(zc) - model.r;
                let zs = p.zeta * p.sigma;
                log_r += p.zeta * excess * dt - 0.5 * zs * zs * dt + zs * dw1;
                z += model.a(zc) * dt + p.b * (rho * dw1 + rho_bar * dw2);
            }
            let r = exp(log_r);
            r1 += r;
            r2 += r * r;
        }
        let m = signs.len() as f64;
        Ok((r1 / m, r2 / m, exc))
    });
    let mut ones = Vec::with_capacity(per_draw.len());
    let mut twos = Vec::with_capacity(per_draw.len());
    let mut total = 0;
    for d in per_draw {
        let (a, b, e) = d?;
        ones.push(a);
        twos.push(b);
        total += e;
    }
    let n_paths = ones.len() * signs.len();
    let excursion_fraction = total as f64 / (n_paths * n) as f64;
    if excursion_fraction > crate::sim::EXCURSION_LIMIT {
        return Err(Error::ExcessiveExcursion {
            fraction: excursion_fraction,
            limit: crate::sim::EXCURSION_LIMIT,
        });
    }
    let er = Estimate::from_samples(&ones);
    let er2 = Estimate::from_samples(&twos);
    let var_r = er2.mean - er.mean * er.mean;
    let lin: Vec<f64> = ones
        .iter()
        .zip(&twos)
        .map(|(a, b)| b - 2.0 * er.mean * a)
        .collect();
    Ok(RMoments {
        er,
        er2,
        var_r,
        var_r_se: Estimate::from_samples(&lin).std_error,
        excursion_fraction,
    })
}

/// `(E R_T, E R_T^2, Var R_T)` in the constant-coefficient market:
/// `E R_T = E R_T^2 = exp(-lambda^2 T)`.
pub fn black_scholes_moments(lambda: f64, horizon: f64) -> (f64, f64, f64) {
    let er = exp(-lambda * lambda * horizon);
    let er2 = er;
    (er, er2, er - er * er)
}

/// Lagrange multiplier `gamma*(A) = (A - x) E R_T / (1 - E R_T)`.
pub fn lagrange_gamma(a: f64, x: f64, er: f64) -> Result<f64> {
    check_er(er)?;
    Ok((a - x) * er / (1.0 - er))
}

/// `(A*, gamma*(A*))`.
pub fn optimal_a(x: f64, theta: f64, er: f64, var_r: f64) -> Result<(f64, f64)> {
    check_theta(theta)?;
    check_var(var_r)?;
    let k = 0.5 / theta;
    let d = 1.0 - er;
    Ok((x + k * d * d / var_r, k * d * er / var_r))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanVarianceSolution {
    pub er: f64,
    pub er2: f64,
    pub var_r: f64,
    pub gamma_star: f64,
    pub a_star: f64,
    pub theta: f64,
    /// `E phi_T^2 = Var R_T / (1 - E R_T)^2`.
    pub phi_second_moment: f64,
    /// `x0 + (1/2 theta)(1 - E R_T) / Var R_T`.
    pub strategy_intercept: f64,
}

impl MeanVarianceSolution {
    pub fn new(x0: f64, theta: f64, er: f64, er2: f64) -> Result<Self> {
        check_er(er)?;
        let var_r = er2 - er * er;
        let (a_star, gamma_star) = optimal_a(x0, theta, er, var_r)?;
        let d = 1.0 - er;
        Ok(MeanVarianceSolution {
            er,
            er2,
            var_r,
            gamma_star,
            a_star,
            theta,
            phi_second_moment: var_r / (d * d),
            strategy_intercept: x0 + 0.5 / theta * d / var_r,
        })
    }

    /// `A*` through `E phi_T^2`, i.e. `x0 + 1 / (2 theta E phi_T^2)`.
    pub fn a_star_via_phi(&self, x0: f64) -> f64 {
        x0 + 1.0 / (2.0 * self.theta * self.phi_second_moment)
    }
}

/// Mean-variance optimal amount in the stock at `(x, z, t)`.
#[allow(clippy::too_many_arguments)]
pub fn mv_strategy(
    sol: &PdeSolution,
    model: &FactorMarketModel,
    x: f64,
    z: f64,
    t: f64,
    x0: f64,
    theta: f64,
    er: f64,
    var_r: f64,
) -> Result<f64> {
    check_theta(theta)?;
    check_var(var_r)?;
    let fields = ControlFields::new(sol, model, Anchor::new(x0, 1.0, z, 0.0)?)?;
    let zeta = fields.zeta(z, t)?;
    Ok((x - x0 - 0.5 / theta * (1.0 - er) / var_r) * zeta)
}

/// Risk aversion whose mean-variance intercept equals the monotone one,
/// `(1 - E R_T) / (4 y0 |G0| Var R_T)`.
pub fn theta_from_intercept(y0: f64, g0: f64, er: f64, var_r: f64) -> Result<f64> {
    check_er(er)?;
    check_var(var_r)?;
    if !(y0 > 0.0) || !(g0 < 0.0) {
        return Err(Error::param("y0, G0", "need y0 > 0 and G0 < 0"));
    }
    Ok((1.0 - er) / (4.0 * y0 * g0.abs() * var_r))
}

/// [`theta_from_intercept`] with `G0 = G(z0, t0)` read off the solved
/// surface.
pub fn theta_equivalence(sol: &PdeSolution, anchor: &Anchor, er: f64, var_r: f64) -> Result<f64> {
    let (g0, _) = sol.eval_g(anchor.z0, anchor.t0)?;
    theta_from_intercept(anchor.y0, g0, er, var_r)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualityCheck {
    pub h: Surface,
    /// `max |G H + 1|` over interior z-nodes and all time levels.
    pub max_abs: f64,
    pub argmax: (f64, f64),
}

fn h_source(h: &[f64], coef: &[f64], dz: f64) -> Vec<f64> {
    let hz = level_z_derivative(h, dz);
    h.iter()
        .zip(&hz)
        .zip(coef)
        .map(|((h, d), c)| -c * d * d / h)
        .collect()
}

/// Solves the `H` equation on its own. The quadratic gradient term is a
/// source: lagged from level `n + 1` for a predictor, then re-evaluated
/// at the predicted level `n` for one Crank–Nicolson corrector.
pub fn solve_h(model: &FactorMarketModel, grid: &GridSpec) -> Result<Surface> {
    let dz = grid.dz();
    let coef: Vec<f64> = (0..grid.n_z)
        .map(|i| {
            let b = model.b(grid.z(i));
            model.rho * model.rho * b * b
        })
        .collect();
    let stepper = ThetaStepper::new(linear_operator(model, grid, -1.0), grid.dt(model.horizon), THETA_SCHEME);
    let mut h = Surface::filled(grid.n_z, grid.n_t, 1.0);
    for n in (0..grid.n_t - 1).rev() {
        let next = h.level(n + 1).to_vec();
        let s_next = h_source(&next, &coef, dz);
        let predicted = stepper.step(&next, Some(&s_next), Some(&s_next))?;
        let s_now = h_source(&predicted, &coef, dz);
        let u = stepper.step(&next, Some(&s_next), Some(&s_now))?;
        if let Some((i, v)) = u.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
            return Err(Error::NonPositiveF {
                z: grid.z(i),
                t: grid.t(n, model.horizon),
                value: *v,
            });
        }
        h.level_mut(n).copy_from_slice(&u);
    }
    Ok(h)
}

/// Solves `H` and compares with `G` from the value-surface solver.
pub fn solve_h_and_check_duality(model: &FactorMarketModel, grid: &GridSpec) -> Result<DualityCheck> {
    let sol = solve(model, grid)?;
    let h = solve_h(model, grid)?;
    let mut max_abs = 0.0;
    let mut argmax = (grid.z(0), 0.0);
    for n in 0..grid.n_t {
        for i in 1..grid.n_z - 1 {
            let e = (sol.g.at(i, n) * h.at(i, n) + 1.0).abs();
            if e > max_abs {
                max_abs = e;
                argmax = (grid.z(i), grid.t(n, model.horizon));
            }
        }
    }
    Ok(DualityCheck { h, max_abs, argmax })
}

/// Row of the strategy comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StrategyRow {
    pub z: f64,
    pub t: f64,
    pub monotone_pi: f64,
    pub mv_pi: f64,
    /// `mv_pi / monotone_pi`; `NaN` where both vanish.
    pub ratio: f64,
}

/// Evaluates the reduced monotone strategy and the mean-variance strategy
/// at wealth `x` on the given `(z, t)` points.
#[allow(clippy::too_many_arguments)]
pub fn compare_strategies(
    fields: &ControlFields<'_>,
    x: f64,
    theta: f64,
    er: f64,
    var_r: f64,
    points: &[(f64, f64)],
) -> Result<Vec<StrategyRow>> {
    check_theta(theta)?;
    check_var(var_r)?;
    let mv_intercept = fields.anchor.x0 + 0.5 / theta * (1.0 - er) / var_r;
    points
        .iter()
        .map(|&(z, t)| {
            let zeta = fields.zeta(z, t)?;
            let monotone_pi = (x - fields.absorbing_level()) * zeta;
            let mv_pi = (x - mv_intercept) * zeta;
            Ok(StrategyRow {
                z,
                t,
                monotone_pi,
                mv_pi,
                ratio: mv_pi / monotone_pi,
            })
        })
        .collect()
}

/// Largest `|mv - monotone| / max(|monotone|, floor)` over rows.
pub fn max_relative_gap(rows: &[StrategyRow], floor: f64) -> f64 {
    let gaps: Vec<f64> = rows
        .iter()
        .map(|r| (r.mv_pi - r.monotone_pi).abs() / r.monotone_pi.abs().max(floor))
        .collect();
    gaps.iter().fold(0.0, |m, g| m.max(*g))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelFamily;

    const C: f64 = 0.16;

    fn bs(lambda: f64, rho: f64) -> FactorMarketModel {
        FactorMarketModel::new(ModelFamily::black_scholes(0.02, lambda, 0.2), 0.02, rho, 1.0).unwrap()
    }

    #[test]
    fn closed_form_arithmetic() {
        let (er, er2, var) = black_scholes_moments(0.4, 1.0);
        assert!((er - 0.852_144).abs() < 1e-6);
        assert_eq!(er, er2);
        assert!((var - 0.125_994).abs() < 1e-6);
        // 0.5 / (e^c - 1)
        let g = lagrange_gamma(1.5, 1.0, er).unwrap();
        assert!((g - 2.881_663_8).abs() < 1e-6, "{g}");
        let (a, gs) = optimal_a(1.0, 0.5, er, var).unwrap();
        // brute force: (1 - e^-c)^2 / (e^-c - e^-2c) = e^c - 1
        let brute = (1.0 - (-C).exp()).powi(2) / ((-C).exp() - (-2.0 * C).exp());
        assert!((a - 1.0 - brute).abs() < 1e-14);
        assert!((a - 1.173_511).abs() < 1e-6);
        assert!((gs - lagrange_gamma(a, 1.0, er).unwrap()).abs() < 1e-12);
        assert!((gs - 1.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_inputs() {
        assert!(matches!(lagrange_gamma(1.0, 1.0, 1.0), Err(Error::DegenerateER { .. })));
        assert!(matches!(optimal_a(1.0, 0.5, 1.0, 0.0), Err(Error::DegenerateVariance { .. })));
        assert!(optimal_a(1.0, 0.0, 0.5, 0.1).is_err());
        assert_eq!(lagrange_gamma(2.0, 2.0, 0.5).unwrap(), 0.0);
    }

    #[test]
    fn infinite_risk_aversion_limit() {
        let (er, _, var) = black_scholes_moments(0.4, 1.0);
        let (a, g) = optimal_a(1.0, 1e12, er, var).unwrap();
        assert!((a - 1.0).abs() < 1e-11 && g.abs() < 1e-11);
    }

    #[test]
    fn solution_invariants() {
        let (er, er2, _) = black_scholes_moments(0.4, 1.0);
        let s = MeanVarianceSolution::new(1.0, 0.5, er, er2).unwrap();
        assert!((s.a_star - s.a_star_via_phi(1.0)).abs() < 1e-14);
        assert!((s.strategy_intercept - (1.0 + C.exp())).abs() < 1e-12);
    }

    #[test]
    fn theta_black_scholes_closed_form() {
        let (er, _, var) = black_scholes_moments(0.4, 1.0);
        for y0 in [0.5, 0.25] {
            let th = theta_from_intercept(y0, -C.exp(), er, var).unwrap();
            assert!((th - 1.0 / (4.0 * y0)).abs() < 1e-12, "{th}");
        }
    }

    #[test]
    fn mv_strategy_black_scholes() {
        let m = bs(0.4, 0.0);
        let sol = solve(&m, &GridSpec::new(-1.0, 1.0, 11, 401).unwrap()).unwrap();
        let (er, _, var) = black_scholes_moments(0.4, 1.0);
        let pi = mv_strategy(&sol, &m, 1.0, 0.0, 0.0, 1.0, 0.5, er, var).unwrap();
        assert!((pi - 2.347_022).abs() < 1e-5, "{pi}");
        // zero at the intercept level
        let at = 1.0 + C.exp();
        assert!(mv_strategy(&sol, &m, at, 0.0, 0.3, 1.0, 0.5, er, var).unwrap().abs() < 1e-12);
    }

    #[test]
    fn simulated_moments_black_scholes() {
        let m = bs(0.4, 0.0);
        let sol = solve(&m, &GridSpec::new(-1.0, 1.0, 11, 101).unwrap()).unwrap();
        let r = simulate_r(&m, &sol, 0.0, &McConfig::new(20_000, 16, 3).unwrap()).unwrap();
        let (er, er2, var) = black_scholes_moments(0.4, 1.0);
        assert!(r.er.z_score(er).abs() < 3.0, "{r:?}");
        assert!(r.er2.z_score(er2).abs() < 3.0);
        assert!((r.var_r - var).abs() < 3.0 * r.var_r_se);
        assert_eq!(r.var_r, r.er2.mean - r.er.mean * r.er.mean);
    }

    #[test]
    fn zero_market_price_gives_unit_r() {
        let m = bs(0.0, 0.0);
        let sol = solve(&m, &GridSpec::new(-1.0, 1.0, 11, 11).unwrap()).unwrap();
        let r = simulate_r(&m, &sol, 0.0, &McConfig::new(10, 8, 3).unwrap()).unwrap();
        assert_eq!((r.er.mean, r.er2.mean, r.var_r), (1.0, 1.0, 0.0));
        assert!(matches!(
            mv_strategy(&sol, &m, 1.0, 0.0, 0.0, 1.0, 0.5, 1.0, 0.0),
            Err(Error::DegenerateVariance { .. })
        ));
    }

    #[test]
    fn duality_black_scholes() {
        let m = bs(0.4, 0.5);
        let d = solve_h_and_check_duality(&m, &GridSpec::new(-1.0, 1.0, 21, 201).unwrap()).unwrap();
        assert!((d.h.at(10, 0) - (-C).exp()).abs() < 1e-6);
        assert!(d.max_abs < 1e-6, "{}", d.max_abs);
    }

    #[test]
    fn duality_trivial_market() {
        let m = bs(0.0, 0.5);
        let d = solve_h_and_check_duality(&m, &GridSpec::new(-1.0, 1.0, 11, 11).unwrap()).unwrap();
        assert!(d.h.values().iter().all(|v| *v == 1.0));
        assert_eq!(d.max_abs, 0.0);
    }
}
