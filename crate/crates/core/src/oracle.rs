//! Feynman–Kac Monte Carlo estimators for the linear unknowns,
//!
//! ```text
//! F1(z, t) = E[exp((2 rho^2 - 1) int_t^T lambda^2(Zt_s) ds)]
//! F2(z, t) = E[int_t^T lambda^2(Zt_s) ds]
//! dZt = (a - 2 rho b lambda)(Zt) ds + b(Zt) dW,  Zt_t = z.
//! ```
//!
//! These share nothing with the grid solver beyond the model, so they serve
//! as its independent check. Euler–Maruyama paths, antithetic pairs, one
//! ChaCha substream per pair, left-endpoint quadrature.
//! [`OracleScheme::Richardson`] adds extrapolation against a coupled
//! half-step path, which removes the first-order time-step bias.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math::{exp, sqrt, Estimate};
use crate::mc::{map_indexed, path_rng, std_normal, McConfig};
use crate::model::FactorMarketModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OracleScheme {
    /// Plain Euler–Maruyama estimate on `n_steps`.
    #[default]
    Euler,
    /// `2 P(N) - P(N/2)`, the `N/2`-step path driven by the pairwise sums
    /// of the `N`-step increments. Needs an even step count.
    Richardson,
}

/// Simulated auxiliary factor paths.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorPaths {
    pub times: Vec<f64>,
    /// One row per path, `n_steps + 1` values each.
    pub paths: Vec<Vec<f64>>,
}

fn check_start(model: &FactorMarketModel, z: f64, t: f64) -> Result<()> {
    if !z.is_finite() {
        return Err(Error::param("z", "must be finite"));
    }
    if !(t.is_finite() && t >= 0.0 && t <= model.horizon) {
        return Err(Error::param("t", "must lie in [0, T]"));
    }
    Ok(())
}

/// Walks one path (or its antithetic mirror when `sign = -1`) and returns
/// the left-endpoint integral of `lambda^2`. `visit` sees every state.
fn walk(
    model: &FactorMarketModel,
    z: f64,
    dt: f64,
    normals: &[f64],
    sign: f64,
    mut visit: impl FnMut(f64),
) -> f64 {
    let sq = sqrt(dt);
    let two_rho = 2.0 * model.rho;
    let mut zt = z;
    let mut integral = 0.0;
    visit(zt);
    for xi in normals {
        let l = model.lambda(zt);
        let b = model.b(zt);
        integral += l * l * dt;
        zt += (model.a(zt) - two_rho * b * l) * dt + b * sq * sign * xi;
        visit(zt);
    }
    integral
}

/// Both antithetic partners stepped in lockstep; the two independent
/// chains overlap the latency of the coefficient evaluations.
fn walk_pair(model: &FactorMarketModel, z: f64, dt: f64, normals: &[f64]) -> (f64, f64) {
    let sq = sqrt(dt);
    let two_rho = 2.0 * model.rho;
    let (mut up, mut down) = (z, z);
    let (mut i_up, mut i_down) = (0.0, 0.0);
    for xi in normals {
        let (lu, ld) = (model.lambda(up), model.lambda(down));
        let (bu, bd) = (model.b(up), model.b(down));
        i_up += lu * lu * dt;
        i_down += ld * ld * dt;
        let step = sq * xi;
        up += (model.a(up) - two_rho * bu * lu) * dt + bu * step;
        down += (model.a(down) - two_rho * bd * ld) * dt - bd * step;
    }
    (i_up, i_down)
}

/// Increments of the half-resolution path, `(xi_2k + xi_2k+1) / sqrt 2`.
fn coarsen(normals: &[f64]) -> Vec<f64> {
    normals
        .chunks_exact(2)
        .map(|c| (c[0] + c[1]) * core::f64::consts::FRAC_1_SQRT_2)
        .collect()
}

fn draw_normals(cfg: &McConfig, index: usize) -> Vec<f64> {
    let mut rng = path_rng(cfg.seed, index as u64);
    (0..cfg.n_steps).map(|_| std_normal(&mut rng)).collect()
}

/// Euler–Maruyama trajectories of the auxiliary factor on `[t, T]`.
pub fn simulate_z_tilde(
    model: &FactorMarketModel,
    z: f64,
    t: f64,
    cfg: &McConfig,
) -> Result<FactorPaths> {
    check_start(model, z, t)?;
    let dt = (model.horizon - t) / cfg.n_steps as f64;
    let times = (0..=cfg.n_steps)
        .map(|k| if k == cfg.n_steps { model.horizon } else { t + dt * k as f64 })
        .collect();
    let signs: &[f64] = if cfg.antithetic { &[1.0, -1.0] } else { &[1.0] };
    let per_draw = map_indexed(cfg.n_draws(), cfg.parallel, |q| {
        let normals = draw_normals(cfg, q);
        signs
            .iter()
            .map(|s| {
                let mut path = Vec::with_capacity(cfg.n_steps + 1);
                walk(model, z, dt, &normals, *s, |v| path.push(v));
                path
            })
            .collect::<Vec<_>>()
    });
    let paths = per_draw.into_iter().flatten().collect();
    Ok(FactorPaths { times, paths })
}

fn estimate(
    model: &FactorMarketModel,
    z: f64,
    t: f64,
    cfg: &McConfig,
    scheme: OracleScheme,
    payoff: impl Fn(f64) -> f64 + Sync + Send,
) -> Result<Estimate> {
    check_start(model, z, t)?;
    let richardson = scheme == OracleScheme::Richardson;
    if richardson && cfg.n_steps % 2 != 0 {
        return Err(Error::param("n_steps", "must be even for Richardson extrapolation"));
    }
    let dt = (model.horizon - t) / cfg.n_steps as f64;
    // mean payoff over the draw's paths at step size `h`
    let level = |normals: &[f64], h: f64| -> f64 {
        if cfg.antithetic {
            let (a, b) = walk_pair(model, z, h, normals);
            0.5 * (payoff(a) + payoff(b))
        } else {
            payoff(walk(model, z, h, normals, 1.0, |_| {}))
        }
    };
    let samples = map_indexed(cfg.n_draws(), cfg.parallel, |q| {
        let normals = draw_normals(cfg, q);
        let fine = level(&normals, dt);
        if richardson {
            2.0 * fine - level(&coarsen(&normals), 2.0 * dt)
        } else {
            fine
        }
    });
    Ok(Estimate::from_samples(&samples))
}

/// Monte Carlo estimate of `F1(z, t)`.
pub fn estimate_f1(model: &FactorMarketModel, z: f64, t: f64, cfg: &McConfig) -> Result<Estimate> {
    estimate_f1_with(model, z, t, cfg, OracleScheme::default())
}

/// Monte Carlo estimate of `F2(z, t)`.
pub fn estimate_f2(model: &FactorMarketModel, z: f64, t: f64, cfg: &McConfig) -> Result<Estimate> {
    estimate_f2_with(model, z, t, cfg, OracleScheme::default())
}

pub fn estimate_f1_with(
    model: &FactorMarketModel,
    z: f64,
    t: f64,
    cfg: &McConfig,
    scheme: OracleScheme,
) -> Result<Estimate> {
    let gap = model.case_gap();
    estimate(model, z, t, cfg, scheme, |i| exp(gap * i))
}

pub fn estimate_f2_with(
    model: &FactorMarketModel,
    z: f64,
    t: f64,
    cfg: &McConfig,
    scheme: OracleScheme,
) -> Result<Estimate> {
    estimate(model, z, t, cfg, scheme, |i| i)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelFamily;

    fn bs(lambda: f64, rho: f64) -> FactorMarketModel {
        FactorMarketModel::new(ModelFamily::black_scholes(0.02, lambda, 0.2), 0.02, rho, 1.0).unwrap()
    }

    #[test]
    fn degenerate_factor_stays_put() {
        let cfg = McConfig::new(4, 16, 1).unwrap();
        let p = simulate_z_tilde(&bs(0.0, 0.0), 0.7, 0.0, &cfg).unwrap();
        assert_eq!(p.paths.len(), 4);
        assert!(p.paths.iter().flatten().all(|v| *v == 0.7));
        assert_eq!(p.times.len(), 17);
        assert_eq!(*p.times.last().unwrap(), 1.0);
    }

    #[test]
    fn zero_market_price_is_exact() {
        let cfg = McConfig::new(100, 8, 3).unwrap();
        let m = bs(0.0, 0.3);
        let f1 = estimate_f1(&m, 0.0, 0.0, &cfg).unwrap();
        assert_eq!((f1.mean, f1.std_error), (1.0, 0.0));
        let f2 = estimate_f2(&m, 0.0, 0.0, &cfg).unwrap();
        assert_eq!((f2.mean, f2.std_error), (0.0, 0.0));
    }

    #[test]
    fn constant_market_price_closed_forms() {
        let cfg = McConfig::new(64, 50, 3).unwrap();
        let f1 = estimate_f1(&bs(0.4, 0.0), 0.0, 0.0, &cfg).unwrap();
        assert!((f1.mean - (-0.16f64).exp()).abs() < 1e-12);
        assert!(f1.std_error < 1e-14);
        let f2 = estimate_f2(&bs(0.4, core::f64::consts::FRAC_1_SQRT_2), 0.0, 0.0, &cfg).unwrap();
        assert!((f2.mean - 0.16).abs() < 1e-12);
    }

    #[test]
    fn repeated_calls_are_bit_identical() {
        let m = FactorMarketModel::new(
            ModelFamily::OuTanh {
                kappa: 1.0,
                mean_level: 0.0,
                beta: 0.5,
                sigma0: 0.2,
                lambda0: 0.3,
                lambda1: 0.1,
            },
            0.02,
            0.5,
            1.0,
        )
        .unwrap();
        let cfg = McConfig::new(500, 32, 11).unwrap();
        let a = estimate_f1(&m, 0.2, 0.1, &cfg).unwrap();
        let b = estimate_f1(&m, 0.2, 0.1, &cfg).unwrap();
        assert_eq!(a, b);
        let p1 = simulate_z_tilde(&m, 0.2, 0.1, &cfg).unwrap();
        let p2 = simulate_z_tilde(&m, 0.2, 0.1, &cfg).unwrap();
        assert_eq!(p1, p2);
        // serial and parallel agree
        let s = estimate_f1(&m, 0.2, 0.1, &cfg.with_parallel(false)).unwrap();
        assert_eq!(a, s);
    }

    #[test]
    fn richardson_needs_even_steps_and_keeps_exact_cases() {
        let m = bs(0.4, 0.0);
        let odd = McConfig::new(4, 5, 1).unwrap();
        assert!(estimate_f1_with(&m, 0.0, 0.0, &odd, OracleScheme::Richardson).is_err());
        let cfg = McConfig::new(64, 50, 3).unwrap();
        let f1 = estimate_f1_with(&m, 0.0, 0.0, &cfg, OracleScheme::Richardson).unwrap();
        assert!((f1.mean - (-0.16f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn coarse_increments_keep_unit_variance() {
        let c = coarsen(&[1.0, 1.0, 3.0, -3.0]);
        assert!((c[0] - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(c[1], 0.0);
    }

    #[test]
    fn paired_walk_matches_single_walks() {
        let m = FactorMarketModel::new(
            ModelFamily::OuTanh {
                kappa: 1.0,
                mean_level: 0.0,
                beta: 0.5,
                sigma0: 0.2,
                lambda0: 0.3,
                lambda1: 0.1,
            },
            0.02,
            0.5,
            1.0,
        )
        .unwrap();
        let normals = draw_normals(&McConfig::new(2, 40, 5).unwrap(), 0);
        let (a, b) = walk_pair(&m, 0.3, 0.025, &normals);
        assert_eq!(a, walk(&m, 0.3, 0.025, &normals, 1.0, |_| {}));
        assert_eq!(b, walk(&m, 0.3, 0.025, &normals, -1.0, |_| {}));
    }

    #[test]
    fn rejects_start_outside_horizon() {
        let cfg = McConfig::new(2, 2, 0).unwrap();
        assert!(estimate_f1(&bs(0.4, 0.0), 0.0, 1.5, &cfg).is_err());
    }
}
