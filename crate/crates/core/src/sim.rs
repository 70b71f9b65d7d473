//! Simulation of the controlled system `(X, Y, Z)`.
//!
//! Under `P`:
//!
//! ```text
//! dX = pi (mu - r) ds + pi sigma dW1
//! dY = Y (eta1 dW1 + eta2 dW2)
//! dZ = a ds + b (rho dW1 + rho_bar dW2)
//! ```
//!
//! Under `Q^eta` the same system is driven by `W^eta`, which adds
//! `pi sigma eta1`, `|eta|^2 Y` and `b (rho eta1 + rho_bar eta2)` to the
//! drifts. `X` and `Z` use Euler–Maruyama, `Y` exact exponential steps.
//! Coefficients and the value surface are read at `Z` clamped to the grid
//! domain; clamped path-steps are counted.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math::{exp, pairwise_sum, sqrt, Estimate};
use crate::mc::{map_indexed, path_rng, std_normal, McConfig};
use crate::strategy::{ControlFields, ControlPoint};

/// Fraction of clamped path-steps above which a run is rejected.
pub const EXCURSION_LIMIT: f64 = 0.01;

/// Portfolio rule. `Saddle` is the Markov feedback `2 y G zeta`,
/// `Reduced` the wealth feedback `(x - x0 + 2 y0 G0) zeta`.
#[derive(Debug, Clone, Copy)]
pub enum PiControl {
    Saddle,
    Reduced,
    Constant(f64),
    /// Saddle portfolio times a factor.
    Scaled(f64),
    /// Saddle portfolio plus a constant.
    Shifted(f64),
    /// User rule `(x, y, z, t) -> pi`.
    Feedback(fn(f64, f64, f64, f64) -> f64),
}

/// Distortion rule for the adverse measure.
#[derive(Debug, Clone, Copy)]
pub enum EtaControl {
    Saddle,
    Constant(f64, f64),
    Scaled(f64),
    Shifted(f64, f64),
    /// User rule `(y, z, t) -> (eta1, eta2)`.
    Feedback(fn(f64, f64, f64) -> (f64, f64)),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Measure {
    P,
    Q,
}

impl PiControl {
    pub fn label(&self) -> String {
        match self {
            PiControl::Saddle => "pi*".into(),
            PiControl::Reduced => "pi_hat".into(),
            PiControl::Constant(c) => format!("pi={c}"),
            PiControl::Scaled(s) => format!("{s}*pi*"),
            PiControl::Shifted(c) => format!("pi*{c:+}"),
            PiControl::Feedback(_) => "pi(user)".into(),
        }
    }

    fn eval(&self, fields: &ControlFields<'_>, p: &ControlPoint, x: f64, y: f64, z: f64, t: f64) -> f64 {
        let saddle = || 2.0 * y * p.g * p.zeta;
        match *self {
            PiControl::Saddle => saddle(),
            PiControl::Reduced => (x - fields.absorbing_level()) * p.zeta,
            PiControl::Constant(c) => c,
            PiControl::Scaled(s) => s * saddle(),
            PiControl::Shifted(c) => saddle() + c,
            PiControl::Feedback(f) => f(x, y, z, t),
        }
    }
}

impl EtaControl {
    pub fn label(&self) -> String {
        match self {
            EtaControl::Saddle => "eta*".into(),
            EtaControl::Constant(a, b) => format!("eta=({a},{b})"),
            EtaControl::Scaled(s) => format!("{s}*eta*"),
            EtaControl::Shifted(a, b) => format!("eta*+({a},{b})"),
            EtaControl::Feedback(_) => "eta(user)".into(),
        }
    }

    fn eval(&self, fields: &ControlFields<'_>, p: &ControlPoint, y: f64, z: f64, t: f64) -> (f64, f64) {
        let saddle = || fields.eta_at(p);
        match *self {
            EtaControl::Saddle => saddle(),
            EtaControl::Constant(a, b) => (a, b),
            EtaControl::Scaled(s) => {
                let (a, b) = saddle();
                (s * a, s * b)
            }
            EtaControl::Shifted(da, db) => {
                let (a, b) = saddle();
                (a + da, b + db)
            }
            EtaControl::Feedback(f) => f(y, z, t),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub enum MeasureTag {
    UnderP,
    UnderQ(EtaControl),
}

/// Stored trajectories, one row per path. Antithetic partners are adjacent
/// rows `(2k, 2k + 1)`.
#[derive(Debug, Clone)]
pub struct PathBundle {
    pub times: Vec<f64>,
    pub x: Vec<Vec<f64>>,
    pub y: Vec<Vec<f64>>,
    pub z: Vec<Vec<f64>>,
    pub dw1: Vec<Vec<f64>>,
    pub dw2: Vec<Vec<f64>>,
    pub measure_tag: MeasureTag,
    pub antithetic: bool,
    pub excursion_fraction: f64,
}

impl PathBundle {
    pub fn n_paths(&self) -> usize {
        self.x.len()
    }

    pub fn y0(&self) -> f64 {
        self.y[0][0]
    }

    pub fn is_under_p(&self) -> bool {
        matches!(self.measure_tag, MeasureTag::UnderP)
    }

    /// Per-draw sample means of `f(path index)`; pairs are averaged when
    /// the bundle is antithetic.
    fn draw_samples(&self, f: impl Fn(usize) -> f64) -> Vec<f64> {
        let n = self.n_paths();
        if self.antithetic {
            (0..n / 2).map(|k| 0.5 * (f(2 * k) + f(2 * k + 1))).collect()
        } else {
            (0..n).map(f).collect()
        }
    }
}

struct Dynamics<'a, 'b> {
    fields: &'b ControlFields<'a>,
    pi: PiControl,
    eta: EtaControl,
    measure: Measure,
    t0: f64,
    dt: f64,
    sq_dt: f64,
    n_steps: usize,
    /// Each step's noise is the normalised sum of this many finer draws,
    /// so runs at different step counts can share one Brownian path.
    coarsen: usize,
}

/// Terminal state and clamp count of one path.
struct PathEnd {
    x: f64,
    y: f64,
    excursions: usize,
}

impl<'a, 'b> Dynamics<'a, 'b> {
    fn new(
        fields: &'b ControlFields<'a>,
        pi: PiControl,
        eta: EtaControl,
        measure: Measure,
        cfg: &McConfig,
    ) -> Self {
        let t0 = fields.anchor.t0;
        let dt = (fields.model.horizon - t0) / cfg.n_steps as f64;
        Dynamics {
            fields,
            pi,
            eta,
            measure,
            t0,
            dt,
            sq_dt: sqrt(dt),
            n_steps: cfg.n_steps,
            coarsen: 1,
        }
    }

    fn time(&self, k: usize) -> f64 {
        if k == self.n_steps {
            self.fields.model.horizon
        } else {
            self.t0 + self.dt * k as f64
        }
    }

    fn normals(&self, seed: u64, index: usize) -> Vec<f64> {
        let mut rng = path_rng(seed, index as u64);
        if self.coarsen == 1 {
            return (0..2 * self.n_steps).map(|_| std_normal(&mut rng)).collect();
        }
        let fine: Vec<f64> = (0..2 * self.n_steps * self.coarsen)
            .map(|_| std_normal(&mut rng))
            .collect();
        let scale = 1.0 / sqrt(self.coarsen as f64);
        let mut out = Vec::with_capacity(2 * self.n_steps);
        for k in 0..self.n_steps {
            for c in 0..2 {
                let sum: f64 = (0..self.coarsen).map(|j| fine[2 * (k * self.coarsen + j) + c]).sum();
                out.push(sum * scale);
            }
        }
        out
    }

    /// Runs one path; `visit(k, x, y, z, g)` sees every state together with
    /// `G` at the clamped factor value.
    fn run(
        &self,
        normals: &[f64],
        sign: f64,
        mut visit: impl FnMut(usize, f64, f64, f64, f64),
    ) -> Result<PathEnd> {
        let f = self.fields;
        let m = f.model;
        let (rho, rho_bar) = (m.rho, m.rho_bar());
        let a = f.anchor;
        let (mut x, mut y, mut z) = (a.x0, a.y0, a.z0);
        let mut excursions = 0;
        let dt = self.dt;
        for k in 0..self.n_steps {
            let s = self.time(k);
            let zc = f.sol.clamp_z(z);
            if zc != z {
                excursions += 1;
            }
            let p = f.point(zc, s)?;
            visit(k, x, y, z, p.g);
            let pi = self.pi.eval(f, &p, x, y, zc, s);
            let (e1, e2) = self.eta.eval(f, &p, y, zc, s);
            let dw1 = sign * self.sq_dt * normals[2 * k];
            let dw2 = sign * self.sq_dt * normals[2 * k + 1];
            let excess = m.mu(zc) - m.r;
            let e_sq = e1 * e1 + e2 * e2;
            let noise_z = p.b * (rho * dw1 + rho_bar * dw2);
            match self.measure {
                Measure::P => {
                    x += pi * excess * dt + pi * p.sigma * dw1;
                    y *= exp(e1 * dw1 + e2 * dw2 - 0.5 * e_sq * dt);
                    z += m.a(zc) * dt + noise_z;
                }
                Measure::Q => {
                    x += pi * (excess + p.sigma * e1) * dt + pi * p.sigma * dw1;
                    y *= exp(e1 * dw1 + e2 * dw2 + 0.5 * e_sq * dt);
                    z += (m.a(zc) + p.b * (rho * e1 + rho_bar * e2)) * dt + noise_z;
                }
            }
        }
        let (g_end, _) = f.sol.eval_g(f.sol.clamp_z(z), m.horizon)?;
        visit(self.n_steps, x, y, z, g_end);
        Ok(PathEnd { x, y, excursions })
    }

    fn check_excursions(&self, total: usize, n_paths: usize) -> Result<f64> {
        let fraction = total as f64 / (n_paths * self.n_steps) as f64;
        if fraction > EXCURSION_LIMIT {
            return Err(Error::ExcessiveExcursion {
                fraction,
                limit: EXCURSION_LIMIT,
            });
        }
        Ok(fraction)
    }

    fn signs(cfg: &McConfig) -> &'static [f64] {
        if cfg.antithetic {
            &[1.0, -1.0]
        } else {
            &[1.0]
        }
    }

    /// Runs every path with `f(normals, sign)`, grouped by draw, and checks
    /// the excursion budget.
    fn draws<T: Send>(
        &self,
        cfg: &McConfig,
        f: impl Fn(&[f64], f64) -> Result<(T, usize)> + Sync + Send,
    ) -> Result<(Vec<Vec<T>>, f64)> {
        let signs = Self::signs(cfg);
        let per_draw: Vec<Result<Vec<(T, usize)>>> = map_indexed(cfg.n_draws(), cfg.parallel, |q| {
            let normals = self.normals(cfg.seed, q);
            signs.iter().map(|&s| f(&normals, s)).collect()
        });
        let mut out = Vec::with_capacity(per_draw.len());
        let (mut total, mut n_paths) = (0, 0);
        for draw in per_draw {
            let draw = draw?;
            n_paths += draw.len();
            out.push(
                draw.into_iter()
                    .map(|(v, e)| {
                        total += e;
                        v
                    })
                    .collect(),
            );
        }
        let fraction = self.check_excursions(total, n_paths)?;
        Ok((out, fraction))
    }
}

/// Simulates the controlled system from the anchor of `fields` and keeps
/// every trajectory.
pub fn simulate_system(
    fields: &ControlFields<'_>,
    pi: PiControl,
    eta: EtaControl,
    measure: Measure,
    cfg: &McConfig,
) -> Result<PathBundle> {
    let dyn_ = Dynamics::new(fields, pi, eta, measure, cfg);
    type Row = (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>);
    let (draws, excursion_fraction) = dyn_.draws(cfg, |normals, sign| {
        let cap = dyn_.n_steps + 1;
        let (mut xs, mut ys, mut zs) =
            (Vec::with_capacity(cap), Vec::with_capacity(cap), Vec::with_capacity(cap));
        let end = dyn_.run(normals, sign, |_, x, y, z, _| {
            xs.push(x);
            ys.push(y);
            zs.push(z);
        })?;
        let dw1 = (0..dyn_.n_steps).map(|k| sign * dyn_.sq_dt * normals[2 * k]).collect();
        let dw2 = (0..dyn_.n_steps).map(|k| sign * dyn_.sq_dt * normals[2 * k + 1]).collect();
        let row: Row = (xs, ys, zs, dw1, dw2);
        Ok((row, end.excursions))
    })?;
    let mut bundle = PathBundle {
        times: (0..=dyn_.n_steps).map(|k| dyn_.time(k)).collect(),
        x: Vec::new(),
        y: Vec::new(),
        z: Vec::new(),
        dw1: Vec::new(),
        dw2: Vec::new(),
        measure_tag: match measure {
            Measure::P => MeasureTag::UnderP,
            Measure::Q => MeasureTag::UnderQ(eta),
        },
        antithetic: cfg.antithetic,
        excursion_fraction,
    };
    for (x, y, z, w1, w2) in draws.into_iter().flatten() {
        bundle.x.push(x);
        bundle.y.push(y);
        bundle.z.push(z);
        bundle.dw1.push(w1);
        bundle.dw2.push(w2);
    }
    Ok(bundle)
}

/// Game objective estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveEstimate {
    /// Under `Q`: mean of `-X_T - Y_T`. Under `P`: mean of
    /// `(Y_T / y0)(-X_T - Y_T)`.
    pub j: Estimate,
    /// Under `P` only: the ratio `sum w v / sum w` with `w = Y_T / y0`.
    /// It shifts by exactly `-beta` when `X_T` is shifted by `beta`.
    pub self_normalized: Option<Estimate>,
    /// Under `P` only: mean of `Y_T / y0`.
    pub density_mean: Option<Estimate>,
    /// Sample mean of `sup_t |V(X_t, Y_t, Z_t, t)|`. Monitored, not certified.
    pub mean_sup_abs_value: f64,
    pub excursion_fraction: f64,
}

/// `(w, w v)` per path with `v = -X_T - beta - Y_T`.
fn ratio_estimate(terms: &[(f64, f64)]) -> Estimate {
    let num: Vec<f64> = terms.iter().map(|t| t.1).collect();
    let den: Vec<f64> = terms.iter().map(|t| t.0).collect();
    let (sn, sd) = (pairwise_sum(&num), pairwise_sum(&den));
    let ratio = sn / sd;
    let n = terms.len();
    let std_error = if n > 1 {
        let dev: Vec<f64> = terms
            .iter()
            .map(|&(w, wv)| {
                let d = wv - ratio * w;
                d * d
            })
            .collect();
        sqrt(pairwise_sum(&dev) * n as f64 / (n - 1) as f64) / sd
    } else {
        f64::INFINITY
    };
    Estimate {
        mean: ratio,
        std_error,
        n,
    }
}

struct PathOutcome {
    x: f64,
    y: f64,
    sup_abs_value: f64,
}

fn objective_from_outcomes(
    draws: &[Vec<PathOutcome>],
    y0: f64,
    measure: Measure,
    shift: f64,
    excursion_fraction: f64,
) -> ObjectiveEstimate {
    let per_path = |o: &PathOutcome| -> (f64, f64) {
        let v = -o.x - shift - o.y;
        (o.y / y0, v)
    };
    let mean_of = |vals: Vec<f64>| Estimate::from_samples(&vals);
    let draw_mean = |d: &Vec<PathOutcome>, f: &dyn Fn(&PathOutcome) -> f64| {
        pairwise_sum(&d.iter().map(f).collect::<Vec<_>>()) / d.len() as f64
    };
    let n_paths: usize = draws.iter().map(|d| d.len()).sum();
    let sup = pairwise_sum(&draws.iter().flatten().map(|o| o.sup_abs_value).collect::<Vec<_>>())
        / n_paths as f64;
    match measure {
        Measure::Q => ObjectiveEstimate {
            j: mean_of(draws.iter().map(|d| draw_mean(d, &|o| per_path(o).1)).collect()),
            self_normalized: None,
            density_mean: None,
            mean_sup_abs_value: sup,
            excursion_fraction,
        },
        Measure::P => {
            let terms: Vec<(f64, f64)> = draws
                .iter()
                .map(|d| {
                    let w = draw_mean(d, &|o| per_path(o).0);
                    let wv = draw_mean(d, &|o| {
                        let (w, v) = per_path(o);
                        w * v
                    });
                    (w, wv)
                })
                .collect();
            ObjectiveEstimate {
                j: mean_of(terms.iter().map(|t| t.1).collect()),
                self_normalized: Some(ratio_estimate(&terms)),
                density_mean: Some(mean_of(terms.iter().map(|t| t.0).collect())),
                mean_sup_abs_value: sup,
                excursion_fraction,
            }
        }
    }
}

fn simulate_outcomes(
    fields: &ControlFields<'_>,
    pi: PiControl,
    eta: EtaControl,
    measure: Measure,
    cfg: &McConfig,
) -> Result<(Vec<Vec<PathOutcome>>, f64)> {
    let dyn_ = Dynamics::new(fields, pi, eta, measure, cfg);
    dyn_.draws(cfg, |normals, sign| {
        let mut sup = 0.0f64;
        let end = dyn_.run(normals, sign, |_, x, y, _, g| {
            sup = sup.max((-x + g * y).abs());
        })?;
        Ok((
            PathOutcome {
                x: end.x,
                y: end.y,
                sup_abs_value: sup,
            },
            end.excursions,
        ))
    })
}

/// `J^{pi,eta} = E^eta[-X_T - Y_T]` by simulating under `Q^eta`.
pub fn estimate_objective_under_q(
    fields: &ControlFields<'_>,
    pi: PiControl,
    eta: EtaControl,
    cfg: &McConfig,
) -> Result<ObjectiveEstimate> {
    let (draws, exc) = simulate_outcomes(fields, pi, eta, Measure::Q, cfg)?;
    Ok(objective_from_outcomes(&draws, fields.anchor.y0, Measure::Q, 0.0, exc))
}

/// `J^{pi,eta} = E[(Y_T / y0)(-X_T - Y_T)]` by simulating under `P`.
pub fn estimate_objective_under_p(
    fields: &ControlFields<'_>,
    pi: PiControl,
    eta: EtaControl,
    cfg: &McConfig,
) -> Result<ObjectiveEstimate> {
    let (draws, exc) = simulate_outcomes(fields, pi, eta, Measure::P, cfg)?;
    Ok(objective_from_outcomes(&draws, fields.anchor.y0, Measure::P, 0.0, exc))
}

/// Objective read off stored paths, with `X_T` replaced by `X_T + shift`.
pub fn objective_from_bundle(bundle: &PathBundle, shift: f64) -> ObjectiveEstimate {
    let y0 = bundle.y0();
    let outcome = |i: usize| PathOutcome {
        x: *bundle.x[i].last().unwrap(),
        y: *bundle.y[i].last().unwrap(),
        sup_abs_value: 0.0,
    };
    let per = if bundle.antithetic { 2 } else { 1 };
    let draws: Vec<Vec<PathOutcome>> = (0..bundle.n_paths() / per)
        .map(|d| (0..per).map(|j| outcome(d * per + j)).collect())
        .collect();
    let measure = if bundle.is_under_p() { Measure::P } else { Measure::Q };
    objective_from_outcomes(&draws, y0, measure, shift, bundle.excursion_fraction)
}

/// Quadratic penalty `C(Q|P) = E[(Y_T / y0)^2] - 1` from a bundle under `P`.
pub fn estimate_penalty(bundle: &PathBundle) -> Result<Estimate> {
    if !bundle.is_under_p() {
        return Err(Error::param("bundle", "must be simulated under P"));
    }
    let y0 = bundle.y0();
    let samples = bundle.draw_samples(|i| {
        let w = bundle.y[i].last().unwrap() / y0;
        w * w - 1.0
    });
    Ok(Estimate::from_samples(&samples))
}

/// Sample mean of `Y_T` under whichever measure the bundle was drawn.
/// Under `Q^eta` this is `E^eta[Y_T] = y0 (1 + C(Q^eta | P))`.
pub fn terminal_y_mean(bundle: &PathBundle) -> Estimate {
    Estimate::from_samples(&bundle.draw_samples(|i| *bundle.y[i].last().unwrap()))
}

/// Mean of `Y_T / y0` from a bundle under `P`; the density martingale has
/// mean one.
pub fn density_mean(bundle: &PathBundle) -> Result<Estimate> {
    if !bundle.is_under_p() {
        return Err(Error::param("bundle", "must be simulated under P"));
    }
    let y0 = bundle.y0();
    Ok(Estimate::from_samples(
        &bundle.draw_samples(|i| bundle.y[i].last().unwrap() / y0),
    ))
}

/// Pathwise deviation `|2 Y_t G(Z_t, t) - (X_t - x0 + 2 y0 G(z0, t0))|`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReductionCheck {
    pub max_abs_error: f64,
    /// `(t, max over paths)` at each time step.
    pub profile: Vec<(f64, f64)>,
    pub excursion_fraction: f64,
}

/// Evaluates the reduction identity on a bundle simulated at the saddle.
pub fn check_reduction_identity(bundle: &PathBundle, fields: &ControlFields<'_>) -> Result<ReductionCheck> {
    let sol = fields.sol;
    let a = fields.anchor;
    let intercept = -a.x0 + 2.0 * a.y0 * fields.g_anchor();
    let mut profile = Vec::with_capacity(bundle.times.len());
    for (k, &t) in bundle.times.iter().enumerate() {
        let mut worst = 0.0f64;
        for i in 0..bundle.n_paths() {
            let (g, _) = sol.eval_g(sol.clamp_z(bundle.z[i][k]), t)?;
            worst = worst.max((2.0 * bundle.y[i][k] * g - bundle.x[i][k] - intercept).abs());
        }
        profile.push((t, worst));
    }
    Ok(ReductionCheck {
        max_abs_error: profile.iter().fold(0.0, |m, p| m.max(p.1)),
        profile,
        excursion_fraction: bundle.excursion_fraction,
    })
}

/// Same check as [`check_reduction_identity`] without storing paths.
/// Simulates under `P` with both saddle controls.
pub fn reduction_identity_mc(fields: &ControlFields<'_>, cfg: &McConfig) -> Result<ReductionCheck> {
    reduction_identity_coupled(fields, cfg, 1)
}

fn reduction_identity_coupled(fields: &ControlFields<'_>, cfg: &McConfig, coarsen: usize) -> Result<ReductionCheck> {
    let a = fields.anchor;
    let intercept = -a.x0 + 2.0 * a.y0 * fields.g_anchor();
    let mut dyn_ = Dynamics::new(fields, PiControl::Saddle, EtaControl::Saddle, Measure::P, cfg);
    dyn_.coarsen = coarsen;
    let (draws, exc) = dyn_.draws(cfg, |normals, sign| {
        let mut errs = alloc::vec![0.0f64; dyn_.n_steps + 1];
        let end = dyn_.run(normals, sign, |k, x, y, _, g| {
            errs[k] = (2.0 * y * g - x - intercept).abs();
        })?;
        Ok((errs, end.excursions))
    })?;
    let mut worst = alloc::vec![0.0f64; dyn_.n_steps + 1];
    for errs in draws.iter().flatten() {
        for (w, e) in worst.iter_mut().zip(errs) {
            *w = w.max(*e);
        }
    }
    let profile: Vec<(f64, f64)> = worst.into_iter().enumerate().map(|(k, e)| (dyn_.time(k), e)).collect();
    Ok(ReductionCheck {
        max_abs_error: profile.iter().fold(0.0, |m, p| m.max(p.1)),
        profile,
        excursion_fraction: exc,
    })
}

/// Step-halving study of the reduction identity: `levels` runs with
/// `cfg.n_steps`, twice as many, and so on, all on the Brownian paths of
/// the finest run. Returned coarsest first.
pub fn reduction_identity_refinement(
    fields: &ControlFields<'_>,
    cfg: &McConfig,
    levels: usize,
) -> Result<Vec<(usize, ReductionCheck)>> {
    if levels == 0 {
        return Err(Error::param("levels", "must be at least 1"));
    }
    let finest = cfg.n_steps << (levels - 1);
    (0..levels)
        .map(|l| {
            let n = cfg.n_steps << l;
            let check = reduction_identity_coupled(fields, &cfg.with_steps(n), finest / n)?;
            Ok((n, check))
        })
        .collect()
}

/// Control perturbations tried against the saddle.
#[derive(Debug, Clone)]
pub struct Perturbations {
    pub pi: Vec<PiControl>,
    pub eta: Vec<EtaControl>,
}

impl Default for Perturbations {
    /// Saddle controls scaled by 0.5, 0.9, 1.1, 1.5 and shifted by +-0.2.
    fn default() -> Self {
        let scales = [0.5, 0.9, 1.1, 1.5];
        let mut pi: Vec<PiControl> = scales.iter().map(|&s| PiControl::Scaled(s)).collect();
        pi.extend([PiControl::Shifted(-0.2), PiControl::Shifted(0.2)]);
        let mut eta: Vec<EtaControl> = scales.iter().map(|&s| EtaControl::Scaled(s)).collect();
        eta.extend([
            EtaControl::Shifted(-0.2, 0.0),
            EtaControl::Shifted(0.2, 0.0),
            EtaControl::Shifted(0.0, -0.2),
            EtaControl::Shifted(0.0, 0.2),
        ]);
        Perturbations { pi, eta }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationOutcome {
    pub label: String,
    pub j: Estimate,
    /// Paired `J(perturbed) - J(pi*, eta*)` on common random numbers.
    pub diff: Estimate,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaddleCertificate {
    pub j_star: Estimate,
    /// `-x0 + G(z0, t0) y0`.
    pub value: f64,
    pub value_matches: bool,
    /// Must satisfy `J(pi*, eta) <= J(pi*, eta*) + 3 SE`.
    pub eta_side: Vec<PerturbationOutcome>,
    /// Must satisfy `J(pi*, eta*) <= J(pi, eta*) + 3 SE`.
    pub pi_side: Vec<PerturbationOutcome>,
}

impl SaddleCertificate {
    pub fn passed(&self) -> bool {
        self.value_matches
            && self.eta_side.iter().all(|p| p.holds)
            && self.pi_side.iter().all(|p| p.holds)
    }
}

/// Number of standard errors allowed in the Monte Carlo comparisons.
pub const SE_MULTIPLE: f64 = 3.0;

/// Floating-point slack added to every `3 SE` comparison so that exact
/// ties with vanishing SE are not reported as violations.
fn roundoff(scale: f64) -> f64 {
    1e-12 * (1.0 + scale.abs())
}

/// Monte Carlo check of `J(pi*, eta) <= J(pi*, eta*) <= J(pi, eta*)` under
/// `Q^eta`, using the same seed (hence the same `W^eta` increments) for
/// every control pair.
pub fn certify_saddle_mc(
    fields: &ControlFields<'_>,
    perturbations: &Perturbations,
    cfg: &McConfig,
) -> Result<SaddleCertificate> {
    let samples = |pi: PiControl, eta: EtaControl| -> Result<Vec<f64>> {
        let (draws, _) = simulate_outcomes(fields, pi, eta, Measure::Q, cfg)?;
        Ok(draws
            .iter()
            .map(|d| pairwise_sum(&d.iter().map(|o| -o.x - o.y).collect::<Vec<_>>()) / d.len() as f64)
            .collect())
    };
    let star = samples(PiControl::Saddle, EtaControl::Saddle)?;
    let j_star = Estimate::from_samples(&star);
    let a = fields.anchor;
    let value = -a.x0 + fields.g_anchor() * a.y0;
    let slack = roundoff(j_star.mean);
    let value_matches = (j_star.mean - value).abs() <= SE_MULTIPLE * j_star.std_error + slack;

    let compare = |s: Vec<f64>, label: String, sign: f64| -> PerturbationOutcome {
        let diff: Vec<f64> = s.iter().zip(&star).map(|(a, b)| a - b).collect();
        let diff = Estimate::from_samples(&diff);
        PerturbationOutcome {
            label,
            j: Estimate::from_samples(&s),
            holds: sign * diff.mean <= SE_MULTIPLE * diff.std_error + slack,
            diff,
        }
    };
    let mut eta_side = Vec::with_capacity(perturbations.eta.len());
    for eta in &perturbations.eta {
        eta_side.push(compare(samples(PiControl::Saddle, *eta)?, eta.label(), 1.0));
    }
    let mut pi_side = Vec::with_capacity(perturbations.pi.len());
    for pi in &perturbations.pi {
        pi_side.push(compare(samples(*pi, EtaControl::Saddle)?, pi.label(), -1.0));
    }
    Ok(SaddleCertificate {
        j_star,
        value,
        value_matches,
        eta_side,
        pi_side,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{FactorMarketModel, ModelFamily};
    use crate::pde::{solve, GridSpec, PdeSolution};
    use crate::strategy::Anchor;

    fn bs(lambda: f64) -> (FactorMarketModel, PdeSolution) {
        let m = FactorMarketModel::new(ModelFamily::black_scholes(0.02, lambda, 0.2), 0.02, 0.0, 1.0)
            .unwrap();
        let sol = solve(&m, &GridSpec::new(-1.0, 1.0, 11, 201).unwrap()).unwrap();
        (m, sol)
    }

    fn anchor() -> Anchor {
        Anchor::new(1.0, 0.5, 0.0, 0.0).unwrap()
    }

    #[test]
    fn zero_market_price_freezes_state() {
        let (m, sol) = bs(0.0);
        let f = ControlFields::new(&sol, &m, anchor()).unwrap();
        let cfg = McConfig::new(6, 20, 1).unwrap();
        let b = simulate_system(&f, PiControl::Saddle, EtaControl::Saddle, Measure::P, &cfg).unwrap();
        assert_eq!(b.n_paths(), 6);
        assert!(b.x.iter().flatten().all(|v| *v == 1.0));
        assert!(b.y.iter().flatten().all(|v| *v == 0.5));
        assert_eq!(b.times.len(), 21);
        assert_eq!(check_reduction_identity(&b, &f).unwrap().max_abs_error, 0.0);
        assert_eq!(estimate_penalty(&b).unwrap().mean, 0.0);
        let j = estimate_objective_under_q(&f, PiControl::Saddle, EtaControl::Saddle, &cfg).unwrap();
        assert_eq!((j.j.mean, j.j.std_error), (-1.5, 0.0));
    }

    #[test]
    fn bundles_are_reproducible() {
        let (m, sol) = bs(0.4);
        let f = ControlFields::new(&sol, &m, anchor()).unwrap();
        let cfg = McConfig::new(10, 16, 9).unwrap();
        let a = simulate_system(&f, PiControl::Saddle, EtaControl::Saddle, Measure::Q, &cfg).unwrap();
        let b = simulate_system(&f, PiControl::Saddle, EtaControl::Saddle, Measure::Q, &cfg.with_parallel(false))
            .unwrap();
        assert_eq!(a.x, b.x);
        assert_eq!(a.y, b.y);
        assert_eq!(a.dw1, b.dw1);
        // antithetic partner carries the mirrored noise
        assert_eq!(a.dw1[0][3], -a.dw1[1][3]);
    }

    #[test]
    fn density_is_a_martingale_and_penalty_is_lognormal() {
        let (m, sol) = bs(0.4);
        let f = ControlFields::new(&sol, &m, anchor()).unwrap();
        let cfg = McConfig::new(20_000, 16, 5).unwrap();
        let b = simulate_system(&f, PiControl::Saddle, EtaControl::Saddle, Measure::P, &cfg).unwrap();
        let d = density_mean(&b).unwrap();
        assert!(d.z_score(1.0).abs() < 3.0, "{d:?}");
        let c = estimate_penalty(&b).unwrap();
        assert!(c.z_score(0.16f64.exp() - 1.0).abs() < 3.0, "{c:?}");
    }

    #[test]
    fn objective_matches_value_and_measures_agree() {
        let (m, sol) = bs(0.4);
        let f = ControlFields::new(&sol, &m, anchor()).unwrap();
        let cfg = McConfig::new(20_000, 32, 7).unwrap();
        let q = estimate_objective_under_q(&f, PiControl::Saddle, EtaControl::Saddle, &cfg).unwrap();
        let value = -1.0 - 0.5 * 0.16f64.exp();
        assert!(q.j.z_score(value).abs() < 3.0, "{:?}", q.j);
        let p = estimate_objective_under_p(&f, PiControl::Saddle, EtaControl::Saddle, &cfg).unwrap();
        let se = (q.j.std_error.powi(2) + p.j.std_error.powi(2)).sqrt();
        assert!((q.j.mean - p.j.mean).abs() < 3.0 * se);
        assert!(p.density_mean.unwrap().z_score(1.0).abs() < 3.0);
    }

    #[test]
    fn shifting_terminal_wealth_shifts_objective() {
        let (m, sol) = bs(0.4);
        let f = ControlFields::new(&sol, &m, anchor()).unwrap();
        let cfg = McConfig::new(200, 16, 3).unwrap();
        for measure in [Measure::P, Measure::Q] {
            let b = simulate_system(&f, PiControl::Saddle, EtaControl::Saddle, measure, &cfg).unwrap();
            let base = objective_from_bundle(&b, 0.0);
            let moved = objective_from_bundle(&b, 0.75);
            let j = |e: &ObjectiveEstimate| e.self_normalized.unwrap_or(e.j).mean;
            assert!((j(&moved) - j(&base) + 0.75).abs() < 1e-12);
        }
    }

    #[test]
    fn reduction_identity_small_and_streaming_agrees() {
        let (m, sol) = bs(0.4);
        let f = ControlFields::new(&sol, &m, anchor()).unwrap();
        let cfg = McConfig::new(50, 256, 2).unwrap();
        let b = simulate_system(&f, PiControl::Saddle, EtaControl::Saddle, Measure::P, &cfg).unwrap();
        let stored = check_reduction_identity(&b, &f).unwrap();
        let streamed = reduction_identity_mc(&f, &cfg).unwrap();
        assert_eq!(stored, streamed);
        assert_eq!(stored.profile[0].1, 0.0);
        assert!(stored.max_abs_error < 2e-2, "{}", stored.max_abs_error);
    }

    #[test]
    fn saddle_certificate_black_scholes() {
        let (m, sol) = bs(0.4);
        let f = ControlFields::new(&sol, &m, anchor()).unwrap();
        let cfg = McConfig::new(4000, 32, 17).unwrap();
        let cert = certify_saddle_mc(&f, &Perturbations::default(), &cfg).unwrap();
        assert!(cert.passed(), "{cert:#?}");
        assert_eq!(cert.eta_side.len(), 8);
        assert_eq!(cert.pi_side.len(), 6);
    }

    #[test]
    fn saddle_certificate_trivial_market() {
        let (m, sol) = bs(0.0);
        let f = ControlFields::new(&sol, &m, anchor()).unwrap();
        let cfg = McConfig::new(200, 16, 17).unwrap();
        let cert = certify_saddle_mc(&f, &Perturbations::default(), &cfg).unwrap();
        assert!(cert.passed(), "{cert:#?}");
        assert_eq!(cert.j_star.mean, -1.5);
    }

    #[test]
    fn excursions_beyond_budget_are_rejected() {
        // a narrow grid around a volatile factor
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
        let sol = solve(&m, &GridSpec::new(-0.05, 0.05, 11, 21).unwrap()).unwrap();
        let f = ControlFields::new(&sol, &m, anchor()).unwrap();
        let cfg = McConfig::new(100, 20, 1).unwrap();
        let err = simulate_system(&f, PiControl::Saddle, EtaControl::Saddle, Measure::P, &cfg).unwrap_err();
        assert!(matches!(err, Error::ExcessiveExcursion { .. }));
    }

    #[test]
    fn penalty_requires_reference_measure() {
        let (m, sol) = bs(0.4);
        let f = ControlFields::new(&sol, &m, anchor()).unwrap();
        let cfg = McConfig::new(4, 4, 1).unwrap();
        let b = simulate_system(&f, PiControl::Saddle, EtaControl::Saddle, Measure::Q, &cfg).unwrap();
        assert!(estimate_penalty(&b).is_err());
    }
}
