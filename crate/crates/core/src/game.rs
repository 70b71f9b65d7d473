//! Controlled generator `L^{pi,eta}` applied to `V = -x + G(z, t) y` and the
//! grid certificates for the saddle-point conditions.
//!
//! For this ansatz `V_x = -1`, `V_y = G`, `V_z = y G_z`, `V_zz = y G_zz`,
//! `V_yz = G_z` and all other second derivatives vanish, so
//!
//! ```text
//! L V = y G_t - pi (mu - r + sigma eta1) + |eta|^2 y G
//!       + (a + b rho eta1 + b rho_bar eta2) y G_z + 1/2 b^2 y G_zz
//!       + b (rho eta1 + rho_bar eta2) y G_z.
//! ```
//!
//! `G_t` and `G_zz` are finite differences of the stored surface, never the
//! equation itself, so a zero generator at the saddle is a genuine check.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::mc::map_indexed;
use crate::model::FactorMarketModel;
use crate::pde::{PdeSolution, Surface};
use crate::strategy::ControlFields;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneratorInput {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub t: f64,
    pub pi: f64,
    pub eta1: f64,
    pub eta2: f64,
}

/// Derivative surfaces needed by the generator.
#[derive(Debug, Clone)]
pub struct Generator<'a> {
    pub sol: &'a PdeSolution,
    pub model: &'a FactorMarketModel,
    g_t: Surface,
    g_zz: Surface,
}

/// Generator frozen at one state; cheap to evaluate for many controls.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateGenerator {
    pub y: f64,
    pub g: f64,
    pub g_z: f64,
    pub g_t: f64,
    pub g_zz: f64,
    pub excess_drift: f64,
    pub sigma: f64,
    pub a: f64,
    pub b: f64,
    pub rho: f64,
    pub rho_bar: f64,
}

impl StateGenerator {
    pub fn value(&self, pi: f64, eta1: f64, eta2: f64) -> f64 {
        let y = self.y;
        let mix = self.rho * eta1 + self.rho_bar * eta2;
        y * self.g_t - pi * (self.excess_drift + self.sigma * eta1)
            + (eta1 * eta1 + eta2 * eta2) * y * self.g
            + (self.a + self.b * mix) * y * self.g_z
            + 0.5 * self.b * self.b * y * self.g_zz
            + self.b * mix * y * self.g_z
    }

    /// `d/dpi L^{pi,eta} V`; the generator is affine in `pi`.
    pub fn pi_slope(&self, eta1: f64) -> f64 {
        -(self.excess_drift + self.sigma * eta1)
    }
}

fn time_derivative_backward(g: &Surface, dt: f64) -> Surface {
    let mut out = Surface::filled(g.n_z(), g.n_t(), 0.0);
    for n in 0..g.n_t() {
        let (hi, lo) = if n == 0 { (1, 0) } else { (n, n - 1) };
        for i in 0..g.n_z() {
            out.set(i, n, (g.at(i, hi) - g.at(i, lo)) / dt);
        }
    }
    out
}

impl<'a> Generator<'a> {
    pub fn new(sol: &'a PdeSolution, model: &'a FactorMarketModel) -> Self {
        let g_t = time_derivative_backward(&sol.g, sol.grid.dt(sol.horizon));
        let g_zz = sol.g_z.z_derivative(sol.grid.dz());
        Generator {
            sol,
            model,
            g_t,
            g_zz,
        }
    }

    pub fn at_state(&self, y: f64, z: f64, t: f64) -> Result<StateGenerator> {
        if !(y > 0.0) {
            return Err(Error::param("y", "must be positive"));
        }
        let (g, g_z) = self.sol.eval_g(z, t)?;
        let m = self.model;
        Ok(StateGenerator {
            y,
            g,
            g_z,
            g_t: self.sol.eval_surface(&self.g_t, z, t)?,
            g_zz: self.sol.eval_surface(&self.g_zz, z, t)?,
            excess_drift: m.mu(z) - m.r,
            sigma: m.sigma(z),
            a: m.a(z),
            b: m.b(z),
            rho: m.rho,
            rho_bar: m.rho_bar(),
        })
    }

    pub fn apply(&self, input: &GeneratorInput) -> Result<f64> {
        Ok(self
            .at_state(input.y, input.z, input.t)?
            .value(input.pi, input.eta1, input.eta2))
    }
}

/// One-shot generator evaluation. Builds the derivative surfaces on every
/// call; use [`Generator`] for repeated evaluation.
pub fn generator_apply(
    sol: &PdeSolution,
    model: &FactorMarketModel,
    input: &GeneratorInput,
) -> Result<f64> {
    Generator::new(sol, model).apply(input)
}

/// States `(y, z, t)` at which the certificates are evaluated.
#[derive(Debug, Clone, PartialEq)]
pub struct StateGrid {
    pub zs: Vec<f64>,
    pub ts: Vec<f64>,
    pub ys: Vec<f64>,
}

impl StateGrid {
    /// `n_z` by `n_t` grid nodes at least `margin` z-steps from the
    /// boundary and strictly before `T`, for each `y` in `ys`.
    pub fn interior(sol: &PdeSolution, n_z: usize, n_t: usize, margin: usize, ys: &[f64]) -> Self {
        let g = &sol.grid;
        let pick = |count: usize, lo: usize, hi: usize| -> Vec<usize> {
            if count <= 1 || hi <= lo {
                return alloc::vec![(lo + hi) / 2];
            }
            let mut v: Vec<usize> = (0..count)
                .map(|k| lo + ((hi - lo) * k + (count - 1) / 2) / (count - 1))
                .collect();
            v.dedup();
            v
        };
        let zi = pick(n_z, margin, g.n_z - 1 - margin);
        let ti = pick(n_t, 0, g.n_t - 2);
        StateGrid {
            zs: zi.into_iter().map(|i| g.z(i)).collect(),
            ts: ti.into_iter().map(|n| g.t(n, sol.horizon)).collect(),
            ys: ys.to_vec(),
        }
    }

    fn states(&self) -> Vec<(f64, f64, f64)> {
        let mut out = Vec::with_capacity(self.zs.len() * self.ts.len() * self.ys.len());
        for &t in &self.ts {
            for &z in &self.zs {
                for &y in &self.ys {
                    out.push((y, z, t));
                }
            }
        }
        out
    }
}

/// Scanned control ranges. The `pi` range at a state is
/// `+- pi_multiple * y |G| lambda_max / sigma_min`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlBox {
    pub eta_lo: f64,
    pub eta_hi: f64,
    pub pi_multiple: f64,
}

impl Default for ControlBox {
    fn default() -> Self {
        ControlBox {
            eta_lo: -3.0,
            eta_hi: 3.0,
            pi_multiple: 10.0,
        }
    }
}

/// `max(1e-3, 10 * residual max-norm)`.
pub fn default_epsilon(residual_max_norm: f64) -> f64 {
    (10.0 * residual_max_norm).max(1e-3)
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|k| {
            if k + 1 == n {
                hi
            } else {
                lo + (hi - lo) * k as f64 / (n - 1) as f64
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeMargins {
    pub y: f64,
    pub z: f64,
    pub t: f64,
    /// Max over scanned `eta` of `L^{pi*,eta} V`; must be `<= eps`.
    pub margin_i: f64,
    /// Min over scanned `pi` of `L^{pi,eta*} V`; must be `>= -eps`.
    pub margin_ii: f64,
    /// `L^{pi*,eta*} V`; must satisfy `|.| <= eps`.
    pub residual_iii: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerificationReport {
    pub epsilon: f64,
    pub nodes: Vec<NodeMargins>,
    pub worst_i: f64,
    pub worst_ii: f64,
    pub worst_iii: f64,
    /// `max_z |G(z, T) + 1|`, i.e. the terminal condition `V = -x - y`.
    pub terminal_error: f64,
    /// Indices into `nodes` that fail any check.
    pub offending: Vec<usize>,
}

impl VerificationReport {
    pub fn passed(&self) -> bool {
        self.offending.is_empty() && self.terminal_error == 0.0
    }
}

struct Scan {
    pi_range: f64,
    etas: Vec<f64>,
    n: usize,
}

fn scan_setup(
    fields: &ControlFields<'_>,
    control_box: &ControlBox,
    n_scan: usize,
) -> Result<Scan> {
    if n_scan < 10 {
        return Err(Error::param("n_scan", "must be at least 10 per axis"));
    }
    if !(control_box.eta_lo < control_box.eta_hi) || !(control_box.pi_multiple > 0.0) {
        return Err(Error::param("control_box", "requires eta_lo < eta_hi and pi_multiple > 0"));
    }
    let th = fields.model.declared_thresholds();
    let ratio = th.lambda_max / th.sigma_min;
    Ok(Scan {
        pi_range: control_box.pi_multiple * if ratio > 0.0 && ratio.is_finite() { ratio } else { 1.0 },
        etas: linspace(control_box.eta_lo, control_box.eta_hi, n_scan),
        n: n_scan,
    })
}

/// Certifies, state by state, that `pi*` makes every scanned distortion
/// unprofitable, that `eta*` makes every scanned portfolio no better, that
/// the generator vanishes at the saddle, and that `V(., T) = -x - y`.
pub fn verify_saddle_conditions(
    fields: &ControlFields<'_>,
    states: &StateGrid,
    control_box: &ControlBox,
    n_scan: usize,
    epsilon: f64,
) -> Result<VerificationReport> {
    let scan = scan_setup(fields, control_box, n_scan)?;
    let generator = Generator::new(fields.sol, fields.model);
    let list = states.states();
    let nodes: Vec<Result<NodeMargins>> = map_indexed(list.len(), true, |k| {
        let (y, z, t) = list[k];
        let node = generator.at_state(y, z, t)?;
        let p = fields.point(z, t)?;
        let pi_star = 2.0 * y * p.g * p.zeta;
        let (e1, e2) = fields.eta_at(&p);
        let mut margin_i = f64::NEG_INFINITY;
        for &a in &scan.etas {
            for &b in &scan.etas {
                margin_i = margin_i.max(node.value(pi_star, a, b));
            }
        }
        let half = scan.pi_range * y * p.g.abs();
        let mut margin_ii = f64::INFINITY;
        for pi in linspace(-half, half, scan.n) {
            margin_ii = margin_ii.min(node.value(pi, e1, e2));
        }
        Ok(NodeMargins {
            y,
            z,
            t,
            margin_i,
            margin_ii,
            residual_iii: node.value(pi_star, e1, e2),
        })
    });
    let nodes: Vec<NodeMargins> = nodes.into_iter().collect::<Result<_>>()?;

    let last = fields.sol.grid.n_t - 1;
    let terminal_error = fields
        .sol
        .g
        .level(last)
        .iter()
        .fold(0.0f64, |m, v| m.max((v + 1.0).abs()));
    let mut offending = Vec::new();
    let (mut worst_i, mut worst_ii, mut worst_iii) = (f64::NEG_INFINITY, f64::INFINITY, 0.0f64);
    for (k, n) in nodes.iter().enumerate() {
        worst_i = worst_i.max(n.margin_i);
        worst_ii = worst_ii.min(n.margin_ii);
        worst_iii = worst_iii.max(n.residual_iii.abs());
        if !(n.margin_i <= epsilon && n.margin_ii >= -epsilon && n.residual_iii.abs() <= epsilon) {
            offending.push(k);
        }
    }
    Ok(VerificationReport {
        epsilon,
        nodes,
        worst_i,
        worst_ii,
        worst_iii,
        terminal_error,
        offending,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MinMaxNode {
    pub y: f64,
    pub z: f64,
    pub t: f64,
    /// Upper value `min_pi max_eta L`.
    pub min_max: f64,
    /// Lower value `max_eta min_pi L`.
    pub max_min: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MinMaxReport {
    pub epsilon: f64,
    pub nodes: Vec<MinMaxNode>,
    pub worst_abs: f64,
    pub worst_gap: f64,
    pub offending: Vec<usize>,
}

impl MinMaxReport {
    pub fn passed(&self) -> bool {
        self.offending.is_empty()
    }
}

/// Upper and lower values of the game at each state, over the scan grids
/// augmented with the closed-form optimizers (`pi*`, the best response
/// `eta*(pi)` for each scanned `pi`, and `eta*`). Both must vanish and agree.
pub fn verify_lower_equals_upper(
    fields: &ControlFields<'_>,
    states: &StateGrid,
    control_box: &ControlBox,
    n_scan: usize,
    epsilon: f64,
) -> Result<MinMaxReport> {
    let scan = scan_setup(fields, control_box, n_scan)?;
    let generator = Generator::new(fields.sol, fields.model);
    let list = states.states();
    let nodes: Vec<Result<MinMaxNode>> = map_indexed(list.len(), true, |k| {
        let (y, z, t) = list[k];
        let node = generator.at_state(y, z, t)?;
        let p = fields.point(z, t)?;
        let pi_star = 2.0 * y * p.g * p.zeta;
        let half = scan.pi_range * y * p.g.abs();
        let mut pis = linspace(-half, half, scan.n);
        pis.push(pi_star);

        let mut min_max = f64::INFINITY;
        for &pi in &pis {
            let (b1, b2) = fields.best_response_at(&p, y, pi);
            let mut best = node.value(pi, b1, b2);
            for &a in &scan.etas {
                for &b in &scan.etas {
                    best = best.max(node.value(pi, a, b));
                }
            }
            min_max = min_max.min(best);
        }

        let mut etas: Vec<(f64, f64)> = Vec::with_capacity(scan.n * scan.n + 1);
        for &a in &scan.etas {
            for &b in &scan.etas {
                etas.push((a, b));
            }
        }
        etas.push(fields.eta_at(&p));
        let mut max_min = f64::NEG_INFINITY;
        for &(a, b) in &etas {
            let worst = pis
                .iter()
                .fold(f64::INFINITY, |m, &pi| m.min(node.value(pi, a, b)));
            max_min = max_min.max(worst);
        }
        Ok(MinMaxNode {
            y,
            z,
            t,
            min_max,
            max_min,
        })
    });
    let nodes: Vec<MinMaxNode> = nodes.into_iter().collect::<Result<_>>()?;
    let mut offending = Vec::new();
    let (mut worst_abs, mut worst_gap) = (0.0f64, 0.0f64);
    for (k, n) in nodes.iter().enumerate() {
        let abs = n.min_max.abs().max(n.max_min.abs());
        let gap = (n.min_max - n.max_min).abs();
        worst_abs = worst_abs.max(abs);
        worst_gap = worst_gap.max(gap);
        if !(abs <= epsilon && gap <= 2.0 * epsilon) {
            offending.push(k);
        }
    }
    Ok(MinMaxReport {
        epsilon,
        nodes,
        worst_abs,
        worst_gap,
        offending,
    })
}
