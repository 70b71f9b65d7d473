//! Value-surface solver.
//!
//! `G(z, t)` solves
//!
//! ```text
//! G_t + (a - 2 rho b lambda) G_z + 1/2 b^2 G_zz - rho_bar^2 b^2 G_z^2 / G + lambda^2 G = 0,
//! G(z, T) = -1,
//! ```
//!
//! which linearizes in two ways:
//!
//! - `2 rho^2 != 1`: `G = -F1^alpha` with `alpha = 1 / (2 rho^2 - 1)` and
//!   `F1_t + (a - 2 rho b lambda) F1_z + 1/2 b^2 F1_zz + (2 rho^2 - 1) lambda^2 F1 = 0`,
//!   `F1(z, T) = 1`.
//! - `2 rho^2 = 1`: `G = -exp(F2)` with
//!   `F2_t + (a - 2 rho b lambda) F2_z + 1/2 b^2 F2_zz + lambda^2 = 0`,
//!   `F2(z, T) = 0`.
//!
//! Both linear problems are stepped backward with Crank–Nicolson on a
//! truncated, uniform `(z, t)` grid.

mod scheme;
mod tridiag;

use alloc::vec::Vec;

pub(crate) use scheme::{SpatialOperator, ThetaStepper};

use crate::error::{Error, Result};
use crate::math::{exp, ln, max_abs};
use crate::model::FactorMarketModel;

/// `|2 rho^2 - 1|` at or below this value selects the exponential transform.
pub const CASE_SWITCH_TOL: f64 = 1e-6;

/// Crank–Nicolson.
pub const THETA_SCHEME: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub z_lo: f64,
    pub z_hi: f64,
    pub n_z: usize,
    pub n_t: usize,
}

impl GridSpec {
    pub fn new(z_lo: f64, z_hi: f64, n_z: usize, n_t: usize) -> Result<Self> {
        if !(z_lo.is_finite() && z_hi.is_finite() && z_lo < z_hi) {
            return Err(Error::param("grid", "requires finite z_lo < z_hi"));
        }
        if n_z < 3 {
            return Err(Error::param("n_z", "must be at least 3"));
        }
        if n_t < 2 {
            return Err(Error::param("n_t", "must be at least 2"));
        }
        Ok(GridSpec {
            z_lo,
            z_hi,
            n_z,
            n_t,
        })
    }

    pub fn dz(&self) -> f64 {
        (self.z_hi - self.z_lo) / (self.n_z - 1) as f64
    }

    pub fn z(&self, i: usize) -> f64 {
        if i + 1 == self.n_z {
            self.z_hi
        } else {
            self.z_lo + self.dz() * i as f64
        }
    }

    pub fn dt(&self, horizon: f64) -> f64 {
        horizon / (self.n_t - 1) as f64
    }

    pub fn t(&self, n: usize, horizon: f64) -> f64 {
        if n + 1 == self.n_t {
            horizon
        } else {
            self.dt(horizon) * n as f64
        }
    }

    /// Same domain with both spacings halved.
    pub fn refined(&self) -> Self {
        GridSpec {
            n_z: 2 * self.n_z - 1,
            n_t: 2 * self.n_t - 1,
            ..*self
        }
    }
}

/// Real field over `(z-node, t-level)`, stored level by level.
#[derive(Debug, Clone, PartialEq)]
pub struct Surface {
    n_z: usize,
    n_t: usize,
    data: Vec<f64>,
}

impl Surface {
    pub fn filled(n_z: usize, n_t: usize, value: f64) -> Self {
        Surface {
            n_z,
            n_t,
            data: alloc::vec![value; n_z * n_t],
        }
    }

    pub fn n_z(&self) -> usize {
        self.n_z
    }

    pub fn n_t(&self) -> usize {
        self.n_t
    }

    #[inline]
    pub fn at(&self, i: usize, n: usize) -> f64 {
        self.data[n * self.n_z + i]
    }

    #[inline]
    pub fn set(&mut self, i: usize, n: usize, v: f64) {
        self.data[n * self.n_z + i] = v;
    }

    pub fn level(&self, n: usize) -> &[f64] {
        &self.data[n * self.n_z..(n + 1) * self.n_z]
    }

    pub fn level_mut(&mut self, n: usize) -> &mut [f64] {
        &mut self.data[n * self.n_z..(n + 1) * self.n_z]
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    pub fn max_abs(&self) -> f64 {
        max_abs(self.data.iter().copied())
    }

    fn map(&self, f: impl Fn(f64) -> f64) -> Surface {
        Surface {
            n_z: self.n_z,
            n_t: self.n_t,
            data: self.data.iter().map(|v| f(*v)).collect(),
        }
    }

    /// Centered z-difference, second-order one-sided at the two ends.
    pub fn z_derivative(&self, dz: f64) -> Surface {
        let mut out = Surface::filled(self.n_z, self.n_t, 0.0);
        for lvl in 0..self.n_t {
            out.level_mut(lvl)
                .copy_from_slice(&level_z_derivative(self.level(lvl), dz));
        }
        out
    }

    /// Cubic Lagrange interpolation in `z` (four nearest nodes, linear on
    /// grids with fewer than four), linear in `t`. Constants are reproduced
    /// exactly. Caller guarantees the point is inside the grid.
    pub(crate) fn interpolate(&self, grid: &GridSpec, horizon: f64, z: f64, t: f64) -> f64 {
        let (i, wz) = locate(z, grid.z_lo, grid.dz(), grid.n_z);
        let (n, wt) = locate(t, 0.0, grid.dt(horizon), grid.n_t);
        let along_z = |lvl: usize| -> f64 {
            let u = self.level(lvl);
            if self.n_z < 4 {
                return u[i] + wz * (u[i + 1] - u[i]);
            }
            // stencil start and the offset of z from its first node
            let start = i.saturating_sub(1).min(self.n_z - 4);
            let s = wz + (i - start) as f64;
            let w = [
                -(s - 1.0) * (s - 2.0) * (s - 3.0) / 6.0,
                s * (s - 2.0) * (s - 3.0) / 2.0,
                -s * (s - 1.0) * (s - 3.0) / 2.0,
                s * (s - 1.0) * (s - 2.0) / 6.0,
            ];
            let base = i - start;
            let anchor = u[start + base];
            let mut v = anchor;
            for (k, wk) in w.iter().enumerate() {
                if k != base {
                    v += wk * (u[start + k] - anchor);
                }
            }
            v
        };
        let lo = along_z(n);
        if wt == 0.0 {
            return lo;
        }
        lo + wt * (along_z(n + 1) - lo)
    }
}

/// Centered difference of one level, second-order one-sided at the ends.
pub(crate) fn level_z_derivative(u: &[f64], dz: f64) -> Vec<f64> {
    let n = u.len();
    if n == 2 {
        let s = (u[1] - u[0]) / dz;
        return alloc::vec![s, s];
    }
    let mut d = alloc::vec![0.0; n];
    d[0] = (-3.0 * u[0] + 4.0 * u[1] - u[2]) / (2.0 * dz);
    for i in 1..n - 1 {
        d[i] = (u[i + 1] - u[i - 1]) / (2.0 * dz);
    }
    d[n - 1] = (3.0 * u[n - 1] - 4.0 * u[n - 2] + u[n - 3]) / (2.0 * dz);
    d
}

/// Cell index and weight of `x` on a uniform grid with `n` nodes. Exact
/// node hits get weight 0 (or 1 on the last node).
fn locate(x: f64, lo: f64, h: f64, n: usize) -> (usize, f64) {
    let s = (x - lo) / h;
    let mut i = libm::floor(s) as isize;
    if i < 0 {
        i = 0;
    }
    if i as usize >= n - 1 {
        i = n as isize - 2;
    }
    let i = i as usize;
    let w = (s - i as f64).clamp(0.0, 1.0);
    (i, w)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CaseTag {
    /// `G = -F1^alpha`, `alpha = 1 / (2 rho^2 - 1)`.
    CaseI { alpha: f64 },
    /// `G = -exp(F2)`.
    CaseII,
}

impl CaseTag {
    pub fn for_model(model: &FactorMarketModel) -> Self {
        let gap = model.case_gap();
        if gap.abs() <= CASE_SWITCH_TOL {
            CaseTag::CaseII
        } else {
            CaseTag::CaseI { alpha: 1.0 / gap }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PdeSolution {
    pub grid: GridSpec,
    pub horizon: f64,
    pub g: Surface,
    pub g_z: Surface,
    /// The linear unknown (`F1` or `F2`).
    pub f: Surface,
    pub case_tag: CaseTag,
}

pub(crate) fn linear_operator(model: &FactorMarketModel, grid: &GridSpec, potential: f64) -> SpatialOperator {
    SpatialOperator::build(
        grid,
        |z| model.shifted_drift(z),
        |z| {
            let b = model.b(z);
            0.5 * b * b
        },
        |z| {
            let l = model.lambda(z);
            potential * l * l
        },
    )
}

fn march(
    grid: &GridSpec,
    horizon: f64,
    op: SpatialOperator,
    terminal: f64,
    source: Option<&[f64]>,
) -> Result<Surface> {
    let stepper = ThetaStepper::new(op, grid.dt(horizon), THETA_SCHEME);
    let mut f = Surface::filled(grid.n_z, grid.n_t, terminal);
    for n in (0..grid.n_t - 1).rev() {
        let u = stepper.step(f.level(n + 1), source, source)?;
        f.level_mut(n).copy_from_slice(&u);
    }
    Ok(f)
}

/// Solves the linear equation of the `2 rho^2 != 1` case for `F1`.
pub fn solve_case1(model: &FactorMarketModel, grid: &GridSpec) -> Result<Surface> {
    let gap = model.case_gap();
    if gap.abs() <= CASE_SWITCH_TOL {
        return Err(Error::CaseMismatch { gap: gap.abs() });
    }
    let f = march(
        grid,
        model.horizon,
        linear_operator(model, grid, gap),
        1.0,
        None,
    )?;
    check_positive(&f, grid, model.horizon)?;
    Ok(f)
}

/// Solves the linear equation of the `2 rho^2 = 1` case for `F2`. The drift
/// keeps the signed `2 rho b lambda`, so `rho = -1/sqrt(2)` is covered.
pub fn solve_case2(model: &FactorMarketModel, grid: &GridSpec) -> Result<Surface> {
    let gap = model.case_gap();
    if gap.abs() > CASE_SWITCH_TOL {
        return Err(Error::CaseMismatch { gap: gap.abs() });
    }
    let source: Vec<f64> = (0..grid.n_z)
        .map(|i| {
            let l = model.lambda(grid.z(i));
            l * l
        })
        .collect();
    march(
        grid,
        model.horizon,
        linear_operator(model, grid, 0.0),
        0.0,
        Some(&source),
    )
}

/// Case I solve forced regardless of the switch tolerance; used to study
/// continuity as `rho^2 -> 1/2`.
pub fn solve_case1_unchecked(model: &FactorMarketModel, grid: &GridSpec) -> Result<Surface> {
    let gap = model.case_gap();
    let f = march(
        grid,
        model.horizon,
        linear_operator(model, grid, gap),
        1.0,
        None,
    )?;
    check_positive(&f, grid, model.horizon)?;
    Ok(f)
}

fn check_positive(f: &Surface, grid: &GridSpec, horizon: f64) -> Result<()> {
    for n in 0..grid.n_t {
        for (i, v) in f.level(n).iter().enumerate() {
            if !(*v > 0.0) {
                return Err(Error::NonPositiveF {
                    z: grid.z(i),
                    t: grid.t(n, horizon),
                    value: *v,
                });
            }
        }
    }
    Ok(())
}

/// Builds `G` and `G_z` from the linear unknown.
pub fn assemble_g(
    f: Surface,
    case_tag: CaseTag,
    model: &FactorMarketModel,
    grid: &GridSpec,
) -> Result<PdeSolution> {
    if f.n_z() != grid.n_z || f.n_t() != grid.n_t {
        return Err(Error::param("F", "shape does not match the grid"));
    }
    let g = match case_tag {
        CaseTag::CaseI { alpha } => {
            check_positive(&f, grid, model.horizon)?;
            f.map(|v| -exp(alpha * ln(v)))
        }
        CaseTag::CaseII => f.map(|v| -exp(v)),
    };
    let last = grid.n_t - 1;
    assert!(
        g.level(last).iter().all(|v| *v == -1.0),
        "terminal level of G must be exactly -1"
    );
    let g_z = g.z_derivative(grid.dz());
    Ok(PdeSolution {
        grid: *grid,
        horizon: model.horizon,
        g,
        g_z,
        f,
        case_tag,
    })
}

/// Interior nodes where drift dominates diffusion and the scheme falls back
/// to one-sided drift differences. Nonzero counts mean first-order accuracy
/// there.
pub fn upwinded_nodes(model: &FactorMarketModel, grid: &GridSpec) -> usize {
    linear_operator(model, grid, 0.0).upwinded_nodes
}

/// Full solve, dispatching on `|2 rho^2 - 1|` against [`CASE_SWITCH_TOL`].
pub fn solve(model: &FactorMarketModel, grid: &GridSpec) -> Result<PdeSolution> {
    let tag = CaseTag::for_model(model);
    let f = match tag {
        CaseTag::CaseI { .. } => solve_case1(model, grid)?,
        CaseTag::CaseII => solve_case2(model, grid)?,
    };
    assemble_g(f, tag, model, grid)
}

/// Residual of the nonlinear equation evaluated on the assembled surface.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualField {
    /// Zero on boundary nodes and on the first and last time level.
    pub field: Surface,
    pub max_norm: f64,
    /// `(z, t)` of the largest residual.
    pub argmax: (f64, f64),
}

/// Evaluates
/// `G_t + (a - 2 rho b lambda) G_z + 1/2 b^2 G_zz - rho_bar^2 b^2 G_z^2 / G + lambda^2 G`
/// with centered differences in both `z` and `t` at interior nodes.
pub fn residual_resulting_equation(sol: &PdeSolution, model: &FactorMarketModel) -> ResidualField {
    let grid = &sol.grid;
    let dz = grid.dz();
    let dt = grid.dt(sol.horizon);
    let rb2 = 1.0 - model.rho * model.rho;
    let mut field = Surface::filled(grid.n_z, grid.n_t, 0.0);
    let mut max_norm = 0.0;
    let mut argmax = (f64::NAN, f64::NAN);
    let coeffs: Vec<(f64, f64, f64)> = (0..grid.n_z)
        .map(|i| {
            let z = grid.z(i);
            let b = model.b(z);
            let l = model.lambda(z);
            (model.shifted_drift(z), b * b, l * l)
        })
        .collect();
    let g = &sol.g;
    for n in 1..grid.n_t.saturating_sub(1) {
        for (i, &(c, b2, l2)) in coeffs.iter().enumerate().take(grid.n_z - 1).skip(1) {
            let gc = g.at(i, n);
            let g_t = (g.at(i, n + 1) - g.at(i, n - 1)) / (2.0 * dt);
            let g_z = (g.at(i + 1, n) - g.at(i - 1, n)) / (2.0 * dz);
            let g_zz = (g.at(i + 1, n) - 2.0 * gc + g.at(i - 1, n)) / (dz * dz);
            let r = g_t + c * g_z + 0.5 * b2 * g_zz - rb2 * b2 * g_z * g_z / gc + l2 * gc;
            field.set(i, n, r);
            if r.abs() > max_norm {
                max_norm = r.abs();
                argmax = (grid.z(i), grid.t(n, sol.horizon));
            }
        }
    }
    ResidualField {
        field,
        max_norm,
        argmax,
    }
}

impl PdeSolution {
    fn check_domain(&self, z: f64, t: f64) -> Result<()> {
        let tol_z = 1e-12 * (1.0 + self.grid.z_hi.abs().max(self.grid.z_lo.abs()));
        let tol_t = 1e-12 * (1.0 + self.horizon);
        let inside = z >= self.grid.z_lo - tol_z
            && z <= self.grid.z_hi + tol_z
            && t >= -tol_t
            && t <= self.horizon + tol_t;
        if inside && z.is_finite() && t.is_finite() {
            Ok(())
        } else {
            Err(Error::OutOfDomain { z, t })
        }
    }

    /// `(G, G_z)` at `(z, t)` by bilinear interpolation.
    pub fn eval_g(&self, z: f64, t: f64) -> Result<(f64, f64)> {
        self.check_domain(z, t)?;
        Ok((
            self.g.interpolate(&self.grid, self.horizon, z, t),
            self.g_z.interpolate(&self.grid, self.horizon, z, t),
        ))
    }

    /// Interpolated linear unknown at `(z, t)`.
    pub fn eval_f(&self, z: f64, t: f64) -> Result<f64> {
        self.check_domain(z, t)?;
        Ok(self.f.interpolate(&self.grid, self.horizon, z, t))
    }

    /// Interpolates any grid-shaped field (e.g. a derivative surface).
    pub fn eval_surface(&self, s: &Surface, z: f64, t: f64) -> Result<f64> {
        self.check_domain(z, t)?;
        Ok(s.interpolate(&self.grid, self.horizon, z, t))
    }

    pub fn clamp_z(&self, z: f64) -> f64 {
        z.clamp(self.grid.z_lo, self.grid.z_hi)
    }

    pub fn contains_z(&self, z: f64) -> bool {
        z >= self.grid.z_lo && z <= self.grid.z_hi
    }

    /// Largest violation of `-exp(lambda_max^2 (T - t)) <= G <= -1`,
    /// relative to the bound. Zero when the bounds hold.
    pub fn bound_violation(&self, lambda_max: f64) -> f64 {
        let mut worst: f64 = 0.0;
        for n in 0..self.grid.n_t {
            let tau = self.horizon - self.grid.t(n, self.horizon);
            let lower = -exp(lambda_max * lambda_max * tau);
            for v in self.g.level(n) {
                worst = worst.max((lower - v) / lower.abs());
                worst = worst.max(v + 1.0);
            }
        }
        worst
    }
}
