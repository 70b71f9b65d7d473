//! One-step-theta discretization of the backward linear problem
//!
//! ```text
//! u_t + c(z) u_z + D(z) u_zz + k(z) u + s(z, t) = 0,   u(z, T) given,
//! ```
//!
//! on a uniform grid. The first-order term is centered unless the cell
//! Péclet number `|c| dz / D` exceeds 2, in which case it is upwinded. At
//! both ends `u_zz = 0` is imposed through a linearly extrapolated ghost
//! node, which leaves a one-sided drift term there.

use alloc::vec::Vec;

use super::tridiag;
use super::GridSpec;
use crate::error::{Error, Result};
use crate::math::max_abs;

/// Relative tolerance on the linear-system residual of each time step.
pub(crate) const STEP_RESIDUAL_TOL: f64 = 1e-9;

pub(crate) const PECLET_LIMIT: f64 = 2.0;

/// Spatial operator `A u = c u_z + D u_zz + k u` as a tridiagonal stencil.
#[derive(Debug, Clone)]
pub(crate) struct SpatialOperator {
    pub lower: Vec<f64>,
    pub diag: Vec<f64>,
    pub upper: Vec<f64>,
    pub upwinded_nodes: usize,
}

impl SpatialOperator {
    pub fn build(
        grid: &GridSpec,
        drift: impl Fn(f64) -> f64,
        half_diffusion: impl Fn(f64) -> f64,
        potential: impl Fn(f64) -> f64,
    ) -> Self {
        let n = grid.n_z;
        let dz = grid.dz();
        let dz2 = dz * dz;
        let mut lower = alloc::vec![0.0; n];
        let mut diag = alloc::vec![0.0; n];
        let mut upper = alloc::vec![0.0; n];
        let mut upwinded_nodes = 0;
        for i in 0..n {
            let z = grid.z(i);
            let c = drift(z);
            let d = half_diffusion(z);
            let k = potential(z);
            if i == 0 {
                diag[i] = -c / dz + k;
                upper[i] = c / dz;
            } else if i == n - 1 {
                lower[i] = -c / dz;
                diag[i] = c / dz + k;
            } else if d > 0.0 && c.abs() * dz <= PECLET_LIMIT * d {
                lower[i] = d / dz2 - c / (2.0 * dz);
                diag[i] = -2.0 * d / dz2 + k;
                upper[i] = d / dz2 + c / (2.0 * dz);
            } else {
                upwinded_nodes += 1;
                if c >= 0.0 {
                    lower[i] = d / dz2;
                    diag[i] = -2.0 * d / dz2 - c / dz + k;
                    upper[i] = d / dz2 + c / dz;
                } else {
                    lower[i] = d / dz2 - c / dz;
                    diag[i] = -2.0 * d / dz2 + c / dz + k;
                    upper[i] = d / dz2;
                }
            }
        }
        SpatialOperator {
            lower,
            diag,
            upper,
            upwinded_nodes,
        }
    }

    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        tridiag::apply(&self.lower, &self.diag, &self.upper, u)
    }
}

/// Theta-scheme stepper; `theta = 1/2` is Crank–Nicolson.
#[derive(Debug, Clone)]
pub(crate) struct ThetaStepper {
    op: SpatialOperator,
    dt: f64,
    theta: f64,
    m_lower: Vec<f64>,
    m_diag: Vec<f64>,
    m_upper: Vec<f64>,
}

impl ThetaStepper {
    pub fn new(op: SpatialOperator, dt: f64, theta: f64) -> Self {
        let s = theta * dt;
        let m_lower = op.lower.iter().map(|v| -s * v).collect();
        let m_diag = op.diag.iter().map(|v| 1.0 - s * v).collect();
        let m_upper = op.upper.iter().map(|v| -s * v).collect();
        ThetaStepper {
            op,
            dt,
            theta,
            m_lower,
            m_diag,
            m_upper,
        }
    }

    /// One step from level `n + 1` back to level `n`. Sources are the
    /// values of `s` at the two levels.
    pub fn step(
        &self,
        u_next: &[f64],
        source_next: Option<&[f64]>,
        source_now: Option<&[f64]>,
    ) -> Result<Vec<f64>> {
        let au = self.op.apply(u_next);
        let explicit = (1.0 - self.theta) * self.dt;
        let mut rhs: Vec<f64> = u_next
            .iter()
            .zip(&au)
            .map(|(u, a)| u + explicit * a)
            .collect();
        if let Some(s) = source_next {
            for (r, v) in rhs.iter_mut().zip(s) {
                *r += explicit * v;
            }
        }
        if let Some(s) = source_now {
            for (r, v) in rhs.iter_mut().zip(s) {
                *r += self.theta * self.dt * v;
            }
        }
        let u = tridiag::solve(&self.m_lower, &self.m_diag, &self.m_upper, &rhs).ok_or(
            Error::GridTooCoarse {
                diagnostic: f64::INFINITY,
                tolerance: STEP_RESIDUAL_TOL,
            },
        )?;
        let mu = tridiag::apply(&self.m_lower, &self.m_diag, &self.m_upper, &u);
        let err = max_abs(mu.iter().zip(&rhs).map(|(a, b)| a - b));
        let diagnostic = err / (1.0 + max_abs(rhs.iter().copied()));
        if !(diagnostic <= STEP_RESIDUAL_TOL) || u.iter().any(|v| !v.is_finite()) {
            return Err(Error::GridTooCoarse {
                diagnostic,
                tolerance: STEP_RESIDUAL_TOL,
            });
        }
        Ok(u)
    }
}
