//! Saddle-point portfolio choice under monotone mean-variance preferences
//! with a quadratic (Gini) penalty in a one-factor incomplete market.
//!
//! The investor minimizes `sup_Q E^Q[-X_T - Y_T]` over portfolios `pi` while
//! the market picks a measure `Q^eta` through a distortion `eta = (eta1, eta2)`.
//! The value function has the form `V(x, y, z, t) = -x + G(z, t) y`, where `G`
//! solves a nonlinear backward equation that linearizes through one of two
//! transforms depending on the correlation `rho`.
//!
//! Modules:
//!
//! - [`model`]: coefficient families and the assumption audit.
//! - [`pde`]: Crank–Nicolson solves of the linearized equations, assembly of
//!   `G`, and the residual of the nonlinear equation.
//! - [`oracle`]: Feynman–Kac Monte Carlo estimators for the linear unknowns.
//! - [`strategy`]: saddle-point feedback controls.
//! - [`game`]: the controlled generator and the HJBI certificates.
//! - [`sim`]: simulation of the controlled system under `P` and `Q^eta`.
//! - [`meanvar`]: the classical mean-variance comparison and the dual `H`
//!   equation.
//!
//! The crate is `no_std` (with `alloc`). Enabling `parallel` pulls in `std`
//! and rayon for path-level parallelism; results are identical either way.

#![cfg_attr(not(feature = "std"), no_std)]
// `!(x > 0.0)` is deliberate: it rejects NaN along with the bad values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod error;
pub mod game;
pub mod math;
pub mod mc;
pub mod meanvar;
pub mod model;
pub mod oracle;
pub mod pde;
pub mod sim;
pub mod strategy;

pub use error::{Error, Result};
pub use mc::McConfig;
pub use model::{FactorMarketModel, ModelFamily};
pub use pde::{CaseTag, GridSpec, PdeSolution};
pub use strategy::{Anchor, ControlFields};
