use thiserror::Error;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter {
        name: &'static str,
        reason: &'static str,
    },
    #[error("non-positive volatility sigma({z}) = {sigma}")]
    NonPositiveVolatility { z: f64, sigma: f64 },
    #[error("point (z = {z}, t = {t}) lies outside the solution grid")]
    OutOfDomain { z: f64, t: f64 },
    #[error("|2 rho^2 - 1| = {gap:e} is on the wrong side of the case switch for this solver")]
    CaseMismatch { gap: f64 },
    #[error("grid too coarse: scheme diagnostic {diagnostic:e} exceeds {tolerance:e}")]
    GridTooCoarse { diagnostic: f64, tolerance: f64 },
    #[error("linear unknown F = {value} is not positive at (z = {z}, t = {t})")]
    NonPositiveF { z: f64, t: f64, value: f64 },
    #[error("{fraction:.4} of path-steps left the grid domain (limit {limit})")]
    ExcessiveExcursion { fraction: f64, limit: f64 },
    #[error("E[R_T] = {er} is numerically 1; mean cannot be traded against variance")]
    DegenerateER { er: f64 },
    #[error("Var[R_T] = {var} is not positive")]
    DegenerateVariance { var: f64 },
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: &'static str) -> Self {
        Error::InvalidParameter { name, reason }
    }
}
