//! Scalar math and order-independent summation.
//!
//! Elementary functions go through `libm` in every build so that `std` and
//! `no_std` builds produce identical bits.

use alloc::vec::Vec;

#[inline]
pub fn exp(x: f64) -> f64 {
    libm::exp(x)
}

#[inline]
pub fn ln(x: f64) -> f64 {
    libm::log(x)
}

#[inline]
pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

#[inline]
pub fn tanh(x: f64) -> f64 {
    libm::tanh(x)
}

/// Pairwise (cascade) summation. The result depends only on the order of
/// `values`, never on how they were produced.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const BLOCK: usize = 32;
    if values.len() <= BLOCK {
        let mut s = 0.0;
        for v in values {
            s += v;
        }
        return s;
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub std_error: f64,
    pub n: usize,
}

impl Estimate {
    pub fn from_samples(samples: &[f64]) -> Self {
        let n = samples.len();
        if n == 0 {
            return Estimate {
                mean: f64::NAN,
                std_error: f64::NAN,
                n,
            };
        }
        let mean = pairwise_sum(samples) / n as f64;
        if n == 1 {
            return Estimate {
                mean,
                std_error: 0.0,
                n,
            };
        }
        let dev: Vec<f64> = samples.iter().map(|s| (s - mean) * (s - mean)).collect();
        let var = pairwise_sum(&dev) / (n - 1) as f64;
        Estimate {
            mean,
            std_error: sqrt(var / n as f64),
            n,
        }
    }

    /// Number of standard errors separating the estimate from `target`.
    /// Zero standard error yields 0 for an exact hit and infinity otherwise.
    pub fn z_score(&self, target: f64) -> f64 {
        let d = (self.mean - target).abs();
        if d == 0.0 {
            0.0
        } else if self.std_error == 0.0 {
            f64::INFINITY
        } else {
            d / self.std_error
        }
    }
}

pub(crate) fn max_abs(values: impl IntoIterator<Item = f64>) -> f64 {
    values.into_iter().fold(0.0, |m, v| if v.abs() > m { v.abs() } else { m })
}
