//! Monte Carlo configuration, per-path random substreams and the
//! (optionally parallel) path driver.

use alloc::vec::Vec;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

pub type PathRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McConfig {
    /// Total number of paths. With antithetic pairing the count is rounded
    /// up to an even number.
    pub n_paths: usize,
    /// Euler steps over the simulated interval.
    pub n_steps: usize,
    pub seed: u64,
    pub antithetic: bool,
    /// Evaluate paths on the rayon pool when the `parallel` feature is on.
    /// Output is bit-identical either way.
    pub parallel: bool,
}

impl McConfig {
    pub fn new(n_paths: usize, n_steps: usize, seed: u64) -> Result<Self> {
        if n_paths == 0 {
            return Err(Error::param("n_paths", "must be at least 1"));
        }
        if n_steps == 0 {
            return Err(Error::param("n_steps", "must be at least 1"));
        }
        Ok(McConfig {
            n_paths,
            n_steps,
            seed,
            antithetic: true,
            parallel: true,
        })
    }

    pub fn with_antithetic(mut self, on: bool) -> Self {
        self.antithetic = on;
        self
    }

    pub fn with_parallel(mut self, on: bool) -> Self {
        self.parallel = on;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_steps(mut self, n_steps: usize) -> Self {
        self.n_steps = n_steps;
        self
    }

    /// Number of independent draws (pairs when antithetic).
    pub fn n_draws(&self) -> usize {
        if self.antithetic {
            self.n_paths.div_ceil(2)
        } else {
            self.n_paths
        }
    }
}

/// Deterministic substream for path (or antithetic pair) `index`: the
/// ChaCha key comes from `seed`, the stream id is the index.
pub fn path_rng(seed: u64, index: u64) -> PathRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

#[inline]
pub(crate) fn std_normal(rng: &mut PathRng) -> f64 {
    StandardNormal.sample(rng)
}

/// Evaluates `f(0..n)` and returns the results in index order.
pub(crate) fn map_indexed<T, F>(n: usize, parallel: bool, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if parallel {
            use rayon::prelude::*;
            return (0..n).into_par_iter().map(f).collect();
        }
    }
    let _ = parallel;
    (0..n).map(f).collect()
}
