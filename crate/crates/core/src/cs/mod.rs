//! Sparse reconstruction: ISTA on the explicit sensing matrix, and the
//! FT-integrated variant that replaces `A` and `A^H` with FFT-based operators.

mod ftcs;
mod ista;
mod operators;

pub use ftcs::{adaptive_step, ftcs, FtcsOptions};
pub use ista::{ista, IstaOptions};
pub use operators::{build_operators, OperatorPair};

use crate::error::{Error, Result};
use crate::geometry::{ComplexVolume, C64};

/// How the shrinkage level chi is chosen each iteration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Threshold {
    /// chi = magnitude of the (alpha+1)-th largest component.
    Sparsity(usize),
    /// chi = beta * mu.
    Fixed(f64),
}

impl Threshold {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Threshold::Sparsity(0) => Err(Error::Config("sparsity must be at least 1".into())),
            Threshold::Fixed(b) if !(b >= 0.0 && b.is_finite()) => {
                Err(Error::Config(format!("beta must be >= 0, got {b}")))
            }
            _ => Ok(()),
        }
    }

    fn chi(&self, g: &[C64], mu: f64) -> f64 {
        match *self {
            Threshold::Sparsity(a) => sparsity_threshold(g, a),
            Threshold::Fixed(beta) => beta * mu,
        }
    }
}

/// Complex soft thresholding: shrink magnitudes by `chi`, keep phases.
pub fn soft_threshold(g: &mut [C64], chi: f64) -> Result<()> {
    if !(chi >= 0.0) {
        return Err(Error::Config(format!("threshold must be >= 0, got {chi}")));
    }
    if chi == 0.0 {
        return Ok(());
    }
    for v in g.iter_mut() {
        let a = v.norm();
        *v = if a <= chi {
            C64::default()
        } else {
            *v * ((a - chi) / a)
        };
    }
    Ok(())
}

/// Magnitude of the (alpha+1)-th largest entry, 0 if there are at most alpha entries.
pub fn sparsity_threshold(g: &[C64], alpha: usize) -> f64 {
    if alpha >= g.len() {
        return 0.0;
    }
    let mut mags: Vec<f64> = g.iter().map(|v| v.norm()).collect();
    let (_, nth, _) = mags.select_nth_unstable_by(alpha, |a, b| b.total_cmp(a));
    *nth
}

/// Solver output with per-iteration diagnostics.
#[derive(Clone, Debug)]
pub struct SolverResult {
    pub image: ComplexVolume,
    /// Residual norm `||s - A sigma||` before each update.
    pub residuals: Vec<f64>,
    pub steps: Vec<f64>,
}

/// Tracks consecutive residual growth.
pub(crate) struct DivergenceGuard {
    last: f64,
    streak: usize,
}

pub(crate) const DIVERGENCE_STREAK: usize = 10;

impl DivergenceGuard {
    pub fn new() -> Self {
        Self {
            last: f64::INFINITY,
            streak: 0,
        }
    }

    pub fn check(&mut self, iteration: usize, residual: f64) -> Result<()> {
        if !residual.is_finite() {
            return Err(Error::Numerical(format!(
                "residual is not finite at iteration {iteration}"
            )));
        }
        if residual > self.last {
            self.streak += 1;
        } else {
            self.streak = 0;
        }
        self.last = residual;
        if self.streak >= DIVERGENCE_STREAK {
            return Err(Error::Divergence {
                iteration,
                streak: self.streak,
            });
        }
        Ok(())
    }
}

pub(crate) fn norm_sqr(x: &[C64]) -> f64 {
    x.iter().map(|v| v.norm_sqr()).sum()
}

pub(crate) fn residual(s: &[C64], model: &[C64]) -> Vec<C64> {
    s.iter().zip(model).map(|(a, b)| a - b).collect()
}
