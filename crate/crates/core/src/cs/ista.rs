use super::{norm_sqr, residual, soft_threshold, DivergenceGuard, SolverResult, Threshold};
use crate::channel::SensingMatrix;
use crate::error::{config_err, Error, Result};
use crate::geometry::{ComplexVolume, VoxelGrid, C64};

/// Power-iteration count for the step size.
pub const POWER_ITERS: usize = 20;

#[derive(Clone, Debug)]
pub struct IstaOptions {
    pub max_iters: usize,
    pub threshold: Threshold,
    /// Fixed step; `None` uses `1 / ||A||^2` from power iteration.
    pub step: Option<f64>,
    pub init: Option<Vec<C64>>,
}

impl Default for IstaOptions {
    fn default() -> Self {
        Self {
            max_iters: 10,
            threshold: Threshold::Sparsity(1),
            step: None,
            init: None,
        }
    }
}

/// Iterative shrinkage-thresholding with the explicit sensing matrix.
/// `s` is the stacked measurement vector in physical units.
pub fn ista(
    a: &SensingMatrix,
    s: &[C64],
    grid: &VoxelGrid,
    opts: &IstaOptions,
) -> Result<SolverResult> {
    opts.threshold.validate()?;
    if s.len() != a.t_count * a.r_count {
        return Err(Error::Shape(format!(
            "expected {} measurements, got {}",
            a.t_count * a.r_count,
            s.len()
        )));
    }
    if grid.len() != a.n_count {
        return Err(Error::Shape(
            "voxel grid does not match the sensing matrix".into(),
        ));
    }
    let lip = a.norm_sqr_estimate(POWER_ITERS);
    let mu = match opts.step {
        None => {
            if !(lip > 0.0) {
                return Err(Error::Numerical("sensing matrix has zero norm".into()));
            }
            1.0 / lip
        }
        Some(mu) => {
            // power iteration underestimates ||A||^2, allow its convergence slack
            if !(mu > 0.0 && mu * lip <= 1.0 + 1e-6) {
                return config_err(format!(
                    "step {mu} outside (0, 1/||A||^2] with ||A||^2 ~ {lip:.6e}"
                ));
            }
            mu
        }
    };
    let mut sigma = match &opts.init {
        Some(x) if x.len() == a.n_count => x.clone(),
        Some(_) => return Err(Error::Shape("initial image has the wrong size".into())),
        None => vec![C64::default(); a.n_count],
    };
    let mut guard = DivergenceGuard::new();
    let mut residuals = Vec::with_capacity(opts.max_iters);
    for i in 0..opts.max_iters {
        let r = residual(s, &a.apply(&sigma));
        let rn = norm_sqr(&r).sqrt();
        residuals.push(rn);
        guard.check(i, rn)?;
        let grad = a.adjoint(&r);
        for (x, g) in sigma.iter_mut().zip(&grad) {
            *x += mu * g;
        }
        let chi = opts.threshold.chi(&sigma, mu);
        soft_threshold(&mut sigma, chi)?;
    }
    Ok(SolverResult {
        image: ComplexVolume::from_flat(*grid, sigma)?,
        residuals,
        steps: vec![mu; opts.max_iters],
    })
}
