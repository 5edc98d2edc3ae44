use super::{
    norm_sqr, residual, soft_threshold, DivergenceGuard, OperatorPair, SolverResult, Threshold,
};
use crate::error::{Error, Result};
use crate::geometry::{ComplexVolume, C64};

#[derive(Clone, Debug)]
pub struct FtcsOptions {
    pub max_iters: usize,
    pub threshold: Threshold,
    pub init: Option<Vec<C64>>,
}

impl Default for FtcsOptions {
    fn default() -> Self {
        Self {
            max_iters: 10,
            threshold: Threshold::Sparsity(1),
            init: None,
        }
    }
}

/// `||d_S||^2 / ||forward(d_S)||^2` where `d_S` is `delta` restricted to
/// `support`. Falls back to the full `delta` when the support is empty or the
/// restricted update is invisible to the forward operator, and to 1 when even
/// that is.
pub fn adaptive_step(delta: &[C64], support: &[bool], ops: &OperatorPair) -> Result<f64> {
    let restricted: Vec<C64> = delta
        .iter()
        .zip(support)
        .map(|(d, s)| if *s { *d } else { C64::default() })
        .collect();
    for cand in [&restricted[..], delta] {
        let num = norm_sqr(cand);
        if num == 0.0 {
            continue;
        }
        let den = norm_sqr(&ops.forward(cand)?);
        if den > 0.0 {
            return Ok(num / den);
        }
    }
    Ok(1.0)
}

/// Sparse reconstruction with the FFT-based operator pair. `s` is the stacked
/// measurement vector in physical units.
///
/// The update direction is `kappa * backward(r)` with `kappa` from
/// [`OperatorPair::adjoint_scale`], which brings the inverse-like backward
/// image to the scale of `A^H r`.
pub fn ftcs(ops: &OperatorPair, s: &[C64], opts: &FtcsOptions) -> Result<SolverResult> {
    opts.threshold.validate()?;
    let n = ops.n_count();
    if s.len() != ops.t_count() * ops.r_count() {
        return Err(Error::Shape(format!(
            "expected {} measurements, got {}",
            ops.t_count() * ops.r_count(),
            s.len()
        )));
    }
    let mut sigma = match &opts.init {
        Some(x) if x.len() == n => x.clone(),
        Some(_) => return Err(Error::Shape("initial image has the wrong size".into())),
        None => vec![C64::default(); n],
    };
    let kappa = ops.adjoint_scale();
    let mut guard = DivergenceGuard::new();
    let mut residuals = Vec::with_capacity(opts.max_iters);
    let mut steps = Vec::with_capacity(opts.max_iters);
    for i in 0..opts.max_iters {
        let r = residual(s, &ops.forward(&sigma)?);
        let rn = norm_sqr(&r).sqrt();
        residuals.push(rn);
        guard.check(i, rn)?;
        let delta = ops.backward(&r)?;
        let support: Vec<bool> = sigma.iter().map(|v| v.norm_sqr() > 0.0).collect();
        // mu is scale-invariant in delta, so it can be taken before rescaling
        let mu = adaptive_step(&delta, &support, ops)?;
        steps.push(mu);
        for (x, d) in sigma.iter_mut().zip(&delta) {
            *x += mu * kappa * d;
        }
        let chi = opts.threshold.chi(&sigma, mu * kappa);
        soft_threshold(&mut sigma, chi)?;
    }
    Ok(SolverResult {
        image: ComplexVolume::from_flat(ops.kernel.grid, sigma)?,
        residuals,
        steps,
    })
}
