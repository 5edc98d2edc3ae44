use rayon::prelude::*;

use crate::ecr::{effective_channel, recover_ifft};
use crate::error::{config_err, Error, Result};
use crate::fft::Fft1;
use crate::geometry::{SystemConfig, C64};
use crate::phase::{PhaseSchedule, ScheduleKind};
use crate::saa::{ImagingOptions, SaaKernel};

/// FFT-based forward (image -> measurements) and backward (measurements ->
/// image) operators. The backward operator is the SAA pipeline applied to
/// the IFFT-recovered ECR; the forward operator undoes it step by step.
pub struct OperatorPair {
    pub kernel: SaaKernel,
    g: C64,
    /// Effective RIS-to-AP channel per subcarrier (element or block level).
    h: Vec<Vec<C64>>,
    fft: Fft1,
    rows: usize,
}

/// Operators for a full DFT or block-DFT schedule.
pub fn build_operators(
    cfg: &SystemConfig,
    schedule: &PhaseSchedule,
    opts: &ImagingOptions,
) -> Result<OperatorPair> {
    match schedule.kind {
        ScheduleKind::Dft | ScheduleKind::Block { .. } if schedule.rows == schedule.cols => {}
        _ => {
            return config_err(format!(
                "operators need a full DFT or block schedule, got {:?} with {} of {} rows",
                schedule.kind, schedule.rows, schedule.cols
            ))
        }
    }
    let aperture = crate::ecr::recovery_aperture(cfg, schedule);
    let kernel = SaaKernel::new(cfg, &aperture, opts)?;
    let h = cfg
        .frequencies()
        .wavenumbers
        .iter()
        .map(|&k| effective_channel(cfg, schedule, k))
        .collect();
    Ok(OperatorPair {
        kernel,
        g: cfg.antenna_gain,
        h,
        fft: Fft1::new(schedule.cols),
        rows: schedule.rows,
    })
}

impl OperatorPair {
    pub fn t_count(&self) -> usize {
        self.h.len()
    }

    pub fn r_count(&self) -> usize {
        self.rows
    }

    pub fn n_count(&self) -> usize {
        self.kernel.grid.len()
    }

    fn check_image(&self, sigma: &[C64]) -> Result<()> {
        if sigma.len() != self.n_count() {
            return Err(Error::Shape(format!(
                "image has {} voxels, operators expect {}",
                sigma.len(),
                self.n_count()
            )));
        }
        Ok(())
    }

    /// Backward sub-operator for one subcarrier, added into `out`.
    pub fn backward_t_into(&self, t: usize, s_t: &[C64], out: &mut [C64]) -> Result<()> {
        let b = recover_ifft(s_t, &self.h[t], self.g)?;
        let spec = self.kernel.spectrum(&b)?;
        self.kernel.accumulate_image(t, &spec, out);
        Ok(())
    }

    pub fn backward_t(&self, t: usize, s_t: &[C64]) -> Result<Vec<C64>> {
        let mut out = vec![C64::default(); self.n_count()];
        self.backward_t_into(t, s_t, &mut out)?;
        Ok(out)
    }

    /// Sum of the backward sub-operators over all subcarriers.
    pub fn backward(&self, s: &[C64]) -> Result<Vec<C64>> {
        let r = self.rows;
        if s.len() != r * self.t_count() {
            return Err(Error::Shape(format!(
                "expected {} measurements, got {}",
                r * self.t_count(),
                s.len()
            )));
        }
        let mut out = vec![C64::default(); self.n_count()];
        for t in 0..self.t_count() {
            self.backward_t_into(t, &s[t * r..(t + 1) * r], &mut out)?;
        }
        Ok(out)
    }

    /// Forward sub-operator for one subcarrier.
    pub fn forward_t(&self, t: usize, sigma: &[C64]) -> Result<Vec<C64>> {
        self.check_image(sigma)?;
        let spec = self.kernel.volume_to_spectrum(t, sigma);
        let b = self.kernel.ecr_from_spectrum(spec);
        let mut x: Vec<C64> = b
            .iter()
            .zip(&self.h[t])
            .map(|(b, h)| b * self.g * h)
            .collect();
        self.fft.forward(&mut x);
        x.truncate(self.rows);
        Ok(x)
    }

    /// Stacked forward operator, `T x R`.
    pub fn forward(&self, sigma: &[C64]) -> Result<Vec<C64>> {
        self.check_image(sigma)?;
        let parts: Vec<Result<Vec<C64>>> = (0..self.t_count())
            .into_par_iter()
            .map(|t| self.forward_t(t, sigma))
            .collect();
        let mut out = Vec::with_capacity(self.rows * self.t_count());
        for p in parts {
            out.extend(p?);
        }
        Ok(out)
    }

    /// Scale kappa with `<forward(sigma), s> ~ kappa <sigma, backward(s)>`.
    ///
    /// Product of the per-step ratios between each forward step's adjoint and
    /// the matching backward step, with the position-dependent factors
    /// (`|g h|^2`, `1/kx^2`, `1/(4 d1^2)`) replaced by their means
    /// (`1/kx^2` by `1/k^2`), averaged over subcarriers.
    pub fn adjoint_scale(&self) -> f64 {
        let grid = &self.kernel.grid;
        let m = self.fft.len() as f64;
        let (ky, kz) = self.kernel.k_ap;
        let (py, pz) = self.kernel.k_img;
        let nx = grid.counts[0] as f64;
        let mut acc = 0.0;
        for t in 0..self.t_count() {
            let k = self.kernel.wavenumber(t);
            let gh = self.h[t]
                .iter()
                .map(|h| (self.g * h).norm_sqr())
                .sum::<f64>()
                / m;
            let p2 = self.kernel.p2(t);
            let p2m = p2.iter().map(|v| v.norm_sqr()).sum::<f64>() / p2.len() as f64;
            acc += m * gh / (ky * kz) as f64 / (k * k) / nx * (py * pz) as f64 * p2m;
        }
        acc / self.t_count() as f64
    }
}
