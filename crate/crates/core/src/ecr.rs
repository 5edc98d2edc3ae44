//! Recovery of the equivalent channel response (ECR) from pilot measurements.
//!
//! Per subcarrier, `s = g Omega (b .* h_sp)`. Depending on the schedule the
//! element-wise product is recovered by a dense solve, an inverse FFT, the
//! truncated-DFT pseudo-inverse, or a block-level inverse FFT, and then divided
//! by `g h_sp`.

use faer::dyn_stack::{MemBuffer, MemStack};
use faer::linalg::lu::partial_pivoting::{factor, solve};
use faer::perm::PermRef;
use faer::{Conj, Mat, Par};
use rayon::prelude::*;

use crate::channel::{site_ap_channel, MeasurementSet};
use crate::error::{config_err, Error, Result};
use crate::fft::Fft1;
use crate::geometry::{Aperture, SystemConfig, C64};
use crate::phase::{PhaseSchedule, ScheduleKind};

/// Condition-number ceiling for the dense solve.
pub const CONDITION_LIMIT: f64 = 1e12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RecoveryMethod {
    /// LU solve with the full schedule matrix.
    Inverse,
    /// Inverse FFT, for full (possibly quantized) DFT schedules.
    Ifft,
    /// `Omega_R^H s / M` for truncated DFT schedules.
    PseudoInverse,
    /// Block-level inverse FFT for block schedules.
    Block,
}

impl RecoveryMethod {
    /// Natural method for a schedule.
    pub fn for_schedule(s: &PhaseSchedule) -> Self {
        match s.kind {
            ScheduleKind::Block { .. } => RecoveryMethod::Block,
            ScheduleKind::Random { .. } => RecoveryMethod::Inverse,
            _ if s.rows < s.cols => RecoveryMethod::PseudoInverse,
            _ => RecoveryMethod::Ifft,
        }
    }
}

/// Recovered ECR for every subcarrier on an aperture of elements or blocks.
#[derive(Clone, Debug, PartialEq)]
pub struct EcrEstimate {
    pub t_count: usize,
    pub aperture: Aperture,
    /// `T x aperture.len()` row-major, column-major within each row.
    pub data: Vec<C64>,
    pub method: RecoveryMethod,
}

impl EcrEstimate {
    pub fn row(&self, t: usize) -> &[C64] {
        let m = self.aperture.len();
        &self.data[t * m..(t + 1) * m]
    }
}

fn check_len(s: &[C64], n: usize, what: &str) -> Result<()> {
    if s.len() != n {
        return Err(Error::Shape(format!(
            "{what}: expected {n} values, got {}",
            s.len()
        )));
    }
    Ok(())
}

fn divide(x: &mut [C64], h: &[C64], g: C64) {
    for (v, h) in x.iter_mut().zip(h) {
        *v /= g * h;
    }
}

/// `IDFT_M(s) ./ (g h_sp)`.
pub fn recover_ifft(s: &[C64], h_sp: &[C64], g: C64) -> Result<Vec<C64>> {
    check_len(s, h_sp.len(), "recover_ifft")?;
    let mut x = s.to_vec();
    Fft1::new(x.len()).inverse(&mut x);
    divide(&mut x, h_sp, g);
    Ok(x)
}

/// `(Omega_R^H s / M) ./ (g h_sp)` for the first R rows of the M-point DFT,
/// computed as an M-point inverse FFT of the zero-padded measurements.
pub fn recover_pinv(s: &[C64], h_sp: &[C64], g: C64) -> Result<Vec<C64>> {
    let m = h_sp.len();
    if s.len() > m || s.is_empty() {
        return Err(Error::Shape(format!(
            "pseudo-inverse needs 1 <= R <= M, got R = {}, M = {m}",
            s.len()
        )));
    }
    let mut x = vec![C64::default(); m];
    x[..s.len()].copy_from_slice(s);
    Fft1::new(m).inverse(&mut x);
    divide(&mut x, h_sp, g);
    Ok(x)
}

/// `IDFT_{M_Q}(s) ./ (g h_block)` where `h_block` is the aggregated block channel.
pub fn recover_block(s: &[C64], h_block: &[C64], g: C64) -> Result<Vec<C64>> {
    recover_ifft(s, h_block, g)
}

/// Dense LU factorization of a square schedule, reused across subcarriers.
pub struct InverseRecovery {
    lu: Mat<C64>,
    fwd: Vec<usize>,
    bwd: Vec<usize>,
    pub condition: f64,
}

impl InverseRecovery {
    pub fn new(schedule: &PhaseSchedule) -> Result<Self> {
        let m = schedule.cols;
        if schedule.rows != m {
            return config_err(format!(
                "dense inverse needs a square schedule, got {} x {m}",
                schedule.rows
            ));
        }
        let mut lu = Mat::<C64>::from_fn(m, m, |r, c| schedule.entry(r, c));
        let norm1 = (0..m)
            .map(|c| (0..m).map(|r| lu[(r, c)].norm()).sum::<f64>())
            .fold(0.0, f64::max);
        let mut fwd = vec![0usize; m];
        let mut bwd = vec![0usize; m];
        let par = Par::Seq;
        let mut buf = MemBuffer::new(factor::lu_in_place_scratch::<usize, C64>(
            m,
            m,
            par,
            Default::default(),
        ));
        factor::lu_in_place(
            lu.as_mut(),
            &mut fwd,
            &mut bwd,
            par,
            MemStack::new(&mut buf),
            Default::default(),
        );
        let mut out = Self {
            lu,
            fwd,
            bwd,
            condition: f64::INFINITY,
        };
        let diag_ok = (0..m).all(|i| out.lu[(i, i)].norm() > 0.0 && out.lu[(i, i)].is_finite());
        if diag_ok {
            out.condition = norm1 * out.inverse_norm1_estimate();
        }
        if !(out.condition <= CONDITION_LIMIT) {
            return Err(Error::Singular {
                cond: out.condition,
                limit: CONDITION_LIMIT,
            });
        }
        Ok(out)
    }

    fn dim(&self) -> usize {
        self.fwd.len()
    }

    fn solve_with(&self, x: &mut [C64], adjoint: bool) {
        let m = self.dim();
        let mut rhs = Mat::<C64>::from_fn(m, 1, |i, _| x[i]);
        let perm = PermRef::new_checked(&self.fwd, &self.bwd, m);
        let par = Par::Seq;
        let mut buf = MemBuffer::new(solve::solve_in_place_scratch::<usize, C64>(m, 1, par));
        let stack = MemStack::new(&mut buf);
        let lu = self.lu.as_ref();
        if adjoint {
            solve::solve_transpose_in_place_with_conj(
                lu,
                lu,
                perm,
                Conj::Yes,
                rhs.as_mut(),
                par,
                stack,
            );
        } else {
            solve::solve_in_place_with_conj(lu, lu, perm, Conj::No, rhs.as_mut(), par, stack);
        }
        for (i, v) in x.iter_mut().enumerate() {
            *v = rhs[(i, 0)];
        }
    }

    /// Solve `Omega x = s`.
    pub fn solve(&self, s: &[C64]) -> Result<Vec<C64>> {
        check_len(s, self.dim(), "inverse solve")?;
        let mut x = s.to_vec();
        self.solve_with(&mut x, false);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(
                "dense solve produced non-finite values".into(),
            ));
        }
        Ok(x)
    }

    /// `Omega^{-1} s ./ (g h_sp)`.
    pub fn recover(&self, s: &[C64], h_sp: &[C64], g: C64) -> Result<Vec<C64>> {
        check_len(h_sp, self.dim(), "inverse recovery")?;
        let mut x = self.solve(s)?;
        divide(&mut x, h_sp, g);
        Ok(x)
    }

    /// Hager-Higham estimate of `||Omega^{-1}||_1`.
    fn inverse_norm1_estimate(&self) -> f64 {
        let n = self.dim();
        let mut x = vec![C64::new(1.0 / n as f64, 0.0); n];
        let mut est = 0.0;
        let mut last_j = usize::MAX;
        for _ in 0..5 {
            let mut y = x.clone();
            self.solve_with(&mut y, false);
            est = y.iter().map(|v| v.norm()).sum::<f64>();
            let mut z: Vec<C64> = y
                .iter()
                .map(|v| {
                    if v.norm() > 0.0 {
                        v / v.norm()
                    } else {
                        C64::new(1.0, 0.0)
                    }
                })
                .collect();
            self.solve_with(&mut z, true);
            let (j, zmax) = z
                .iter()
                .enumerate()
                .map(|(i, v)| (i, v.norm()))
                .fold((0, -1.0), |a, b| if b.1 > a.1 { b } else { a });
            let ztx: f64 = z.iter().zip(&x).map(|(a, b)| (a.conj() * b).re).sum();
            if zmax <= ztx || j == last_j {
                break;
            }
            last_j = j;
            x = vec![C64::default(); n];
            x[j] = C64::new(1.0, 0.0);
        }
        est
    }
}

/// `Omega^{-1} s ./ (g h_sp)` via a fresh LU factorization.
pub fn recover_inverse(
    s: &[C64],
    schedule: &PhaseSchedule,
    h_sp: &[C64],
    g: C64,
) -> Result<Vec<C64>> {
    InverseRecovery::new(schedule)?.recover(s, h_sp, g)
}

/// RIS-to-AP channel seen by each schedule column at wavenumber `k`: the
/// element channel, or for block schedules the compensated sum over the block.
pub fn effective_channel(cfg: &SystemConfig, schedule: &PhaseSchedule, k: f64) -> Vec<C64> {
    let h = site_ap_channel(&cfg.element_positions(), &cfg.ap, k);
    schedule.aggregate(&h)
}

/// Aperture on which a schedule's ECR estimate lives.
pub fn recovery_aperture(cfg: &SystemConfig, schedule: &PhaseSchedule) -> Aperture {
    match &schedule.blocks {
        Some(b) => b.aperture,
        None => cfg.element_aperture(),
    }
}

/// Block-weighted average of an element ECR: `sum_m w_m b_m` with
/// `w_m = exp(j phi_m) h_m / sum_{m' in block} exp(j phi_m') h_m'`.
/// This is what `recover_block` returns for noiseless input.
pub fn block_average(
    cfg: &SystemConfig,
    schedule: &PhaseSchedule,
    b: &[C64],
    k: f64,
) -> Result<Vec<C64>> {
    let layout = schedule
        .blocks
        .as_ref()
        .ok_or_else(|| Error::Config("block_average needs a block schedule".into()))?;
    check_len(b, layout.element_block.len(), "block_average")?;
    let h = site_ap_channel(&cfg.element_positions(), &cfg.ap, k);
    let num: Vec<C64> = b.iter().zip(&h).map(|(b, h)| b * h).collect();
    let num = schedule.aggregate(&num);
    let den = schedule.aggregate(&h);
    Ok(num.iter().zip(&den).map(|(a, d)| a / d).collect())
}

fn check_method(schedule: &PhaseSchedule, method: RecoveryMethod) -> Result<()> {
    let ok = match method {
        RecoveryMethod::Inverse => schedule.rows == schedule.cols && schedule.blocks.is_none(),
        RecoveryMethod::Ifft => {
            schedule.rows == schedule.cols
                && matches!(
                    schedule.kind,
                    ScheduleKind::Dft | ScheduleKind::QuantizedDft { .. }
                )
        }
        RecoveryMethod::PseudoInverse => matches!(
            schedule.kind,
            ScheduleKind::Dft | ScheduleKind::TruncatedDft | ScheduleKind::QuantizedDft { .. }
        ),
        RecoveryMethod::Block => matches!(schedule.kind, ScheduleKind::Block { .. }),
    };
    if !ok {
        return config_err(format!(
            "recovery {method:?} does not apply to a {:?} schedule with {} x {} entries",
            schedule.kind, schedule.rows, schedule.cols
        ));
    }
    Ok(())
}

/// Recover the ECR on every subcarrier.
pub fn recover_ecr(
    ms: &MeasurementSet,
    cfg: &SystemConfig,
    schedule: &PhaseSchedule,
    method: RecoveryMethod,
) -> Result<EcrEstimate> {
    check_method(schedule, method)?;
    if ms.r_count != schedule.rows {
        return Err(Error::Shape(format!(
            "measurements have {} pilots but the schedule has {}",
            ms.r_count, schedule.rows
        )));
    }
    let freqs = cfg.frequencies();
    if ms.t_count != freqs.len() {
        return Err(Error::Shape(format!(
            "measurements have {} subcarriers, config expects {}",
            ms.t_count,
            freqs.len()
        )));
    }
    let g = cfg.antenna_gain;
    let inverse = match method {
        RecoveryMethod::Inverse => Some(InverseRecovery::new(schedule)?),
        _ => None,
    };
    let rows: Vec<Result<Vec<C64>>> = (0..ms.t_count)
        .into_par_iter()
        .map(|t| {
            let s = ms.physical_row(t);
            let h = effective_channel(cfg, schedule, freqs.wavenumbers[t]);
            match method {
                RecoveryMethod::Inverse => inverse.as_ref().unwrap().recover(&s, &h, g),
                RecoveryMethod::Ifft => recover_ifft(&s, &h, g),
                RecoveryMethod::PseudoInverse => recover_pinv(&s, &h, g),
                RecoveryMethod::Block => recover_block(&s, &h, g),
            }
        })
        .collect();
    let mut data = Vec::with_capacity(ms.t_count * schedule.cols);
    for r in rows {
        data.extend(r?);
    }
    Ok(EcrEstimate {
        t_count: ms.t_count,
        aperture: recovery_aperture(cfg, schedule),
        data,
        method,
    })
}

/// Average ECR estimates recovered through several AP antennas.
pub fn average_ecr(estimates: &[EcrEstimate]) -> Result<EcrEstimate> {
    let first = estimates
        .first()
        .ok_or_else(|| Error::Config("nothing to average".into()))?;
    if estimates
        .iter()
        .any(|e| e.data.len() != first.data.len() || e.aperture != first.aperture)
    {
        return Err(Error::Shape("ECR estimates differ in shape".into()));
    }
    let n = estimates.len() as f64;
    let data = (0..first.data.len())
        .map(|i| estimates.iter().map(|e| e.data[i]).sum::<C64>() / n)
        .collect();
    Ok(EcrEstimate {
        data,
        ..first.clone()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{ecr_true, measure, measure_noiseless};
    use crate::geometry::{Point3, Scene};
    use crate::phase::{
        build_block_dft_schedule, build_dft_schedule, build_random_schedule, build_truncated_dft,
    };

    fn cfg(n: usize) -> SystemConfig {
        SystemConfig {
            ris_elements: (n, n),
            ris_center: Point3::new(-10.0, 0.0, 0.0),
            ue: Point3::new(-8.0, -6.0, 0.0),
            ap: Point3::new(3.0, 4.0, 4.0),
            roi_extent: Point3::new(4.0, 4.0, 4.0),
            rel_bandwidth: 0.04,
            rel_spacing: 0.02,
            ..SystemConfig::default()
        }
    }

    fn scene() -> Scene {
        Scene::new(vec![
            crate::Scatterer {
                position: Point3::new(0.0, 0.5, -0.5),
                coefficient: C64::new(1.0, 0.0),
            },
            crate::Scatterer {
                position: Point3::new(1.0, -1.0, 0.5),
                coefficient: C64::new(0.3, 0.4),
            },
        ])
    }

    fn rel_err(a: &[C64], b: &[C64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum();
        let den: f64 = b.iter().map(|y| y.norm_sqr()).sum();
        (num / den).sqrt()
    }

    #[test]
    fn ifft_and_inverse_recover_exactly() {
        let c = cfg(6);
        let sched = build_dft_schedule(36).unwrap();
        let ms = measure_noiseless(&scene(), &c, &sched).unwrap();
        let a = recover_ecr(&ms, &c, &sched, RecoveryMethod::Ifft).unwrap();
        let b = recover_ecr(&ms, &c, &sched, RecoveryMethod::Inverse).unwrap();
        for t in 0..ms.t_count {
            let truth = ecr_true(&scene(), &c, t).unwrap();
            assert!(rel_err(a.row(t), &truth) < 1e-12);
            assert!(rel_err(b.row(t), &truth) < 1e-10);
        }
    }

    #[test]
    fn random_schedule_inverse() {
        let c = cfg(4);
        let sched = build_random_schedule(16, 16, 11).unwrap();
        let ms = measure_noiseless(&scene(), &c, &sched).unwrap();
        let est = recover_ecr(&ms, &c, &sched, RecoveryMethod::Inverse).unwrap();
        let truth = ecr_true(&scene(), &c, 1).unwrap();
        assert!(rel_err(est.row(1), &truth) < 1e-9);
        assert!(recover_ecr(&ms, &c, &sched, RecoveryMethod::Ifft).is_err());
    }

    #[test]
    fn dft_condition_is_m() {
        let inv = InverseRecovery::new(&build_dft_schedule(64).unwrap()).unwrap();
        assert!((inv.condition - 64.0).abs() < 1e-6, "{}", inv.condition);
    }

    #[test]
    fn singular_schedule_rejected() {
        // two identical rows
        let mut s = build_random_schedule(4, 4, 2).unwrap();
        let dense = s.to_dense();
        let mut rows = dense.clone();
        rows[4..8].copy_from_slice(&dense[0..4]);
        s = PhaseSchedule::from_dense(s.kind, 4, 4, rows).unwrap();
        assert!(matches!(
            InverseRecovery::new(&s),
            Err(Error::Singular { .. })
        ));
    }

    #[test]
    fn pinv_matches_matrix_formula() {
        let c = cfg(4);
        let sched = build_truncated_dft(16, 6).unwrap();
        let ms = measure_noiseless(&scene(), &c, &sched).unwrap();
        let k = c.frequencies().wavenumbers[0];
        let h = effective_channel(&c, &sched, k);
        let fast = recover_pinv(ms.row(0), &h, c.antenna_gain).unwrap();
        for m in 0..16 {
            let slow: C64 = (0..6)
                .map(|r| sched.entry(r, m).conj() * ms.row(0)[r])
                .sum::<C64>()
                / 16.0
                / (c.antenna_gain * h[m]);
            assert!((fast[m] - slow).norm() < 1e-12 * slow.norm().max(1e-30));
        }
    }

    #[test]
    fn block_recovers_weighted_average() {
        let c = cfg(8);
        for comp in [true, false] {
            let sched = build_block_dft_schedule(&c, 4, comp).unwrap();
            let ms = measure_noiseless(&scene(), &c, &sched).unwrap();
            let est = recover_ecr(&ms, &c, &sched, RecoveryMethod::Block).unwrap();
            for t in 0..ms.t_count {
                let k = c.frequencies().wavenumbers[t];
                let truth = ecr_true(&scene(), &c, t).unwrap();
                let avg = block_average(&c, &sched, &truth, k).unwrap();
                assert!(rel_err(est.row(t), &avg) < 1e-9);
            }
        }
    }

    #[test]
    fn compensated_block_close_to_plain_average() {
        let c = cfg(8);
        let sched = build_block_dft_schedule(&c, 4, true).unwrap();
        let k0 = c.frequencies().k0;
        let truth = crate::channel::ecr_at(&scene(), &c, &c.element_positions(), k0);
        let w = block_average(&c, &sched, &truth, k0).unwrap();
        let plain = sched.aggregate(&truth);
        // compensation phases are not part of the plain mean, so undo them
        let layout = sched.blocks.as_ref().unwrap();
        let mut mean = vec![C64::default(); sched.cols];
        for (m, b) in truth.iter().enumerate() {
            mean[layout.element_block[m]] += b / 4.0;
        }
        assert_eq!(plain.len(), mean.len());
        assert!(rel_err(&w, &mean) < 5e-2, "{}", rel_err(&w, &mean));
    }

    #[test]
    fn noise_propagation_matches_prediction() {
        let c = cfg(4);
        let sched = build_dft_schedule(16).unwrap();
        let var = 1e-12;
        let clean = measure_noiseless(&scene(), &c, &sched).unwrap();
        let k = c.frequencies().wavenumbers[0];
        let h = effective_channel(&c, &sched, k);
        let predicted: f64 = h
            .iter()
            .map(|h| 1.0 / (c.antenna_gain * h).norm_sqr())
            .sum::<f64>()
            * var
            / 16.0;
        let mut acc = 0.0;
        let trials = 400;
        for seed in 0..trials {
            let noisy = measure(&scene(), &c, &sched, var, seed).unwrap();
            let a = recover_ifft(noisy.row(0), &h, c.antenna_gain).unwrap();
            let b = recover_ifft(clean.row(0), &h, c.antenna_gain).unwrap();
            acc += a
                .iter()
                .zip(&b)
                .map(|(x, y)| (x - y).norm_sqr())
                .sum::<f64>();
        }
        let mc = acc / trials as f64;
        assert!(
            (mc / predicted - 1.0).abs() < 0.15,
            "mc {mc} predicted {predicted}"
        );
    }

    #[test]
    fn averaging_identical_estimates_is_identity() {
        let c = cfg(4);
        let sched = build_dft_schedule(16).unwrap();
        let ms = measure_noiseless(&scene(), &c, &sched).unwrap();
        let e = recover_ecr(&ms, &c, &sched, RecoveryMethod::Ifft).unwrap();
        let avg = average_ecr(&[e.clone(), e.clone()]).unwrap();
        assert!(rel_err(&avg.data, &e.data) < 1e-15);
    }
}
