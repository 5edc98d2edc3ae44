//! Free-space forward model: UE -> scatterers -> RIS -> AP.
//!
//! Every link is a point-to-point spherical wave `exp(-j k d) / (sqrt(4 pi) d)`.
//! The ECR of element m on subcarrier t is the UE-to-element response through
//! all scatterers; pilot r then sees `g omega_r^T (b_t .* h_sp)` plus noise.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{Point3, Scene, SystemConfig, VoxelGrid, C64};
use crate::phase::PhaseSchedule;

/// Default cap on dense sensing-matrix allocations (bytes).
pub const DEFAULT_MEMORY_BUDGET: u64 = 2 << 30;

/// Single spherical-wave segment of length `d`.
#[inline]
pub fn link(k: f64, d: f64) -> C64 {
    C64::from_polar(1.0 / ((4.0 * PI).sqrt() * d), -k * d)
}

/// RIS-to-AP channel `h^{s,p}` for each element at wavenumber `k`.
pub fn ris_ap_channel(cfg: &SystemConfig, k: f64) -> Vec<C64> {
    site_ap_channel(&cfg.element_positions(), &cfg.ap, k)
}

pub fn site_ap_channel(sites: &[Point3], ap: &Point3, k: f64) -> Vec<C64> {
    sites.iter().map(|p| link(k, p.dist(ap))).collect()
}

/// Ground-truth ECR on subcarrier `t`:
/// `b[m] = sum_n sigma_n exp(-j k (d0 + d1)) / (4 pi d0 d1)`.
pub fn ecr_true(scene: &Scene, cfg: &SystemConfig, t: usize) -> Result<Vec<C64>> {
    let freqs = cfg.frequencies();
    if t >= freqs.len() {
        return Err(Error::Shape(format!(
            "subcarrier {t} out of range (T = {})",
            freqs.len()
        )));
    }
    Ok(ecr_at(
        scene,
        cfg,
        &cfg.element_positions(),
        freqs.wavenumbers[t],
    ))
}

/// ECR at arbitrary RIS sites for wavenumber `k`.
pub fn ecr_at(scene: &Scene, cfg: &SystemConfig, sites: &[Point3], k: f64) -> Vec<C64> {
    let ue_legs: Vec<(C64, Point3)> = scene
        .scatterers
        .iter()
        .map(|s| {
            (
                s.coefficient * link(k, s.position.dist(&cfg.ue)),
                s.position,
            )
        })
        .collect();
    sites
        .iter()
        .map(|p| ue_legs.iter().map(|(a, q)| a * link(k, q.dist(p))).sum())
        .collect()
}

/// Pilot observations, `T x R` row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasurementSet {
    pub t_count: usize,
    pub r_count: usize,
    pub data: Vec<C64>,
    pub noise_variance: f64,
    pub seed: u64,
    /// Factor applied to the noiseless signal by energy normalization (1 if none).
    pub scale: f64,
}

impl MeasurementSet {
    pub fn row(&self, t: usize) -> &[C64] {
        &self.data[t * self.r_count..(t + 1) * self.r_count]
    }

    /// Row `t` with the normalization scale undone, in physical units.
    pub fn physical_row(&self, t: usize) -> Vec<C64> {
        self.row(t).iter().map(|v| v / self.scale).collect()
    }

    /// All rows in physical units.
    pub fn physical(&self) -> Vec<C64> {
        self.data.iter().map(|v| v / self.scale).collect()
    }

    pub fn mean_power(&self) -> f64 {
        self.data.iter().map(|v| v.norm_sqr()).sum::<f64>() / self.data.len().max(1) as f64
    }
}

/// Noiseless measurements for every subcarrier and pilot.
pub fn measure_noiseless(
    scene: &Scene,
    cfg: &SystemConfig,
    schedule: &PhaseSchedule,
) -> Result<MeasurementSet> {
    let m = cfg.num_elements();
    if schedule.num_elements() != m {
        return Err(Error::Shape(format!(
            "schedule drives {} elements but the RIS has {m}",
            schedule.num_elements()
        )));
    }
    let freqs = cfg.frequencies();
    let sites = cfg.element_positions();
    let g = cfg.antenna_gain;
    let rows: Vec<Result<Vec<C64>>> = freqs
        .wavenumbers
        .par_iter()
        .map(|&k| {
            let b = ecr_at(scene, cfg, &sites, k);
            let x: Vec<C64> = b
                .iter()
                .zip(site_ap_channel(&sites, &cfg.ap, k))
                .map(|(b, h)| g * b * h)
                .collect();
            schedule.apply_elements(&x)
        })
        .collect();
    let mut data = Vec::with_capacity(freqs.len() * schedule.rows);
    for r in rows {
        data.extend(r?);
    }
    Ok(MeasurementSet {
        t_count: freqs.len(),
        r_count: schedule.rows,
        data,
        noise_variance: 0.0,
        seed: 0,
        scale: 1.0,
    })
}

/// Add circular complex Gaussian noise with `E|n|^2 = variance`. Subcarrier t
/// draws from ChaCha stream t of `seed`, so results do not depend on threading.
pub fn add_noise(ms: &MeasurementSet, variance: f64, seed: u64) -> Result<MeasurementSet> {
    if !(variance >= 0.0 && variance.is_finite()) {
        return Err(Error::Config(format!(
            "noise variance must be >= 0, got {variance}"
        )));
    }
    let sd = (variance / 2.0).sqrt();
    let r = ms.r_count;
    let noisy: Vec<C64> = ms
        .data
        .par_chunks(r)
        .enumerate()
        .flat_map_iter(|(t, row)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(t as u64);
            let out: Vec<C64> = row
                .iter()
                .map(|v| {
                    let re: f64 = StandardNormal.sample(&mut rng);
                    let im: f64 = StandardNormal.sample(&mut rng);
                    v + C64::new(sd * re, sd * im)
                })
                .collect();
            out
        })
        .collect();
    Ok(MeasurementSet {
        data: noisy,
        noise_variance: ms.noise_variance + variance,
        seed,
        ..ms.clone()
    })
}

/// `measure_noiseless` followed by `add_noise`.
pub fn measure(
    scene: &Scene,
    cfg: &SystemConfig,
    schedule: &PhaseSchedule,
    noise_variance: f64,
    seed: u64,
) -> Result<MeasurementSet> {
    let clean = measure_noiseless(scene, cfg, schedule)?;
    add_noise(&clean, noise_variance, seed)
}

/// Rescale so the mean measurement power is 1. The factor is stored in `scale`.
pub fn normalize_path_energy(ms: &MeasurementSet) -> Result<MeasurementSet> {
    let p = ms.mean_power();
    if !(p > 0.0 && p.is_finite()) {
        return Err(Error::Numerical(
            "cannot normalize an all-zero measurement set".into(),
        ));
    }
    let f = 1.0 / p.sqrt();
    Ok(MeasurementSet {
        data: ms.data.iter().map(|v| v * f).collect(),
        scale: ms.scale * f,
        ..ms.clone()
    })
}

/// Dense per-subcarrier sensing matrices `A_t` (`R x N`, row-major) with
/// `s_t = A_t sigma` for a voxel-domain reflectivity `sigma`.
#[derive(Clone, Debug)]
pub struct SensingMatrix {
    pub t_count: usize,
    pub r_count: usize,
    pub n_count: usize,
    pub blocks: Vec<Vec<C64>>,
}

impl SensingMatrix {
    pub fn required_bytes(t: usize, r: usize, n: usize) -> u64 {
        t as u64 * r as u64 * n as u64 * std::mem::size_of::<C64>() as u64
    }

    /// Stacked `A sigma`, length `T R`.
    pub fn apply(&self, sigma: &[C64]) -> Vec<C64> {
        assert_eq!(sigma.len(), self.n_count);
        let n = self.n_count;
        self.blocks
            .par_iter()
            .flat_map_iter(|a| {
                a.chunks(n)
                    .map(|row| row.iter().zip(sigma).map(|(x, y)| x * y).sum::<C64>())
                    .collect::<Vec<_>>()
            })
            .collect()
    }

    /// `A^H s` for stacked `s` of length `T R`.
    pub fn adjoint(&self, s: &[C64]) -> Vec<C64> {
        assert_eq!(s.len(), self.t_count * self.r_count);
        let n = self.n_count;
        let r = self.r_count;
        let parts: Vec<Vec<C64>> = self
            .blocks
            .par_iter()
            .enumerate()
            .map(|(t, a)| {
                let mut acc = vec![C64::default(); n];
                for (i, row) in a.chunks(n).enumerate() {
                    let w = s[t * r + i];
                    for (o, x) in acc.iter_mut().zip(row) {
                        *o += x.conj() * w;
                    }
                }
                acc
            })
            .collect();
        let mut out = vec![C64::default(); n];
        for p in parts {
            for (o, v) in out.iter_mut().zip(p) {
                *o += v;
            }
        }
        out
    }

    /// Squared spectral norm by power iteration.
    pub fn norm_sqr_estimate(&self, iters: usize) -> f64 {
        let mut v: Vec<C64> = (0..self.n_count)
            .map(|i| C64::new(1.0 + (i as f64 * 0.618).fract(), (i as f64 * 0.414).fract()))
            .collect();
        let mut lambda = 0.0;
        for _ in 0..iters {
            let nv = v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
            if nv == 0.0 {
                return 0.0;
            }
            v.iter_mut().for_each(|x| *x /= nv);
            let w = self.adjoint(&self.apply(&v));
            lambda = w
                .iter()
                .zip(&v)
                .map(|(a, b)| (b.conj() * a).re)
                .sum::<f64>();
            v = w;
        }
        lambda
    }
}

/// Build the sensing matrices for `grid`. Fails with `Error::Budget` when the
/// dense matrices would exceed `budget` bytes.
pub fn build_sensing_matrix(
    cfg: &SystemConfig,
    schedule: &PhaseSchedule,
    grid: &VoxelGrid,
    budget: u64,
) -> Result<SensingMatrix> {
    let freqs = cfg.frequencies();
    let (t_count, r_count, n_count) = (freqs.len(), schedule.rows, grid.len());
    let required = SensingMatrix::required_bytes(t_count, r_count, n_count);
    if required > budget {
        return Err(Error::Budget { required, budget });
    }
    if schedule.num_elements() != cfg.num_elements() {
        return Err(Error::Shape("schedule does not match the RIS size".into()));
    }
    let sites = cfg.element_positions();
    let voxels = grid.positions();
    let g = cfg.antenna_gain;
    let blocks: Vec<Result<Vec<C64>>> = freqs
        .wavenumbers
        .par_iter()
        .map(|&k| {
            let hsp = site_ap_channel(&sites, &cfg.ap, k);
            let mut a = vec![C64::default(); r_count * n_count];
            let mut x = vec![C64::default(); sites.len()];
            for (n, v) in voxels.iter().enumerate() {
                let hei = g * link(k, v.dist(&cfg.ue));
                for (m, p) in sites.iter().enumerate() {
                    x[m] = hei * link(k, v.dist(p)) * hsp[m];
                }
                let col = schedule.apply_elements(&x)?;
                for (r, c) in col.into_iter().enumerate() {
                    a[r * n_count + n] = c;
                }
            }
            Ok(a)
        })
        .collect();
    Ok(SensingMatrix {
        t_count,
        r_count,
        n_count,
        blocks: blocks.into_iter().collect::<Result<_>>()?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{rasterize, Scatterer};
    use crate::phase::{build_dft_schedule, build_random_schedule};

    fn small_cfg() -> SystemConfig {
        SystemConfig {
            ris_elements: (4, 4),
            ris_center: Point3::new(-6.0, 0.0, 0.0),
            ue: Point3::new(-4.0, -3.0, 0.0),
            ap: Point3::new(2.0, 3.0, 2.0),
            roi_extent: Point3::new(2.0, 2.0, 2.0),
            rel_bandwidth: 0.1,
            rel_spacing: 0.05,
            ..SystemConfig::default()
        }
    }

    #[test]
    fn single_point_ecr_closed_form() {
        let cfg = small_cfg();
        let p = Point3::new(0.3, -0.2, 0.1);
        let scene = Scene::point(p, C64::new(0.5, 0.25));
        let b = ecr_true(&scene, &cfg, 1).unwrap();
        let k = cfg.frequencies().wavenumbers[1];
        for (m, e) in cfg.element_positions().iter().enumerate() {
            let (d0, d1) = (p.dist(e), p.dist(&cfg.ue));
            let want =
                C64::new(0.5, 0.25) * C64::from_polar(1.0 / (4.0 * PI * d0 * d1), -k * (d0 + d1));
            assert!((b[m] - want).norm() < 1e-15);
        }
        assert!(ecr_true(&scene, &cfg, 9).is_err());
    }

    #[test]
    fn measurement_matches_sensing_matrix() {
        let cfg = small_cfg();
        let grid = VoxelGrid::centered(cfg.roi_center, [2, 3, 3], [1.0, 0.5, 0.5]);
        let scene = Scene::new(vec![
            Scatterer {
                position: grid.position(0, 1, 2),
                coefficient: C64::new(1.0, 0.0),
            },
            Scatterer {
                position: grid.position(1, 0, 1),
                coefficient: C64::new(0.0, -0.7),
            },
        ]);
        for sched in [
            build_dft_schedule(16).unwrap(),
            build_random_schedule(16, 7, 3).unwrap(),
        ] {
            let ms = measure_noiseless(&scene, &cfg, &sched).unwrap();
            let a = build_sensing_matrix(&cfg, &sched, &grid, DEFAULT_MEMORY_BUDGET).unwrap();
            let sigma = rasterize(&scene, &grid).unwrap();
            let s2 = a.apply(sigma.as_slice());
            let num: f64 = ms
                .data
                .iter()
                .zip(&s2)
                .map(|(a, b)| (a - b).norm_sqr())
                .sum();
            let den: f64 = ms.data.iter().map(|a| a.norm_sqr()).sum();
            assert!((num / den).sqrt() < 1e-12);
        }
    }

    #[test]
    fn adjoint_is_consistent() {
        let cfg = small_cfg();
        let grid = VoxelGrid::centered(cfg.roi_center, [2, 2, 2], [1.0, 1.0, 1.0]);
        let sched = build_random_schedule(16, 5, 1).unwrap();
        let a = build_sensing_matrix(&cfg, &sched, &grid, DEFAULT_MEMORY_BUDGET).unwrap();
        let x: Vec<C64> = (0..8).map(|i| C64::new(i as f64, 1.0)).collect();
        let y: Vec<C64> = (0..a.t_count * 5)
            .map(|i| C64::new(1.0, -(i as f64)))
            .collect();
        let lhs: C64 = a.apply(&x).iter().zip(&y).map(|(p, q)| p.conj() * q).sum();
        let rhs: C64 = x.iter().zip(a.adjoint(&y)).map(|(p, q)| p.conj() * q).sum();
        assert!((lhs - rhs).norm() < 1e-10 * lhs.norm().max(1e-30));
    }

    #[test]
    fn budget_is_enforced_before_allocation() {
        let cfg = SystemConfig::default();
        let grid = VoxelGrid::centered(cfg.roi_center, [60, 60, 60], [0.5, 0.5, 0.5]);
        let sched = crate::phase::build_truncated_dft(10_000, 625).unwrap();
        match build_sensing_matrix(&cfg, &sched, &grid, DEFAULT_MEMORY_BUDGET) {
            Err(Error::Budget { required, .. }) => {
                assert_eq!(required, 21 * 625 * 216_000 * 16);
                assert!(required > 10_000_000_000 && required < 70_000_000_000);
            }
            other => panic!("expected budget error, got {other:?}"),
        }
    }

    #[test]
    fn noise_statistics_and_determinism() {
        let ms = MeasurementSet {
            t_count: 4,
            r_count: 5000,
            data: vec![C64::default(); 20_000],
            noise_variance: 0.0,
            seed: 0,
            scale: 1.0,
        };
        let a = add_noise(&ms, 0.5, 42).unwrap();
        let b = add_noise(&ms, 0.5, 42).unwrap();
        assert_eq!(a, b);
        let p = a.mean_power();
        assert!((p - 0.5).abs() < 0.02, "power {p}");
        let mean: C64 = a.data.iter().sum::<C64>() / a.data.len() as f64;
        assert!(mean.norm() < 0.02);
        let c = add_noise(&ms, 0.5, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn normalization_records_scale() {
        let cfg = small_cfg();
        let scene = Scene::point(Point3::default(), C64::new(1.0, 0.0));
        let ms = measure_noiseless(&scene, &cfg, &build_dft_schedule(16).unwrap()).unwrap();
        let n = normalize_path_energy(&ms).unwrap();
        assert!((n.mean_power() - 1.0).abs() < 1e-12);
        for (a, b) in n.physical().iter().zip(&ms.data) {
            assert!((a - b).norm() < 1e-12 * b.norm().max(1e-300));
        }
    }
}
