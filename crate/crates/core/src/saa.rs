//! FFT-based synthetic-aperture imaging from a recovered ECR.
//!
//! Per subcarrier: 2D DFT of the (optionally zero-padded) ECR, spherical-wave
//! decomposition filter `-j kx exp(j kx D0)`, range shift per slice, padded 2D
//! inverse DFT cropped to the ROI, then removal of the UE-to-voxel leg. The
//! subcarrier images are summed coherently.
//!
//! [`SaaKernel`] holds the per-subcarrier tables and is shared with the
//! sparse-imaging operators so both produce identical numbers.

use rayon::prelude::*;

use crate::ecr::EcrEstimate;
use crate::error::{config_err, Error, Result};
use crate::fft::{signed_bin, BandFft, BandWork, Fft2};
use crate::geometry::{
    image_transform_size, Aperture, ComplexVolume, SystemConfig, VoxelGrid, C64,
};

/// Above this many cached entries the UE-leg table is recomputed on the fly.
const P2_CACHE_LIMIT: usize = 8 << 20;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImagingOptions {
    /// Spatial zero-padding factor of the ECR before its DFT (enlarges the imaged window).
    pub spatial_pad: usize,
    /// k-space zero-padding factor (cross-range pitch = aperture pitch / oversampling).
    pub oversampling: f64,
    /// Number of range slices across the ROI depth.
    pub n_x: usize,
}

impl Default for ImagingOptions {
    fn default() -> Self {
        Self {
            spatial_pad: 1,
            oversampling: 1.0,
            n_x: 21,
        }
    }
}

/// Wavenumber samples of a `ky x kz` aperture transform at wavenumber `k`.
#[derive(Clone, Debug, PartialEq)]
pub struct DispersionGrid {
    pub ky: Vec<f64>,
    pub kz: Vec<f64>,
    /// `sqrt(k^2 - ky^2 - kz^2)` per bin (row-major), 0 where evanescent.
    pub kx: Vec<f64>,
    pub propagating: Vec<bool>,
}

/// Signed-bin wavenumbers `2 pi m / (K pitch)` for a `pad`-padded aperture.
pub fn wavenumber_grid(aperture: &Aperture, pad: usize, k: f64) -> DispersionGrid {
    let (ny, nz) = (aperture.ny * pad, aperture.nz * pad);
    let axis = |n: usize| -> Vec<f64> {
        (0..n)
            .map(|i| {
                2.0 * std::f64::consts::PI * signed_bin(i, n) as f64 / (n as f64 * aperture.pitch)
            })
            .collect()
    };
    let (ky, kz) = (axis(ny), axis(nz));
    let mut kx = Vec::with_capacity(ny * nz);
    let mut propagating = Vec::with_capacity(ny * nz);
    for a in &ky {
        for b in &kz {
            let q = k * k - a * a - b * b;
            propagating.push(q > 0.0);
            kx.push(if q > 0.0 { q.sqrt() } else { 0.0 });
        }
    }
    DispersionGrid {
        ky,
        kz,
        kx,
        propagating,
    }
}

struct SubTables {
    k: f64,
    /// Propagating band bins.
    prop: Vec<usize>,
    kx: Vec<f64>,
    /// `-j kx exp(j kx D0)` times the aperture and image reference phases.
    pre: Vec<C64>,
}

pub struct SaaKernel {
    pub grid: VoxelGrid,
    pub aperture: Aperture,
    /// Aperture transform size (padded ECR).
    pub k_ap: (usize, usize),
    /// Image transform size.
    pub k_img: (usize, usize),
    band: BandFft,
    ap_fft: Fft2,
    d1: Vec<f64>,
    tables: Vec<SubTables>,
    p2_cache: Option<Vec<Vec<C64>>>,
}

impl SaaKernel {
    pub fn new(cfg: &SystemConfig, aperture: &Aperture, opts: &ImagingOptions) -> Result<Self> {
        let grid =
            VoxelGrid::imaging(cfg, aperture, opts.spatial_pad, opts.oversampling, opts.n_x)?;
        Self::with_grid(cfg, aperture, opts, grid)
    }

    /// Kernel on an explicit voxel grid. The cross-range pitch must equal
    /// `aperture.pitch / oversampling` and the grid must fit the image window.
    pub fn with_grid(
        cfg: &SystemConfig,
        aperture: &Aperture,
        opts: &ImagingOptions,
        grid: VoxelGrid,
    ) -> Result<Self> {
        if opts.spatial_pad == 0 {
            return config_err("spatial padding must be at least 1");
        }
        let k_ap = (
            aperture.ny * opts.spatial_pad,
            aperture.nz * opts.spatial_pad,
        );
        let k_img = (
            image_transform_size(k_ap.0, opts.oversampling)?,
            image_transform_size(k_ap.1, opts.oversampling)?,
        );
        let pitch = aperture.pitch / opts.oversampling;
        for axis in [1, 2] {
            if (grid.pitch[axis] - pitch).abs() > 1e-9 * pitch {
                return config_err(format!(
                    "voxel pitch {} does not match aperture pitch / oversampling = {pitch}",
                    grid.pitch[axis]
                ));
            }
        }
        if grid.counts[1] > k_img.0 || grid.counts[2] > k_img.1 {
            return config_err("voxel grid is larger than the image transform window");
        }
        let band = BandFft::new(
            k_ap.0,
            k_ap.1,
            k_img.0,
            k_img.1,
            grid.counts[1],
            grid.counts[2],
        );
        let d1: Vec<f64> = grid.positions().iter().map(|p| p.dist(&cfg.ue)).collect();
        let d_plane = -cfg.ris_center.x;
        let (y_first, z_first) = (aperture.y(0), aperture.z(0));
        let (y_g, z_g) = (grid.origin.y, grid.origin.z);
        let tables = cfg
            .frequencies()
            .wavenumbers
            .iter()
            .map(|&k| {
                let dg = wavenumber_grid(aperture, opts.spatial_pad, k);
                let mut prop = Vec::new();
                let mut pre = vec![C64::default(); dg.kx.len()];
                for i in 0..k_ap.0 {
                    for j in 0..k_ap.1 {
                        let b = i * k_ap.1 + j;
                        if !dg.propagating[b] {
                            continue;
                        }
                        prop.push(b);
                        let kx = dg.kx[b];
                        let ref_phase = dg.ky[i] * (y_g - y_first) + dg.kz[j] * (z_g - z_first);
                        pre[b] =
                            C64::new(0.0, -kx) * C64::from_polar(1.0, kx * d_plane + ref_phase);
                    }
                }
                SubTables {
                    k,
                    prop,
                    kx: dg.kx,
                    pre,
                }
            })
            .collect::<Vec<_>>();
        let mut kernel = Self {
            grid,
            aperture: *aperture,
            k_ap,
            k_img,
            band,
            ap_fft: Fft2::new(k_ap.0, k_ap.1),
            d1,
            tables,
            p2_cache: None,
        };
        if kernel.d1.len() * kernel.tables.len() <= P2_CACHE_LIMIT {
            let cache = (0..kernel.tables.len())
                .map(|t| kernel.compute_p2(t))
                .collect();
            kernel.p2_cache = Some(cache);
        }
        Ok(kernel)
    }

    pub fn t_count(&self) -> usize {
        self.tables.len()
    }

    pub fn wavenumber(&self, t: usize) -> f64 {
        self.tables[t].k
    }

    fn compute_p2(&self, t: usize) -> Vec<C64> {
        let k = self.tables[t].k;
        self.d1
            .iter()
            .map(|d| C64::from_polar(1.0 / (2.0 * d), -k * d))
            .collect()
    }

    /// UE-leg table `exp(-j k d1) / (2 d1)` per voxel for subcarrier `t`.
    pub fn p2(&self, t: usize) -> std::borrow::Cow<'_, [C64]> {
        match &self.p2_cache {
            Some(c) => std::borrow::Cow::Borrowed(&c[t]),
            None => std::borrow::Cow::Owned(self.compute_p2(t)),
        }
    }

    /// Range-slice factor entry `P1[t](n_x, bin)`: `pre * exp(j kx x_n)`.
    pub fn p1(&self, t: usize, ix: usize, bin: usize) -> C64 {
        let tb = &self.tables[t];
        if tb.pre[bin] == C64::default() {
            return C64::default();
        }
        tb.pre[bin] * C64::from_polar(1.0, tb.kx[bin] * self.grid.coord(0, ix))
    }

    /// Unshifted 2D DFT of the zero-padded ECR (`k_ap.0 x k_ap.1`, row-major over y, z).
    pub fn spectrum(&self, ecr: &[C64]) -> Result<Vec<C64>> {
        let (my, mz) = (self.aperture.ny, self.aperture.nz);
        if ecr.len() != my * mz {
            return Err(Error::Shape(format!(
                "ECR has {} entries, aperture has {}",
                ecr.len(),
                my * mz
            )));
        }
        let mut buf = vec![C64::default(); self.k_ap.0 * self.k_ap.1];
        for v in 0..mz {
            for u in 0..my {
                buf[u * self.k_ap.1 + v] = ecr[u + my * v];
            }
        }
        self.ap_fft.forward(&mut buf);
        Ok(buf)
    }

    /// Inverse of [`spectrum`]: inverse DFT then crop to the aperture.
    pub fn ecr_from_spectrum(&self, mut spec: Vec<C64>) -> Vec<C64> {
        self.ap_fft.inverse(&mut spec);
        let (my, mz) = (self.aperture.ny, self.aperture.nz);
        let mut out = vec![C64::default(); my * mz];
        for v in 0..mz {
            for u in 0..my {
                out[u + my * v] = spec[u * self.k_ap.1 + v];
            }
        }
        out
    }

    /// Add the subcarrier-`t` image of `spec` into `out` (flat voxel order).
    pub fn accumulate_image(&self, t: usize, spec: &[C64], out: &mut [C64]) {
        assert_eq!(out.len(), self.grid.len());
        let tb = &self.tables[t];
        let p2 = self.p2(t);
        let slice = self.grid.counts[1] * self.grid.counts[2];
        out.par_chunks_mut(slice)
            .zip(p2.par_chunks(slice))
            .enumerate()
            .for_each_init(
                || {
                    (
                        BandWork::default(),
                        vec![C64::default(); spec.len()],
                        vec![C64::default(); slice],
                    )
                },
                |(work, shifted, img), (ix, (dst, p2s))| {
                    let x = self.grid.coord(0, ix);
                    shifted.iter_mut().for_each(|v| *v = C64::default());
                    for &b in &tb.prop {
                        shifted[b] = tb.pre[b] * C64::from_polar(1.0, tb.kx[b] * x) * spec[b];
                    }
                    self.band.band_to_image(shifted, img, work);
                    for ((d, v), p) in dst.iter_mut().zip(img.iter()).zip(p2s) {
                        *d += v / p;
                    }
                },
            );
    }

    /// Map a volume back to the aperture spectrum of subcarrier `t`:
    /// undo the UE leg, transform each slice, undo its range shift, average
    /// over slices and divide out the propagation filter.
    pub fn volume_to_spectrum(&self, t: usize, vol: &[C64]) -> Vec<C64> {
        assert_eq!(vol.len(), self.grid.len());
        let tb = &self.tables[t];
        let p2 = self.p2(t);
        let slice = self.grid.counts[1] * self.grid.counts[2];
        let nb = self.k_ap.0 * self.k_ap.1;
        let per_slice: Vec<Vec<C64>> = vol
            .par_chunks(slice)
            .zip(p2.par_chunks(slice))
            .enumerate()
            .map_init(
                || (BandWork::default(), vec![C64::default(); slice]),
                |(work, img), (ix, (src, p2s))| {
                    for ((d, s), p) in img.iter_mut().zip(src).zip(p2s) {
                        *d = s * p;
                    }
                    let mut band = vec![C64::default(); nb];
                    self.band.image_to_band(img, &mut band, work);
                    let x = self.grid.coord(0, ix);
                    let mut out = vec![C64::default(); tb.prop.len()];
                    for (o, &b) in out.iter_mut().zip(&tb.prop) {
                        *o = band[b] * C64::from_polar(1.0, -tb.kx[b] * x);
                    }
                    out
                },
            )
            .collect();
        let inv_nx = 1.0 / self.grid.counts[0] as f64;
        let mut spec = vec![C64::default(); nb];
        for (i, &b) in tb.prop.iter().enumerate() {
            let s: C64 = per_slice.iter().map(|p| p[i]).sum();
            spec[b] = s * inv_nx / tb.pre[b];
        }
        spec
    }
}

/// SAA image from a recovered ECR, summed over all subcarriers.
pub fn image_saa(
    ecr: &EcrEstimate,
    cfg: &SystemConfig,
    opts: &ImagingOptions,
) -> Result<ComplexVolume> {
    let kernel = SaaKernel::new(cfg, &ecr.aperture, opts)?;
    image_saa_with(&kernel, ecr)
}

/// SAA image using a prebuilt kernel.
pub fn image_saa_with(kernel: &SaaKernel, ecr: &EcrEstimate) -> Result<ComplexVolume> {
    if ecr.t_count != kernel.t_count() {
        return Err(Error::Shape(format!(
            "ECR has {} subcarriers, kernel has {}",
            ecr.t_count,
            kernel.t_count()
        )));
    }
    if ecr.aperture != kernel.aperture {
        return Err(Error::Shape(
            "ECR aperture differs from the kernel aperture".into(),
        ));
    }
    let mut vol = ComplexVolume::zeros(kernel.grid);
    for t in 0..ecr.t_count {
        let spec = kernel.spectrum(ecr.row(t))?;
        kernel.accumulate_image(t, &spec, vol.as_mut_slice());
    }
    if vol.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical(
            "SAA image contains non-finite values".into(),
        ));
    }
    Ok(vol)
}

/// Single-subcarrier SAA image.
pub fn subimage(kernel: &SaaKernel, ecr_row: &[C64], t: usize) -> Result<ComplexVolume> {
    let mut vol = ComplexVolume::zeros(kernel.grid);
    let spec = kernel.spectrum(ecr_row)?;
    kernel.accumulate_image(t, &spec, vol.as_mut_slice());
    Ok(vol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::ecr_at;
    use crate::ecr::RecoveryMethod;
    use crate::geometry::{Point3, Scene};

    #[test]
    fn wavenumber_bins() {
        let ap = Aperture {
            ny: 8,
            nz: 8,
            pitch: 0.5,
            center: Point3::default(),
        };
        let g = wavenumber_grid(&ap, 1, 2.0 * std::f64::consts::PI);
        let dk = 2.0 * std::f64::consts::PI / 4.0;
        assert!((g.ky[1] - dk).abs() < 1e-12);
        assert!((g.ky[4] + 4.0 * dk).abs() < 1e-12);
        // corner bin (-4, -4) is evanescent: |k_yz| = 4 dk sqrt 2 > k
        assert!(!g.propagating[4 * 8 + 4]);
        assert!(g.propagating[0]);
        let g2 = wavenumber_grid(&ap, 2, 1.0);
        assert!((g2.ky[1] - dk / 2.0).abs() < 1e-12);
    }

    #[test]
    fn constant_ecr_spectrum_is_impulse() {
        let mut cfg = SystemConfig::default();
        cfg.ris_elements = (6, 6);
        cfg.ris_center = Point3::new(-8.0, 0.0, 0.0);
        let ap = cfg.element_aperture();
        let opts = ImagingOptions {
            spatial_pad: 1,
            oversampling: 1.0,
            n_x: 3,
        };
        let k = SaaKernel::new(&cfg, &ap, &opts).unwrap();
        let s = k.spectrum(&vec![C64::new(1.0, 0.0); 36]).unwrap();
        assert!((s[0] - C64::new(36.0, 0.0)).norm() < 1e-12);
        assert!(s[1..].iter().all(|v| v.norm() < 1e-12));
        let back = k.ecr_from_spectrum(s);
        assert!(back.iter().all(|v| (v - C64::new(1.0, 0.0)).norm() < 1e-12));
    }

    #[test]
    fn point_target_peaks_at_its_voxel() {
        let cfg = SystemConfig {
            ris_elements: (24, 24),
            ris_center: Point3::new(-12.0, 0.0, 0.0),
            ue: Point3::new(-10.0, -8.0, 0.0),
            ap: Point3::new(4.0, 4.0, 4.0),
            roi_extent: Point3::new(6.0, 6.0, 6.0),
            rel_bandwidth: 0.5,
            rel_spacing: 1.0 / 30.0,
            ..SystemConfig::default()
        };
        let opts = ImagingOptions {
            spatial_pad: 1,
            oversampling: 2.0,
            n_x: 13,
        };
        let ap = cfg.element_aperture();
        let kernel = SaaKernel::new(&cfg, &ap, &opts).unwrap();
        let target = kernel.grid.position(8, 14, 10);
        let scene = Scene::point(target, C64::new(1.0, 0.0));
        let freqs = cfg.frequencies();
        let mut data = Vec::new();
        for &k in &freqs.wavenumbers {
            data.extend(ecr_at(&scene, &cfg, &cfg.element_positions(), k));
        }
        let ecr = EcrEstimate {
            t_count: freqs.len(),
            aperture: ap,
            data,
            method: RecoveryMethod::Ifft,
        };
        let vol = image_saa_with(&kernel, &ecr).unwrap();
        let (peak, _) = vol.peak();
        assert_eq!(kernel.grid.unflatten(peak), (8, 14, 10));
    }

    #[test]
    fn spectrum_round_trip_on_band() {
        let cfg = SystemConfig {
            ris_elements: (8, 8),
            ris_center: Point3::new(-6.0, 0.0, 0.0),
            roi_extent: Point3::new(2.0, 1.75, 1.75),
            ..SystemConfig::default()
        };
        let ap = cfg.element_aperture();
        let opts = ImagingOptions {
            spatial_pad: 1,
            oversampling: 2.0,
            n_x: 3,
        };
        let kernel = SaaKernel::new(&cfg, &ap, &opts).unwrap();
        assert_eq!(kernel.grid.counts, [3, 8, 8]);
        let _ = kernel;
        let cfg_full = SystemConfig {
            roi_extent: Point3::new(2.0, 8.0, 8.0),
            ..cfg
        };
        let kernel = SaaKernel::new(&cfg_full, &ap, &opts).unwrap();
        assert_eq!(kernel.grid.counts, [3, 16, 16]);
        let spec: Vec<C64> = (0..64)
            .map(|i| {
                if kernel.tables[0].pre[i] == C64::default() {
                    C64::default()
                } else {
                    C64::new((i as f64).sin(), (i as f64 * 0.3).cos())
                }
            })
            .collect();
        let mut vol = vec![C64::default(); kernel.grid.len()];
        kernel.accumulate_image(0, &spec, &mut vol);
        let back = kernel.volume_to_spectrum(0, &vol);
        for (a, b) in back.iter().zip(&spec) {
            assert!((a - b).norm() < 1e-9 * (1.0 + b.norm()));
        }
    }
}
