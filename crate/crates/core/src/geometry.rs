//! System geometry, frequency grid, voxel grids and scenes.
//!
//! Lengths and frequencies are in whatever unit system the config uses. The
//! default is wavelength-normalized (c = 1, f0 = 1, so lambda0 = 1).

use ndarray::Array3;
use num_complex::Complex64;

use crate::error::{config_err, Error, Result};

pub type C64 = Complex64;

pub const SPEED_OF_LIGHT: f64 = 2.998e8;

#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn dist(&self, o: &Point3) -> f64 {
        let (dx, dy, dz) = (self.x - o.x, self.y - o.y, self.z - o.z);
        (dx * dx + dy * dy + dz * dz).sqrt()
    }

    pub fn sub(&self, o: &Point3) -> Point3 {
        Point3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }

    pub fn norm(&self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Units {
    /// c = 1, f0 = 1, lengths in units of lambda0.
    Normalized,
    /// c = 2.998e8 m/s, frequencies in Hz, lengths in meters.
    Absolute,
}

/// Full description of the RIS-assisted imaging geometry.
#[derive(Clone, Debug, PartialEq)]
pub struct SystemConfig {
    pub units: Units,
    pub speed_of_light: f64,
    pub center_freq: f64,
    /// Center of the RIS, which lies in a y-z plane.
    pub ris_center: Point3,
    /// Element counts (M_y, M_z).
    pub ris_elements: (usize, usize),
    /// Element pitch, identical along y and z.
    pub element_size: f64,
    pub ue: Point3,
    /// Position of the selected AP antenna.
    pub ap: Point3,
    pub roi_center: Point3,
    /// ROI side lengths (L_x, L_y, L_z).
    pub roi_extent: Point3,
    /// Bandwidth over center frequency.
    pub rel_bandwidth: f64,
    /// Subcarrier spacing over center frequency.
    pub rel_spacing: f64,
    pub antenna_gain: C64,
    pub ap_antenna_index: usize,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            units: Units::Normalized,
            speed_of_light: 1.0,
            center_freq: 1.0,
            ris_center: Point3::new(-50.0, 0.0, 0.0),
            ris_elements: (100, 100),
            element_size: 0.5,
            ue: Point3::new(-40.0, -40.0, 0.0),
            ap: Point3::new(20.0, 20.0, 20.0),
            roi_center: Point3::new(0.0, 0.0, 0.0),
            roi_extent: Point3::new(20.0, 20.0, 20.0),
            rel_bandwidth: 1.0 / 15.0,
            rel_spacing: 1.0 / 300.0,
            antenna_gain: C64::new(1.0, 0.0),
            ap_antenna_index: 0,
        }
    }
}

impl SystemConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64, what: &str| -> Result<()> {
            if !(v.is_finite() && v > 0.0) {
                return config_err(format!("{what} must be positive and finite, got {v}"));
            }
            Ok(())
        };
        pos(self.speed_of_light, "speed_of_light")?;
        pos(self.center_freq, "center_freq")?;
        pos(self.element_size, "element_size")?;
        pos(self.rel_bandwidth, "rel_bandwidth")?;
        pos(self.rel_spacing, "rel_spacing")?;
        pos(self.roi_extent.x, "roi extent x")?;
        pos(self.roi_extent.y, "roi extent y")?;
        pos(self.roi_extent.z, "roi extent z")?;
        if self.rel_bandwidth >= 2.0 {
            return config_err(
                "rel_bandwidth must be below 2 so every subcarrier frequency is positive",
            );
        }
        if self.rel_spacing > self.rel_bandwidth {
            return config_err("subcarrier spacing exceeds the bandwidth");
        }
        if self.ris_elements.0 == 0 || self.ris_elements.1 == 0 {
            return config_err("RIS needs at least one element per axis");
        }
        for (p, name) in [
            (self.ris_center, "ris_center"),
            (self.ue, "ue"),
            (self.ap, "ap"),
            (self.roi_center, "roi_center"),
        ] {
            if !p.is_finite() {
                return config_err(format!("{name} is not finite"));
            }
        }
        if !(self.antenna_gain.norm() > 0.0) || !self.antenna_gain.norm().is_finite() {
            return config_err("antenna_gain must be nonzero");
        }
        if self.d0() <= self.roi_extent.x / 2.0 {
            return config_err(format!(
                "ROI must lie in front of the RIS plane: D0 = {} but half ROI depth = {}",
                self.d0(),
                self.roi_extent.x / 2.0
            ));
        }
        Ok(())
    }

    /// Non-fatal geometry warnings. Each element is treated as a point radiator,
    /// which needs every terminal to sit well outside the element's own near field.
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        let diag = std::f64::consts::SQRT_2 * self.element_size;
        let min_dist = (2.0 * diag * diag / self.wavelength()).max(self.wavelength());
        let plane = self.ris_center.x;
        for (p, name) in [(self.ue, "UE"), (self.ap, "AP")] {
            if (p.x - plane).abs() < min_dist {
                out.push(format!(
                    "{name} is {:.3} from the RIS plane, inside the element near-field distance {:.3}",
                    (p.x - plane).abs(),
                    min_dist
                ));
            }
        }
        let roi_near = self.d0() - self.roi_extent.x / 2.0;
        if roi_near < min_dist {
            out.push(format!(
                "ROI front face is {roi_near:.3} from the RIS plane"
            ));
        }
        out
    }

    pub fn wavelength(&self) -> f64 {
        self.speed_of_light / self.center_freq
    }

    /// Distance from the RIS plane to the ROI center along x.
    pub fn d0(&self) -> f64 {
        self.roi_center.x - self.ris_center.x
    }

    pub fn bandwidth(&self) -> f64 {
        self.rel_bandwidth * self.center_freq
    }

    pub fn spacing(&self) -> f64 {
        self.rel_spacing * self.center_freq
    }

    pub fn num_subcarriers(&self) -> usize {
        (self.rel_bandwidth / self.rel_spacing + 1e-9).floor() as usize + 1
    }

    pub fn frequencies(&self) -> FrequencyGrid {
        FrequencyGrid::new(self)
    }

    pub fn num_elements(&self) -> usize {
        self.ris_elements.0 * self.ris_elements.1
    }

    /// Physical RIS side lengths (M_y xi, M_z xi).
    pub fn aperture_extent(&self) -> (f64, f64) {
        (
            self.ris_elements.0 as f64 * self.element_size,
            self.ris_elements.1 as f64 * self.element_size,
        )
    }

    pub fn element_aperture(&self) -> Aperture {
        Aperture {
            ny: self.ris_elements.0,
            nz: self.ris_elements.1,
            pitch: self.element_size,
            center: self.ris_center,
        }
    }

    /// Element positions in column-major order (m = u + M_y v).
    pub fn element_positions(&self) -> Vec<Point3> {
        self.element_aperture().positions()
    }
}

/// A regular rectangular array of radiating sites in the RIS plane: either the
/// RIS elements themselves or blocks of them.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aperture {
    pub ny: usize,
    pub nz: usize,
    pub pitch: f64,
    pub center: Point3,
}

impl Aperture {
    pub fn len(&self) -> usize {
        self.ny * self.nz
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn y(&self, u: usize) -> f64 {
        self.center.y + (u as f64 - (self.ny as f64 - 1.0) / 2.0) * self.pitch
    }

    pub fn z(&self, v: usize) -> f64 {
        self.center.z + (v as f64 - (self.nz as f64 - 1.0) / 2.0) * self.pitch
    }

    pub fn position(&self, u: usize, v: usize) -> Point3 {
        Point3::new(self.center.x, self.y(u), self.z(v))
    }

    /// All positions, column-major (u fastest).
    pub fn positions(&self) -> Vec<Point3> {
        let mut out = Vec::with_capacity(self.len());
        for v in 0..self.nz {
            for u in 0..self.ny {
                out.push(self.position(u, v));
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrequencyGrid {
    pub freqs: Vec<f64>,
    pub wavenumbers: Vec<f64>,
    pub k0: f64,
}

impl FrequencyGrid {
    pub fn new(cfg: &SystemConfig) -> Self {
        let t_count = cfg.num_subcarriers();
        let f_start = cfg.center_freq - cfg.bandwidth() / 2.0;
        let freqs: Vec<f64> = (0..t_count)
            .map(|t| f_start + t as f64 * cfg.spacing())
            .collect();
        let two_pi_over_c = 2.0 * std::f64::consts::PI / cfg.speed_of_light;
        let wavenumbers = freqs.iter().map(|f| two_pi_over_c * f).collect();
        Self {
            freqs,
            wavenumbers,
            k0: two_pi_over_c * cfg.center_freq,
        }
    }

    pub fn len(&self) -> usize {
        self.freqs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.freqs.is_empty()
    }

    pub fn f_min(&self) -> f64 {
        self.freqs[0]
    }

    pub fn f_max(&self) -> f64 {
        *self.freqs.last().unwrap()
    }
}

/// Regular voxel grid. Voxel (i, j, l) sits at `origin + (i px, j py, l pz)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VoxelGrid {
    pub counts: [usize; 3],
    pub pitch: [f64; 3],
    pub origin: Point3,
}

impl VoxelGrid {
    /// Grid centered on `center`: index floor(n/2) lands on the center along each axis.
    pub fn centered(center: Point3, counts: [usize; 3], pitch: [f64; 3]) -> Self {
        let off = |c: f64, n: usize, p: f64| c - (n / 2) as f64 * p;
        Self {
            counts,
            pitch,
            origin: Point3::new(
                off(center.x, counts[0], pitch[0]),
                off(center.y, counts[1], pitch[1]),
                off(center.z, counts[2], pitch[2]),
            ),
        }
    }

    /// Imaging grid for an aperture of `aperture.ny x aperture.nz` sites.
    ///
    /// Cross-range pitch is `aperture.pitch / oversampling`; the count is the padded
    /// transform size clipped to the ROI. Range uses `n_x` slices spanning the ROI depth
    /// including both end slices.
    pub fn imaging(
        cfg: &SystemConfig,
        aperture: &Aperture,
        spatial_pad: usize,
        oversampling: f64,
        n_x: usize,
    ) -> Result<Self> {
        if spatial_pad == 0 {
            return config_err("spatial padding must be at least 1");
        }
        if n_x == 0 {
            return config_err("need at least one range slice");
        }
        let ky = image_transform_size(aperture.ny * spatial_pad, oversampling)?;
        let kz = image_transform_size(aperture.nz * spatial_pad, oversampling)?;
        let pitch = aperture.pitch / oversampling;
        let clip = |k: usize, extent: f64| k.min((extent / pitch + 1e-9).floor() as usize + 1);
        let ny = clip(ky, cfg.roi_extent.y);
        let nz = clip(kz, cfg.roi_extent.z);
        let (x0, px) = if n_x == 1 {
            (cfg.roi_center.x, cfg.roi_extent.x)
        } else {
            (
                cfg.roi_center.x - cfg.roi_extent.x / 2.0,
                cfg.roi_extent.x / (n_x - 1) as f64,
            )
        };
        let c = cfg.roi_center;
        Ok(Self {
            counts: [n_x, ny, nz],
            pitch: [px, pitch, pitch],
            origin: Point3::new(
                x0,
                c.y - (ny / 2) as f64 * pitch,
                c.z - (nz / 2) as f64 * pitch,
            ),
        })
    }

    pub fn len(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.counts[0], self.counts[1], self.counts[2])
    }

    pub fn coord(&self, axis: usize, i: usize) -> f64 {
        let o = [self.origin.x, self.origin.y, self.origin.z][axis];
        o + i as f64 * self.pitch[axis]
    }

    pub fn position(&self, ix: usize, iy: usize, iz: usize) -> Point3 {
        Point3::new(self.coord(0, ix), self.coord(1, iy), self.coord(2, iz))
    }

    /// Flat row-major index, x slowest.
    pub fn index(&self, ix: usize, iy: usize, iz: usize) -> usize {
        (ix * self.counts[1] + iy) * self.counts[2] + iz
    }

    pub fn unflatten(&self, n: usize) -> (usize, usize, usize) {
        let iz = n % self.counts[2];
        let iy = (n / self.counts[2]) % self.counts[1];
        let ix = n / (self.counts[1] * self.counts[2]);
        (ix, iy, iz)
    }

    /// Voxel positions in flat order.
    pub fn positions(&self) -> Vec<Point3> {
        (0..self.len())
            .map(|n| {
                let (a, b, c) = self.unflatten(n);
                self.position(a, b, c)
            })
            .collect()
    }

    /// Nearest voxel to `p`, or None when `p` is more than half a pitch outside.
    pub fn nearest(&self, p: &Point3) -> Option<(usize, usize, usize)> {
        let idx = |axis: usize, v: f64| -> Option<usize> {
            let o = [self.origin.x, self.origin.y, self.origin.z][axis];
            let n = self.counts[axis];
            if n == 1 {
                let half = self.pitch[axis] / 2.0;
                return ((v - o).abs() <= half + 1e-9).then_some(0);
            }
            let f = ((v - o) / self.pitch[axis]).round();
            (f >= 0.0 && (f as usize) < n).then_some(f as usize)
        };
        Some((idx(0, p.x)?, idx(1, p.y)?, idx(2, p.z)?))
    }
}

/// Padded image transform size `k * oversampling`, which must be an integer.
pub fn image_transform_size(k: usize, oversampling: f64) -> Result<usize> {
    if !(oversampling.is_finite() && oversampling >= 1.0) {
        return config_err(format!("oversampling must be >= 1, got {oversampling}"));
    }
    let v = k as f64 * oversampling;
    let r = v.round();
    if (v - r).abs() > 1e-9 {
        return config_err(format!(
            "oversampling {oversampling} gives non-integer transform size {v} for {k} samples"
        ));
    }
    Ok(r as usize)
}

/// Complex reflectivity sampled on a voxel grid, stored as [x, y, z].
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexVolume {
    pub grid: VoxelGrid,
    pub data: Array3<C64>,
}

impl ComplexVolume {
    pub fn zeros(grid: VoxelGrid) -> Self {
        Self {
            grid,
            data: Array3::zeros(grid.shape()),
        }
    }

    pub fn from_flat(grid: VoxelGrid, flat: Vec<C64>) -> Result<Self> {
        let data =
            Array3::from_shape_vec(grid.shape(), flat).map_err(|e| Error::Shape(e.to_string()))?;
        Ok(Self { grid, data })
    }

    pub fn as_slice(&self) -> &[C64] {
        self.data.as_slice().expect("standard layout")
    }

    pub fn as_mut_slice(&mut self) -> &mut [C64] {
        self.data.as_slice_mut().expect("standard layout")
    }

    /// Flat index and magnitude of the largest-magnitude voxel.
    pub fn peak(&self) -> (usize, f64) {
        let mut best = (0, -1.0);
        for (i, v) in self.as_slice().iter().enumerate() {
            let a = v.norm();
            if a > best.1 {
                best = (i, a);
            }
        }
        best
    }

    pub fn norm_sqr(&self) -> f64 {
        self.as_slice().iter().map(|v| v.norm_sqr()).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Scatterer {
    pub position: Point3,
    pub coefficient: C64,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct Scene {
    pub scatterers: Vec<Scatterer>,
}

impl Scene {
    pub fn new(scatterers: Vec<Scatterer>) -> Self {
        Self { scatterers }
    }

    pub fn point(position: Point3, coefficient: C64) -> Self {
        Self::new(vec![Scatterer {
            position,
            coefficient,
        }])
    }

    /// Same scene with each scatterer moved to its voxel center; coefficients
    /// sharing a voxel are summed.
    pub fn snapped(&self, grid: &VoxelGrid) -> Result<Scene> {
        let vol = rasterize(self, grid)?;
        Ok(Scene::from_volume(&vol))
    }

    /// One scatterer per nonzero voxel.
    pub fn from_volume(vol: &ComplexVolume) -> Scene {
        let g = &vol.grid;
        let scatterers = vol
            .as_slice()
            .iter()
            .enumerate()
            .filter(|(_, c)| c.norm_sqr() > 0.0)
            .map(|(n, c)| {
                let (a, b, d) = g.unflatten(n);
                Scatterer {
                    position: g.position(a, b, d),
                    coefficient: *c,
                }
            })
            .collect();
        Scene { scatterers }
    }
}

/// Place scatterers on their nearest voxels, summing collisions.
pub fn rasterize(scene: &Scene, grid: &VoxelGrid) -> Result<ComplexVolume> {
    let mut vol = ComplexVolume::zeros(*grid);
    for s in &scene.scatterers {
        let (a, b, c) = grid.nearest(&s.position).ok_or_else(|| {
            Error::Config(format!(
                "scatterer at ({}, {}, {}) lies outside the ROI grid",
                s.position.x, s.position.y, s.position.z
            ))
        })?;
        vol.data[[a, b, c]] += s.coefficient;
    }
    Ok(vol)
}
