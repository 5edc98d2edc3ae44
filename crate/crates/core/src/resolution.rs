//! Diffraction resolution limits, sampling limits and measured PSF widths.

use crate::channel::measure_noiseless;
use crate::ecr::{recover_ecr, RecoveryMethod};
use crate::error::{config_err, Error, Result};
use crate::geometry::{ComplexVolume, Point3, Scene, SystemConfig, C64};
use crate::phase::build_dft_schedule;
use crate::saa::{image_saa, ImagingOptions};

/// Relative level below which a local minimum counts as a null.
pub const NULL_LEVEL: f64 = 0.05;

/// Angle subtended by an aperture of length `l` at distance `d0` on its axis.
pub fn subtended_angle(l: f64, d0: f64) -> f64 {
    2.0 * (l / (l * l + 4.0 * d0 * d0).sqrt()).asin()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DrlInputs {
    pub bandwidth: f64,
    pub f_min: f64,
    pub f0: f64,
    pub c: f64,
    /// Angle between the UE-to-target direction and the RIS normal (+x).
    pub theta: f64,
    pub gamma_y: f64,
    pub gamma_z: f64,
}

impl DrlInputs {
    /// Inputs for a target at `target`, using the exact angular extent of the RIS.
    pub fn from_config(cfg: &SystemConfig, target: &Point3) -> Self {
        let dir = target.sub(&cfg.ue);
        let theta = (dir.x / dir.norm()).clamp(-1.0, 1.0).acos();
        let depth = target.x - cfg.ris_center.x;
        let (ly, lz) = cfg.aperture_extent();
        let span = |c: f64, l: f64, t: f64| {
            ((c + l / 2.0 - t) / depth).atan() - ((c - l / 2.0 - t) / depth).atan()
        };
        let f = cfg.frequencies();
        Self {
            bandwidth: cfg.bandwidth(),
            f_min: f.f_min(),
            f0: cfg.center_freq,
            c: cfg.speed_of_light,
            theta,
            gamma_y: span(cfg.ris_center.y, ly, target.y),
            gamma_z: span(cfg.ris_center.z, lz, target.z),
        }
    }

    pub fn gamma_max(&self) -> f64 {
        self.gamma_y.max(self.gamma_z)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Resolution {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

/// Theoretical diffraction resolution limits. Zero subtended angles give `+inf`.
pub fn drl(inp: &DrlInputs) -> Resolution {
    let lambda0 = inp.c / inp.f0;
    let cross = |g: f64| {
        let s = (g / 2.0).sin();
        if s > 0.0 {
            lambda0 / (2.0 * s)
        } else {
            f64::INFINITY
        }
    };
    let bk =
        inp.bandwidth * (1.0 + inp.theta.cos()) + inp.f_min * (1.0 - (inp.gamma_max() / 2.0).cos());
    Resolution {
        x: if bk > 0.0 { inp.c / bk } else { f64::INFINITY },
        y: cross(inp.gamma_y),
        z: cross(inp.gamma_z),
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NyquistLimits {
    pub max_element_spacing_y: f64,
    pub max_element_spacing_z: f64,
    pub max_subcarrier_spacing: f64,
    pub element_ok: bool,
    pub subcarrier_ok: bool,
}

/// Largest element pitch and subcarrier spacing that avoid aliasing in the ROI.
pub fn nyquist_limits(cfg: &SystemConfig) -> NyquistLimits {
    let lambda_min = cfg.speed_of_light / cfg.frequencies().f_max();
    let d0 = cfg.d0();
    let (lsy, lsz) = cfg.aperture_extent();
    let lim = |ls: f64, li: f64| {
        let l = ls + li;
        lambda_min * (l * l / 4.0 + d0 * d0).sqrt() / l
    };
    let dy = lim(lsy, cfg.roi_extent.y);
    let dz = lim(lsz, cfg.roi_extent.z);
    let df = cfg.speed_of_light / (2.0 * cfg.roi_extent.x);
    NyquistLimits {
        max_element_spacing_y: dy,
        max_element_spacing_z: dz,
        max_subcarrier_spacing: df,
        element_ok: cfg.element_size <= dy.min(dz),
        subcarrier_ok: cfg.spacing() <= df,
    }
}

/// Magnitude profile along one axis through a voxel.
#[derive(Clone, Debug, PartialEq)]
pub struct PsfProfile {
    pub axis: usize,
    pub coords: Vec<f64>,
    pub magnitude: Vec<f64>,
    pub peak: usize,
    /// Refined null positions relative to the peak coordinate (negative, positive).
    pub nulls: Option<(f64, f64)>,
}

impl PsfProfile {
    pub fn new(coords: Vec<f64>, magnitude: Vec<f64>, axis: usize) -> Result<Self> {
        if coords.len() != magnitude.len() || coords.len() < 3 {
            return Err(Error::Shape(
                "profile needs at least three matching samples".into(),
            ));
        }
        let peak = magnitude
            .iter()
            .enumerate()
            .fold((0, f64::MIN), |a, (i, &v)| if v > a.1 { (i, v) } else { a })
            .0;
        Ok(Self {
            axis,
            coords,
            magnitude,
            peak,
            nulls: None,
        })
    }

    /// Line through `through` along `axis` (0 = x, 1 = y, 2 = z).
    pub fn from_volume(
        vol: &ComplexVolume,
        axis: usize,
        through: (usize, usize, usize),
    ) -> Result<Self> {
        if axis > 2 {
            return config_err(format!("axis must be 0, 1 or 2, got {axis}"));
        }
        let g = &vol.grid;
        let n = g.counts[axis];
        let mut coords = Vec::with_capacity(n);
        let mut mags = Vec::with_capacity(n);
        for i in 0..n {
            let idx = match axis {
                0 => (i, through.1, through.2),
                1 => (through.0, i, through.2),
                _ => (through.0, through.1, i),
            };
            coords.push(g.coord(axis, i));
            mags.push(vol.data[[idx.0, idx.1, idx.2]].norm());
        }
        let mut p = Self::new(coords, mags, axis)?;
        p.peak = [through.0, through.1, through.2][axis];
        Ok(p)
    }

    fn refine(&self, j: usize) -> f64 {
        let x = self.coords[j];
        if j == 0 || j + 1 >= self.magnitude.len() {
            return x;
        }
        let p = |i: usize| self.magnitude[i] * self.magnitude[i];
        let (a, b, c) = (p(j - 1), p(j), p(j + 1));
        let den = a - 2.0 * b + c;
        if den <= 0.0 {
            return x;
        }
        let off = (0.5 * (a - c) / den).clamp(-0.5, 0.5);
        x + off * (self.coords[j + 1] - self.coords[j])
    }

    fn find_null(&self, dir: isize) -> Option<usize> {
        let level = NULL_LEVEL * self.magnitude[self.peak];
        let n = self.magnitude.len() as isize;
        let mut j = self.peak as isize + dir;
        while j >= 1 && j + 1 < n {
            let (prev, cur, next) = (
                self.magnitude[(j - dir) as usize],
                self.magnitude[j as usize],
                self.magnitude[(j + dir) as usize],
            );
            if cur <= prev && cur <= next && cur < level {
                return Some(j as usize);
            }
            j += dir;
        }
        None
    }

    /// Locate the first nulls on each side; returns the mean peak-to-null distance.
    pub fn first_null_width(&mut self) -> Result<f64> {
        let (l, r) = match (self.find_null(-1), self.find_null(1)) {
            (Some(l), Some(r)) => (l, r),
            _ => {
                return Err(Error::Numerical(
                    "PSF truncated, enlarge ROI or padding".into(),
                ))
            }
        };
        let x0 = self.coords[self.peak];
        let (nl, nr) = (self.refine(l) - x0, self.refine(r) - x0);
        self.nulls = Some((nl, nr));
        Ok((nr - nl) / 2.0)
    }

    /// Largest magnitude outside the main lobe, relative to the peak.
    pub fn sidelobe_ratio(&mut self) -> Result<f64> {
        self.first_null_width()?;
        let (nl, nr) = self.nulls.unwrap();
        let x0 = self.coords[self.peak];
        let pk = self.magnitude[self.peak];
        let side = self
            .coords
            .iter()
            .zip(&self.magnitude)
            .filter(|(x, _)| **x - x0 < nl || **x - x0 > nr)
            .map(|(_, m)| *m)
            .fold(0.0, f64::max);
        Ok(side / pk)
    }
}

/// Measured first-null resolution along `axis` through `through`
/// (the volume peak when `None`).
pub fn extract_resolution(
    vol: &ComplexVolume,
    axis: usize,
    through: Option<(usize, usize, usize)>,
) -> Result<(PsfProfile, f64)> {
    let at = through.unwrap_or_else(|| vol.grid.unflatten(vol.peak().0));
    let mut p = PsfProfile::from_volume(vol, axis, at)?;
    let d = p.first_null_width()?;
    Ok((p, d))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SweepParam {
    D0,
    /// UE angle in degrees.
    Theta,
    /// Absolute bandwidth.
    Bandwidth,
    CenterFreq,
}

impl SweepParam {
    pub fn name(&self) -> &'static str {
        match self {
            SweepParam::D0 => "d0",
            SweepParam::Theta => "theta_deg",
            SweepParam::Bandwidth => "bandwidth",
            SweepParam::CenterFreq => "f0",
        }
    }
}

/// How the UE is placed for each sweep point: at `theta_deg` from the +x axis
/// (rotated in the x-y plane) as seen from the ROI center.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum UeRange {
    Fixed(f64),
    /// Distance as a fraction of D0.
    FractionOfD0(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepSpec {
    pub param: SweepParam,
    pub values: Vec<f64>,
    pub base: SystemConfig,
    pub imaging: ImagingOptions,
    pub theta_deg: f64,
    pub ue_range: UeRange,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepRow {
    pub value: f64,
    pub theory: Resolution,
    pub numerical_x: f64,
    pub numerical_y: f64,
}

impl SweepSpec {
    /// Config for one sweep point.
    pub fn config_for(&self, value: f64) -> Result<SystemConfig> {
        let mut cfg = self.base.clone();
        let mut theta = self.theta_deg;
        match self.param {
            SweepParam::D0 => cfg.ris_center.x = cfg.roi_center.x - value,
            SweepParam::Theta => theta = value,
            SweepParam::Bandwidth => {
                cfg.rel_bandwidth = value / cfg.center_freq;
                if cfg.rel_spacing > cfg.rel_bandwidth {
                    cfg.rel_spacing = cfg.rel_bandwidth;
                }
            }
            SweepParam::CenterFreq => {
                let (b, df) = (cfg.bandwidth(), cfg.spacing());
                cfg.center_freq = value;
                cfg.rel_bandwidth = b / value;
                cfg.rel_spacing = df / value;
            }
        }
        let r = match self.ue_range {
            UeRange::Fixed(r) => r,
            UeRange::FractionOfD0(f) => f * cfg.d0(),
        };
        let th = theta.to_radians();
        cfg.ue = Point3::new(
            cfg.roi_center.x - r * th.cos(),
            cfg.roi_center.y - r * th.sin(),
            cfg.roi_center.z,
        );
        if cfg.ue.x <= cfg.ris_center.x {
            return config_err(format!(
                "sweep value {value}: UE at x = {} lies behind the RIS plane",
                cfg.ue.x
            ));
        }
        let (d, e) = (cfg.ue.sub(&cfg.roi_center), cfg.roi_extent);
        if d.x.abs() <= e.x / 2.0 && d.y.abs() <= e.y / 2.0 && d.z.abs() <= e.z / 2.0 {
            return config_err(format!("sweep value {value}: UE lies inside the ROI"));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Simulate, image and measure one sweep point.
    pub fn run_point(&self, value: f64) -> Result<SweepRow> {
        let cfg = self.config_for(value)?;
        let target = cfg.roi_center;
        let scene = Scene::point(target, C64::new(1.0, 0.0));
        let sched = build_dft_schedule(cfg.num_elements())?;
        let ms = measure_noiseless(&scene, &cfg, &sched)?;
        let ecr = recover_ecr(&ms, &cfg, &sched, RecoveryMethod::Ifft)?;
        let vol = image_saa(&ecr, &cfg, &self.imaging)?;
        let at = vol
            .grid
            .nearest(&target)
            .ok_or_else(|| Error::Config("ROI center is not on the voxel grid".into()))?;
        let (_, dx) = extract_resolution(&vol, 0, Some(at))?;
        let (_, dy) = extract_resolution(&vol, 1, Some(at))?;
        Ok(SweepRow {
            value,
            theory: drl(&DrlInputs::from_config(&cfg, &target)),
            numerical_x: dx,
            numerical_y: dy,
        })
    }
}

/// Run every sweep point in order.
pub fn drl_sweep(spec: &SweepSpec) -> Result<Vec<SweepRow>> {
    spec.values.iter().map(|&v| spec.run_point(v)).collect()
}

/// CSV rendering of a sweep table.
pub fn sweep_csv(param: SweepParam, rows: &[SweepRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| Error::Format(e.to_string());
    w.write_record([
        param.name(),
        "theory_x",
        "theory_y",
        "theory_z",
        "numerical_x",
        "numerical_y",
    ])
    .map_err(io)?;
    for r in rows {
        w.write_record([
            r.value.to_string(),
            r.theory.x.to_string(),
            r.theory.y.to_string(),
            r.theory.z.to_string(),
            r.numerical_x.to_string(),
            r.numerical_y.to_string(),
        ])
        .map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn reference_inputs() -> DrlInputs {
        let g = subtended_angle(50.0, 50.0);
        DrlInputs {
            bandwidth: 1.0 / 15.0,
            f_min: 29.0 / 30.0,
            f0: 1.0,
            c: 1.0,
            theta: PI / 4.0,
            gamma_y: g,
            gamma_z: g,
        }
    }

    #[test]
    fn subtended_angle_examples() {
        assert!((subtended_angle(2.0, 1.0) - PI / 2.0).abs() < 1e-12);
        let g = subtended_angle(50.0, 50.0);
        assert!(((g / 2.0).sin() - 1.0 / 5f64.sqrt()).abs() < 1e-12);
        assert!((g.to_degrees() - 53.13).abs() < 0.01);
        assert!(subtended_angle(1.0, 1e12) < 1e-11);
    }

    #[test]
    fn reference_drl() {
        let r = drl(&reference_inputs());
        assert!((r.x - 4.63).abs() < 0.01, "{}", r.x);
        assert!((r.y - 1.118).abs() < 0.001, "{}", r.y);
        assert_eq!(r.y, r.z);
    }

    #[test]
    fn monostatic_limit() {
        let mut i = reference_inputs();
        i.theta = 0.0;
        i.gamma_y = 0.0;
        i.gamma_z = 0.0;
        let r = drl(&i);
        assert!((r.x - 1.0 / (2.0 * i.bandwidth)).abs() < 1e-9);
        assert!(r.y.is_infinite());
    }

    #[test]
    fn from_config_matches_centered_formula() {
        let cfg = SystemConfig::default();
        let i = DrlInputs::from_config(&cfg, &cfg.roi_center);
        assert!((i.gamma_y - subtended_angle(50.0, 50.0)).abs() < 1e-12);
        assert!((i.theta - PI / 4.0).abs() < 1e-12);
    }

    #[test]
    fn nyquist_examples() {
        let mut cfg = SystemConfig::default();
        cfg.roi_extent = Point3::new(10.0, 50.0, 50.0);
        let n = nyquist_limits(&cfg);
        assert!(
            (n.max_element_spacing_y - 0.6843).abs() < 1e-3,
            "{}",
            n.max_element_spacing_y
        );
        assert!(n.element_ok);
        assert!((n.max_subcarrier_spacing - 1.0 / 20.0).abs() < 1e-12);
        assert!(n.subcarrier_ok);
    }

    #[test]
    fn sinc_profile_width() {
        for bk in [1.0, 2.7, 5.0] {
            let coords: Vec<f64> = (-200..=200).map(|i| i as f64 * 0.05).collect();
            let mags = coords
                .iter()
                .map(|x| {
                    let a = bk * x / 2.0;
                    if a == 0.0 {
                        1.0
                    } else {
                        (a.sin() / a).abs()
                    }
                })
                .collect();
            let mut p = PsfProfile::new(coords, mags, 1).unwrap();
            let d = p.first_null_width().unwrap();
            assert!((d / (2.0 * PI / bk) - 1.0).abs() < 0.02, "bk {bk}: {d}");
            let s = p.sidelobe_ratio().unwrap();
            assert!((s - 0.217).abs() < 0.01, "{s}");
        }
    }

    #[test]
    fn truncated_profile_errors() {
        let coords: Vec<f64> = (-5..=5).map(|i| i as f64 * 0.1).collect();
        let mags = coords.iter().map(|x| 1.0 - x * x).collect();
        let mut p = PsfProfile::new(coords, mags, 0).unwrap();
        let e = p.first_null_width().unwrap_err();
        assert!(e.to_string().contains("PSF truncated"));
    }
}
