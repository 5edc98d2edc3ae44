//! Image quality metrics.

use crate::error::{config_err, Error, Result};
use crate::geometry::{ComplexVolume, VoxelGrid, C64};

/// Lowest dB value reported for floors of empty regions.
pub const DB_MIN: f64 = -300.0;

/// Magnitude ratio in dB (20 log10), floored at `DB_MIN`.
pub fn to_db(ratio: f64) -> f64 {
    if ratio > 0.0 {
        (20.0 * ratio.log10()).max(DB_MIN)
    } else {
        DB_MIN
    }
}

/// Divide by the complex value at the largest-magnitude voxel, so the peak
/// becomes exactly 1. An all-zero input stays zero.
pub fn peak_normalized(v: &[C64]) -> Vec<C64> {
    let p = v.iter().copied().fold(
        C64::default(),
        |a, b| if b.norm() > a.norm() { b } else { a },
    );
    if p == C64::default() {
        return v.to_vec();
    }
    v.iter().map(|x| x / p).collect()
}

fn check_grids(est: &ComplexVolume, truth: &ComplexVolume) -> Result<()> {
    if est.grid.counts != truth.grid.counts {
        return Err(Error::Shape(format!(
            "estimate grid {:?} does not match truth grid {:?}",
            est.grid.counts, truth.grid.counts
        )));
    }
    Ok(())
}

fn nmse_one(est: &[C64], truth: &[C64]) -> f64 {
    let num: f64 = est.iter().zip(truth).map(|(a, b)| (a - b).norm_sqr()).sum();
    let den: f64 = truth.iter().map(|v| v.norm_sqr()).sum();
    num / den
}

fn truth_vector(truth: &ComplexVolume) -> Result<Vec<C64>> {
    if truth.norm_sqr() == 0.0 {
        return config_err("NMSE needs a nonzero reference volume");
    }
    Ok(peak_normalized(truth.as_slice()))
}

/// Mean over trials of `||est - truth||^2 / ||truth||^2`, both peak-normalized
/// by their complex peak value first.
pub fn nmse(estimates: &[ComplexVolume], truth: &ComplexVolume) -> Result<f64> {
    if estimates.is_empty() {
        return config_err("NMSE needs at least one estimate");
    }
    let t = truth_vector(truth)?;
    let mut acc = 0.0;
    for e in estimates {
        check_grids(e, truth)?;
        acc += nmse_one(&peak_normalized(e.as_slice()), &t);
    }
    Ok(acc / estimates.len() as f64)
}

/// NMSE between magnitudes, each scaled so its peak magnitude is 1.
pub fn nmse_magnitude(estimates: &[ComplexVolume], truth: &ComplexVolume) -> Result<f64> {
    if estimates.is_empty() {
        return config_err("NMSE needs at least one estimate");
    }
    if truth.norm_sqr() == 0.0 {
        return config_err("NMSE needs a nonzero reference volume");
    }
    let mag = |v: &[C64]| -> Vec<C64> {
        let m: Vec<C64> = v.iter().map(|x| C64::new(x.norm(), 0.0)).collect();
        peak_normalized(&m)
    };
    let t = mag(truth.as_slice());
    let mut acc = 0.0;
    for e in estimates {
        check_grids(e, truth)?;
        acc += nmse_one(&mag(e.as_slice()), &t);
    }
    Ok(acc / estimates.len() as f64)
}

/// Up to `count` local maxima (26-neighbourhood, ties broken toward the lower
/// index) in decreasing magnitude.
pub fn find_peaks(vol: &ComplexVolume, count: usize) -> Vec<(usize, usize, usize)> {
    let g = &vol.grid;
    let [nx, ny, nz] = g.counts;
    let mag = |i: usize, j: usize, l: usize| vol.data[[i, j, l]].norm();
    let mut peaks = Vec::new();
    for n in 0..g.len() {
        let (i, j, l) = g.unflatten(n);
        let v = mag(i, j, l);
        if v == 0.0 {
            continue;
        }
        let mut is_max = true;
        'nb: for di in -1i64..=1 {
            for dj in -1i64..=1 {
                for dl in -1i64..=1 {
                    if di == 0 && dj == 0 && dl == 0 {
                        continue;
                    }
                    let (a, b, c) = (i as i64 + di, j as i64 + dj, l as i64 + dl);
                    if a < 0 || b < 0 || c < 0 || a >= nx as i64 || b >= ny as i64 || c >= nz as i64
                    {
                        continue;
                    }
                    let w = mag(a as usize, b as usize, c as usize);
                    let later = g.index(a as usize, b as usize, c as usize) > n;
                    if w > v || (w == v && !later) {
                        is_max = false;
                        break 'nb;
                    }
                }
            }
        }
        if is_max {
            peaks.push((v, (i, j, l)));
        }
    }
    peaks.sort_by(|a, b| b.0.total_cmp(&a.0));
    peaks.into_iter().take(count).map(|p| p.1).collect()
}

fn cheb(a: (usize, usize, usize), b: (usize, usize, usize)) -> usize {
    a.0.abs_diff(b.0)
        .max(a.1.abs_diff(b.1))
        .max(a.2.abs_diff(b.2))
}

/// Number of true voxels matched one-to-one by a found peak within `tol`
/// voxels (Chebyshev distance), matching greedily in peak order.
pub fn localized(
    found: &[(usize, usize, usize)],
    truth: &[(usize, usize, usize)],
    tol: usize,
) -> usize {
    let mut used = vec![false; truth.len()];
    let mut hits = 0;
    for f in found {
        let best = truth
            .iter()
            .enumerate()
            .filter(|(k, t)| !used[*k] && cheb(*f, **t) <= tol)
            .min_by_key(|(_, t)| cheb(*f, **t));
        if let Some((k, _)) = best {
            used[k] = true;
            hits += 1;
        }
    }
    hits
}

/// Voxel indices of the nonzero voxels of `truth`.
pub fn support(truth: &ComplexVolume) -> Vec<(usize, usize, usize)> {
    truth
        .as_slice()
        .iter()
        .enumerate()
        .filter(|(_, v)| v.norm_sqr() > 0.0)
        .map(|(n, _)| truth.grid.unflatten(n))
        .collect()
}

/// Largest magnitude outside boxes of half-width `guard` around each support
/// voxel, in dB relative to the volume peak.
pub fn off_support_floor_db(
    vol: &ComplexVolume,
    support: &[(usize, usize, usize)],
    guard: [usize; 3],
) -> f64 {
    let g = &vol.grid;
    let peak = vol.peak().1;
    if peak <= 0.0 {
        return DB_MIN;
    }
    let inside = |p: (usize, usize, usize)| {
        support.iter().any(|s| {
            p.0.abs_diff(s.0) <= guard[0]
                && p.1.abs_diff(s.1) <= guard[1]
                && p.2.abs_diff(s.2) <= guard[2]
        })
    };
    let mut worst: f64 = 0.0;
    for (n, v) in vol.as_slice().iter().enumerate() {
        if !inside(g.unflatten(n)) {
            worst = worst.max(v.norm());
        }
    }
    to_db(worst / peak)
}

/// Largest magnitude in the cross-range border (outer `fraction` of the y and z
/// extents), relative to the volume peak.
pub fn border_artifact(vol: &ComplexVolume, fraction: f64) -> f64 {
    let g: &VoxelGrid = &vol.grid;
    let peak = vol.peak().1;
    if peak <= 0.0 {
        return 0.0;
    }
    let band = |n: usize| ((n as f64 * fraction).ceil() as usize).max(1);
    let (by, bz) = (band(g.counts[1]), band(g.counts[2]));
    let in_border =
        |j: usize, l: usize| j < by || j >= g.counts[1] - by || l < bz || l >= g.counts[2] - bz;
    let mut worst: f64 = 0.0;
    for (n, v) in vol.as_slice().iter().enumerate() {
        let (_, j, l) = g.unflatten(n);
        if in_border(j, l) {
            worst = worst.max(v.norm());
        }
    }
    worst / peak
}

/// Summary of one scenario run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsReport {
    pub nmse: Option<f64>,
    pub nmse_magnitude: Option<f64>,
    pub peaks: Vec<(usize, usize, usize)>,
    pub localized: Option<(usize, usize)>,
    pub off_support_floor_db: Option<f64>,
    /// Measured first-null resolution along x, y, z (None where a null is missing).
    pub resolution: [Option<f64>; 3],
    pub runtimes: Vec<(String, f64)>,
    pub residuals: Vec<f64>,
}

impl MetricsReport {
    /// Human-readable summary, excluding runtimes.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_else(|| "n/a".into());
        s.push_str(&format!("nmse = {}\n", opt(self.nmse)));
        s.push_str(&format!("nmse_magnitude = {}\n", opt(self.nmse_magnitude)));
        if let Some((hit, total)) = self.localized {
            s.push_str(&format!("localized = {hit}/{total}\n"));
        }
        s.push_str(&format!(
            "off_support_floor_db = {}\n",
            opt(self.off_support_floor_db)
        ));
        for (axis, r) in ["x", "y", "z"].iter().zip(self.resolution) {
            s.push_str(&format!("resolution_{axis} = {}\n", opt(r)));
        }
        for (i, p) in self.peaks.iter().enumerate() {
            s.push_str(&format!("peak_{i} = {},{},{}\n", p.0, p.1, p.2));
        }
        s
    }
}
