//! Thin wrappers over rustfft for the transforms used here.
//!
//! Forward transforms are unnormalized; inverse transforms carry 1/N.
//! 2D arrays are row-major `rows x cols` slices.

use std::sync::Arc;

use rustfft::{Fft, FftPlanner};

use crate::geometry::C64;

pub struct Fft1 {
    n: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl Fft1 {
    pub fn new(n: usize) -> Self {
        let mut p = FftPlanner::new();
        Self {
            n,
            fwd: p.plan_fft_forward(n),
            inv: p.plan_fft_inverse(n),
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn forward(&self, buf: &mut [C64]) {
        self.fwd.process(buf);
    }

    pub fn inverse(&self, buf: &mut [C64]) {
        self.inv.process(buf);
        let s = 1.0 / self.n as f64;
        buf.iter_mut().for_each(|v| *v *= s);
    }
}

/// Full 2D transform of a `rows x cols` row-major buffer.
pub struct Fft2 {
    rows: usize,
    cols: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl Fft2 {
    pub fn new(rows: usize, cols: usize) -> Self {
        let mut p = FftPlanner::new();
        Self {
            rows,
            cols,
            row_fwd: p.plan_fft_forward(cols),
            row_inv: p.plan_fft_inverse(cols),
            col_fwd: p.plan_fft_forward(rows),
            col_inv: p.plan_fft_inverse(rows),
        }
    }

    fn run(&self, buf: &mut [C64], rowf: &Arc<dyn Fft<f64>>, colf: &Arc<dyn Fft<f64>>) {
        assert_eq!(buf.len(), self.rows * self.cols);
        rowf.process(buf);
        let mut col = vec![C64::default(); self.rows];
        for c in 0..self.cols {
            for r in 0..self.rows {
                col[r] = buf[r * self.cols + c];
            }
            colf.process(&mut col);
            for r in 0..self.rows {
                buf[r * self.cols + c] = col[r];
            }
        }
    }

    pub fn forward(&self, buf: &mut [C64]) {
        self.run(buf, &self.row_fwd, &self.col_fwd);
    }

    pub fn inverse(&self, buf: &mut [C64]) {
        self.run(buf, &self.row_inv, &self.col_inv);
        let s = 1.0 / (self.rows * self.cols) as f64;
        buf.iter_mut().for_each(|v| *v *= s);
    }
}

/// Signed bin index for bin `i` of a `k`-point transform: 0..k/2-1 positive,
/// k/2..k-1 negative (the Nyquist bin of an even transform is -k/2).
pub fn signed_bin(i: usize, k: usize) -> i64 {
    if i < k.div_ceil(2) {
        i as i64
    } else {
        i as i64 - k as i64
    }
}

/// Storage index of signed bin `m` in a `k`-point transform.
pub fn bin_index(m: i64, k: usize) -> usize {
    m.rem_euclid(k as i64) as usize
}

/// Zero-padded 2D transform pair between a small `ky x kz` spectrum band
/// (signed bins in storage order) and the first `ny x nz` pixels of a
/// `py x pz`-point image. Equivalent to embedding the band in a `py x pz`
/// grid and running a full transform, but only touches nonzero rows and
/// the requested output columns.
pub struct BandFft {
    pub ky: usize,
    pub kz: usize,
    pub py: usize,
    pub pz: usize,
    pub ny: usize,
    pub nz: usize,
    y_fwd: Arc<dyn Fft<f64>>,
    y_inv: Arc<dyn Fft<f64>>,
    z_fwd: Arc<dyn Fft<f64>>,
    z_inv: Arc<dyn Fft<f64>>,
    /// Storage index in the padded grid for each band row / column.
    ymap: Vec<usize>,
    zmap: Vec<usize>,
}

impl BandFft {
    pub fn new(ky: usize, kz: usize, py: usize, pz: usize, ny: usize, nz: usize) -> Self {
        assert!(py >= ky && pz >= kz && ny <= py && nz <= pz);
        let mut p = FftPlanner::new();
        Self {
            ky,
            kz,
            py,
            pz,
            ny,
            nz,
            y_fwd: p.plan_fft_forward(py),
            y_inv: p.plan_fft_inverse(py),
            z_fwd: p.plan_fft_forward(pz),
            z_inv: p.plan_fft_inverse(pz),
            ymap: (0..ky).map(|i| bin_index(signed_bin(i, ky), py)).collect(),
            zmap: (0..kz).map(|i| bin_index(signed_bin(i, kz), pz)).collect(),
        }
    }

    /// Band spectrum (`ky x kz`) to cropped image (`ny x nz`), inverse
    /// transform over the padded grid with 1/(py pz).
    pub fn band_to_image(&self, band: &[C64], image: &mut [C64], work: &mut BandWork) {
        assert_eq!(band.len(), self.ky * self.kz);
        assert_eq!(image.len(), self.ny * self.nz);
        let (py, pz) = (self.py, self.pz);
        // z transform of each band row into full pz length
        let rows = &mut work.rows;
        rows.resize(self.ky * pz, C64::default());
        for i in 0..self.ky {
            let r = &mut rows[i * pz..(i + 1) * pz];
            r.iter_mut().for_each(|v| *v = C64::default());
            for j in 0..self.kz {
                r[self.zmap[j]] = band[i * self.kz + j];
            }
            self.z_inv.process(r);
        }
        // y transform for each needed output column
        let col = &mut work.col;
        col.resize(py, C64::default());
        let scale = 1.0 / (py * pz) as f64;
        for c in 0..self.nz {
            col.iter_mut().for_each(|v| *v = C64::default());
            for i in 0..self.ky {
                col[self.ymap[i]] = rows[i * pz + c];
            }
            self.y_inv.process(col);
            for r in 0..self.ny {
                image[r * self.nz + c] = col[r] * scale;
            }
        }
    }

    /// Image (`ny x nz`, zero elsewhere on the padded grid) to band spectrum
    /// (`ky x kz`), unnormalized forward transform.
    pub fn image_to_band(&self, image: &[C64], band: &mut [C64], work: &mut BandWork) {
        assert_eq!(band.len(), self.ky * self.kz);
        assert_eq!(image.len(), self.ny * self.nz);
        let (py, pz) = (self.py, self.pz);
        // y transform of each image column, keep band rows
        let cols = &mut work.rows;
        cols.resize(self.nz * self.ky, C64::default());
        let col = &mut work.col;
        col.resize(py, C64::default());
        for c in 0..self.nz {
            col.iter_mut().for_each(|v| *v = C64::default());
            for r in 0..self.ny {
                col[r] = image[r * self.nz + c];
            }
            self.y_fwd.process(col);
            for i in 0..self.ky {
                cols[c * self.ky + i] = col[self.ymap[i]];
            }
        }
        // z transform per band row
        let row = &mut work.row;
        row.resize(pz, C64::default());
        for i in 0..self.ky {
            row.iter_mut().for_each(|v| *v = C64::default());
            for c in 0..self.nz {
                row[c] = cols[c * self.ky + i];
            }
            self.z_fwd.process(row);
            for j in 0..self.kz {
                band[i * self.kz + j] = row[self.zmap[j]];
            }
        }
    }
}

/// Scratch buffers for `BandFft`, one per worker.
#[derive(Default)]
pub struct BandWork {
    rows: Vec<C64>,
    col: Vec<C64>,
    row: Vec<C64>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dft2_naive(x: &[C64], r: usize, c: usize, sign: f64) -> Vec<C64> {
        let mut out = vec![C64::default(); r * c];
        for a in 0..r {
            for b in 0..c {
                let mut s = C64::default();
                for u in 0..r {
                    for v in 0..c {
                        let ph = sign
                            * 2.0
                            * std::f64::consts::PI
                            * ((a * u) as f64 / r as f64 + (b * v) as f64 / c as f64);
                        s += x[u * c + v] * C64::from_polar(1.0, ph);
                    }
                }
                out[a * c + b] = s;
            }
        }
        out
    }

    fn sample(n: usize) -> Vec<C64> {
        (0..n)
            .map(|i| C64::new((i as f64 * 0.37).sin(), (i as f64 * 1.3).cos()))
            .collect()
    }

    #[test]
    fn fft2_matches_naive_dft() {
        let (r, c) = (4, 6);
        let x = sample(r * c);
        let mut y = x.clone();
        Fft2::new(r, c).forward(&mut y);
        let want = dft2_naive(&x, r, c, -1.0);
        for (a, b) in y.iter().zip(&want) {
            assert!((a - b).norm() < 1e-10);
        }
        Fft2::new(r, c).inverse(&mut y);
        for (a, b) in y.iter().zip(&x) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn signed_bins() {
        let v: Vec<i64> = (0..4).map(|i| signed_bin(i, 4)).collect();
        assert_eq!(v, vec![0, 1, -2, -1]);
        let v: Vec<i64> = (0..5).map(|i| signed_bin(i, 5)).collect();
        assert_eq!(v, vec![0, 1, 2, -2, -1]);
        assert_eq!(bin_index(-2, 8), 6);
    }

    #[test]
    fn band_fft_matches_padded_full_transform() {
        let (ky, kz, py, pz, ny, nz) = (4, 3, 8, 9, 5, 4);
        let band = sample(ky * kz);
        let mut full = vec![C64::default(); py * pz];
        for i in 0..ky {
            for j in 0..kz {
                let a = bin_index(signed_bin(i, ky), py);
                let b = bin_index(signed_bin(j, kz), pz);
                full[a * pz + b] = band[i * kz + j];
            }
        }
        Fft2::new(py, pz).inverse(&mut full);
        let bf = BandFft::new(ky, kz, py, pz, ny, nz);
        let mut img = vec![C64::default(); ny * nz];
        let mut w = BandWork::default();
        bf.band_to_image(&band, &mut img, &mut w);
        for r in 0..ny {
            for c in 0..nz {
                assert!((img[r * nz + c] - full[r * pz + c]).norm() < 1e-12);
            }
        }
        // forward direction
        let mut padded = vec![C64::default(); py * pz];
        for r in 0..ny {
            for c in 0..nz {
                padded[r * pz + c] = img[r * nz + c];
            }
        }
        Fft2::new(py, pz).forward(&mut padded);
        let mut back = vec![C64::default(); ky * kz];
        bf.image_to_band(&img, &mut back, &mut w);
        for i in 0..ky {
            for j in 0..kz {
                let a = bin_index(signed_bin(i, ky), py);
                let b = bin_index(signed_bin(j, kz), pz);
                assert!((back[i * kz + j] - padded[a * pz + b]).norm() < 1e-10);
            }
        }
    }
}
