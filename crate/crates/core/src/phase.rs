//! RIS phase-shift schedules.
//!
//! A schedule is an `R x N` matrix of unit-modulus reflection coefficients,
//! one row per pilot. Entry `[r, m]` equals `exp(-j omega_{r,m})`. DFT-type
//! schedules are stored as an `n`-entry table indexed by `(r m) mod n`, so a
//! full 10^4-element DFT schedule costs no more than one row.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{config_err, Error, Result};
use crate::fft::Fft1;
use crate::geometry::{Aperture, SystemConfig, C64};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScheduleKind {
    Dft,
    TruncatedDft,
    QuantizedDft {
        bits: u32,
    },
    Random {
        seed: u64,
    },
    /// Block-wise DFT over Q-element blocks.
    Block {
        q: usize,
        compensated: bool,
    },
}

#[derive(Clone, Debug, PartialEq)]
enum Coeffs {
    /// Entry `[r, m] = table[(r m) mod table.len()]`.
    Table(Vec<C64>),
    /// Row-major `rows x cols`.
    Dense(Vec<C64>),
}

/// Mapping from RIS elements to blocks for block schedules.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockLayout {
    pub q: usize,
    /// Block side in elements (sqrt Q).
    pub side: usize,
    /// Block counts along y and z.
    pub counts: (usize, usize),
    /// Block index (column-major block order) of each element.
    pub element_block: Vec<usize>,
    /// Compensation phase of each element, applied as `exp(+j phi)`.
    pub element_phase: Vec<f64>,
    /// Block-centroid aperture.
    pub aperture: Aperture,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhaseSchedule {
    pub kind: ScheduleKind,
    pub rows: usize,
    /// Number of independently driven sites: M, or M_Q for block schedules.
    pub cols: usize,
    coeffs: Coeffs,
    pub blocks: Option<BlockLayout>,
}

fn dft_table(n: usize) -> Vec<C64> {
    (0..n)
        .map(|i| C64::from_polar(1.0, -2.0 * PI * i as f64 / n as f64))
        .collect()
}

/// Full `M x M` DFT schedule, `Omega[r, m] = exp(-j 2 pi r m / M)`.
pub fn build_dft_schedule(m: usize) -> Result<PhaseSchedule> {
    if m == 0 {
        return config_err("schedule needs at least one element");
    }
    Ok(PhaseSchedule {
        kind: ScheduleKind::Dft,
        rows: m,
        cols: m,
        coeffs: Coeffs::Table(dft_table(m)),
        blocks: None,
    })
}

/// First `r` rows of the `M`-point DFT.
pub fn build_truncated_dft(m: usize, r: usize) -> Result<PhaseSchedule> {
    if r == 0 || r > m {
        return config_err(format!(
            "truncated DFT needs 1 <= R <= M, got R = {r}, M = {m}"
        ));
    }
    let mut s = build_dft_schedule(m)?;
    s.rows = r;
    if r < m {
        s.kind = ScheduleKind::TruncatedDft;
    }
    Ok(s)
}

/// i.i.d. uniform phases, reproducible from `seed`.
pub fn build_random_schedule(m: usize, r: usize, seed: u64) -> Result<PhaseSchedule> {
    if m == 0 || r == 0 {
        return config_err("random schedule needs positive R and M");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dense = (0..r * m)
        .map(|_| C64::from_polar(1.0, -2.0 * PI * rng.random::<f64>()))
        .collect();
    Ok(PhaseSchedule {
        kind: ScheduleKind::Random { seed },
        rows: r,
        cols: m,
        coeffs: Coeffs::Dense(dense),
        blocks: None,
    })
}

/// Block-wise DFT: Q contiguous elements (a sqrt Q x sqrt Q square) share one
/// phase, and the M/Q blocks are driven by an (M/Q)-point DFT. With
/// `compensated`, each element adds `k0 (d_m - d_c)` to cancel the path
/// difference to the AP relative to its block centroid.
pub fn build_block_dft_schedule(
    cfg: &SystemConfig,
    q: usize,
    compensated: bool,
) -> Result<PhaseSchedule> {
    let side = (q as f64).sqrt().round() as usize;
    if q == 0 || side * side != q {
        return config_err(format!("block size Q = {q} is not a perfect square"));
    }
    let (my, mz) = cfg.ris_elements;
    if my % side != 0 || mz % side != 0 {
        return config_err(format!(
            "block side {side} does not divide the RIS dimensions {my} x {mz}"
        ));
    }
    let counts = (my / side, mz / side);
    let mq = counts.0 * counts.1;
    let el = cfg.element_aperture();
    let aperture = Aperture {
        ny: counts.0,
        nz: counts.1,
        pitch: side as f64 * cfg.element_size,
        center: cfg.ris_center,
    };
    let k0 = cfg.frequencies().k0;
    let mut element_block = Vec::with_capacity(my * mz);
    let mut element_phase = Vec::with_capacity(my * mz);
    for v in 0..mz {
        for u in 0..my {
            let (bu, bv) = (u / side, v / side);
            element_block.push(bu + counts.0 * bv);
            let phi = if compensated {
                let dm = el.position(u, v).dist(&cfg.ap);
                let dc = aperture.position(bu, bv).dist(&cfg.ap);
                k0 * (dm - dc)
            } else {
                0.0
            };
            element_phase.push(phi);
        }
    }
    Ok(PhaseSchedule {
        kind: ScheduleKind::Block { q, compensated },
        rows: mq,
        cols: mq,
        coeffs: Coeffs::Table(dft_table(mq)),
        blocks: Some(BlockLayout {
            q,
            side,
            counts,
            element_block,
            element_phase,
            aperture,
        }),
    })
}

/// Nearest level of `2 pi q / 2^bits`, ties resolved toward the lower level.
/// Input and output are in `[0, 2 pi)`.
pub fn quantize_phase(omega: f64, bits: u32) -> f64 {
    let levels = 1u64 << bits;
    let step = 2.0 * PI / levels as f64;
    let w = omega.rem_euclid(2.0 * PI);
    let f = w / step;
    let mut q = f.floor();
    if f - q > 0.5 {
        q += 1.0;
    }
    let q = (q as u64) % levels;
    q as f64 * step
}

/// Exact quantization of the DFT phase `2 pi i / n`.
fn quantize_dft_index(i: usize, n: usize, bits: u32) -> f64 {
    let levels = 1u128 << bits;
    let t = i as u128 * levels;
    let (q0, rem) = (t / n as u128, t % n as u128);
    let q = if 2 * rem > n as u128 { q0 + 1 } else { q0 };
    (q % levels) as f64 * 2.0 * PI / levels as f64
}

fn phase_of(c: C64) -> f64 {
    (-c.arg()).rem_euclid(2.0 * PI)
}

/// Quantize every phase of `s` to `bits` bits.
pub fn quantize(s: &PhaseSchedule, bits: u32) -> Result<PhaseSchedule> {
    if bits == 0 || bits > 16 {
        return config_err(format!("bits must be in 1..=16, got {bits}"));
    }
    let coeffs = match (&s.kind, &s.coeffs) {
        (ScheduleKind::Block { .. }, _) => {
            return config_err("block schedules cannot be quantized");
        }
        (ScheduleKind::QuantizedDft { bits: b }, _) if *b == bits => return Ok(s.clone()),
        (ScheduleKind::Dft | ScheduleKind::TruncatedDft, Coeffs::Table(t)) => Coeffs::Table(
            (0..t.len())
                .map(|i| C64::from_polar(1.0, -quantize_dft_index(i, t.len(), bits)))
                .collect(),
        ),
        (_, Coeffs::Table(t)) => Coeffs::Table(
            t.iter()
                .map(|c| C64::from_polar(1.0, -quantize_phase(phase_of(*c), bits)))
                .collect(),
        ),
        (_, Coeffs::Dense(d)) => Coeffs::Dense(
            d.iter()
                .map(|c| C64::from_polar(1.0, -quantize_phase(phase_of(*c), bits)))
                .collect(),
        ),
    };
    let kind = match s.kind {
        ScheduleKind::Random { seed } => ScheduleKind::Random { seed },
        _ => ScheduleKind::QuantizedDft { bits },
    };
    Ok(PhaseSchedule {
        kind,
        rows: s.rows,
        cols: s.cols,
        coeffs,
        blocks: None,
    })
}

impl PhaseSchedule {
    /// Schedule from explicit row-major coefficients. Block kinds need a layout
    /// and are rejected; rebuild those with [`build_block_dft_schedule`].
    pub fn from_dense(
        kind: ScheduleKind,
        rows: usize,
        cols: usize,
        dense: Vec<C64>,
    ) -> Result<Self> {
        Self::from_coeffs(kind, rows, cols, Coeffs::Dense(dense))
    }

    /// Schedule whose entry `[r, m]` is `table[(r m) mod table.len()]`.
    pub fn from_table(
        kind: ScheduleKind,
        rows: usize,
        cols: usize,
        table: Vec<C64>,
    ) -> Result<Self> {
        if table.is_empty() {
            return config_err("empty coefficient table");
        }
        Self::from_coeffs(kind, rows, cols, Coeffs::Table(table))
    }

    fn from_coeffs(kind: ScheduleKind, rows: usize, cols: usize, coeffs: Coeffs) -> Result<Self> {
        if matches!(kind, ScheduleKind::Block { .. }) {
            return config_err("block schedules need a block layout");
        }
        if rows == 0 || cols == 0 {
            return config_err("schedule needs positive R and M");
        }
        let vals = match &coeffs {
            Coeffs::Dense(d) => {
                if d.len() != rows * cols {
                    return Err(Error::Shape(format!(
                        "expected {} coefficients, got {}",
                        rows * cols,
                        d.len()
                    )));
                }
                d
            }
            Coeffs::Table(t) => t,
        };
        if vals.iter().any(|c| (c.norm() - 1.0).abs() > 1e-9) {
            return config_err("schedule coefficients must have unit modulus");
        }
        Ok(Self {
            kind,
            rows,
            cols,
            coeffs,
            blocks: None,
        })
    }

    /// Coefficient table for DFT-type schedules.
    pub fn table(&self) -> Option<&[C64]> {
        match &self.coeffs {
            Coeffs::Table(t) => Some(t),
            Coeffs::Dense(_) => None,
        }
    }

    /// Raw coefficient at block/element column `m`.
    pub fn entry(&self, r: usize, m: usize) -> C64 {
        match &self.coeffs {
            Coeffs::Table(t) => t[(r * m) % t.len()],
            Coeffs::Dense(d) => d[r * self.cols + m],
        }
    }

    pub fn row(&self, r: usize) -> Vec<C64> {
        (0..self.cols).map(|m| self.entry(r, m)).collect()
    }

    /// Dense row-major copy. Allocates `rows * cols` entries.
    pub fn to_dense(&self) -> Vec<C64> {
        let mut out = Vec::with_capacity(self.rows * self.cols);
        for r in 0..self.rows {
            for m in 0..self.cols {
                out.push(self.entry(r, m));
            }
        }
        out
    }

    /// True for exact (unquantized) DFT rows.
    pub fn is_exact_dft(&self) -> bool {
        matches!(
            self.kind,
            ScheduleKind::Dft | ScheduleKind::TruncatedDft | ScheduleKind::Block { .. }
        )
    }

    /// Number of RIS elements the schedule drives.
    pub fn num_elements(&self) -> usize {
        match &self.blocks {
            Some(b) => b.element_block.len(),
            None => self.cols,
        }
    }

    /// Effective reflection coefficient of element `m` for pilot `r`.
    pub fn element_coefficient(&self, r: usize, m: usize) -> C64 {
        match &self.blocks {
            Some(b) => self.entry(r, b.element_block[m]) * C64::from_polar(1.0, b.element_phase[m]),
            None => self.entry(r, m),
        }
    }

    /// Collapse an element-domain vector onto the schedule columns:
    /// sums `exp(j phi_m) x_m` per block, identity otherwise.
    pub fn aggregate(&self, x: &[C64]) -> Vec<C64> {
        match &self.blocks {
            Some(b) => {
                let mut out = vec![C64::default(); self.cols];
                for (m, v) in x.iter().enumerate() {
                    out[b.element_block[m]] += v * C64::from_polar(1.0, b.element_phase[m]);
                }
                out
            }
            None => x.to_vec(),
        }
    }

    /// `Omega x` for a column-domain vector `x` of length `cols`.
    pub fn apply(&self, x: &[C64]) -> Result<Vec<C64>> {
        if x.len() != self.cols {
            return Err(Error::Shape(format!(
                "schedule has {} columns, vector has {}",
                self.cols,
                x.len()
            )));
        }
        if self.is_exact_dft() {
            let mut buf = x.to_vec();
            Fft1::new(self.cols).forward(&mut buf);
            buf.truncate(self.rows);
            return Ok(buf);
        }
        Ok((0..self.rows)
            .map(|r| {
                x.iter()
                    .enumerate()
                    .map(|(m, v)| self.entry(r, m) * v)
                    .sum()
            })
            .collect())
    }

    /// `sum_m omega_r[m] x_m` over all elements for every pilot.
    pub fn apply_elements(&self, x: &[C64]) -> Result<Vec<C64>> {
        if x.len() != self.num_elements() {
            return Err(Error::Shape(format!(
                "schedule drives {} elements, vector has {}",
                self.num_elements(),
                x.len()
            )));
        }
        self.apply(&self.aggregate(x))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn dft_entries() {
        let s = build_dft_schedule(4).unwrap();
        let want = [
            [1.0, 1.0, 1.0, 1.0],
            [1.0, 0.0, -1.0, 0.0],
            [1.0, -1.0, 1.0, -1.0],
            [1.0, 0.0, -1.0, 0.0],
        ];
        for r in 0..4 {
            for m in 0..4 {
                assert!((s.entry(r, m).re - want[r][m]).abs() < 1e-12);
            }
        }
        assert!((s.entry(1, 1) - C64::new(0.0, -1.0)).norm() < 1e-12);
        assert!((s.entry(3, 1) - C64::new(0.0, 1.0)).norm() < 1e-12);
    }

    #[test]
    fn dft_apply_matches_dense() {
        let s = build_truncated_dft(12, 5).unwrap();
        let x: Vec<C64> = (0..12)
            .map(|i| C64::new(i as f64, 1.0 / (1.0 + i as f64)))
            .collect();
        let fast = s.apply(&x).unwrap();
        for r in 0..5 {
            let slow: C64 = (0..12).map(|m| s.entry(r, m) * x[m]).sum();
            assert!((fast[r] - slow).norm() < 1e-10);
        }
    }

    #[test]
    fn quantization_examples() {
        assert_eq!(quantize_phase(0.3 * PI, 1), 0.0);
        assert!((quantize_phase(0.3 * PI, 2) - PI / 2.0).abs() < 1e-12);
        // tie between 0 and pi/2 resolves down
        assert_eq!(quantize_phase(PI / 4.0, 2), 0.0);
        // close to 2 pi wraps to 0
        assert_eq!(quantize_phase(2.0 * PI - 1e-3, 2), 0.0);
        assert_eq!(quantize_dft_index(1, 8, 2), 0.0);
        assert!((quantize_dft_index(3, 8, 2) - PI / 2.0).abs() < 1e-12);
    }

    #[test]
    fn quantized_dft_has_expected_levels() {
        let s = quantize(&build_dft_schedule(16).unwrap(), 1).unwrap();
        for r in 0..16 {
            for m in 0..16 {
                let e = s.entry(r, m);
                assert!((e.re.abs() - 1.0).abs() < 1e-12 && e.im.abs() < 1e-12);
            }
        }
        assert!(quantize(&s, 0).is_err());
    }

    #[test]
    fn block_layout() {
        let mut cfg = SystemConfig::default();
        cfg.ris_elements = (4, 4);
        let s = build_block_dft_schedule(&cfg, 4, false).unwrap();
        let b = s.blocks.as_ref().unwrap();
        assert_eq!(s.cols, 4);
        assert_eq!(
            b.element_block,
            vec![0, 0, 1, 1, 0, 0, 1, 1, 2, 2, 3, 3, 2, 2, 3, 3]
        );
        assert!(b.element_phase.iter().all(|p| *p == 0.0));
        assert!((b.aperture.y(0) - -0.5).abs() < 1e-12);
        assert!(build_block_dft_schedule(&cfg, 3, false).is_err());
        assert!(build_block_dft_schedule(&cfg, 9, false).is_err());
    }

    #[test]
    fn compensation_aligns_phases_to_centroid() {
        let mut cfg = SystemConfig::default();
        cfg.ris_elements = (8, 8);
        let s = build_block_dft_schedule(&cfg, 16, true).unwrap();
        let b = s.blocks.as_ref().unwrap();
        let k0 = cfg.frequencies().k0;
        for (m, p) in cfg.element_positions().iter().enumerate() {
            let q = b.element_block[m];
            let c = b.aperture.positions()[q];
            let resid = -k0 * p.dist(&cfg.ap) + b.element_phase[m] + k0 * c.dist(&cfg.ap);
            assert!(resid.abs() < 1e-9);
        }
    }

    #[test]
    fn random_is_reproducible() {
        let a = build_random_schedule(10, 3, 5).unwrap();
        let b = build_random_schedule(10, 3, 5).unwrap();
        let c = build_random_schedule(10, 3, 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    proptest! {
        #[test]
        fn entries_have_unit_modulus(m in 1usize..40, r in 1usize..40, bits in 1u32..5, seed in any::<u64>()) {
            let r = r.min(m);
            let sched = [
                build_truncated_dft(m, r).unwrap(),
                build_random_schedule(m, r, seed).unwrap(),
                quantize(&build_truncated_dft(m, r).unwrap(), bits).unwrap(),
            ];
            for s in &sched {
                for v in s.to_dense() {
                    prop_assert!((v.norm() - 1.0).abs() < 1e-12);
                }
            }
        }

        #[test]
        fn quantization_is_idempotent(m in 1usize..32, bits in 1u32..6, seed in any::<u64>()) {
            let s = build_random_schedule(m, 3, seed).unwrap();
            let q1 = quantize(&s, bits).unwrap();
            let q2 = quantize(&q1, bits).unwrap();
            for (a, b) in q1.to_dense().iter().zip(q2.to_dense()) {
                prop_assert!((a - b).norm() < 1e-12);
            }
            let d = quantize(&build_dft_schedule(m).unwrap(), bits).unwrap();
            prop_assert_eq!(quantize(&d, bits).unwrap(), d);
        }

        #[test]
        fn quantized_phase_is_nearest_level(w in 0.0f64..(2.0 * PI), bits in 1u32..6) {
            let q = quantize_phase(w, bits);
            let step = 2.0 * PI / (1u64 << bits) as f64;
            let d = (w - q).rem_euclid(2.0 * PI);
            let d = d.min(2.0 * PI - d);
            prop_assert!(d <= step / 2.0 + 1e-12);
        }
    }
}
