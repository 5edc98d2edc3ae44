//! File formats: binary schedule and data containers, CSV tables and PGM
//! projections. Layouts are described in FORMATS.md.

use crate::channel::MeasurementSet;
use crate::ecr::{EcrEstimate, RecoveryMethod};
use crate::error::{config_err, Error, Result};
use crate::geometry::{Aperture, ComplexVolume, Point3, SystemConfig, VoxelGrid, C64};
use crate::phase::{build_block_dft_schedule, PhaseSchedule, ScheduleKind};
use crate::resolution::PsfProfile;

pub const SCHEDULE_MAGIC: &[u8; 4] = b"RISS";
pub const DATA_MAGIC: &[u8; 4] = b"RISD";
pub const FORMAT_VERSION: u16 = 1;
pub const DATA_HEADER_LEN: usize = 48;
pub const SCHEDULE_HEADER_LEN: usize = 16;

const KIND_MEASUREMENTS: u16 = 1;
const KIND_ECR: u16 = 2;

fn fmt_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Format(msg.into()))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return fmt_err(format!(
                "truncated file: need {} bytes at offset {}",
                n, self.pos
            ));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn complex(&mut self, n: usize) -> Result<Vec<C64>> {
        if n.checked_mul(16)
            .is_none_or(|b| self.pos + b > self.buf.len())
        {
            return fmt_err(format!("truncated file: expected {n} complex values"));
        }
        (0..n)
            .map(|_| Ok(C64::new(self.f64()?, self.f64()?)))
            .collect()
    }
    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return fmt_err(format!("{} trailing bytes", self.buf.len() - self.pos));
        }
        Ok(())
    }
}

fn put_complex(out: &mut Vec<u8>, v: &[C64]) {
    out.reserve(v.len() * 16);
    for c in v {
        out.extend_from_slice(&c.re.to_le_bytes());
        out.extend_from_slice(&c.im.to_le_bytes());
    }
}

fn kind_code(k: &ScheduleKind) -> (u16, u64) {
    match *k {
        ScheduleKind::Dft => (0, 0),
        ScheduleKind::TruncatedDft => (1, 0),
        ScheduleKind::QuantizedDft { bits } => (2, bits as u64),
        ScheduleKind::Random { seed } => (3, seed),
        ScheduleKind::Block { q, compensated } => (4, q as u64 | ((compensated as u64) << 32)),
    }
}

/// Serialize a schedule. DFT-type schedules store their coefficient table,
/// others the dense `rows x cols` matrix.
pub fn write_schedule(s: &PhaseSchedule) -> Vec<u8> {
    let (code, param) = kind_code(&s.kind);
    let mut out = Vec::new();
    out.extend_from_slice(SCHEDULE_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&code.to_le_bytes());
    out.extend_from_slice(&(s.rows as u32).to_le_bytes());
    out.extend_from_slice(&(s.cols as u32).to_le_bytes());
    out.extend_from_slice(&param.to_le_bytes());
    let (storage, vals): (u32, Vec<C64>) = match s.table() {
        Some(t) => (0, t.to_vec()),
        None => (1, s.to_dense()),
    };
    out.extend_from_slice(&storage.to_le_bytes());
    out.extend_from_slice(&(vals.len() as u32).to_le_bytes());
    put_complex(&mut out, &vals);
    out
}

/// Parse a schedule file. Block schedules are rebuilt from `cfg` and checked
/// against the stored table.
pub fn read_schedule(buf: &[u8], cfg: Option<&SystemConfig>) -> Result<PhaseSchedule> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4)? != SCHEDULE_MAGIC {
        return fmt_err("not a schedule file");
    }
    let version = r.u16()?;
    if version != FORMAT_VERSION {
        return fmt_err(format!("unsupported schedule version {version}"));
    }
    let code = r.u16()?;
    let rows = r.u32()? as usize;
    let cols = r.u32()? as usize;
    let param = r.u64()?;
    let storage = r.u32()?;
    let count = r.u32()? as usize;
    let vals = r.complex(count)?;
    r.finish()?;
    let kind = match code {
        0 => ScheduleKind::Dft,
        1 => ScheduleKind::TruncatedDft,
        2 => ScheduleKind::QuantizedDft { bits: param as u32 },
        3 => ScheduleKind::Random { seed: param },
        4 => ScheduleKind::Block {
            q: (param & 0xffff_ffff) as usize,
            compensated: param >> 32 != 0,
        },
        c => return fmt_err(format!("unknown schedule kind {c}")),
    };
    if let ScheduleKind::Block { q, compensated } = kind {
        let cfg =
            cfg.ok_or_else(|| Error::Config("block schedules need the system config".into()))?;
        let s = build_block_dft_schedule(cfg, q, compensated)?;
        if s.rows != rows || s.cols != cols || s.table() != Some(&vals[..]) {
            return fmt_err("block schedule does not match the system config");
        }
        return Ok(s);
    }
    match storage {
        0 => PhaseSchedule::from_table(kind, rows, cols, vals),
        1 => PhaseSchedule::from_dense(kind, rows, cols, vals),
        s => fmt_err(format!("unknown storage code {s}")),
    }
}

/// Explicit dense schedule, for tests and imported pilot patterns.
pub fn schedule_from_parts(
    kind: ScheduleKind,
    rows: usize,
    cols: usize,
    dense: Vec<C64>,
) -> Result<PhaseSchedule> {
    PhaseSchedule::from_dense(kind, rows, cols, dense)
}

#[allow(clippy::too_many_arguments)]
fn write_container(
    kind: u16,
    t: usize,
    n: usize,
    seed: u64,
    noise: f64,
    scale: f64,
    extra: u32,
    meta: &[f64],
    data: &[C64],
) -> Vec<u8> {
    let mut out = Vec::with_capacity(DATA_HEADER_LEN + meta.len() * 8 + data.len() * 16);
    out.extend_from_slice(DATA_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&kind.to_le_bytes());
    out.extend_from_slice(&(t as u32).to_le_bytes());
    out.extend_from_slice(&(n as u32).to_le_bytes());
    out.extend_from_slice(&seed.to_le_bytes());
    out.extend_from_slice(&noise.to_le_bytes());
    out.extend_from_slice(&scale.to_le_bytes());
    out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    out.extend_from_slice(&extra.to_le_bytes());
    debug_assert_eq!(out.len(), DATA_HEADER_LEN);
    for m in meta {
        out.extend_from_slice(&m.to_le_bytes());
    }
    put_complex(&mut out, data);
    out
}

struct Container {
    kind: u16,
    t: usize,
    n: usize,
    seed: u64,
    noise: f64,
    scale: f64,
    extra: u32,
    meta: Vec<f64>,
    data: Vec<C64>,
}

fn read_container(buf: &[u8]) -> Result<Container> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4)? != DATA_MAGIC {
        return fmt_err("not a data container");
    }
    let version = r.u16()?;
    if version != FORMAT_VERSION {
        return fmt_err(format!("unsupported container version {version}"));
    }
    let kind = r.u16()?;
    let t = r.u32()? as usize;
    let n = r.u32()? as usize;
    let seed = r.u64()?;
    let noise = r.f64()?;
    let scale = r.f64()?;
    let meta_len = r.u32()? as usize;
    let extra = r.u32()?;
    let meta = (0..meta_len).map(|_| r.f64()).collect::<Result<_>>()?;
    let data = r.complex(t * n)?;
    r.finish()?;
    Ok(Container {
        kind,
        t,
        n,
        seed,
        noise,
        scale,
        extra,
        meta,
        data,
    })
}

pub fn write_measurements(ms: &MeasurementSet) -> Vec<u8> {
    write_container(
        KIND_MEASUREMENTS,
        ms.t_count,
        ms.r_count,
        ms.seed,
        ms.noise_variance,
        ms.scale,
        0,
        &[],
        &ms.data,
    )
}

pub fn read_measurements(buf: &[u8]) -> Result<MeasurementSet> {
    let c = read_container(buf)?;
    if c.kind != KIND_MEASUREMENTS {
        return fmt_err("container does not hold measurements");
    }
    Ok(MeasurementSet {
        t_count: c.t,
        r_count: c.n,
        data: c.data,
        noise_variance: c.noise,
        seed: c.seed,
        scale: c.scale,
    })
}

fn method_code(m: RecoveryMethod) -> u32 {
    match m {
        RecoveryMethod::Inverse => 0,
        RecoveryMethod::Ifft => 1,
        RecoveryMethod::PseudoInverse => 2,
        RecoveryMethod::Block => 3,
    }
}

pub fn write_ecr(e: &EcrEstimate) -> Vec<u8> {
    let a = &e.aperture;
    write_container(
        KIND_ECR,
        e.t_count,
        a.len(),
        0,
        0.0,
        1.0,
        method_code(e.method),
        &[
            a.ny as f64,
            a.nz as f64,
            a.pitch,
            a.center.x,
            a.center.y,
            a.center.z,
        ],
        &e.data,
    )
}

pub fn read_ecr(buf: &[u8]) -> Result<EcrEstimate> {
    let c = read_container(buf)?;
    if c.kind != KIND_ECR || c.meta.len() != 6 {
        return fmt_err("container does not hold an ECR estimate");
    }
    let aperture = Aperture {
        ny: c.meta[0] as usize,
        nz: c.meta[1] as usize,
        pitch: c.meta[2],
        center: Point3::new(c.meta[3], c.meta[4], c.meta[5]),
    };
    if aperture.len() != c.n {
        return fmt_err("ECR aperture does not match the data size");
    }
    let method = match c.extra {
        0 => RecoveryMethod::Inverse,
        1 => RecoveryMethod::Ifft,
        2 => RecoveryMethod::PseudoInverse,
        3 => RecoveryMethod::Block,
        m => return fmt_err(format!("unknown recovery method code {m}")),
    };
    Ok(EcrEstimate {
        t_count: c.t,
        aperture,
        data: c.data,
        method,
    })
}

fn csv_err(e: impl std::fmt::Display) -> Error {
    Error::Format(e.to_string())
}

fn finish_csv(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(csv_err)?;
    String::from_utf8(bytes).map_err(csv_err)
}

/// One row per voxel: `ix,iy,iz,x,y,z,re,im`.
pub fn volume_csv(vol: &ComplexVolume) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["ix", "iy", "iz", "x", "y", "z", "re", "im"])
        .map_err(csv_err)?;
    let g = &vol.grid;
    for (n, v) in vol.as_slice().iter().enumerate() {
        let (i, j, l) = g.unflatten(n);
        let p = g.position(i, j, l);
        w.write_record([
            i.to_string(),
            j.to_string(),
            l.to_string(),
            p.x.to_string(),
            p.y.to_string(),
            p.z.to_string(),
            v.re.to_string(),
            v.im.to_string(),
        ])
        .map_err(csv_err)?;
    }
    finish_csv(w)
}

/// Inverse of [`volume_csv`]. Rows may come in any order but must cover the grid.
pub fn parse_volume_csv(text: &str) -> Result<ComplexVolume> {
    let mut rd = csv::Reader::from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for rec in rd.records() {
        let rec = rec.map_err(csv_err)?;
        if rec.len() != 8 {
            return fmt_err("volume CSV rows need 8 fields");
        }
        let u = |i: usize| rec[i].parse::<usize>().map_err(csv_err);
        let f = |i: usize| rec[i].parse::<f64>().map_err(csv_err);
        rows.push((
            (u(0)?, u(1)?, u(2)?),
            [f(3)?, f(4)?, f(5)?],
            C64::new(f(6)?, f(7)?),
        ));
    }
    if rows.is_empty() {
        return fmt_err("empty volume CSV");
    }
    let counts = [
        rows.iter().map(|r| r.0 .0).max().unwrap() + 1,
        rows.iter().map(|r| r.0 .1).max().unwrap() + 1,
        rows.iter().map(|r| r.0 .2).max().unwrap() + 1,
    ];
    if rows.len() != counts.iter().product::<usize>() {
        return fmt_err("volume CSV does not cover a full grid");
    }
    let mut origin = [0.0; 3];
    let mut pitch = [1.0; 3];
    for axis in 0..3 {
        let at = |k: usize| {
            rows.iter()
                .find(|r| [r.0 .0, r.0 .1, r.0 .2][axis] == k)
                .map(|r| r.1[axis])
                .unwrap()
        };
        origin[axis] = at(0);
        if counts[axis] > 1 {
            pitch[axis] = (at(counts[axis] - 1) - origin[axis]) / (counts[axis] - 1) as f64;
        }
    }
    let grid = VoxelGrid {
        counts,
        pitch,
        origin: Point3::new(origin[0], origin[1], origin[2]),
    };
    let mut vol = ComplexVolume::zeros(grid);
    let mut seen = vec![false; grid.len()];
    for (idx, _, v) in rows {
        let n = grid.index(idx.0, idx.1, idx.2);
        if seen[n] {
            return fmt_err(format!("duplicate voxel {idx:?}"));
        }
        seen[n] = true;
        vol.data[[idx.0, idx.1, idx.2]] = v;
    }
    Ok(vol)
}

/// `t,r,re,im` per measurement, in physical units.
pub fn measurements_csv(ms: &MeasurementSet) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["t", "r", "re", "im"]).map_err(csv_err)?;
    for t in 0..ms.t_count {
        for (r, v) in ms.physical_row(t).iter().enumerate() {
            w.write_record([
                t.to_string(),
                r.to_string(),
                v.re.to_string(),
                v.im.to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    finish_csv(w)
}

/// `iteration,residual,step`.
pub fn residuals_csv(residuals: &[f64], steps: &[f64]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["iteration", "residual", "step"])
        .map_err(csv_err)?;
    for (i, r) in residuals.iter().enumerate() {
        let s = steps.get(i).map(|v| v.to_string()).unwrap_or_default();
        w.write_record([i.to_string(), r.to_string(), s])
            .map_err(csv_err)?;
    }
    finish_csv(w)
}

/// `coord,magnitude,magnitude_db` along a PSF cut.
pub fn profile_csv(p: &PsfProfile) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["coord", "magnitude", "magnitude_db"])
        .map_err(csv_err)?;
    let peak = p.magnitude[p.peak];
    for (x, m) in p.coords.iter().zip(&p.magnitude) {
        let db = if peak > 0.0 && *m > 0.0 {
            20.0 * (m / peak).log10()
        } else {
            f64::NEG_INFINITY
        };
        w.write_record([x.to_string(), m.to_string(), db.to_string()])
            .map_err(csv_err)?;
    }
    finish_csv(w)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Plane {
    Xy,
    Yz,
    Xz,
}

impl Plane {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "xy" => Ok(Plane::Xy),
            "yz" => Ok(Plane::Yz),
            "xz" => Ok(Plane::Xz),
            _ => config_err(format!("unknown plane '{s}' (xy, yz, xz)")),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Plane::Xy => "xy",
            Plane::Yz => "yz",
            Plane::Xz => "xz",
        }
    }

    /// (horizontal axis, vertical axis)
    fn axes(&self) -> (usize, usize) {
        match self {
            Plane::Xy => (0, 1),
            Plane::Yz => (1, 2),
            Plane::Xz => (0, 2),
        }
    }
}

/// Max-magnitude projection onto `plane` as a binary PGM. Values are in dB
/// relative to the volume peak, clamped to `[db_floor, 0]` and mapped to 0..255.
/// The first named axis runs left to right, the second bottom to top.
pub fn export_projection(vol: &ComplexVolume, plane: Plane, db_floor: f64) -> Result<Vec<u8>> {
    if vol.grid.is_empty() {
        return config_err("cannot project an empty volume");
    }
    if !(db_floor < 0.0 && db_floor.is_finite()) {
        return config_err(format!("dB floor must be negative, got {db_floor}"));
    }
    let (h, v) = plane.axes();
    let c = vol.grid.counts;
    let (w, ht) = (c[h], c[v]);
    let mut proj = vec![0.0f64; w * ht];
    for (n, val) in vol.as_slice().iter().enumerate() {
        let (i, j, l) = vol.grid.unflatten(n);
        let idx = [i, j, l];
        let cell = &mut proj[idx[v] * w + idx[h]];
        *cell = cell.max(val.norm());
    }
    let peak = proj.iter().cloned().fold(0.0, f64::max);
    let mut out = format!("P5\n{w} {ht}\n255\n").into_bytes();
    for row in (0..ht).rev() {
        for col in 0..w {
            let m = proj[row * w + col];
            let db = if peak > 0.0 && m > 0.0 {
                20.0 * (m / peak).log10()
            } else {
                db_floor
            };
            let x = (db.clamp(db_floor, 0.0) - db_floor) / -db_floor;
            out.push((x * 255.0).round() as u8);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phase::{build_dft_schedule, build_random_schedule, build_truncated_dft, quantize};

    fn pgm_pixels(b: &[u8]) -> (usize, usize, Vec<u8>) {
        let text = String::from_utf8_lossy(&b[..20]).to_string();
        let mut it = text.split_whitespace();
        assert_eq!(it.next(), Some("P5"));
        let w: usize = it.next().unwrap().parse().unwrap();
        let h: usize = it.next().unwrap().parse().unwrap();
        (w, h, b[b.len() - w * h..].to_vec())
    }

    fn grid() -> VoxelGrid {
        VoxelGrid::centered(Point3::new(0.0, 0.0, 0.0), [3, 4, 5], [1.0, 0.5, 0.5])
    }

    #[test]
    fn single_voxel_projection() {
        let mut v = ComplexVolume::zeros(grid());
        v.data[[1, 2, 3]] = C64::new(0.0, 2.0);
        let (w, h, px) = pgm_pixels(&export_projection(&v, Plane::Yz, -10.0).unwrap());
        assert_eq!((w, h), (4, 5));
        assert_eq!(px.iter().filter(|p| **p == 255).count(), 1);
        assert_eq!(px.iter().filter(|p| **p == 0).count(), 19);
        // z = 3 of 5 is row 1 from the top, y = 2 is column 2
        assert_eq!(px[4 + 2], 255);
    }

    #[test]
    fn uniform_projection_is_white() {
        let mut v = ComplexVolume::zeros(grid());
        v.data.fill(C64::new(0.3, 0.4));
        for plane in [Plane::Xy, Plane::Yz, Plane::Xz] {
            let (_, _, px) = pgm_pixels(&export_projection(&v, plane, -10.0).unwrap());
            assert!(px.iter().all(|p| *p == 255));
        }
        assert!(export_projection(&v, Plane::Xy, 0.0).is_err());
    }

    #[test]
    fn volume_csv_round_trip() {
        let g = grid();
        let data = (0..g.len())
            .map(|i| C64::new(i as f64 * 0.25, -(i as f64)))
            .collect();
        let v = ComplexVolume::from_flat(g, data).unwrap();
        let back = parse_volume_csv(&volume_csv(&v).unwrap()).unwrap();
        assert_eq!(back.grid.counts, g.counts);
        assert_eq!(back.as_slice(), v.as_slice());
        for a in 0..3 {
            assert!((back.grid.pitch[a] - g.pitch[a]).abs() < 1e-12);
        }
    }

    #[test]
    fn schedule_round_trip() {
        for s in [
            build_dft_schedule(16).unwrap(),
            build_truncated_dft(16, 5).unwrap(),
            quantize(&build_dft_schedule(16).unwrap(), 2).unwrap(),
            build_random_schedule(9, 4, 7).unwrap(),
        ] {
            let bytes = write_schedule(&s);
            assert_eq!(&bytes[..4], SCHEDULE_MAGIC);
            assert_eq!(read_schedule(&bytes, None).unwrap(), s);
        }
        let cfg = SystemConfig {
            ris_elements: (8, 8),
            ..SystemConfig::default()
        };
        let b = build_block_dft_schedule(&cfg, 4, true).unwrap();
        let bytes = write_schedule(&b);
        assert!(read_schedule(&bytes, None).is_err());
        assert_eq!(read_schedule(&bytes, Some(&cfg)).unwrap(), b);
        assert!(read_schedule(&bytes[..bytes.len() - 1], Some(&cfg)).is_err());
    }

    #[test]
    fn container_round_trip() {
        let ms = MeasurementSet {
            t_count: 2,
            r_count: 3,
            data: (0..6).map(|i| C64::new(i as f64, 0.5)).collect(),
            noise_variance: 0.01,
            seed: 9,
            scale: 2.5,
        };
        let b = write_measurements(&ms);
        assert_eq!(b.len(), DATA_HEADER_LEN + 6 * 16);
        assert_eq!(read_measurements(&b).unwrap(), ms);
        assert!(read_ecr(&b).is_err());
        let e = EcrEstimate {
            t_count: 1,
            aperture: Aperture {
                ny: 2,
                nz: 2,
                pitch: 0.5,
                center: Point3::new(-5.0, 0.0, 1.0),
            },
            data: vec![C64::new(1.0, -1.0); 4],
            method: RecoveryMethod::Block,
        };
        let b = write_ecr(&e);
        assert_eq!(read_ecr(&b).unwrap(), e);
        let mut bad = b.clone();
        bad[0] = b'X';
        assert!(matches!(read_ecr(&bad), Err(Error::Format(_))));
    }
}
