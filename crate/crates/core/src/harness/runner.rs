//! Scenario runner: simulate, recover, image, score and write artifacts.

use std::path::{Path, PathBuf};
use std::time::Instant;

use sha2::{Digest, Sha256};

use super::config::{serialize_config, Algo, Output, Recovery, ScenarioPreset, ScheduleSpec};
use super::export::{
    export_projection, measurements_csv, profile_csv, residuals_csv, volume_csv,
    write_measurements, write_schedule, Plane,
};
use super::metrics::{
    find_peaks, localized, nmse, nmse_magnitude, off_support_floor_db, support, MetricsReport,
};
use super::presets::oversampling_for_block;
use crate::channel::{
    add_noise, build_sensing_matrix, measure_noiseless, normalize_path_energy, MeasurementSet,
};
use crate::cs::{build_operators, ftcs, ista, FtcsOptions, IstaOptions, OperatorPair};
use crate::ecr::{recover_ecr, recovery_aperture};
use crate::error::{Error, Result};
use crate::geometry::{rasterize, ComplexVolume, VoxelGrid};
use crate::phase::PhaseSchedule;
use crate::resolution::{drl, extract_resolution, DrlInputs, PsfProfile};
use crate::saa::{image_saa_with, SaaKernel};

/// dB floor of exported projections.
pub const PROJECTION_FLOOR_DB: f64 = -10.0;

/// Command-line style overrides applied on top of a preset.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub algo: Option<Algo>,
    pub recovery: Option<Recovery>,
    pub noise_variance: Option<f64>,
    pub trials: Option<usize>,
}

impl Overrides {
    pub fn apply(&self, p: &ScenarioPreset) -> ScenarioPreset {
        let mut p = p.clone();
        if let Some(s) = self.seed {
            p.run.seed = s;
        }
        if let Some(a) = self.algo {
            p.solver.algo = a;
        }
        if let Some(r) = self.recovery {
            p.solver.recovery = r;
        }
        if let Some(v) = self.noise_variance {
            p.run.noise_variance = v;
        }
        if let Some(t) = self.trials {
            p.run.trials = t;
        }
        p
    }
}

/// Prefix error messages with the pipeline stage that produced them.
fn stage<T>(name: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Config(m) => Error::Config(format!("{name}: {m}")),
        Error::Shape(m) => Error::Shape(format!("{name}: {m}")),
        Error::Numerical(m) => Error::Numerical(format!("{name}: {m}")),
        Error::Format(m) => Error::Format(format!("{name}: {m}")),
        other => other,
    })
}

/// Measurements for one Monte Carlo trial: trial `i` uses noise seed `seed + i`.
pub fn trial_measurements(
    clean: &MeasurementSet,
    p: &ScenarioPreset,
    trial: usize,
) -> Result<MeasurementSet> {
    add_noise(
        clean,
        p.run.noise_variance,
        p.run.seed.wrapping_add(trial as u64),
    )
}

/// Noiseless measurements, energy-normalized when the preset asks for it.
pub fn clean_measurements(p: &ScenarioPreset, schedule: &PhaseSchedule) -> Result<MeasurementSet> {
    let ms = measure_noiseless(&p.scene, &p.system, schedule)?;
    if p.run.normalize {
        normalize_path_energy(&ms)
    } else {
        Ok(ms)
    }
}

enum Imager {
    Saa(SaaKernel),
    Ftcs(Box<OperatorPair>),
    Ista(Box<crate::channel::SensingMatrix>, VoxelGrid),
}

/// Reusable imaging state for one preset.
pub struct Pipeline {
    pub preset: ScenarioPreset,
    pub schedule: PhaseSchedule,
    imager: Imager,
}

/// Image plus solver diagnostics.
pub struct ImageResult {
    pub image: ComplexVolume,
    pub residuals: Vec<f64>,
    pub steps: Vec<f64>,
}

impl Pipeline {
    pub fn new(p: &ScenarioPreset) -> Result<Self> {
        let cfg = &p.system;
        let schedule = stage("schedule", p.schedule.build(cfg, p.run.seed))?;
        let imager = match p.solver.algo {
            Algo::Saa => {
                let ap = recovery_aperture(cfg, &schedule);
                Imager::Saa(stage("imaging", SaaKernel::new(cfg, &ap, &p.imaging))?)
            }
            Algo::Ftcs => Imager::Ftcs(Box::new(stage(
                "operators",
                build_operators(cfg, &schedule, &p.imaging),
            )?)),
            Algo::Ista => {
                let ap = recovery_aperture(cfg, &schedule);
                let o = &p.imaging;
                let grid = stage(
                    "imaging",
                    VoxelGrid::imaging(cfg, &ap, o.spatial_pad, o.oversampling, o.n_x),
                )?;
                let a = stage(
                    "sensing matrix",
                    build_sensing_matrix(cfg, &schedule, &grid, p.solver.memory_budget),
                )?;
                Imager::Ista(Box::new(a), grid)
            }
        };
        Ok(Self {
            preset: p.clone(),
            schedule,
            imager,
        })
    }

    pub fn grid(&self) -> VoxelGrid {
        match &self.imager {
            Imager::Saa(k) => k.grid,
            Imager::Ftcs(ops) => ops.kernel.grid,
            Imager::Ista(_, g) => *g,
        }
    }

    pub fn image(&self, ms: &MeasurementSet) -> Result<ImageResult> {
        let p = &self.preset;
        match &self.imager {
            Imager::Saa(kernel) => {
                let ecr = stage(
                    "ecr recovery",
                    recover_ecr(ms, &p.system, &self.schedule, p.solver.recovery.method()),
                )?;
                Ok(ImageResult {
                    image: stage("imaging", image_saa_with(kernel, &ecr))?,
                    residuals: vec![],
                    steps: vec![],
                })
            }
            Imager::Ftcs(ops) => {
                let opts = FtcsOptions {
                    max_iters: p.solver.max_iters,
                    threshold: p.solver.threshold,
                    init: None,
                };
                let r = stage("ftcs", ftcs(ops, &ms.physical(), &opts))?;
                Ok(ImageResult {
                    image: r.image,
                    residuals: r.residuals,
                    steps: r.steps,
                })
            }
            Imager::Ista(a, grid) => {
                let opts = IstaOptions {
                    max_iters: p.solver.max_iters,
                    threshold: p.solver.threshold,
                    step: p.solver.step,
                    init: None,
                };
                let r = stage("ista", ista(a, &ms.physical(), grid, &opts))?;
                Ok(ImageResult {
                    image: r.image,
                    residuals: r.residuals,
                    steps: r.steps,
                })
            }
        }
    }
}

/// Ground-truth volume on `grid`, or None when a scatterer falls outside it.
pub fn truth_volume(p: &ScenarioPreset, grid: &VoxelGrid) -> Option<ComplexVolume> {
    rasterize(&p.scene, grid)
        .ok()
        .filter(|v| v.norm_sqr() > 0.0)
}

/// Guard half-widths (in voxels) covering the theoretical main lobe.
pub fn mainlobe_guard(p: &ScenarioPreset, grid: &VoxelGrid) -> [usize; 3] {
    let r = drl(&DrlInputs::from_config(&p.system, &p.system.roi_center));
    let g = |d: f64, pitch: f64| {
        if d.is_finite() {
            ((d / pitch).ceil() as usize).max(1)
        } else {
            usize::MAX / 2
        }
    };
    [
        g(r.x, grid.pitch[0]),
        g(r.y, grid.pitch[1]),
        g(r.z, grid.pitch[2]),
    ]
}

/// Files produced by a run, in memory.
pub struct RunOutput {
    pub preset: ScenarioPreset,
    pub report: MetricsReport,
    pub image: ComplexVolume,
    pub artifacts: Vec<(String, Vec<u8>)>,
}

/// Run a preset end to end. Metrics use every trial; artifacts come from trial 0.
pub fn run_scenario(preset: &ScenarioPreset, overrides: &Overrides) -> Result<RunOutput> {
    let p = overrides.apply(preset);
    stage("config", p.system.validate())?;
    let mut runtimes = Vec::new();
    let t0 = Instant::now();
    let pipe = Pipeline::new(&p)?;
    runtimes.push(("setup".to_string(), t0.elapsed().as_secs_f64()));

    let t0 = Instant::now();
    let clean = stage("simulate", clean_measurements(&p, &pipe.schedule))?;
    runtimes.push(("simulate".to_string(), t0.elapsed().as_secs_f64()));

    let mut images = Vec::with_capacity(p.run.trials);
    let mut first: Option<(MeasurementSet, ImageResult)> = None;
    let t0 = Instant::now();
    for trial in 0..p.run.trials {
        let ms = stage("simulate", trial_measurements(&clean, &p, trial))?;
        let res = pipe.image(&ms)?;
        images.push(res.image.clone());
        if first.is_none() {
            first = Some((ms, res));
        }
    }
    runtimes.push(("image".to_string(), t0.elapsed().as_secs_f64()));
    let (ms0, res0) = first.expect("at least one trial");

    let grid = pipe.grid();
    let mut report = MetricsReport {
        runtimes,
        residuals: res0.residuals.clone(),
        ..MetricsReport::default()
    };
    if let Some(truth) = truth_volume(&p, &grid) {
        report.nmse = Some(nmse(&images, &truth)?);
        report.nmse_magnitude = Some(nmse_magnitude(&images, &truth)?);
        let sup = support(&truth);
        report.peaks = find_peaks(&res0.image, sup.len());
        report.localized = Some((localized(&report.peaks, &sup, 1), sup.len()));
        report.off_support_floor_db = Some(off_support_floor_db(
            &res0.image,
            &sup,
            mainlobe_guard(&p, &grid),
        ));
    }
    let peak = grid.unflatten(res0.image.peak().0);
    for axis in 0..3 {
        report.resolution[axis] = extract_resolution(&res0.image, axis, Some(peak))
            .ok()
            .map(|r| r.1);
    }

    let mut artifacts: Vec<(String, Vec<u8>)> = vec![
        ("config.ini".into(), serialize_config(&p).into_bytes()),
        ("metrics.txt".into(), report.summary().into_bytes()),
    ];
    for out in &p.run.outputs {
        match out {
            Output::Volume => {
                artifacts.push(("volume.csv".into(), volume_csv(&res0.image)?.into_bytes()))
            }
            Output::Projections => {
                for plane in [Plane::Yz, Plane::Xz, Plane::Xy] {
                    artifacts.push((
                        format!("projection_{}.pgm", plane.name()),
                        export_projection(&res0.image, plane, PROJECTION_FLOOR_DB)?,
                    ));
                }
            }
            Output::Psf => {
                for (axis, name) in ["x", "y", "z"].iter().enumerate() {
                    let prof = PsfProfile::from_volume(&res0.image, axis, peak)?;
                    artifacts.push((format!("psf_{name}.csv"), profile_csv(&prof)?.into_bytes()));
                }
            }
            Output::Residuals => {
                if !res0.residuals.is_empty() {
                    artifacts.push((
                        "residuals.csv".into(),
                        residuals_csv(&res0.residuals, &res0.steps)?.into_bytes(),
                    ));
                }
            }
            Output::Measurements => {
                artifacts.push(("measurements.bin".into(), write_measurements(&ms0)));
                artifacts.push((
                    "measurements.csv".into(),
                    measurements_csv(&ms0)?.into_bytes(),
                ));
                artifacts.push(("schedule.bin".into(), write_schedule(&pipe.schedule)));
            }
        }
    }
    Ok(RunOutput {
        preset: p,
        report,
        image: res0.image,
        artifacts,
    })
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// `<sha256>  <name>` lines, sorted by name.
pub fn manifest(artifacts: &[(String, Vec<u8>)]) -> String {
    let mut lines: Vec<(String, String)> = artifacts
        .iter()
        .map(|(n, b)| (n.clone(), sha256_hex(b)))
        .collect();
    lines.sort();
    lines.iter().map(|(n, h)| format!("{h}  {n}\n")).collect()
}

/// Write artifacts and `manifest.txt` into `dir` (created if missing).
pub fn write_artifacts(dir: &Path, artifacts: &[(String, Vec<u8>)]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (name, bytes) in artifacts {
        std::fs::write(dir.join(name), bytes)?;
    }
    std::fs::write(dir.join("manifest.txt"), manifest(artifacts))?;
    Ok(())
}

/// `<base>/<name>-<unix seconds>`, with a numeric suffix if that exists already.
pub fn timestamped_dir(base: &Path, name: &str) -> PathBuf {
    let secs = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let mut dir = base.join(format!("{name}-{secs}"));
    let mut k = 1;
    while dir.exists() {
        dir = base.join(format!("{name}-{secs}-{k}"));
        k += 1;
    }
    dir
}

/// One row of an NMSE study.
#[derive(Clone, Debug, PartialEq)]
pub struct NmseRow {
    pub q: usize,
    pub pilots: usize,
    pub noise_variance: f64,
    pub algo: Algo,
    pub nmse: f64,
    pub nmse_magnitude: f64,
    /// Trials that ended in a solver error (counted as NMSE 1).
    pub failures: usize,
}

/// Block-RIS variant of `base` with block size `q`, keeping the voxel pitch.
pub fn with_block_size(base: &ScenarioPreset, q: usize) -> ScenarioPreset {
    let mut p = base.clone();
    let base_q = match base.schedule {
        ScheduleSpec::Block { q, .. } => q,
        _ => 1,
    };
    p.schedule = ScheduleSpec::Block {
        q,
        compensated: true,
    };
    p.imaging.oversampling = oversampling_for_block(q, base_q, base.imaging.oversampling);
    p
}

/// NMSE over block sizes, noise levels and algorithms. Every configuration
/// sees the same noise realizations (trial `i` uses seed `seed + i`).
pub fn nmse_study(
    base: &ScenarioPreset,
    block_sizes: &[usize],
    variances: &[f64],
    algos: &[Algo],
) -> Result<Vec<NmseRow>> {
    let mut rows = Vec::new();
    for &q in block_sizes {
        let pq = with_block_size(base, q);
        for &algo in algos {
            let mut pa = pq.clone();
            pa.solver.algo = algo;
            let pipe = Pipeline::new(&pa)?;
            let clean = clean_measurements(&pa, &pipe.schedule)?;
            let truth = truth_volume(&pa, &pipe.grid())
                .ok_or_else(|| Error::Config("scene lies outside the voxel grid".into()))?;
            for &var in variances {
                let mut pv = pa.clone();
                pv.run.noise_variance = var;
                let mut ims = Vec::with_capacity(pv.run.trials);
                let mut failures = 0;
                for trial in 0..pv.run.trials {
                    let ms = trial_measurements(&clean, &pv, trial)?;
                    match pipe.image(&ms) {
                        Ok(r) => ims.push(r.image),
                        Err(Error::Divergence { .. }) | Err(Error::Numerical(_)) => {
                            failures += 1;
                            ims.push(ComplexVolume::zeros(pipe.grid()));
                        }
                        Err(e) => return Err(e),
                    }
                }
                rows.push(NmseRow {
                    q,
                    pilots: pipe.schedule.rows,
                    noise_variance: var,
                    algo,
                    nmse: nmse(&ims, &truth)?,
                    nmse_magnitude: nmse_magnitude(&ims, &truth)?,
                    failures,
                });
            }
        }
    }
    Ok(rows)
}

pub fn nmse_csv(rows: &[NmseRow], elements: usize) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let e = |x: csv::Error| Error::Format(x.to_string());
    w.write_record([
        "q",
        "pilots",
        "pilot_fraction",
        "noise_variance",
        "algo",
        "nmse",
        "nmse_db",
        "nmse_magnitude",
        "failures",
    ])
    .map_err(e)?;
    for r in rows {
        w.write_record([
            r.q.to_string(),
            r.pilots.to_string(),
            (r.pilots as f64 / elements as f64).to_string(),
            r.noise_variance.to_string(),
            r.algo.name().to_string(),
            r.nmse.to_string(),
            (10.0 * r.nmse.log10()).to_string(),
            r.nmse_magnitude.to_string(),
            r.failures.to_string(),
        ])
        .map_err(e)?;
    }
    let b = w.into_inner().map_err(|x| Error::Format(x.to_string()))?;
    String::from_utf8(b).map_err(|x| Error::Format(x.to_string()))
}
