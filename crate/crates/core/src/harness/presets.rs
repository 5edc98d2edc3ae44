//! Bundled scenarios.

use super::config::{Algo, Output, Recovery, RunSpec, ScenarioPreset, ScheduleSpec, SolverSpec};
use crate::cs::Threshold;
use crate::geometry::{Point3, Scatterer, Scene, SystemConfig, C64};
use crate::resolution::{SweepParam, SweepSpec, UeRange};
use crate::saa::ImagingOptions;

fn unit(p: [f64; 3]) -> Scatterer {
    Scatterer {
        position: Point3::new(p[0], p[1], p[2]),
        coefficient: C64::new(1.0, 0.0),
    }
}

/// Nine unit points on a 3 x 3 grid in the plane x = 0.
pub fn nine_points(spacing: f64) -> Scene {
    let mut s = Vec::new();
    for z in [-spacing, 0.0, spacing] {
        for y in [-spacing, 0.0, spacing] {
            s.push(unit([0.0, y, z]));
        }
    }
    Scene::new(s)
}

fn outputs(o: &[Output]) -> std::collections::BTreeSet<Output> {
    o.iter().copied().collect()
}

/// Single unit point at the ROI center, full-scale 100 x 100 RIS.
pub fn fig4_point() -> ScenarioPreset {
    ScenarioPreset {
        name: "fig4-point".into(),
        description: "point target PSF, 100x100 RIS, D0 = 50".into(),
        system: SystemConfig::default(),
        scene: Scene::point(Point3::new(0.0, 0.0, 0.0), C64::new(1.0, 0.0)),
        schedule: ScheduleSpec::Dft,
        imaging: ImagingOptions {
            spatial_pad: 1,
            oversampling: 4.0,
            n_x: 81,
        },
        solver: SolverSpec::default(),
        run: RunSpec {
            seed: 1,
            noise_variance: 0.01,
            normalize: true,
            trials: 1,
            outputs: outputs(&[Output::Projections, Output::Psf]),
        },
    }
}

/// Nine points over a 50-wide ROI with an `m x m` RIS and optional phase quantization.
pub fn fig6(m: usize, bits: Option<u32>) -> ScenarioPreset {
    let tag = match bits {
        Some(b) => format!("{b}bit"),
        None => "continuous".into(),
    };
    let name = if m == 100 {
        format!("fig6-{tag}")
    } else {
        format!("fig6-{tag}-{m}x{m}")
    };
    ScenarioPreset {
        name,
        description: format!("nine points, {m}x{m} RIS, {tag} phases"),
        system: SystemConfig {
            ris_elements: (m, m),
            roi_extent: Point3::new(10.0, 50.0, 50.0),
            ..SystemConfig::default()
        },
        scene: nine_points(15.0),
        schedule: match bits {
            Some(b) => ScheduleSpec::QuantizedDft {
                bits: b,
                rows: None,
            },
            None => ScheduleSpec::Dft,
        },
        imaging: ImagingOptions {
            spatial_pad: 2,
            oversampling: 1.0,
            n_x: 5,
        },
        solver: SolverSpec::default(),
        run: RunSpec {
            seed: 1,
            noise_variance: 0.01,
            normalize: true,
            trials: 1,
            outputs: outputs(&[Output::Projections]),
        },
    }
}

fn four_points() -> Scene {
    Scene::new(vec![
        unit([0.0, -6.0, -6.0]),
        unit([0.0, 6.0, -6.0]),
        unit([0.0, -6.0, 6.0]),
        unit([0.0, 6.0, 3.0]),
    ])
}

/// Four points seen through the RIS at D0 = 50, or through a virtual AP array
/// at distance `d0` standing in for the wall-reflected path.
pub fn fig7(d0: f64, with_ris: bool) -> ScenarioPreset {
    let name = if with_ris {
        "fig7-with-ris".to_string()
    } else {
        format!("fig7-no-ris-{}", d0 as i64)
    };
    ScenarioPreset {
        name,
        description: format!(
            "four points, {} aperture at distance {d0}",
            if with_ris { "RIS" } else { "virtual AP" }
        ),
        system: SystemConfig {
            ris_center: Point3::new(-d0, 0.0, 0.0),
            ap: if with_ris || d0 < 100.0 {
                Point3::new(-20.0, 20.0, 20.0)
            } else {
                Point3::new(20.0, 20.0, 20.0)
            },
            roi_extent: Point3::new(10.0, 30.0, 30.0),
            ..SystemConfig::default()
        },
        scene: four_points(),
        schedule: ScheduleSpec::Dft,
        imaging: ImagingOptions {
            spatial_pad: 1,
            oversampling: 4.0,
            n_x: 5,
        },
        solver: SolverSpec::default(),
        run: RunSpec {
            seed: 1,
            noise_variance: 0.01,
            normalize: true,
            trials: 1,
            outputs: outputs(&[Output::Projections]),
        },
    }
}

/// Limited-pilot comparison base: 64 x 64 RIS, nine points, R = M/16 with
/// 4 x 4 element blocks, FT+CS solver.
pub fn fig8_limited_pilots() -> ScenarioPreset {
    ScenarioPreset {
        name: "fig8-limited-pilots".into(),
        description: "nine points, 64x64 RIS, R = M/16".into(),
        system: SystemConfig {
            ris_elements: (64, 64),
            roi_extent: Point3::new(4.0, 30.0, 30.0),
            ..SystemConfig::default()
        },
        scene: nine_points(10.0),
        schedule: ScheduleSpec::Block {
            q: 16,
            compensated: true,
        },
        imaging: ImagingOptions {
            spatial_pad: 4,
            oversampling: 4.0,
            n_x: 3,
        },
        solver: SolverSpec {
            algo: Algo::Ftcs,
            recovery: Recovery::Block,
            max_iters: 100,
            threshold: Threshold::Sparsity(9),
            ..SolverSpec::default()
        },
        run: RunSpec {
            seed: 1,
            noise_variance: 0.01,
            normalize: true,
            trials: 1,
            outputs: outputs(&[Output::Projections, Output::Residuals]),
        },
    }
}

/// The five algorithm variants compared on the limited-pilot scenario.
pub fn fig8_variants(base: &ScenarioPreset) -> Vec<(String, ScenarioPreset)> {
    let m = base.system.num_elements();
    let q = match base.schedule {
        ScheduleSpec::Block { q, .. } => q,
        _ => 16,
    };
    let block = ScheduleSpec::Block {
        q,
        compensated: true,
    };
    let variant = |label: &str, schedule: ScheduleSpec, algo: Algo, recovery: Recovery| {
        let mut p = base.clone();
        p.name = format!("{}-{label}", base.name);
        if !matches!(schedule, ScheduleSpec::Block { .. }) {
            // element-level aperture: keep the block variants' voxel pitch
            p.imaging.oversampling = oversampling_for_block(1, q, base.imaging.oversampling);
        }
        p.schedule = schedule;
        p.solver.algo = algo;
        p.solver.recovery = recovery;
        (label.to_string(), p)
    };
    vec![
        variant("saa-full", ScheduleSpec::Dft, Algo::Saa, Recovery::Full),
        variant(
            "pinv",
            ScheduleSpec::TruncatedDft { rows: m / q },
            Algo::Saa,
            Recovery::Pinv,
        ),
        variant("block", block, Algo::Saa, Recovery::Block),
        variant("ftcs", block, Algo::Ftcs, Recovery::Block),
        variant("ista", block, Algo::Ista, Recovery::Block),
    ]
}

/// Small-scale geometry for solver comparisons: 16 x 16 RIS at D0 = 6,
/// 8 x 8 x 4 voxel ROI, four points at x = 1.5. Voxel pitch (3 in range,
/// 1 in cross-range) sits at or just below the diffraction limit per axis.
pub fn fig9_nmse() -> ScenarioPreset {
    ScenarioPreset {
        name: "fig9-nmse".into(),
        description: "four points, 16x16 RIS, block-RIS solver comparison".into(),
        system: SystemConfig {
            ris_center: Point3::new(-6.0, 0.0, 0.0),
            ris_elements: (16, 16),
            ue: Point3::new(-5.0, -6.0, 0.0),
            ap: Point3::new(2.0, 8.0, 8.0),
            roi_extent: Point3::new(9.0, 8.0, 8.0),
            rel_spacing: 1.0 / 150.0,
            ..SystemConfig::default()
        },
        scene: Scene::new(vec![
            unit([1.5, -2.0, -2.0]),
            unit([1.5, 2.0, -2.0]),
            unit([1.5, -2.0, 2.0]),
            unit([1.5, 2.0, 1.0]),
        ]),
        schedule: ScheduleSpec::Block {
            q: 4,
            compensated: true,
        },
        imaging: ImagingOptions {
            spatial_pad: 4,
            oversampling: 1.0,
            n_x: 4,
        },
        solver: SolverSpec {
            algo: Algo::Ftcs,
            recovery: Recovery::Block,
            max_iters: 300,
            threshold: Threshold::Sparsity(4),
            ..SolverSpec::default()
        },
        run: RunSpec {
            seed: 1,
            noise_variance: 0.01,
            normalize: true,
            trials: 100,
            outputs: outputs(&[]),
        },
    }
}

/// Oversampling that keeps the cross-range pitch fixed as block size changes.
pub fn oversampling_for_block(q: usize, base_q: usize, base_oversampling: f64) -> f64 {
    base_oversampling * (q as f64 / base_q as f64).sqrt()
}

pub fn all_presets() -> Vec<ScenarioPreset> {
    vec![
        fig4_point(),
        fig6(100, None),
        fig6(100, Some(2)),
        fig6(100, Some(1)),
        fig6(64, None),
        fig6(64, Some(2)),
        fig6(64, Some(1)),
        fig7(50.0, true),
        fig7(82.0, false),
        fig7(121.0, false),
        fig8_limited_pilots(),
        fig9_nmse(),
    ]
}

pub fn preset(name: &str) -> Option<ScenarioPreset> {
    all_presets().into_iter().find(|p| p.name == name)
}

/// Sweep geometry: wide-range ROI so both range nulls stay inside.
fn sweep_base() -> SystemConfig {
    SystemConfig {
        roi_extent: Point3::new(30.0, 12.0, 12.0),
        ..SystemConfig::default()
    }
}

fn sweep_imaging() -> ImagingOptions {
    ImagingOptions {
        spatial_pad: 1,
        oversampling: 4.0,
        n_x: 121,
    }
}

/// Named resolution sweeps: `fig5-d0`, `fig5-theta`, `fig5-bandwidth`.
pub fn sweep_preset(name: &str) -> Option<SweepSpec> {
    let base = sweep_base();
    let s = match name {
        "fig5-d0" => SweepSpec {
            param: SweepParam::D0,
            values: vec![30.0, 50.0, 100.0, 150.0],
            base,
            imaging: sweep_imaging(),
            theta_deg: 0.0,
            ue_range: UeRange::FractionOfD0(0.8),
        },
        "fig5-theta" => SweepSpec {
            param: SweepParam::Theta,
            values: vec![0.0, 15.0, 30.0, 45.0],
            base: SystemConfig {
                ris_center: Point3::new(-150.0, 0.0, 0.0),
                ..base
            },
            imaging: sweep_imaging(),
            theta_deg: 45.0,
            ue_range: UeRange::Fixed(40.0 * 2f64.sqrt()),
        },
        "fig5-bandwidth" => SweepSpec {
            param: SweepParam::Bandwidth,
            values: vec![1.0 / 30.0, 1.0 / 15.0, 2.0 / 15.0],
            base,
            imaging: sweep_imaging(),
            theta_deg: 45.0,
            ue_range: UeRange::Fixed(40.0 * 2f64.sqrt()),
        },
        _ => return None,
    };
    Some(s)
}

pub const SWEEP_PRESETS: [&str; 3] = ["fig5-d0", "fig5-theta", "fig5-bandwidth"];
