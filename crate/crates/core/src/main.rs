use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use ris_imaging::ecr::recover_ecr;
use ris_imaging::harness::config::{
    load_config, serialize_config, Algo, Output, Recovery, ScenarioPreset,
};
use ris_imaging::harness::export::{
    export_projection, measurements_csv, profile_csv, read_measurements, read_schedule, volume_csv,
    write_ecr, write_measurements, write_schedule, Plane,
};
use ris_imaging::harness::presets::{
    all_presets, fig8_variants, preset, sweep_preset, SWEEP_PRESETS,
};
use ris_imaging::harness::runner::{
    clean_measurements, nmse_csv, nmse_study, run_scenario, timestamped_dir, trial_measurements,
    write_artifacts, Overrides, Pipeline, PROJECTION_FLOOR_DB,
};
use ris_imaging::resolution::{drl, drl_sweep, nyquist_limits, sweep_csv, DrlInputs, PsfProfile};
use ris_imaging::{Error, Result};

const DEFAULT_PRESET: &str = "fig4-point";

#[derive(Parser)]
#[command(
    name = "ris-imaging",
    version,
    about = "RIS-assisted wideband 3D radio imaging"
)]
struct Cli {
    /// Scenario config file (INI). Overrides --preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Bundled preset name (see `presets`).
    #[arg(long, global = true)]
    preset: Option<String>,
    /// Seed for noise and random schedules.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; each run writes into a timestamped subdirectory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum AlgoArg {
    Saa,
    Ista,
    Ftcs,
}

impl From<AlgoArg> for Algo {
    fn from(a: AlgoArg) -> Self {
        match a {
            AlgoArg::Saa => Algo::Saa,
            AlgoArg::Ista => Algo::Ista,
            AlgoArg::Ftcs => Algo::Ftcs,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum RecoveryArg {
    Full,
    Pinv,
    Block,
    Inverse,
}

impl From<RecoveryArg> for Recovery {
    fn from(r: RecoveryArg) -> Self {
        match r {
            RecoveryArg::Full => Recovery::Full,
            RecoveryArg::Pinv => Recovery::Pinv,
            RecoveryArg::Block => Recovery::Block,
            RecoveryArg::Inverse => Recovery::Inverse,
        }
    }
}

#[derive(Args, Clone)]
struct NoiseArgs {
    /// Noise variance relative to the mean noiseless measurement power.
    #[arg(long)]
    noise_variance: Option<f64>,
}

#[derive(Subcommand)]
enum Cmd {
    /// List bundled presets and sweeps.
    Presets,
    /// Simulate pilot measurements and write them with the schedule.
    Simulate(NoiseArgs),
    /// Recover the equivalent channel response from stored measurements.
    RecoverEcr {
        /// Measurement container written by `simulate`.
        #[arg(long)]
        measurements: PathBuf,
        /// Schedule file; rebuilt from the config when omitted.
        #[arg(long)]
        schedule: Option<PathBuf>,
        #[arg(long, value_enum)]
        recovery: Option<RecoveryArg>,
    },
    /// Form an image and write volume, projections and metrics.
    Image {
        #[arg(long, value_enum)]
        algo: Option<AlgoArg>,
        #[arg(long, value_enum)]
        recovery: Option<RecoveryArg>,
        /// Use stored measurements instead of simulating.
        #[arg(long)]
        measurements: Option<PathBuf>,
        #[command(flatten)]
        noise: NoiseArgs,
    },
    /// Run a scenario end to end (the limited-pilot preset expands to all variants).
    Run {
        #[arg(long, value_enum)]
        algo: Option<AlgoArg>,
        #[arg(long, value_enum)]
        recovery: Option<RecoveryArg>,
        #[arg(long)]
        trials: Option<usize>,
        #[command(flatten)]
        noise: NoiseArgs,
    },
    /// Print theoretical resolution limits and sampling bounds.
    Drl,
    /// Measure PSF widths of the scenario image along each axis.
    Psf,
    /// Resolution sweep: theory vs numerical PSF widths.
    Sweep {
        /// Sweep preset name.
        #[arg(long, default_value = "fig5-d0")]
        name: String,
    },
    /// NMSE over block sizes, noise levels and solvers.
    Nmse {
        /// Block sizes Q.
        #[arg(long, value_delimiter = ',', default_value = "4,16,64")]
        blocks: Vec<usize>,
        /// Noise variances.
        #[arg(long, value_delimiter = ',', default_value = "0.01,0.1,1,10")]
        variances: Vec<f64>,
        #[arg(long, value_delimiter = ',', value_enum, default_values_t = [AlgoArg::Ftcs, AlgoArg::Ista])]
        algos: Vec<AlgoArg>,
        #[arg(long)]
        trials: Option<usize>,
        /// Print the magnitude-only NMSE instead of the complex one.
        #[arg(long)]
        nmse_magnitude: bool,
    },
}

fn load(cli: &Cli, default: &str) -> Result<ScenarioPreset> {
    let mut p = match (&cli.config, &cli.preset) {
        (Some(path), _) => load_config(path)?,
        (None, Some(name)) => {
            preset(name).ok_or_else(|| Error::Config(format!("unknown preset '{name}'")))?
        }
        (None, None) => preset(default).expect("default preset exists"),
    };
    if let Some(s) = cli.seed {
        p.run.seed = s;
    }
    Ok(p)
}

fn emit(out: &Path, name: &str, artifacts: &[(String, Vec<u8>)]) -> Result<PathBuf> {
    let dir = timestamped_dir(out, name);
    write_artifacts(&dir, artifacts)?;
    println!("wrote {}", dir.display());
    Ok(dir)
}

fn run_one(cli: &Cli, p: &ScenarioPreset, ov: &Overrides) -> Result<()> {
    let r = run_scenario(p, ov)?;
    print!("{}", r.report.summary());
    for (stage, secs) in &r.report.runtimes {
        println!("runtime_{stage} = {secs:.3}s");
    }
    emit(&cli.out, &r.preset.name, &r.artifacts)?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: cannot set thread count: {e}");
            return ExitCode::from(2);
        }
    }
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.cmd {
        Cmd::Presets => {
            for p in all_presets() {
                println!("{:<28} {}", p.name, p.description);
            }
            for s in SWEEP_PRESETS {
                println!("{s:<28} resolution sweep (use with `sweep --name`)");
            }
            Ok(())
        }
        Cmd::Simulate(noise) => {
            let mut p = load(cli, DEFAULT_PRESET)?;
            if let Some(v) = noise.noise_variance {
                p.run.noise_variance = v;
            }
            p.system.validate()?;
            let schedule = p.schedule.build(&p.system, p.run.seed)?;
            let clean = clean_measurements(&p, &schedule)?;
            let ms = trial_measurements(&clean, &p, 0)?;
            let artifacts = vec![
                ("config.ini".to_string(), serialize_config(&p).into_bytes()),
                ("measurements.bin".to_string(), write_measurements(&ms)),
                (
                    "measurements.csv".to_string(),
                    measurements_csv(&ms)?.into_bytes(),
                ),
                ("schedule.bin".to_string(), write_schedule(&schedule)),
            ];
            emit(&cli.out, &format!("{}-simulate", p.name), &artifacts)?;
            Ok(())
        }
        Cmd::RecoverEcr {
            measurements,
            schedule,
            recovery,
        } => {
            let p = load(cli, DEFAULT_PRESET)?;
            let ms = read_measurements(&std::fs::read(measurements)?)?;
            let sched = match schedule {
                Some(path) => read_schedule(&std::fs::read(path)?, Some(&p.system))?,
                None => p.schedule.build(&p.system, p.run.seed)?,
            };
            let method = recovery
                .map(Recovery::from)
                .unwrap_or(p.solver.recovery)
                .method();
            let ecr = recover_ecr(&ms, &p.system, &sched, method)?;
            println!(
                "recovered {} subcarriers x {} sites ({:?})",
                ecr.t_count,
                ecr.aperture.len(),
                method
            );
            emit(
                &cli.out,
                &format!("{}-ecr", p.name),
                &[("ecr.bin".to_string(), write_ecr(&ecr))],
            )?;
            Ok(())
        }
        Cmd::Image {
            algo,
            recovery,
            measurements,
            noise,
        } => {
            let p = load(cli, DEFAULT_PRESET)?;
            let ov = Overrides {
                algo: algo.map(Algo::from),
                recovery: recovery.map(Recovery::from),
                noise_variance: noise.noise_variance,
                trials: Some(1),
                ..Overrides::default()
            };
            match measurements {
                None => run_one(cli, &p, &ov),
                Some(path) => {
                    let p = ov.apply(&p);
                    let ms = read_measurements(&std::fs::read(path)?)?;
                    let pipe = Pipeline::new(&p)?;
                    let res = pipe.image(&ms)?;
                    let mut artifacts = vec![
                        ("config.ini".to_string(), serialize_config(&p).into_bytes()),
                        (
                            "volume.csv".to_string(),
                            volume_csv(&res.image)?.into_bytes(),
                        ),
                    ];
                    for plane in [Plane::Yz, Plane::Xz, Plane::Xy] {
                        artifacts.push((
                            format!("projection_{}.pgm", plane.name()),
                            export_projection(&res.image, plane, PROJECTION_FLOOR_DB)?,
                        ));
                    }
                    emit(&cli.out, &p.name, &artifacts)?;
                    Ok(())
                }
            }
        }
        Cmd::Run {
            algo,
            recovery,
            trials,
            noise,
        } => {
            let p = load(cli, DEFAULT_PRESET)?;
            let ov = Overrides {
                algo: algo.map(Algo::from),
                recovery: recovery.map(Recovery::from),
                noise_variance: noise.noise_variance,
                trials: *trials,
                ..Overrides::default()
            };
            if p.name == "fig8-limited-pilots" && algo.is_none() && recovery.is_none() {
                for (label, v) in fig8_variants(&p) {
                    println!("== {label}");
                    run_one(cli, &v, &ov)?;
                }
                Ok(())
            } else {
                run_one(cli, &p, &ov)
            }
        }
        Cmd::Drl => {
            let p = load(cli, DEFAULT_PRESET)?;
            p.system.validate()?;
            let inp = DrlInputs::from_config(&p.system, &p.system.roi_center);
            let r = drl(&inp);
            println!("theta = {:.4} rad", inp.theta);
            println!(
                "gamma_y = {:.4} rad, gamma_z = {:.4} rad",
                inp.gamma_y, inp.gamma_z
            );
            println!("drl_x = {:.6}", r.x);
            println!("drl_y = {:.6}", r.y);
            println!("drl_z = {:.6}", r.z);
            let n = nyquist_limits(&p.system);
            println!(
                "max element spacing y/z = {:.6} / {:.6} (configured {}, {})",
                n.max_element_spacing_y,
                n.max_element_spacing_z,
                p.system.element_size,
                if n.element_ok { "ok" } else { "violated" }
            );
            println!(
                "max subcarrier spacing = {:.6} (configured {}, {})",
                n.max_subcarrier_spacing,
                p.system.rel_spacing * p.system.center_freq,
                if n.subcarrier_ok { "ok" } else { "violated" }
            );
            Ok(())
        }
        Cmd::Psf => {
            let mut p = load(cli, DEFAULT_PRESET)?;
            p.run.outputs = [Output::Psf].into_iter().collect();
            let r = run_scenario(
                &p,
                &Overrides {
                    trials: Some(1),
                    ..Overrides::default()
                },
            )?;
            let peak = r.image.grid.unflatten(r.image.peak().0);
            let mut artifacts = Vec::new();
            for (axis, name) in ["x", "y", "z"].iter().enumerate() {
                let mut prof = PsfProfile::from_volume(&r.image, axis, peak)?;
                match prof.first_null_width() {
                    Ok(w) => println!("psf_{name} = {w:.6}"),
                    Err(e) => println!("psf_{name} = n/a ({e})"),
                }
                artifacts.push((format!("psf_{name}.csv"), profile_csv(&prof)?.into_bytes()));
            }
            let th = drl(&DrlInputs::from_config(
                &r.preset.system,
                &r.preset.system.roi_center,
            ));
            println!(
                "drl_x = {:.6}\ndrl_y = {:.6}\ndrl_z = {:.6}",
                th.x, th.y, th.z
            );
            emit(&cli.out, &format!("{}-psf", p.name), &artifacts)?;
            Ok(())
        }
        Cmd::Sweep { name } => {
            let spec = sweep_preset(name)
                .ok_or_else(|| Error::Config(format!("unknown sweep '{name}'")))?;
            let rows = drl_sweep(&spec)?;
            let csv = sweep_csv(spec.param, &rows)?;
            print!("{csv}");
            emit(
                &cli.out,
                name,
                &[("sweep.csv".to_string(), csv.into_bytes())],
            )?;
            Ok(())
        }
        Cmd::Nmse {
            blocks,
            variances,
            algos,
            trials,
            nmse_magnitude,
        } => {
            let mut p = load(cli, "fig9-nmse")?;
            if let Some(t) = trials {
                p.run.trials = *t;
            }
            let algos: Vec<Algo> = algos.iter().map(|a| Algo::from(*a)).collect();
            let rows = nmse_study(&p, blocks, variances, &algos)?;
            for r in &rows {
                let v = if *nmse_magnitude {
                    r.nmse_magnitude
                } else {
                    r.nmse
                };
                println!(
                    "q={:<3} pilots={:<5} variance={:<8} {:<5} nmse{} = {:.3} dB",
                    r.q,
                    r.pilots,
                    r.noise_variance,
                    r.algo.name(),
                    if *nmse_magnitude { "_magnitude" } else { "" },
                    10.0 * v.log10()
                );
            }
            let csv = nmse_csv(&rows, p.system.num_elements())?;
            emit(
                &cli.out,
                &format!("{}-study", p.name),
                &[("nmse.csv".to_string(), csv.into_bytes())],
            )?;
            Ok(())
        }
    }
}
