//! Scenario config files: INI sections `[preset]`, `[system]`, `[scene]`,
//! `[schedule]`, `[imaging]`, `[solver]` and `[run]`. Missing keys take their
//! defaults; unknown sections or keys are rejected.

use std::collections::BTreeSet;
use std::path::Path;

use ini::{Ini, Properties};

use crate::channel::DEFAULT_MEMORY_BUDGET;
use crate::cs::Threshold;
use crate::error::{config_err, Error, Result};
use crate::geometry::{Point3, Scatterer, Scene, SystemConfig, Units, C64, SPEED_OF_LIGHT};
use crate::phase::{
    build_block_dft_schedule, build_dft_schedule, build_random_schedule, build_truncated_dft,
    quantize, PhaseSchedule,
};
use crate::saa::ImagingOptions;

/// Which pilot schedule to drive the RIS with.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScheduleSpec {
    Dft,
    TruncatedDft {
        rows: usize,
    },
    /// Quantized DFT with `rows` pilots (all of them when `None`).
    QuantizedDft {
        bits: u32,
        rows: Option<usize>,
    },
    /// Random phases drawn from the run seed.
    Random {
        rows: usize,
    },
    Block {
        q: usize,
        compensated: bool,
    },
}

impl ScheduleSpec {
    pub fn build(&self, cfg: &SystemConfig, seed: u64) -> Result<PhaseSchedule> {
        let m = cfg.num_elements();
        match *self {
            ScheduleSpec::Dft => build_dft_schedule(m),
            ScheduleSpec::TruncatedDft { rows } => build_truncated_dft(m, rows),
            ScheduleSpec::QuantizedDft { bits, rows } => {
                quantize(&build_truncated_dft(m, rows.unwrap_or(m))?, bits)
            }
            ScheduleSpec::Random { rows } => build_random_schedule(m, rows, seed),
            ScheduleSpec::Block { q, compensated } => build_block_dft_schedule(cfg, q, compensated),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Algo {
    Saa,
    Ista,
    Ftcs,
}

impl Algo {
    pub fn name(&self) -> &'static str {
        match self {
            Algo::Saa => "saa",
            Algo::Ista => "ista",
            Algo::Ftcs => "ftcs",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "saa" => Ok(Algo::Saa),
            "ista" => Ok(Algo::Ista),
            "ftcs" => Ok(Algo::Ftcs),
            _ => config_err(format!("unknown algorithm '{s}' (saa, ista, ftcs)")),
        }
    }
}

/// ECR recovery used by the SAA path.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Recovery {
    Full,
    Pinv,
    Block,
    Inverse,
}

impl Recovery {
    pub fn name(&self) -> &'static str {
        match self {
            Recovery::Full => "full",
            Recovery::Pinv => "pinv",
            Recovery::Block => "block",
            Recovery::Inverse => "inverse",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Recovery::Full),
            "pinv" => Ok(Recovery::Pinv),
            "block" => Ok(Recovery::Block),
            "inverse" => Ok(Recovery::Inverse),
            _ => config_err(format!(
                "unknown recovery '{s}' (full, pinv, block, inverse)"
            )),
        }
    }

    pub fn method(&self) -> crate::ecr::RecoveryMethod {
        use crate::ecr::RecoveryMethod as M;
        match self {
            Recovery::Full => M::Ifft,
            Recovery::Pinv => M::PseudoInverse,
            Recovery::Block => M::Block,
            Recovery::Inverse => M::Inverse,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolverSpec {
    pub algo: Algo,
    pub recovery: Recovery,
    pub max_iters: usize,
    pub threshold: Threshold,
    /// Fixed ISTA step; adaptive when `None`.
    pub step: Option<f64>,
    pub memory_budget: u64,
}

impl Default for SolverSpec {
    fn default() -> Self {
        Self {
            algo: Algo::Saa,
            recovery: Recovery::Full,
            max_iters: 10,
            threshold: Threshold::Sparsity(1),
            step: None,
            memory_budget: DEFAULT_MEMORY_BUDGET,
        }
    }
}

/// Artifacts a run is expected to write.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Output {
    Volume,
    Projections,
    Psf,
    Residuals,
    Measurements,
}

impl Output {
    pub const ALL: [Output; 5] = [
        Output::Volume,
        Output::Projections,
        Output::Psf,
        Output::Residuals,
        Output::Measurements,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Output::Volume => "volume",
            Output::Projections => "projections",
            Output::Psf => "psf",
            Output::Residuals => "residuals",
            Output::Measurements => "measurements",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Output::ALL
            .iter()
            .copied()
            .find(|o| o.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown output '{s}'")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunSpec {
    /// Seeds both the noise and random schedules.
    pub seed: u64,
    pub noise_variance: f64,
    /// Scale measurements to unit mean power before adding noise.
    pub normalize: bool,
    pub trials: usize,
    pub outputs: BTreeSet<Output>,
}

impl Default for RunSpec {
    fn default() -> Self {
        Self {
            seed: 1,
            noise_variance: 0.0,
            normalize: true,
            trials: 1,
            outputs: [Output::Volume, Output::Projections].into_iter().collect(),
        }
    }
}

/// A complete, runnable scenario.
#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioPreset {
    pub name: String,
    pub description: String,
    pub system: SystemConfig,
    pub scene: Scene,
    pub schedule: ScheduleSpec,
    pub imaging: ImagingOptions,
    pub solver: SolverSpec,
    pub run: RunSpec,
}

impl Default for ScenarioPreset {
    fn default() -> Self {
        Self {
            name: "custom".into(),
            description: String::new(),
            system: SystemConfig::default(),
            scene: Scene::point(Point3::new(0.0, 0.0, 0.0), C64::new(1.0, 0.0)),
            schedule: ScheduleSpec::Dft,
            imaging: ImagingOptions {
                spatial_pad: 1,
                oversampling: 2.0,
                n_x: 41,
            },
            solver: SolverSpec::default(),
            run: RunSpec::default(),
        }
    }
}

fn fmt_point(p: &Point3) -> String {
    format!("{},{},{}", p.x, p.y, p.z)
}

fn floats(s: &str, n: usize, key: &str) -> Result<Vec<f64>> {
    let v: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| {
            Error::Config(format!(
                "{key}: expected {n} comma-separated numbers, got '{s}'"
            ))
        })?;
    if v.len() != n {
        return config_err(format!("{key}: expected {n} values, got {}", v.len()));
    }
    Ok(v)
}

fn parse_num<T: std::str::FromStr>(s: &str, key: &str) -> Result<T> {
    s.trim()
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse '{s}'")))
}

fn parse_bool(s: &str, key: &str) -> Result<bool> {
    match s.trim() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => config_err(format!("{key}: expected true or false, got '{s}'")),
    }
}

/// Key lookup that records which keys were consumed.
struct Section<'a> {
    name: &'static str,
    props: Option<&'a Properties>,
    seen: BTreeSet<String>,
}

impl<'a> Section<'a> {
    fn new(ini: &'a Ini, name: &'static str) -> Self {
        Self {
            name,
            props: ini.section(Some(name)),
            seen: BTreeSet::new(),
        }
    }

    fn get(&mut self, key: &str) -> Option<&'a str> {
        self.seen.insert(key.to_string());
        self.props.and_then(|p| p.get(key))
    }

    fn get_all(&mut self, key: &str) -> Vec<&'a str> {
        self.seen.insert(key.to_string());
        self.props
            .map(|p| p.get_all(key).collect())
            .unwrap_or_default()
    }

    fn key(&self, k: &str) -> String {
        format!("{}.{k}", self.name)
    }

    fn num<T: std::str::FromStr>(&mut self, key: &str, default: T) -> Result<T> {
        let full = self.key(key);
        match self.get(key) {
            Some(v) => parse_num(v, &full),
            None => Ok(default),
        }
    }

    fn point(&mut self, key: &str, default: Point3) -> Result<Point3> {
        let full = self.key(key);
        match self.get(key) {
            Some(v) => {
                let f = floats(v, 3, &full)?;
                Ok(Point3::new(f[0], f[1], f[2]))
            }
            None => Ok(default),
        }
    }

    fn finish(self) -> Result<()> {
        if let Some(p) = self.props {
            for (k, _) in p.iter() {
                if !self.seen.contains(k) {
                    return config_err(format!("unknown key '{}' in [{}]", k, self.name));
                }
            }
        }
        Ok(())
    }
}

const SECTIONS: [&str; 7] = [
    "preset", "system", "scene", "schedule", "imaging", "solver", "run",
];

fn parse_system(ini: &Ini) -> Result<SystemConfig> {
    let mut s = Section::new(ini, "system");
    let units = match s.get("units").unwrap_or("normalized") {
        "normalized" => Units::Normalized,
        "absolute" => Units::Absolute,
        u => return config_err(format!("system.units: unknown units '{u}'")),
    };
    let d = SystemConfig::default();
    let c_default = match units {
        Units::Normalized => 1.0,
        Units::Absolute => SPEED_OF_LIGHT,
    };
    let ris_elements = match s.get("ris_elements") {
        Some(v) => {
            let parts: Vec<&str> = v.split(',').collect();
            if parts.len() != 2 {
                return config_err(format!("system.ris_elements: expected 'My,Mz', got '{v}'"));
            }
            (
                parse_num(parts[0], "system.ris_elements")?,
                parse_num(parts[1], "system.ris_elements")?,
            )
        }
        None => d.ris_elements,
    };
    let antenna_gain = match s.get("antenna_gain") {
        Some(v) => {
            let f = floats(v, 2, "system.antenna_gain")?;
            C64::new(f[0], f[1])
        }
        None => d.antenna_gain,
    };
    let cfg = SystemConfig {
        units,
        speed_of_light: s.num("speed_of_light", c_default)?,
        center_freq: s.num("center_freq", d.center_freq)?,
        ris_center: s.point("ris_center", d.ris_center)?,
        ris_elements,
        element_size: s.num("element_size", d.element_size)?,
        ue: s.point("ue", d.ue)?,
        ap: s.point("ap", d.ap)?,
        roi_center: s.point("roi_center", d.roi_center)?,
        roi_extent: s.point("roi_extent", d.roi_extent)?,
        rel_bandwidth: s.num("rel_bandwidth", d.rel_bandwidth)?,
        rel_spacing: s.num("rel_spacing", d.rel_spacing)?,
        antenna_gain,
        ap_antenna_index: s.num("ap_antenna_index", d.ap_antenna_index)?,
    };
    s.finish()?;
    Ok(cfg)
}

fn parse_scene(ini: &Ini) -> Result<Scene> {
    let mut s = Section::new(ini, "scene");
    let mut pts = Vec::new();
    for v in s.get_all("point") {
        let f = floats(v, 5, "scene.point")?;
        pts.push(Scatterer {
            position: Point3::new(f[0], f[1], f[2]),
            coefficient: C64::new(f[3], f[4]),
        });
    }
    s.finish()?;
    Ok(Scene::new(pts))
}

fn parse_schedule(ini: &Ini) -> Result<ScheduleSpec> {
    let mut s = Section::new(ini, "schedule");
    let kind = s.get("kind").unwrap_or("dft");
    let rows: Option<usize> = match s.get("rows") {
        Some(v) => Some(parse_num(v, "schedule.rows")?),
        None => None,
    };
    let need_rows = |k: &str| {
        rows.ok_or_else(|| Error::Config(format!("schedule.rows is required for kind '{k}'")))
    };
    let spec = match kind {
        "dft" => ScheduleSpec::Dft,
        "truncated" => ScheduleSpec::TruncatedDft {
            rows: need_rows(kind)?,
        },
        "quantized" => ScheduleSpec::QuantizedDft {
            bits: s.num("bits", 2u32)?,
            rows,
        },
        "random" => ScheduleSpec::Random {
            rows: need_rows(kind)?,
        },
        "block" => ScheduleSpec::Block {
            q: s.num("q", 16usize)?,
            compensated: match s.get("compensated") {
                Some(v) => parse_bool(v, "schedule.compensated")?,
                None => true,
            },
        },
        k => return config_err(format!("schedule.kind: unknown kind '{k}'")),
    };
    // keys that do not apply to the chosen kind are still consumed
    let _ = (s.get("bits"), s.get("q"), s.get("compensated"));
    s.finish()?;
    Ok(spec)
}

fn parse_imaging(ini: &Ini, d: &ImagingOptions) -> Result<ImagingOptions> {
    let mut s = Section::new(ini, "imaging");
    let o = ImagingOptions {
        spatial_pad: s.num("spatial_pad", d.spatial_pad)?,
        oversampling: s.num("oversampling", d.oversampling)?,
        n_x: s.num("n_x", d.n_x)?,
    };
    s.finish()?;
    Ok(o)
}

fn parse_solver(ini: &Ini) -> Result<SolverSpec> {
    let mut s = Section::new(ini, "solver");
    let d = SolverSpec::default();
    let algo = Algo::parse(s.get("algo").unwrap_or("saa"))?;
    let recovery = Recovery::parse(s.get("recovery").unwrap_or("full"))?;
    let sparsity = s.get("sparsity");
    let beta = s.get("beta");
    let threshold = match (sparsity, beta) {
        (Some(_), Some(_)) => return config_err("solver: give either sparsity or beta, not both"),
        (Some(a), None) => Threshold::Sparsity(parse_num(a, "solver.sparsity")?),
        (None, Some(b)) => Threshold::Fixed(parse_num(b, "solver.beta")?),
        (None, None) => d.threshold,
    };
    let step = match s.get("step") {
        Some(v) => Some(parse_num(v, "solver.step")?),
        None => None,
    };
    let spec = SolverSpec {
        algo,
        recovery,
        max_iters: s.num("max_iters", d.max_iters)?,
        threshold,
        step,
        memory_budget: s.num("memory_budget", d.memory_budget)?,
    };
    spec.threshold.validate()?;
    s.finish()?;
    Ok(spec)
}

fn parse_run(ini: &Ini) -> Result<RunSpec> {
    let mut s = Section::new(ini, "run");
    let d = RunSpec::default();
    let outputs = match s.get("outputs") {
        Some(v) if v.trim().is_empty() => BTreeSet::new(),
        Some(v) => v
            .split(',')
            .map(|t| Output::parse(t.trim()))
            .collect::<Result<_>>()?,
        None => d.outputs,
    };
    let normalize = match s.get("normalize") {
        Some(v) => parse_bool(v, "run.normalize")?,
        None => d.normalize,
    };
    let r = RunSpec {
        seed: s.num("seed", d.seed)?,
        noise_variance: s.num("noise_variance", d.noise_variance)?,
        normalize,
        trials: s.num("trials", d.trials)?,
        outputs,
    };
    if r.trials == 0 {
        return config_err("run.trials must be at least 1");
    }
    if !(r.noise_variance >= 0.0 && r.noise_variance.is_finite()) {
        return config_err(format!(
            "run.noise_variance must be >= 0, got {}",
            r.noise_variance
        ));
    }
    s.finish()?;
    Ok(r)
}

/// Parse a config file body.
pub fn parse_config(text: &str) -> Result<ScenarioPreset> {
    let ini = Ini::load_from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    for name in ini.sections().flatten() {
        if !SECTIONS.contains(&name) {
            return config_err(format!("unknown section [{name}]"));
        }
    }
    if ini.general_section().iter().next().is_some() {
        return config_err("keys outside a section");
    }
    let d = ScenarioPreset::default();
    let mut p = Section::new(&ini, "preset");
    let name = p.get("name").unwrap_or(&d.name).to_string();
    let description = p.get("description").unwrap_or("").to_string();
    p.finish()?;
    let preset = ScenarioPreset {
        name,
        description,
        system: parse_system(&ini)?,
        scene: parse_scene(&ini)?,
        schedule: parse_schedule(&ini)?,
        imaging: parse_imaging(&ini, &d.imaging)?,
        solver: parse_solver(&ini)?,
        run: parse_run(&ini)?,
    };
    preset.system.validate()?;
    Ok(preset)
}

pub fn load_config(path: &Path) -> Result<ScenarioPreset> {
    let text = std::fs::read_to_string(path)?;
    parse_config(&text)
}

/// Render a preset in the config grammar. Every field is written explicitly.
pub fn serialize_config(p: &ScenarioPreset) -> String {
    let mut ini = Ini::new();
    ini.with_section(Some("preset"))
        .set("name", p.name.as_str())
        .set("description", p.description.as_str());
    let c = &p.system;
    ini.with_section(Some("system"))
        .set(
            "units",
            match c.units {
                Units::Normalized => "normalized",
                Units::Absolute => "absolute",
            },
        )
        .set("speed_of_light", c.speed_of_light.to_string())
        .set("center_freq", c.center_freq.to_string())
        .set("ris_center", fmt_point(&c.ris_center))
        .set(
            "ris_elements",
            format!("{},{}", c.ris_elements.0, c.ris_elements.1),
        )
        .set("element_size", c.element_size.to_string())
        .set("ue", fmt_point(&c.ue))
        .set("ap", fmt_point(&c.ap))
        .set("roi_center", fmt_point(&c.roi_center))
        .set("roi_extent", fmt_point(&c.roi_extent))
        .set("rel_bandwidth", c.rel_bandwidth.to_string())
        .set("rel_spacing", c.rel_spacing.to_string())
        .set(
            "antenna_gain",
            format!("{},{}", c.antenna_gain.re, c.antenna_gain.im),
        )
        .set("ap_antenna_index", c.ap_antenna_index.to_string());
    {
        let mut sc = ini.with_section(Some("scene"));
        for s in &p.scene.scatterers {
            sc.add(
                "point",
                format!(
                    "{},{},{},{},{}",
                    s.position.x, s.position.y, s.position.z, s.coefficient.re, s.coefficient.im
                ),
            );
        }
    }
    {
        let mut sc = ini.with_section(Some("schedule"));
        match p.schedule {
            ScheduleSpec::Dft => {
                sc.set("kind", "dft");
            }
            ScheduleSpec::TruncatedDft { rows } => {
                sc.set("kind", "truncated").set("rows", rows.to_string());
            }
            ScheduleSpec::QuantizedDft { bits, rows } => {
                sc.set("kind", "quantized").set("bits", bits.to_string());
                if let Some(r) = rows {
                    sc.set("rows", r.to_string());
                }
            }
            ScheduleSpec::Random { rows } => {
                sc.set("kind", "random").set("rows", rows.to_string());
            }
            ScheduleSpec::Block { q, compensated } => {
                sc.set("kind", "block")
                    .set("q", q.to_string())
                    .set("compensated", compensated.to_string());
            }
        }
    }
    ini.with_section(Some("imaging"))
        .set("spatial_pad", p.imaging.spatial_pad.to_string())
        .set("oversampling", p.imaging.oversampling.to_string())
        .set("n_x", p.imaging.n_x.to_string());
    {
        let s = &p.solver;
        let mut sc = ini.with_section(Some("solver"));
        sc.set("algo", s.algo.name())
            .set("recovery", s.recovery.name())
            .set("max_iters", s.max_iters.to_string())
            .set("memory_budget", s.memory_budget.to_string());
        match s.threshold {
            Threshold::Sparsity(a) => sc.set("sparsity", a.to_string()),
            Threshold::Fixed(b) => sc.set("beta", b.to_string()),
        };
        if let Some(mu) = s.step {
            sc.set("step", mu.to_string());
        }
    }
    let outputs: Vec<&str> = p.run.outputs.iter().map(|o| o.name()).collect();
    ini.with_section(Some("run"))
        .set("seed", p.run.seed.to_string())
        .set("noise_variance", p.run.noise_variance.to_string())
        .set("normalize", p.run.normalize.to_string())
        .set("trials", p.run.trials.to_string())
        .set("outputs", outputs.join(","));
    let mut buf = Vec::new();
    ini.write_to(&mut buf)
        .expect("writing to a Vec cannot fail");
    String::from_utf8(buf).expect("ini output is UTF-8")
}
