//! Resolved run configuration: defaults, a `key=value` file, then flags.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use emba::simulator::PanningMotion;
use emba::{CameraModel, Execution, MapSize, SolverBackend, SolverConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EventFormat {
    Text,
    Binary,
}

impl FromStr for EventFormat {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "text" => Ok(EventFormat::Text),
            "binary" => Ok(EventFormat::Binary),
            _ => bail!("unknown event format '{s}' (expected text or binary)"),
        }
    }
}

impl EventFormat {
    fn name(self) -> &'static str {
        match self {
            EventFormat::Text => "text",
            EventFormat::Binary => "binary",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub events: Option<PathBuf>,
    pub trajectory: Option<PathBuf>,
    pub reference: Option<PathBuf>,
    pub init_map: Option<PathBuf>,
    pub gradient: Option<PathBuf>,
    pub panorama: Option<PathBuf>,
    pub out: PathBuf,

    pub contrast: f64,
    pub eta: f64,
    pub pose_rate: f64,
    pub map_width: usize,
    pub map_height: usize,
    pub valid_threshold: u32,
    pub huber: bool,
    pub huber_delta: f64,
    pub solver: SolverBackend,
    pub max_iters: usize,
    pub lambda_init: f64,
    pub lambda_up: f64,
    pub lambda_down: f64,
    pub tolerance: f64,
    /// Worker threads; 0 uses every core and 1 forces the sequential path.
    pub threads: usize,
    pub seed: u64,

    pub sensor_width: u32,
    pub sensor_height: u32,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,

    pub duration: f64,
    pub sim_dt: f64,
    pub yaw_rate: f64,
    pub wobble: [f64; 3],
    pub wobble_frequency: [f64; 3],
    pub perturb_deg: f64,
    pub outlier_fraction: f64,
    pub event_format: EventFormat,
}

impl Default for RunConfig {
    fn default() -> Self {
        let solver = SolverConfig::default();
        let motion = PanningMotion::default();
        RunConfig {
            events: None,
            trajectory: None,
            reference: None,
            init_map: None,
            gradient: None,
            panorama: None,
            out: PathBuf::from("emba_out"),
            contrast: solver.contrast,
            eta: solver.eta,
            pose_rate: solver.pose_rate,
            map_width: solver.map_size.width,
            map_height: solver.map_size.height,
            valid_threshold: solver.valid_threshold,
            huber: solver.huber,
            huber_delta: solver.huber_delta,
            solver: solver.backend,
            max_iters: solver.max_iterations,
            lambda_init: solver.lambda_init,
            lambda_up: solver.lambda_up,
            lambda_down: solver.lambda_down,
            tolerance: solver.tolerance,
            threads: 0,
            seed: 1,
            sensor_width: 128,
            sensor_height: 128,
            fx: 110.0,
            fy: 110.0,
            cx: 63.5,
            cy: 63.5,
            duration: 3.0,
            sim_dt: 1e-3,
            yaw_rate: motion.yaw_rate,
            wobble: motion.wobble,
            wobble_frequency: motion.frequency,
            perturb_deg: 1.0,
            outlier_fraction: 0.0,
            event_format: EventFormat::Text,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .trim()
        .parse()
        .map_err(|e| anyhow!("invalid value '{value}' for '{key}': {e}"))
}

fn parse_path(value: &str) -> Option<PathBuf> {
    let v = value.trim();
    (!v.is_empty()).then(|| PathBuf::from(v))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        v => bail!("invalid value '{v}' for '{key}': expected true or false"),
    }
}

fn parse_triple(key: &str, value: &str) -> Result<[f64; 3]> {
    let parts: Vec<&str> = value.split(',').collect();
    if parts.len() != 3 {
        bail!("'{key}' needs three comma-separated numbers, got '{value}'");
    }
    Ok([parse(key, parts[0])?, parse(key, parts[1])?, parse(key, parts[2])?])
}

fn show_path(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

fn show_triple(v: &[f64; 3]) -> String {
    format!("{},{},{}", v[0], v[1], v[2])
}

impl RunConfig {
    /// Sets one option by its key name.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "events" => self.events = parse_path(value),
            "trajectory" => self.trajectory = parse_path(value),
            "reference" => self.reference = parse_path(value),
            "init-map" => self.init_map = parse_path(value),
            "gradient" => self.gradient = parse_path(value),
            "panorama" => self.panorama = parse_path(value),
            "out" => self.out = parse_path(value).ok_or_else(|| anyhow!("'out' must not be empty"))?,
            "contrast" => self.contrast = parse(key, value)?,
            "eta" => self.eta = parse(key, value)?,
            "pose-rate" => self.pose_rate = parse(key, value)?,
            "map-width" => self.map_width = parse(key, value)?,
            "map-height" => self.map_height = parse(key, value)?,
            "valid-threshold" => self.valid_threshold = parse(key, value)?,
            "huber" => self.huber = parse_bool(key, value)?,
            "huber-delta" => self.huber_delta = parse(key, value)?,
            "solver" => self.solver = parse(key, value)?,
            "max-iters" => self.max_iters = parse(key, value)?,
            "lambda-init" => self.lambda_init = parse(key, value)?,
            "lambda-up" => self.lambda_up = parse(key, value)?,
            "lambda-down" => self.lambda_down = parse(key, value)?,
            "tolerance" => self.tolerance = parse(key, value)?,
            "threads" => self.threads = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "sensor-width" => self.sensor_width = parse(key, value)?,
            "sensor-height" => self.sensor_height = parse(key, value)?,
            "fx" => self.fx = parse(key, value)?,
            "fy" => self.fy = parse(key, value)?,
            "cx" => self.cx = parse(key, value)?,
            "cy" => self.cy = parse(key, value)?,
            "duration" => self.duration = parse(key, value)?,
            "sim-dt" => self.sim_dt = parse(key, value)?,
            "yaw-rate" => self.yaw_rate = parse(key, value)?,
            "wobble" => self.wobble = parse_triple(key, value)?,
            "wobble-frequency" => self.wobble_frequency = parse_triple(key, value)?,
            "perturb-deg" => self.perturb_deg = parse(key, value)?,
            "outlier-fraction" => self.outlier_fraction = parse(key, value)?,
            "event-format" => self.event_format = parse(key, value)?,
            _ => bail!("unknown configuration key '{key}'"),
        }
        Ok(())
    }

    /// Every option as `(key, value)` in manifest order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("events", show_path(&self.events)),
            ("trajectory", show_path(&self.trajectory)),
            ("reference", show_path(&self.reference)),
            ("init-map", show_path(&self.init_map)),
            ("gradient", show_path(&self.gradient)),
            ("panorama", show_path(&self.panorama)),
            ("out", self.out.display().to_string()),
            ("contrast", self.contrast.to_string()),
            ("eta", self.eta.to_string()),
            ("pose-rate", self.pose_rate.to_string()),
            ("map-width", self.map_width.to_string()),
            ("map-height", self.map_height.to_string()),
            ("valid-threshold", self.valid_threshold.to_string()),
            ("huber", self.huber.to_string()),
            ("huber-delta", self.huber_delta.to_string()),
            ("solver", self.solver.to_string()),
            ("max-iters", self.max_iters.to_string()),
            ("lambda-init", self.lambda_init.to_string()),
            ("lambda-up", self.lambda_up.to_string()),
            ("lambda-down", self.lambda_down.to_string()),
            ("tolerance", self.tolerance.to_string()),
            ("threads", self.threads.to_string()),
            ("seed", self.seed.to_string()),
            ("sensor-width", self.sensor_width.to_string()),
            ("sensor-height", self.sensor_height.to_string()),
            ("fx", self.fx.to_string()),
            ("fy", self.fy.to_string()),
            ("cx", self.cx.to_string()),
            ("cy", self.cy.to_string()),
            ("duration", self.duration.to_string()),
            ("sim-dt", self.sim_dt.to_string()),
            ("yaw-rate", self.yaw_rate.to_string()),
            ("wobble", show_triple(&self.wobble)),
            ("wobble-frequency", show_triple(&self.wobble_frequency)),
            ("perturb-deg", self.perturb_deg.to_string()),
            ("outlier-fraction", self.outlier_fraction.to_string()),
            ("event-format", self.event_format.name().to_string()),
        ]
    }

    /// Applies a `key=value` file. Blank lines and `#` comments are skipped.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config file {}", path.display()))?;
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("{}:{}: expected key=value", path.display(), n + 1))?;
            self.set(key.trim(), value)
                .with_context(|| format!("{}:{}", path.display(), n + 1))?;
        }
        Ok(())
    }

    /// Manifest text; feeding it back through `--config` reproduces the run.
    pub fn manifest(&self, command: &str) -> String {
        let mut s = format!("# emba {command}\n");
        for (k, v) in self.entries() {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, msg: &str| if ok { Ok(()) } else { Err(anyhow!("{msg}")) };
        check(self.map_width >= 2 && self.map_height >= 2, "map must be at least 2x2 pixels")?;
        check(self.sensor_width >= 1 && self.sensor_height >= 1, "sensor must have at least one pixel")?;
        check(self.duration > 0.0 && self.duration.is_finite(), "duration must be positive")?;
        check(self.sim_dt > 0.0 && self.sim_dt.is_finite(), "sim-dt must be positive")?;
        check(self.perturb_deg >= 0.0, "perturb-deg must be non-negative")?;
        check((0.0..1.0).contains(&self.outlier_fraction), "outlier-fraction must lie in [0, 1)")?;
        self.solver_config().validate()?;
        self.camera()?;
        Ok(())
    }

    pub fn execution(&self) -> Execution {
        Execution::from_threads(self.threads)
    }

    pub fn map_size(&self) -> MapSize {
        MapSize::new(self.map_width, self.map_height)
    }

    pub fn camera(&self) -> Result<CameraModel> {
        Ok(CameraModel::new(self.fx, self.fy, self.cx, self.cy, self.sensor_width, self.sensor_height)?)
    }

    pub fn solver_config(&self) -> SolverConfig {
        SolverConfig {
            contrast: self.contrast,
            eta: self.eta,
            pose_rate: self.pose_rate,
            map_size: self.map_size(),
            valid_threshold: self.valid_threshold,
            huber: self.huber,
            huber_delta: self.huber_delta,
            lambda_init: self.lambda_init,
            lambda_up: self.lambda_up,
            lambda_down: self.lambda_down,
            max_iterations: self.max_iters,
            tolerance: self.tolerance,
            backend: self.solver,
            execution: self.execution(),
        }
    }

    pub fn motion(&self) -> PanningMotion {
        PanningMotion { yaw_rate: self.yaw_rate, wobble: self.wobble, frequency: self.wobble_frequency }
    }
}
