use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::kv::{self, KvMap};

/// Region over which scattered energy is integrated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RegionSpec {
    /// Every interior (non-PML) cell.
    FullInterior,
    /// Interior cells with `x > 0` and `y > 0`.
    UpperRightQuadrant,
}

impl RegionSpec {
    pub fn contains(self, x: f64, y: f64) -> bool {
        match self {
            RegionSpec::FullInterior => true,
            RegionSpec::UpperRightQuadrant => x > 0.0 && y > 0.0,
        }
    }

    pub fn code(self) -> u8 {
        match self {
            RegionSpec::FullInterior => 0,
            RegionSpec::UpperRightQuadrant => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(RegionSpec::FullInterior),
            1 => Some(RegionSpec::UpperRightQuadrant),
            _ => None,
        }
    }
}

impl fmt::Display for RegionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RegionSpec::FullInterior => "full",
            RegionSpec::UpperRightQuadrant => "quadrant",
        })
    }
}

impl FromStr for RegionSpec {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" | "full_interior" | "suppress" => Ok(RegionSpec::FullInterior),
            "quadrant" | "upper_right_quadrant" | "focus" => Ok(RegionSpec::UpperRightQuadrant),
            other => Err(Error::Config(format!("unknown region `{other}`"))),
        }
    }
}

/// Physical and numerical parameters of the 2D environment.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    /// Domain is `[-h, h] x [-h, h]` meters.
    pub domain_half_width: f64,
    pub grid_n: usize,
    pub sound_speed: f64,
    pub density: f64,
    /// PML thickness in cells.
    pub pml_width: usize,
    /// Peak PML absorption rate, 1/s.
    pub pml_strength: f64,
    pub source_position: (f64, f64),
    pub source_frequency: f64,
    pub source_amplitude: f64,
    pub cfl_safety: f64,
    /// Duration of one piecewise-constant action, seconds.
    pub action_period: f64,
    pub episode_steps: usize,
    /// Action periods the source runs, with the initial design held fixed,
    /// before an episode's first observation.
    pub warm_up_steps: usize,
    /// Sensor image is `sensor_size x sensor_size`.
    pub sensor_size: usize,
    pub task_region: RegionSpec,
    /// Any field magnitude above this aborts the run.
    pub blowup_bound: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            domain_half_width: 15.0,
            grid_n: 128,
            sound_speed: 343.0,
            density: 1.0,
            pml_width: 16,
            pml_strength: 2000.0,
            source_position: (-10.0, 0.0),
            source_frequency: 200.0,
            source_amplitude: 1.0e4,
            cfl_safety: 0.7,
            action_period: 1e-3,
            episode_steps: 200,
            warm_up_steps: 100,
            sensor_size: 64,
            task_region: RegionSpec::FullInterior,
            blowup_bound: 1e6,
        }
    }
}

const KEYS: &[&str] = &[
    "domain_half_width",
    "grid_n",
    "sound_speed",
    "density",
    "pml_width",
    "pml_strength",
    "source_position",
    "source_frequency",
    "source_amplitude",
    "cfl_safety",
    "action_period",
    "episode_steps",
    "warm_up_steps",
    "sensor_size",
    "task_region",
    "blowup_bound",
];

impl SimConfig {
    /// Names of every key accepted in a config file.
    pub fn keys() -> &'static [&'static str] {
        KEYS
    }

    pub fn cell_size(&self) -> f64 {
        2.0 * self.domain_half_width / self.grid_n as f64
    }

    /// Largest stable time step scaled by `cfl_safety`.
    pub fn cfl_dt(&self) -> f64 {
        self.cfl_safety * self.cell_size() / (self.sound_speed * std::f64::consts::SQRT_2)
    }

    /// Solver steps per action period.
    pub fn substeps(&self) -> usize {
        (self.action_period / self.cfl_dt()).ceil().max(1.0) as usize
    }

    /// Time step actually used: the action period split evenly into
    /// [`substeps`](Self::substeps) pieces, never larger than `cfl_dt`.
    pub fn time_step(&self) -> f64 {
        self.action_period / self.substeps() as f64
    }

    /// Source clock reading at episode time zero.
    pub fn warm_up_time(&self) -> f64 {
        self.action_period * self.warm_up_steps as f64
    }

    pub fn episode_duration(&self) -> f64 {
        self.action_period * self.episode_steps as f64
    }

    /// Number of non-PML cells along each axis.
    pub fn interior_cells(&self) -> usize {
        self.grid_n - 2 * self.pml_width
    }

    /// Half width of the non-PML square, meters.
    pub fn interior_half_width(&self) -> f64 {
        self.domain_half_width - self.pml_width as f64 * self.cell_size()
    }

    /// Center coordinate of cell index `i` along either axis.
    pub fn cell_center(&self, i: usize) -> f64 {
        -self.domain_half_width + (i as f64 + 0.5) * self.cell_size()
    }

    /// Cell containing coordinate `x` along either axis (clamped).
    pub fn cell_of(&self, x: f64) -> usize {
        let i = ((x + self.domain_half_width) / self.cell_size()).floor();
        i.clamp(0.0, (self.grid_n - 1) as f64) as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.grid_n < 64 {
            return bad(format!("grid_n must be >= 64, got {}", self.grid_n));
        }
        if self.pml_width < 8 || 4 * self.pml_width >= self.grid_n {
            return bad(format!(
                "pml_width must be >= 8 and < grid_n/4, got {} for grid_n {}",
                self.pml_width, self.grid_n
            ));
        }
        if !(self.cfl_safety > 0.0 && self.cfl_safety < 1.0) {
            return bad(format!("cfl_safety must lie in (0, 1), got {}", self.cfl_safety));
        }
        for (name, v) in [
            ("domain_half_width", self.domain_half_width),
            ("sound_speed", self.sound_speed),
            ("density", self.density),
            ("action_period", self.action_period),
            ("blowup_bound", self.blowup_bound),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.pml_strength.is_finite() && self.pml_strength >= 0.0) {
            return bad(format!("pml_strength must be >= 0, got {}", self.pml_strength));
        }
        if !(self.source_frequency.is_finite() && self.source_frequency >= 0.0) {
            return bad(format!("source_frequency must be >= 0, got {}", self.source_frequency));
        }
        if !self.source_amplitude.is_finite() {
            return bad("source_amplitude must be finite".into());
        }
        if self.episode_steps == 0 {
            return bad("episode_steps must be >= 1".into());
        }
        if self.sensor_size == 0 || self.sensor_size > self.interior_cells() {
            return bad(format!(
                "sensor_size must lie in 1..={}, got {}",
                self.interior_cells(),
                self.sensor_size
            ));
        }
        let lim = self.interior_half_width();
        let (sx, sy) = self.source_position;
        if !(sx.abs() < lim && sy.abs() < lim) {
            return bad(format!("source ({sx}, {sy}) must lie inside the non-PML interior |x|,|y| < {lim:.3}"));
        }
        Ok(())
    }

    pub fn from_kv(kv: &mut KvMap) -> Result<Self> {
        let mut c = SimConfig::default();
        kv.take("domain_half_width", &mut c.domain_half_width)?;
        kv.take("grid_n", &mut c.grid_n)?;
        kv.take("sound_speed", &mut c.sound_speed)?;
        kv.take("density", &mut c.density)?;
        kv.take("pml_width", &mut c.pml_width)?;
        kv.take("pml_strength", &mut c.pml_strength)?;
        if let Some(raw) = kv.take_raw("source_position") {
            c.source_position = parse_pair(&raw)?;
        }
        kv.take("source_frequency", &mut c.source_frequency)?;
        kv.take("source_amplitude", &mut c.source_amplitude)?;
        kv.take("cfl_safety", &mut c.cfl_safety)?;
        kv.take("action_period", &mut c.action_period)?;
        kv.take("episode_steps", &mut c.episode_steps)?;
        kv.take("warm_up_steps", &mut c.warm_up_steps)?;
        kv.take("sensor_size", &mut c.sensor_size)?;
        kv.take("task_region", &mut c.task_region)?;
        kv.take("blowup_bound", &mut c.blowup_bound)?;
        c.validate()?;
        Ok(c)
    }

    /// Parses a config file holding only simulator keys.
    pub fn parse(text: &str) -> Result<Self> {
        let mut kv = KvMap::parse(text)?;
        let c = Self::from_kv(&mut kv)?;
        kv.finish()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Canonical text form; `parse(to_text())` reproduces the config.
    pub fn to_text(&self) -> String {
        let (sx, sy) = self.source_position;
        kv::render([
            ("domain_half_width", format!("{:?}", self.domain_half_width)),
            ("grid_n", self.grid_n.to_string()),
            ("sound_speed", format!("{:?}", self.sound_speed)),
            ("density", format!("{:?}", self.density)),
            ("pml_width", self.pml_width.to_string()),
            ("pml_strength", format!("{:?}", self.pml_strength)),
            ("source_position", format!("{sx:?}, {sy:?}")),
            ("source_frequency", format!("{:?}", self.source_frequency)),
            ("source_amplitude", format!("{:?}", self.source_amplitude)),
            ("cfl_safety", format!("{:?}", self.cfl_safety)),
            ("action_period", format!("{:?}", self.action_period)),
            ("episode_steps", self.episode_steps.to_string()),
            ("warm_up_steps", self.warm_up_steps.to_string()),
            ("sensor_size", self.sensor_size.to_string()),
            ("task_region", self.task_region.to_string()),
            ("blowup_bound", format!("{:?}", self.blowup_bound)),
        ])
    }
}

fn parse_pair(raw: &str) -> Result<(f64, f64)> {
    let cleaned = raw.trim().trim_start_matches('(').trim_end_matches(')');
    let mut parts = cleaned.split(',').map(str::trim);
    let mut next = || -> Result<f64> {
        parts
            .next()
            .ok_or_else(|| Error::Config(format!("expected `x, y`, got `{raw}`")))?
            .parse::<f64>()
            .map_err(|e| Error::Config(format!("bad coordinate in `{raw}`: {e}")))
    };
    let pair = (next()?, next()?);
    if parts.next().is_some() {
        return Err(Error::Config(format!("expected two coordinates, got `{raw}`")));
    }
    Ok(pair)
}
