//! The controlled environment: simulator plus robot, stepped one action
//! period at a time.

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::Result;
use crate::field2d::{interior_pressure, run_window, scattered_field, sensor_read, step, Field2, SensorImage, SimConfig, SimState, WindowOutput};
use crate::kv::KvMap;
use crate::robot::{ActionSpec, DesignState, Robot, RobotLimits, SpaceName};

/// Simulator and robot settings that define an environment.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct EnvConfig {
    pub sim: SimConfig,
    pub limits: RobotLimits,
}

impl EnvConfig {
    pub fn from_kv(kv: &mut KvMap) -> Result<Self> {
        Ok(EnvConfig { sim: SimConfig::from_kv(kv)?, limits: RobotLimits::from_kv(kv)? })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut kv = KvMap::parse(text)?;
        let c = Self::from_kv(&mut kv)?;
        kv.finish()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        format!("{}{}", self.sim.to_text(), self.limits.to_text())
    }

    /// SHA-256 of the canonical text together with the actuation space.
    pub fn hash(&self, space: SpaceName) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(self.to_text().as_bytes());
        h.update(format!("space = {space}\n").as_bytes());
        h.finalize().into()
    }

    pub fn robot(&self, space: SpaceName) -> Result<Robot> {
        Robot::from_name(space, self.limits.clone(), &self.sim)
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// A running episode.
pub struct Environment {
    pub sim: SimConfig,
    pub robot: Robot,
    state: SimState,
    design: DesignState,
    image: SensorImage,
    step: usize,
}

impl Environment {
    pub fn new(sim: &SimConfig, robot: Robot, initial: &DesignState) -> Result<Self> {
        let design = robot.project(initial)?;
        let mut state = SimState::new(sim)?;
        state.set_design(&design, sim)?;
        step(&mut state, sim, sim.warm_up_steps * sim.substeps())?;
        let image = sensor_read(&state, sim);
        Ok(Environment { sim: sim.clone(), robot, state, design, image, step: 0 })
    }

    pub fn observe(&self) -> &SensorImage {
        &self.image
    }

    pub fn design(&self) -> &DesignState {
        &self.design
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    pub fn time(&self) -> f64 {
        self.step as f64 * self.sim.action_period
    }

    /// Source clock, which runs ahead of episode time by the warm-up.
    pub fn source_time(&self) -> f64 {
        self.sim.warm_up_time() + self.time()
    }

    /// Total pressure over the non-PML interior.
    pub fn pressure(&self) -> Field2 {
        interior_pressure(&self.state, &self.sim)
    }

    /// Scattered pressure (total minus free field) over the interior.
    pub fn scattered(&self) -> Field2 {
        scattered_field(&self.state, &self.sim)
    }

    /// Apply `action` for one action period.
    pub fn step(&mut self, action: &ActionSpec) -> Result<WindowOutput> {
        let substeps = self.sim.substeps();
        let traj = self.robot.integrate_design(&self.design, action, self.sim.action_period, substeps)?;
        let out = run_window(&mut self.state, &traj, &self.sim)?;
        self.design = traj[substeps].clone();
        self.image = out.image.clone();
        self.step += 1;
        Ok(out)
    }
}
