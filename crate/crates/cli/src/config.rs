use std::path::Path;

use wavebench_core::env::EnvConfig;
use wavebench_core::field2d::RegionSpec;
use wavebench_core::kv::KvMap;
use wavebench_core::mpc::{MpcConfig, Task};
use wavebench_core::train::TrainConfig;
use wavebench_core::{Error, Result};

/// Environment, training and planner settings read from one key file.
#[derive(Clone, Debug, Default)]
pub struct RunConfig {
    pub env: EnvConfig,
    pub train: TrainConfig,
    pub mpc: MpcConfig,
    region_given: bool,
    task_given: bool,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut kv = KvMap::parse(text)?;
        let region_given = kv.contains("task_region");
        let task_given = kv.contains("task");
        let c = RunConfig {
            env: EnvConfig::from_kv(&mut kv)?,
            train: TrainConfig::from_kv(&mut kv)?,
            mpc: MpcConfig::from_kv(&mut kv)?,
            region_given,
            task_given,
        };
        kv.finish()?;
        Ok(c)
    }

    /// Defaults when `path` is `None`.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => Self::parse(&std::fs::read_to_string(p)?).map_err(|e| match e {
                Error::Config(m) => Error::Config(format!("{}: {m}", p.display())),
                other => other,
            }),
            None => Ok(Self::default()),
        }
    }

    /// Task from the flag, else from the file, else suppression. The target
    /// region follows the task unless the file names one.
    pub fn set_task(&mut self, flag: Option<Task>) {
        if let Some(t) = flag {
            self.mpc.task = t;
        } else if !self.task_given {
            self.mpc.task = Task::Suppress;
        }
        if !self.region_given {
            self.env.sim.task_region = match self.mpc.task {
                Task::Suppress => RegionSpec::FullInterior,
                Task::Focus => RegionSpec::UpperRightQuadrant,
            };
        }
    }

    pub fn to_text(&self) -> String {
        format!("{}{}{}", self.env.to_text(), self.train.to_text(), self.mpc.to_text())
    }
}
