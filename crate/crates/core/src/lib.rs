//! Acoustic scattering testbed.
//!
//! * [`field2d`]: 2D wave simulator with PML and movable sound-hard disks.
//! * [`robot`]: scatterer designs, actuation spaces and constraint projection.
//! * [`env`]: simulator plus design, stepped one action at a time.
//! * [`diffcore`]: reverse-mode autodiff over dense tensors.
//! * [`aem`]: the latent wave surrogate and the neural ODE baseline.
//! * [`train`]: episode datasets, window sampling and training.
//! * [`mpc`]: sampling planner and closed-loop episodes.
//! * [`bench`]: benchmark runs, the static-design oracle and prediction reports.

pub mod bench;
pub mod error;
pub mod field2d;
pub mod kv;
pub mod mpc;
pub mod aem;
pub mod diffcore;
pub mod env;
pub mod robot;
pub mod train;

pub use aem::{Surrogate, SurrogateKind};
pub use bench::BenchmarkSpec;
pub use env::{EnvConfig, Environment};
pub use error::{Error, Result};
pub use field2d::{RegionSpec, SimConfig};
pub use mpc::{MpcConfig, Task};
pub use robot::{DesignState, RobotLimits, SpaceName};
pub use train::{Dataset, TrainConfig};
