//! Ground-truth 2D acoustic environment.
//!
//! Two fields are stepped in lockstep: one with the sound-hard scatterers
//! and a scatterer-free twin driven by the identical source. Their
//! difference is the scattered field.

mod config;
mod mask;
mod sensor;
mod solver;

pub use config::{RegionSpec, SimConfig};
pub use mask::{rasterize_scatterers, ScattererMask};
pub use sensor::{downsample, sensor_read, SensorImage};
pub use solver::{acoustic_energy, build_pml, instantaneous_energy, step, PmlProfile, SimState, WaveFields};

use crate::error::{Error, Result};
use crate::robot::DesignState;

/// A scalar field on a uniform cell grid. `(x0, y0)` is the center of cell `(0, 0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Field2 {
    pub nx: usize,
    pub ny: usize,
    pub dx: f64,
    pub x0: f64,
    pub y0: f64,
    /// Row-major in `y`.
    pub data: Vec<f64>,
}

impl Field2 {
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[j * self.nx + i]
    }

    pub fn x(&self, i: usize) -> f64 {
        self.x0 + i as f64 * self.dx
    }

    pub fn y(&self, j: usize) -> f64 {
        self.y0 + j as f64 * self.dx
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Restriction of a full-grid array to the non-PML interior.
    fn interior_of(full: &[f64], config: &SimConfig) -> Field2 {
        let n = config.grid_n;
        let w = config.pml_width;
        let m = config.interior_cells();
        let mut data = Vec::with_capacity(m * m);
        for j in w..n - w {
            data.extend_from_slice(&full[j * n + w..j * n + n - w]);
        }
        Field2 { nx: m, ny: m, dx: config.cell_size(), x0: config.cell_center(w), y0: config.cell_center(w), data }
    }
}

/// Sampled scalar time series, e.g. scattered energy.
#[derive(Debug, Clone, PartialEq)]
pub struct Signal {
    pub values: Vec<f64>,
    pub dt: f64,
    pub label: String,
}

impl Signal {
    pub fn new(values: Vec<f64>, dt: f64, label: impl Into<String>) -> Self {
        Signal { values, dt, label: label.into() }
    }

    pub fn duration(&self) -> f64 {
        self.values.len() as f64 * self.dt
    }
}

/// Interior total pressure.
pub fn interior_pressure(state: &SimState, config: &SimConfig) -> Field2 {
    Field2::interior_of(&state.total.pressure(), config)
}

/// `p_tot - p_free` over the interior.
pub fn scattered_field(state: &SimState, config: &SimConfig) -> Field2 {
    let n = config.grid_n;
    let diff: Vec<f64> = (0..n * n)
        .map(|k| (state.total.px[k] + state.total.py[k]) - (state.free.px[k] + state.free.py[k]))
        .collect();
    Field2::interior_of(&diff, config)
}

/// `sum field^2 dx^2` over the cells of `field` lying in `region`,
/// accumulated in row-major order.
pub fn energy(field: &Field2, region: RegionSpec) -> f64 {
    let mut total = 0.0;
    for j in 0..field.ny {
        let y = field.y(j);
        for i in 0..field.nx {
            if region.contains(field.x(i), y) {
                let v = field.at(i, j);
                total += v * v;
            }
        }
    }
    total * field.dx * field.dx
}

/// Scattered energy of the current state over the configured task region.
pub fn scattered_energy(state: &SimState, config: &SimConfig) -> f64 {
    energy(&scattered_field(state, config), config.task_region)
}

/// Result of simulating one action period.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowOutput {
    /// Task-region scattered energy after each substep.
    pub sigma: Vec<f64>,
    /// Sensor image at the end of the period.
    pub image: SensorImage,
}

/// Steps through one action period. Substep `k` uses the mask rasterized
/// from `design_traj[k]`; `design_traj` must hold `substeps + 1` samples.
pub fn run_window(state: &mut SimState, design_traj: &[DesignState], config: &SimConfig) -> Result<WindowOutput> {
    let substeps = config.substeps();
    if design_traj.len() != substeps + 1 {
        return Err(Error::ShapeMismatch(format!(
            "design trajectory has {} samples, expected {}",
            design_traj.len(),
            substeps + 1
        )));
    }
    let mut sigma = Vec::with_capacity(substeps);
    for design in &design_traj[..substeps] {
        state.set_design(design, config)?;
        solver::step_once(state, config)?;
        sigma.push(scattered_energy(state, config));
    }
    state.set_design(&design_traj[substeps], config)?;
    Ok(WindowOutput { sigma, image: sensor_read(state, config) })
}

#[cfg(test)]
mod tests;
