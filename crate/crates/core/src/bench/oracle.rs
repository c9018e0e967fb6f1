use rayon::prelude::*;

use crate::env::{EnvConfig, Environment};
use crate::error::{Error, Result};
use crate::mpc::{window_mean, Task, STEADY_WINDOW};
use crate::robot::{ActuationMode, ActionSpec, DesignState, Robot, SpaceName};

/// Lattice sizes of the frozen-design search.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct OracleGrid {
    /// Center positions per axis.
    pub positions: usize,
    /// Radius levels between `r_min` and `r_max`.
    pub radii: usize,
    /// Coordinate descent sweeps when there is more than one disk.
    pub sweeps: usize,
}

impl OracleGrid {
    /// `n` positions per axis and `ceil(n / 2)` radius levels, so 9 gives
    /// the 9 x 9 x 5 lattice and resolutions 1, 3, 5, 9 are nested.
    pub fn from_resolution(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Config("oracle resolution must be at least 1".into()));
        }
        Ok(OracleGrid { positions: n, radii: n.div_ceil(2), sweeps: 3 })
    }
}

impl Default for OracleGrid {
    fn default() -> Self {
        OracleGrid { positions: 9, radii: 5, sweeps: 3 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OracleResult {
    pub design: DesignState,
    pub energy: f64,
    /// Number of simulated candidate designs.
    pub evaluated: usize,
}

/// `n` evenly spaced values over `[lo, hi]`; a single level sits in the middle.
pub fn levels(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.5 * (lo + hi)],
        _ => (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect(),
    }
}

/// Steady-state σ of a design held fixed for a whole episode.
pub fn frozen_energy(env: &EnvConfig, robot: &Robot, design: &DesignState, window: (f64, f64)) -> Result<f64> {
    let sim = &env.sim;
    let mut e = Environment::new(sim, robot.clone(), design)?;
    let still = ActionSpec::zeros(robot.dim());
    let mut sigma = Vec::with_capacity(sim.episode_steps * sim.substeps());
    for _ in 0..sim.episode_steps {
        sigma.extend(e.step(&still)?.sigma);
    }
    window_mean(&sigma, sim.time_step(), window.0, window.1)
}

/// Starting layout: the ring for mode R, otherwise disks on the ring circle
/// with the mode's default radius (a single disk sits at the centroid).
pub fn base_design(robot: &Robot) -> Result<DesignState> {
    let l = &robot.limits;
    let m = robot.space.count;
    let mut d = robot.ring_layout(m, l.ring_radius)?;
    if robot.space.mode == ActuationMode::Radii {
        return robot.project(&d);
    }
    let r = if robot.space.mode.moves_radii() { 0.5 * (l.r_min + l.r_max) } else { l.fixed_radius };
    d.radii.iter_mut().for_each(|x| *x = r);
    if m == 1 {
        d.centers[0] = [0.0, 0.0];
    }
    robot.project(&d)
}

/// Every lattice placement of disk `i` with the other disks left as in `d`.
fn disk_options(robot: &Robot, d: &DesignState, i: usize, grid: &OracleGrid) -> Vec<DesignState> {
    let l = &robot.limits;
    let mode = robot.space.mode;
    let radii = if mode.moves_radii() { levels(l.r_min, l.r_max, grid.radii) } else { vec![d.radii[i]] };
    let mut out = Vec::new();
    for &r in &radii {
        let centers = if mode.moves_centers() {
            let lim = robot.region_half_width - r;
            let xs = levels(-lim, lim, grid.positions);
            xs.iter().flat_map(|&x| xs.iter().map(move |&y| [x, y])).collect()
        } else {
            vec![d.centers[i]]
        };
        for c in centers {
            let mut cand = d.clone();
            cand.centers[i] = c;
            cand.radii[i] = r;
            if robot.is_feasible(&cand) {
                out.push(cand);
            }
        }
    }
    out
}

fn better(task: Task, a: f64, b: f64) -> bool {
    match task {
        Task::Suppress => a < b,
        Task::Focus => a > b,
    }
}

/// Index of the best finite energy, earliest on ties.
fn best_of(task: Task, energies: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (k, &e) in energies.iter().enumerate() {
        if e.is_finite() && best.is_none_or(|b| better(task, e, energies[b])) {
            best = Some(k);
        }
    }
    best
}

fn evaluate(env: &EnvConfig, robot: &Robot, designs: &[DesignState]) -> Result<Vec<f64>> {
    designs
        .par_iter()
        .map(|d| match frozen_energy(env, robot, d, STEADY_WINDOW) {
            Err(Error::NumericalBlowup(_)) => Ok(f64::NAN),
            other => other,
        })
        .collect()
}

/// Best frozen design for `task` on a lattice of candidate designs.
///
/// A single disk is searched exhaustively. With more disks each sweep
/// moves one disk at a time to its best lattice placement.
pub fn oracle_frozen_config(env: &EnvConfig, space: SpaceName, task: Task, grid: &OracleGrid) -> Result<OracleResult> {
    if grid.positions == 0 || grid.radii == 0 {
        return Err(Error::Config("oracle lattice must have at least one level".into()));
    }
    let robot = env.robot(space)?;
    let base = base_design(&robot)?;
    let m = robot.space.count;
    if m == 1 {
        let cands = disk_options(&robot, &base, 0, grid);
        let energies = evaluate(env, &robot, &cands)?;
        let k = best_of(task, &energies)
            .ok_or_else(|| Error::NumericalBlowup("no frozen design gave a finite energy".into()))?;
        return Ok(OracleResult { design: cands[k].clone(), energy: energies[k], evaluated: cands.len() });
    }
    let mut design = base;
    let mut energy = frozen_energy(env, &robot, &design, STEADY_WINDOW)?;
    let mut evaluated = 1;
    for _ in 0..grid.sweeps {
        let mut moved = false;
        for i in 0..m {
            let cands = disk_options(&robot, &design, i, grid);
            let energies = evaluate(env, &robot, &cands)?;
            evaluated += cands.len();
            if let Some(k) = best_of(task, &energies) {
                if better(task, energies[k], energy) {
                    design = cands[k].clone();
                    energy = energies[k];
                    moved = true;
                }
            }
        }
        if !moved {
            break;
        }
    }
    Ok(OracleResult { design, energy, evaluated })
}
