//! Latent wave surrogate and the neural-ODE baseline.
//!
//! The surrogate encodes a sensor image into the initial state and exogenous
//! fields of a 1D damped, forced wave equation on a latent line Γ, encodes
//! the scatterer design into a wave-speed multiplier over Γ, integrates the
//! latent equation and reads scattered energy off the latent energy density.

mod layers;
mod model;
mod node;
mod surrogate;

use crate::diffcore::stencil::{self, StencilConsts};
use crate::error::{Error, Result};

pub use model::{AemArch, AemModel, WaveCode, WaveHeads};
pub use node::{rk4_step, NodeArch, NodeModel};
pub use surrogate::{Normalization, PlanCode, Surrogate, SurrogateKind};

/// Discretization of the latent line.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LatentGrid {
    pub cells: usize,
    pub span: f64,
    pub c0: f64,
    pub dt: f64,
    /// Carrier frequency of the latent forcing, tied to the environment source.
    pub frequency: f64,
}

impl LatentGrid {
    pub fn dx(&self) -> f64 {
        self.span / self.cells as f64
    }

    pub fn consts(&self) -> StencilConsts {
        StencilConsts { dx: self.dx(), c0: self.c0, dt: self.dt, omega: 2.0 * std::f64::consts::PI * self.frequency }
    }

    /// Largest admissible speed multiplier `C`.
    pub fn max_speed_multiplier(&self) -> f64 {
        self.consts().max_speed_multiplier()
    }

    pub fn validate(&self) -> Result<()> {
        if self.cells < 32 {
            return Err(Error::Config(format!("latent grid needs at least 32 cells, got {}", self.cells)));
        }
        if !(self.span > 0.0 && self.c0 > 0.0 && self.dt > 0.0 && self.frequency >= 0.0) {
            return Err(Error::Config("latent grid constants must be positive".into()));
        }
        if self.max_speed_multiplier() <= 1.0 {
            return Err(Error::Config(format!(
                "latent time step {} violates CFL for unit speed multiplier (limit {})",
                self.dt,
                self.dx() / self.c0
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LatentState {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

impl LatentState {
    pub fn zeros(g: usize) -> Self {
        LatentState { u: vec![0.0; g], v: vec![0.0; g] }
    }

    pub fn from_packed(z: &[f64]) -> Self {
        let g = z.len() / 2;
        LatentState { u: z[..g].to_vec(), v: z[g..].to_vec() }
    }

    pub fn packed(&self) -> Vec<f64> {
        let mut z = self.u.clone();
        z.extend_from_slice(&self.v);
        z
    }

    pub fn is_finite(&self) -> bool {
        self.u.iter().chain(&self.v).all(|x| x.is_finite())
    }
}

/// Damping `L ≥ 0` and forcing amplitude `s` over Γ.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentExogenous {
    pub damping: Vec<f64>,
    pub forcing: Vec<f64>,
}

/// Speed multiplier fields at consecutive control instants, linearly
/// interpolated in between.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentControl {
    pub fields: Vec<Vec<f64>>,
    /// Latent steps per control interval.
    pub substeps: usize,
}

impl LatentControl {
    /// Interval index and interpolation fraction of latent step `n`.
    /// Steps past the last instant hold the last field.
    pub fn position(&self, n: usize) -> (usize, f64) {
        let last = self.fields.len().saturating_sub(1);
        let tau = n / self.substeps;
        if tau >= last {
            (last, 0.0)
        } else {
            (tau, (n % self.substeps) as f64 / self.substeps as f64)
        }
    }

    /// Field used by latent step `n` (at time `t0 + n dt`).
    pub fn at(&self, n: usize) -> Vec<f64> {
        let (tau, f) = self.position(n);
        if tau + 1 == self.fields.len() {
            return self.fields[tau].clone();
        }
        lerp(&self.fields[tau], &self.fields[tau + 1], f)
    }

    /// Number of latent steps covered by the stored instants.
    pub fn horizon_steps(&self) -> usize {
        self.fields.len().saturating_sub(1) * self.substeps
    }
}

pub(crate) fn lerp(a: &[f64], b: &[f64], f: f64) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| (1.0 - f) * x + f * y).collect()
}

fn check_len(what: &str, v: &[f64], g: usize) -> Result<()> {
    if v.len() != g {
        return Err(Error::ShapeMismatch(format!("{what} has {} cells, grid has {g}", v.len())));
    }
    Ok(())
}

/// One latent step on plain values.
pub fn latent_step(z: &LatentState, c: &[f64], exo: &LatentExogenous, t: f64, grid: &LatentGrid) -> Result<LatentState> {
    let g = grid.cells;
    for (w, v) in [("u", &z.u[..]), ("v", &z.v), ("C", c), ("L", &exo.damping), ("s", &exo.forcing)] {
        check_len(w, v, g)?;
    }
    let limit = grid.max_speed_multiplier();
    if c.iter().any(|x| !(*x <= limit)) {
        return Err(Error::NumericalBlowup(format!("latent speed multiplier exceeds stability limit {limit:.4}")));
    }
    let mut out = vec![0.0; 2 * g];
    stencil::step_forward(&grid.consts(), &z.packed(), c, &exo.damping, &exo.forcing, t, &mut out);
    let next = LatentState::from_packed(&out);
    if !next.is_finite() {
        return Err(Error::NumericalBlowup(format!("latent state non-finite at t={t}")));
    }
    Ok(next)
}

/// Integrate `steps` latent steps starting at time `t0`; returns all states
/// including the initial one.
pub fn rollout(
    g0: &LatentState,
    control: &LatentControl,
    exo: &LatentExogenous,
    t0: f64,
    steps: usize,
    grid: &LatentGrid,
) -> Result<Vec<LatentState>> {
    if control.fields.is_empty() || control.substeps == 0 {
        return Err(Error::ShapeMismatch("rollout without control fields".into()));
    }
    let mut traj = Vec::with_capacity(steps + 1);
    traj.push(g0.clone());
    for n in 0..steps {
        let c = control.at(n);
        let next = latent_step(&traj[n], &c, exo, t0 + n as f64 * grid.dt, grid)?;
        traj.push(next);
    }
    Ok(traj)
}

/// Weighted energy readout of every state after the initial one.
pub fn readout(traj: &[LatentState], w: &[f64], grid: &LatentGrid) -> Vec<f64> {
    let k = grid.consts();
    traj.iter().skip(1).map(|z| stencil::energy_forward(&k, &z.packed(), w)).collect()
}

/// Largest relative residual of the discrete latent equations along a
/// stored trajectory, plus the mismatch of its first state with `g0`.
pub fn rollout_residual(
    g0: &LatentState,
    traj: &[LatentState],
    control: &LatentControl,
    exo: &LatentExogenous,
    t0: f64,
    grid: &LatentGrid,
) -> f64 {
    let k = grid.consts();
    let scale = g0.u.iter().chain(&g0.v).fold(1e-300f64, |m, x| m.max(x.abs()));
    let mut worst = g0
        .u
        .iter()
        .zip(&traj[0].u)
        .chain(g0.v.iter().zip(&traj[0].v))
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
        / scale;
    for n in 0..traj.len() - 1 {
        let c = control.at(n);
        let r = stencil::step_residual(
            &k,
            &traj[n].packed(),
            &c,
            &exo.damping,
            &exo.forcing,
            t0 + n as f64 * grid.dt,
            &traj[n + 1].packed(),
        );
        worst = worst.max(r);
    }
    worst
}

#[cfg(test)]
mod tests;
