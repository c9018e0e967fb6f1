//! Staggered-grid pressure/velocity leapfrog with split-field PML.
//!
//! Pressure lives at cell centers and is split into `px + py` so each part
//! is damped only by the absorption profile of its own axis. Velocities
//! live on cell faces, half a step out of phase with pressure.

use crate::error::{Error, Result};
use crate::robot::DesignState;

use super::mask::ScattererMask;
use super::SimConfig;

/// Cubic absorption ramps, one value per cell along each axis.
#[derive(Debug, Clone, PartialEq)]
pub struct PmlProfile {
    pub sigma_x: Vec<f64>,
    pub sigma_y: Vec<f64>,
}

/// `sigma(xi) = pml_strength * (xi / pml_width)^3`, where `xi` counts cells
/// into the layer: 1 for the innermost PML cell, `pml_width` for the outermost.
pub fn build_pml(config: &SimConfig) -> PmlProfile {
    let n = config.grid_n;
    let w = config.pml_width;
    let profile: Vec<f64> = (0..n)
        .map(|i| {
            let depth = if i < w {
                w - i
            } else if i >= n - w {
                i + w + 1 - n
            } else {
                0
            };
            config.pml_strength * (depth as f64 / w as f64).powi(3)
        })
        .collect();
    PmlProfile { sigma_x: profile.clone(), sigma_y: profile }
}

/// One acoustic field: split pressure at centers, velocities on faces.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveFields {
    pub px: Vec<f64>,
    pub py: Vec<f64>,
    /// `n x (n + 1)`, row-major in `y`.
    pub vx: Vec<f64>,
    /// `(n + 1) x n`, row-major in `y`.
    pub vy: Vec<f64>,
}

impl WaveFields {
    pub fn zeros(n: usize) -> Self {
        WaveFields {
            px: vec![0.0; n * n],
            py: vec![0.0; n * n],
            vx: vec![0.0; n * (n + 1)],
            vy: vec![0.0; (n + 1) * n],
        }
    }

    /// Total pressure `px + py` on the full grid.
    pub fn pressure(&self) -> Vec<f64> {
        self.px.iter().zip(&self.py).map(|(a, b)| a + b).collect()
    }

    pub fn all_finite(&self) -> bool {
        [&self.px, &self.py, &self.vx, &self.vy].iter().all(|f| f.iter().all(|v| v.is_finite()))
    }
}

/// Update coefficients `(1 - s dt/2)/(1 + s dt/2)` and `dt/(1 + s dt/2)`.
#[derive(Debug, Clone, PartialEq)]
struct Coefficients {
    cell_decay: Vec<f64>,
    cell_gain: Vec<f64>,
    face_decay: Vec<f64>,
    face_gain: Vec<f64>,
}

impl Coefficients {
    fn new(pml: &PmlProfile, dt: f64) -> Self {
        let sigma = &pml.sigma_x;
        let n = sigma.len();
        let face_sigma: Vec<f64> = (0..=n)
            .map(|f| match f {
                0 => sigma[0],
                f if f == n => sigma[n - 1],
                f => 0.5 * (sigma[f - 1] + sigma[f]),
            })
            .collect();
        let decay = |s: &f64| (1.0 - 0.5 * s * dt) / (1.0 + 0.5 * s * dt);
        let gain = |s: &f64| dt / (1.0 + 0.5 * s * dt);
        Coefficients {
            cell_decay: sigma.iter().map(decay).collect(),
            cell_gain: sigma.iter().map(gain).collect(),
            face_decay: face_sigma.iter().map(decay).collect(),
            face_gain: face_sigma.iter().map(gain).collect(),
        }
    }
}

/// Full simulator state: the scatterer run, its scatterer-free twin, the
/// PML profile, and the current mask.
#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub total: WaveFields,
    pub free: WaveFields,
    pub pml: PmlProfile,
    pub mask: ScattererMask,
    pub time: f64,
    pub steps_taken: u64,
    dt: f64,
    source_cell: (usize, usize),
    coeffs: Coefficients,
}

impl SimState {
    /// Quiescent fields, empty mask, `t = 0`.
    pub fn new(config: &SimConfig) -> Result<Self> {
        config.validate()?;
        let n = config.grid_n;
        let pml = build_pml(config);
        let dt = config.time_step();
        let coeffs = Coefficients::new(&pml, dt);
        Ok(SimState {
            total: WaveFields::zeros(n),
            free: WaveFields::zeros(n),
            pml,
            mask: ScattererMask::empty(n),
            time: 0.0,
            steps_taken: 0,
            dt,
            source_cell: (config.cell_of(config.source_position.0), config.cell_of(config.source_position.1)),
            coeffs,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn grid_n(&self) -> usize {
        self.pml.sigma_x.len()
    }

    /// Rasterizes `design` as the active mask and clears pressure inside it.
    pub fn set_design(&mut self, design: &DesignState, config: &SimConfig) -> Result<()> {
        self.mask.rasterize_into(design, config)?;
        self.apply_mask();
        Ok(())
    }

    pub fn set_mask(&mut self, mask: ScattererMask) {
        self.mask = mask;
        self.apply_mask();
    }

    fn apply_mask(&mut self) {
        if self.mask.is_empty() {
            return;
        }
        for (k, &m) in self.mask.cells().iter().enumerate() {
            if m {
                self.total.px[k] = 0.0;
                self.total.py[k] = 0.0;
            }
        }
        for (v, &b) in self.total.vx.iter_mut().zip(self.mask.vx_blocked()) {
            if b {
                *v = 0.0;
            }
        }
        for (v, &b) in self.total.vy.iter_mut().zip(self.mask.vy_blocked()) {
            if b {
                *v = 0.0;
            }
        }
    }

    /// Sets the same initial pressure `f(x, y)` on both twins (split evenly
    /// between the x and y parts) and zeroes velocities.
    pub fn set_initial_pressure(&mut self, config: &SimConfig, f: impl Fn(f64, f64) -> f64) {
        let n = config.grid_n;
        for fields in [&mut self.total, &mut self.free] {
            *fields = WaveFields::zeros(n);
            for j in 0..n {
                for i in 0..n {
                    let p = f(config.cell_center(i), config.cell_center(j));
                    fields.px[j * n + i] = 0.5 * p;
                    fields.py[j * n + i] = 0.5 * p;
                }
            }
        }
        self.apply_mask();
    }

    pub fn all_finite(&self) -> bool {
        self.total.all_finite() && self.free.all_finite()
    }
}

/// Advances both twins by `substeps` time steps of `state.dt()`.
pub fn step(state: &mut SimState, config: &SimConfig, substeps: usize) -> Result<()> {
    for _ in 0..substeps {
        step_once(state, config)?;
    }
    Ok(())
}

pub(crate) fn step_once(state: &mut SimState, config: &SimConfig) -> Result<()> {
    let t_half = state.time + 0.5 * state.dt;
    let drive = config.source_amplitude * (2.0 * std::f64::consts::PI * config.source_frequency * t_half).sin();
    let mask = (!state.mask.is_empty()).then_some(&state.mask);
    let peak_tot = advance(&mut state.total, &state.coeffs, config, state.source_cell, drive, state.dt, mask);
    let peak_free = advance(&mut state.free, &state.coeffs, config, state.source_cell, drive, state.dt, None);
    state.time = (state.steps_taken + 1) as f64 * state.dt;
    state.steps_taken += 1;
    let peak = peak_tot.max(peak_free);
    if !(peak <= config.blowup_bound) {
        return Err(Error::NumericalBlowup(format!(
            "pressure magnitude {peak:e} exceeds bound {:e} at t = {:.6} s",
            config.blowup_bound, state.time
        )));
    }
    Ok(())
}

/// One leapfrog step of a single field. Returns the largest |p| written.
fn advance(
    f: &mut WaveFields,
    k: &Coefficients,
    config: &SimConfig,
    source: (usize, usize),
    drive: f64,
    dt: f64,
    mask: Option<&ScattererMask>,
) -> f64 {
    let n = config.grid_n;
    let inv_dx = 1.0 / config.cell_size();
    let inv_rho = 1.0 / config.density;
    let bulk = config.density * config.sound_speed * config.sound_speed;

    for j in 0..n {
        let row = j * n;
        let vrow = j * (n + 1);
        for fc in 1..n {
            let grad = (f.px[row + fc] + f.py[row + fc] - f.px[row + fc - 1] - f.py[row + fc - 1]) * inv_dx;
            let v = &mut f.vx[vrow + fc];
            *v = k.face_decay[fc] * *v - k.face_gain[fc] * inv_rho * grad;
        }
    }
    for fr in 1..n {
        let (dec, gain) = (k.face_decay[fr], k.face_gain[fr]);
        for i in 0..n {
            let up = fr * n + i;
            let down = up - n;
            let grad = (f.px[up] + f.py[up] - f.px[down] - f.py[down]) * inv_dx;
            let v = &mut f.vy[up];
            *v = dec * *v - gain * inv_rho * grad;
        }
    }
    if let Some(m) = mask {
        for (v, &b) in f.vx.iter_mut().zip(m.vx_blocked()) {
            if b {
                *v = 0.0;
            }
        }
        for (v, &b) in f.vy.iter_mut().zip(m.vy_blocked()) {
            if b {
                *v = 0.0;
            }
        }
    }

    let mut peak = 0.0f64;
    for j in 0..n {
        let (dec_y, gain_y) = (k.cell_decay[j], k.cell_gain[j]);
        for i in 0..n {
            let c = j * n + i;
            let div_x = (f.vx[j * (n + 1) + i + 1] - f.vx[j * (n + 1) + i]) * inv_dx;
            let div_y = (f.vy[c + n] - f.vy[c]) * inv_dx;
            f.px[c] = k.cell_decay[i] * f.px[c] - k.cell_gain[i] * bulk * div_x;
            f.py[c] = dec_y * f.py[c] - gain_y * bulk * div_y;
        }
    }
    let s = source.1 * n + source.0;
    f.px[s] += 0.5 * dt * drive;
    f.py[s] += 0.5 * dt * drive;
    if let Some(m) = mask {
        for (c, &inside) in m.cells().iter().enumerate() {
            if inside {
                f.px[c] = 0.0;
                f.py[c] = 0.0;
            }
        }
    }
    for (a, b) in f.px.iter().zip(&f.py) {
        let p = (a + b).abs();
        // NaN must count as a blowup too.
        if !(p <= peak) {
            peak = if p.is_nan() { f64::INFINITY } else { p };
        }
    }
    peak
}

/// Instantaneous `sum (p^2 / (rho c^2) + rho (vx^2 + vy^2)) dx^2 / 2` over the grid.
///
/// Pressure and velocity sit half a step apart, so this oscillates by a few
/// percent even in a closed box; [`acoustic_energy`] is the conserved form.
pub fn instantaneous_energy(fields: &WaveFields, config: &SimConfig) -> f64 {
    let bulk = config.density * config.sound_speed * config.sound_speed;
    let potential: f64 = fields.px.iter().zip(&fields.py).map(|(a, b)| (a + b) * (a + b)).sum::<f64>() / bulk;
    let kinetic: f64 = fields.vx.iter().chain(&fields.vy).map(|v| v * v).sum::<f64>() * config.density;
    0.5 * (potential + kinetic) * config.cell_size().powi(2)
}

/// Time-centered energy `(<p^n, p^(n+1)> / (rho c^2) + rho |v^(n+1/2)|^2) dx^2 / 2`,
/// where `fields` holds the state after a step and `previous_pressure` the
/// pressure before it. The lossless scheme conserves this to rounding.
pub fn acoustic_energy(previous_pressure: &[f64], fields: &WaveFields, config: &SimConfig) -> f64 {
    let bulk = config.density * config.sound_speed * config.sound_speed;
    let potential: f64 = previous_pressure
        .iter()
        .zip(fields.px.iter().zip(&fields.py))
        .map(|(p0, (a, b))| p0 * (a + b))
        .sum::<f64>()
        / bulk;
    let kinetic: f64 = fields.vx.iter().chain(&fields.vy).map(|v| v * v).sum::<f64>() * config.density;
    0.5 * (potential + kinetic) * config.cell_size().powi(2)
}
