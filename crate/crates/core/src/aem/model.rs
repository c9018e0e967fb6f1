use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::{ConvStack, Dense};
use super::surrogate::Normalization;
use super::{LatentControl, LatentExogenous, LatentGrid, LatentState};
use crate::diffcore::{stencil, NamedBlock, ParamId, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::field2d::SimConfig;

/// Architecture hyperparameters of the latent wave surrogate.
#[derive(Clone, Debug, PartialEq)]
pub struct AemArch {
    pub grid: LatentGrid,
    /// Side of the square sensor image.
    pub image: usize,
    pub channels: Vec<usize>,
    pub dense: usize,
    pub design_dim: usize,
    pub robot_hidden: usize,
    /// Output scalings of the heads. With them, unit-sized network outputs
    /// correspond to unit-sized latent velocities at the carrier frequency.
    pub u_scale: f64,
    pub v_scale: f64,
    pub damping_scale: f64,
    /// Smallest learned damping rate, 1/s.
    pub damping_floor: f64,
    pub forcing_scale: f64,
    pub readout_scale: f64,
}

impl AemArch {
    pub fn for_env(sim: &SimConfig, design_dim: usize) -> Self {
        let grid = LatentGrid { cells: 128, span: 30.0, c0: 343.0, dt: sim.time_step(), frequency: sim.source_frequency };
        let omega = 2.0 * std::f64::consts::PI * sim.source_frequency.max(1.0);
        AemArch {
            grid,
            image: sim.sensor_size,
            channels: vec![8, 16, 32, 32],
            dense: 256,
            design_dim,
            robot_hidden: 64,
            u_scale: 1.0 / omega,
            v_scale: 1.0,
            damping_scale: 200.0,
            damping_floor: 300.0,
            forcing_scale: omega,
            readout_scale: 1.0 / grid.span,
        }
    }

    /// Range of the speed multiplier: from 0.1 up to 95% of the stability limit.
    pub fn speed_range(&self) -> (f64, f64) {
        (0.1, 0.95 * self.grid.max_speed_multiplier())
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        if self.speed_range().1 <= 0.2 {
            return Err(Error::Config("latent grid leaves no room for the speed multiplier".into()));
        }
        if !(self.damping_floor.is_finite() && self.damping_floor >= 0.0) {
            return Err(Error::Config(format!("damping floor must be >= 0, got {}", self.damping_floor)));
        }
        if self.image == 0 || self.channels.is_empty() || self.dense == 0 || self.robot_hidden == 0 {
            return Err(Error::Config("AEM layer sizes must be positive".into()));
        }
        Ok(())
    }

    pub(crate) fn to_blocks(&self) -> Vec<NamedBlock> {
        let g = &self.grid;
        let mut v = vec![
            NamedBlock::scalar("arch.grid.cells", g.cells as f64),
            NamedBlock::scalar("arch.grid.span", g.span),
            NamedBlock::scalar("arch.grid.c0", g.c0),
            NamedBlock::scalar("arch.grid.dt", g.dt),
            NamedBlock::scalar("arch.grid.frequency", g.frequency),
            NamedBlock::scalar("arch.image", self.image as f64),
            NamedBlock::scalar("arch.dense", self.dense as f64),
            NamedBlock::scalar("arch.design_dim", self.design_dim as f64),
            NamedBlock::scalar("arch.robot_hidden", self.robot_hidden as f64),
            NamedBlock::scalar("arch.scale.u", self.u_scale),
            NamedBlock::scalar("arch.scale.v", self.v_scale),
            NamedBlock::scalar("arch.scale.damping", self.damping_scale),
            NamedBlock::scalar("arch.damping_floor", self.damping_floor),
            NamedBlock::scalar("arch.scale.forcing", self.forcing_scale),
            NamedBlock::scalar("arch.scale.readout", self.readout_scale),
        ];
        v.push(NamedBlock {
            name: "arch.channels".into(),
            shape: vec![self.channels.len()],
            data: self.channels.iter().map(|c| *c as f64).collect(),
        });
        v
    }

    pub(crate) fn from_blocks(blocks: &[NamedBlock]) -> Result<Self> {
        use crate::diffcore::find_scalar as f;
        let channels = blocks
            .iter()
            .find(|b| b.name == "arch.channels")
            .ok_or_else(|| Error::Format("checkpoint lacks `arch.channels`".into()))?
            .data
            .iter()
            .map(|c| *c as usize)
            .collect();
        let arch = AemArch {
            grid: LatentGrid {
                cells: f(blocks, "arch.grid.cells")? as usize,
                span: f(blocks, "arch.grid.span")?,
                c0: f(blocks, "arch.grid.c0")?,
                dt: f(blocks, "arch.grid.dt")?,
                frequency: f(blocks, "arch.grid.frequency")?,
            },
            image: f(blocks, "arch.image")? as usize,
            channels,
            dense: f(blocks, "arch.dense")? as usize,
            design_dim: f(blocks, "arch.design_dim")? as usize,
            robot_hidden: f(blocks, "arch.robot_hidden")? as usize,
            u_scale: f(blocks, "arch.scale.u")?,
            v_scale: f(blocks, "arch.scale.v")?,
            damping_scale: f(blocks, "arch.scale.damping")?,
            damping_floor: f(blocks, "arch.damping_floor")?,
            forcing_scale: f(blocks, "arch.scale.forcing")?,
            readout_scale: f(blocks, "arch.scale.readout")?,
        };
        arch.validate()?;
        Ok(arch)
    }
}

/// Initial gain of the damping and forcing rows of the head.
const EXO_GAIN: f64 = 0.05;

#[derive(Clone, Debug)]
struct AemIds {
    conv: ConvStack,
    trunk: Dense,
    head: Dense,
    readout: ParamId,
    robot: [Dense; 3],
}

impl AemIds {
    fn build(store: &mut ParamStore, arch: &AemArch, rng: &mut ChaCha8Rng) -> Self {
        let g = arch.grid.cells;
        let conv = ConvStack::add(store, "aem", arch.image, &arch.channels, rng);
        let feats = ConvStack::features(arch.image, &arch.channels);
        let trunk = Dense::add(store, "aem.trunk", feats, arch.dense, rng, 1.0);
        let head = Dense::add(store, "aem.head", arch.dense, 4 * g, rng, 1.0);
        // damping and forcing start out nearly image-independent; the shared
        // part lives in the head bias
        store.value_mut(head.w)[2 * g * arch.dense..].iter_mut().for_each(|w| *w *= EXO_GAIN);
        let readout = store.add("aem.readout", &[g], vec![0.0; g]);
        let h = arch.robot_hidden;
        let r0 = Dense::add(store, "aem.robot0", arch.design_dim, h, rng, 1.0);
        let r1 = Dense::add(store, "aem.robot1", h, h, rng, 1.0);
        let r2 = Dense::add(store, "aem.robot2", h, g, rng, 0.1);
        // C = 1 at initialization when the range allows it
        let (lo, hi) = arch.speed_range();
        let target = if hi > 1.0 { (1.0 - lo) / (hi - lo) } else { 0.5 };
        store.value_mut(r2.b).fill((2.0 * target - 1.0).atanh());
        AemIds { conv, trunk, head, readout, robot: [r0, r1, r2] }
    }

    fn lookup(store: &ParamStore, arch: &AemArch) -> Result<Self> {
        let miss = || Error::Format("checkpoint does not match the AEM layout".into());
        Ok(AemIds {
            conv: ConvStack::lookup(store, "aem", arch.image, arch.channels.len()).ok_or_else(miss)?,
            trunk: Dense::lookup(store, "aem.trunk").ok_or_else(miss)?,
            head: Dense::lookup(store, "aem.head").ok_or_else(miss)?,
            readout: store.id("aem.readout").ok_or_else(miss)?,
            robot: [
                Dense::lookup(store, "aem.robot0").ok_or_else(miss)?,
                Dense::lookup(store, "aem.robot1").ok_or_else(miss)?,
                Dense::lookup(store, "aem.robot2").ok_or_else(miss)?,
            ],
        })
    }
}

/// Latent heads produced by the wave encoder on a tape.
#[derive(Clone, Copy, Debug)]
pub struct WaveHeads {
    pub z0: Var,
    pub damping: Var,
    pub forcing: Var,
    pub weight: Var,
}

/// Plain-value output of the wave encoder, reused across planning rollouts.
#[derive(Clone, Debug, PartialEq)]
pub struct WaveCode {
    pub z0: LatentState,
    pub exo: LatentExogenous,
    pub weight: Vec<f64>,
}

/// Latent wave surrogate: wave encoder, robot encoder, latent PDE, readout.
#[derive(Clone, Debug)]
pub struct AemModel {
    pub arch: AemArch,
    pub norm: Normalization,
    pub store: ParamStore,
    ids: AemIds,
    /// Ablation switch: force the learned damping to zero.
    pub zero_damping: bool,
}

impl AemModel {
    pub fn new(arch: AemArch, norm: Normalization, seed: u64) -> Result<Self> {
        arch.validate()?;
        norm.check_design_dim(arch.design_dim)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let ids = AemIds::build(&mut store, &arch, &mut rng);
        Ok(AemModel { arch, norm, store, ids, zero_damping: false })
    }

    pub(crate) fn from_parts(arch: AemArch, norm: Normalization, store: ParamStore) -> Result<Self> {
        let ids = AemIds::lookup(&store, &arch)?;
        Ok(AemModel { arch, norm, store, ids, zero_damping: false })
    }

    /// Rebuild a fresh store with the same layout and copy values in; used
    /// by checkpoint loading.
    pub(crate) fn empty_store(arch: &AemArch) -> ParamStore {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        AemIds::build(&mut store, arch, &mut rng);
        store
    }

    pub fn num_params(&self) -> usize {
        self.store.num_scalars()
    }

    fn endpoint_mask(&self, tape: &mut Tape<'_>) -> Result<Var> {
        let g = self.arch.grid.cells;
        let mut m = vec![1.0; g];
        m[0] = 0.0;
        m[g - 1] = 0.0;
        tape.input(&[g], m)
    }

    /// Wave encoder on a tape. `image` is in physical units.
    pub fn encode_wave_tape(&self, tape: &mut Tape<'_>, image: &[f64]) -> Result<WaveHeads> {
        let g = self.arch.grid.cells;
        let side = self.arch.image;
        if image.len() != side * side {
            return Err(Error::ShapeMismatch(format!("image of {} pixels, model expects {side}x{side}", image.len())));
        }
        let x = self.norm.image(image);
        let feats = self.ids.conv.apply(tape, &x)?;
        let h = self.ids.trunk.apply(tape, feats)?;
        let h = tape.tanh(h)?;
        let out = self.ids.head.apply(tape, h)?;
        let mask = self.endpoint_mask(tape)?;
        let u = tape.slice(out, 0, g)?;
        let u = tape.scale(u, self.arch.u_scale)?;
        let u = tape.mul(u, mask)?;
        let v = tape.slice(out, g, g)?;
        let v = tape.scale(v, self.arch.v_scale)?;
        let v = tape.mul(v, mask)?;
        let z0 = tape.concat(&[u, v])?;
        let damping = if self.zero_damping {
            tape.input(&[g], vec![0.0; g])?
        } else {
            let l = tape.slice(out, 2 * g, g)?;
            let l = tape.softplus(l)?;
            let l = tape.scale(l, self.arch.damping_scale)?;
            tape.offset(l, self.arch.damping_floor)?
        };
        let s = tape.slice(out, 3 * g, g)?;
        let forcing = tape.scale(s, self.arch.forcing_scale)?;
        let w = tape.param(self.ids.readout);
        let w = tape.softplus(w)?;
        let weight = tape.scale(w, self.arch.readout_scale)?;
        Ok(WaveHeads { z0, damping, forcing, weight })
    }

    /// Robot encoder on a tape: flat physical design → speed multiplier field.
    pub fn encode_design_tape(&self, tape: &mut Tape<'_>, design: &[f64]) -> Result<Var> {
        if design.len() != self.arch.design_dim {
            return Err(Error::ShapeMismatch(format!(
                "design of length {}, model expects {}",
                design.len(),
                self.arch.design_dim
            )));
        }
        let x = tape.input(&[design.len()], self.norm.design(design))?;
        let [r0, r1, r2] = &self.ids.robot;
        let h = r0.apply(tape, x)?;
        let h = tape.tanh(h)?;
        let h = r1.apply(tape, h)?;
        let h = tape.tanh(h)?;
        let c = r2.apply(tape, h)?;
        let c = tape.tanh(c)?;
        let (lo, hi) = self.arch.speed_range();
        let c = tape.offset(c, 1.0)?;
        let c = tape.scale(c, 0.5 * (hi - lo))?;
        tape.offset(c, lo)
    }

    /// Normalized σ̂ after each of `steps` latent steps, as tape nodes.
    pub fn prediction_nodes(
        &self,
        tape: &mut Tape<'_>,
        image: &[f64],
        designs: &[Vec<f64>],
        t0: f64,
        substeps: usize,
        steps: usize,
    ) -> Result<Vec<Var>> {
        let heads = self.encode_wave_tape(tape, image)?;
        let cs = designs.iter().map(|d| self.encode_design_tape(tape, d)).collect::<Result<Vec<_>>>()?;
        let control = LatentControl { fields: vec![Vec::new(); cs.len()], substeps };
        let k = self.arch.grid.consts();
        let mut z = heads.z0;
        let mut out = Vec::with_capacity(steps);
        for n in 0..steps {
            let (tau, f) = control.position(n);
            let c = if tau + 1 == cs.len() { cs[tau] } else { tape.lerp(cs[tau], cs[tau + 1], f)? };
            z = tape.latent_step(z, c, heads.damping, heads.forcing, t0 + n as f64 * k.dt, k)?;
            out.push(tape.latent_energy(z, heads.weight, k)?);
        }
        Ok(out)
    }

    pub fn encode_wave(&self, image: &[f64]) -> Result<WaveCode> {
        let mut tape = Tape::new(&self.store);
        let h = self.encode_wave_tape(&mut tape, image)?;
        Ok(WaveCode {
            z0: LatentState::from_packed(tape.value(h.z0)),
            exo: LatentExogenous { damping: tape.value(h.damping).to_vec(), forcing: tape.value(h.forcing).to_vec() },
            weight: tape.value(h.weight).to_vec(),
        })
    }

    pub fn encode_design(&self, design: &[f64]) -> Result<Vec<f64>> {
        let mut tape = Tape::new(&self.store);
        let c = self.encode_design_tape(&mut tape, design)?;
        Ok(tape.value(c).to_vec())
    }

    pub fn encode_control(&self, designs: &[Vec<f64>], substeps: usize) -> Result<LatentControl> {
        let fields = designs.iter().map(|d| self.encode_design(d)).collect::<Result<Vec<_>>>()?;
        Ok(LatentControl { fields, substeps })
    }

    /// Normalized σ̂ from a precomputed wave code, without recording a tape.
    pub fn predict_from_code(
        &self,
        code: &WaveCode,
        designs: &[Vec<f64>],
        t0: f64,
        substeps: usize,
        steps: usize,
    ) -> Result<Vec<f64>> {
        let control = self.encode_control(designs, substeps)?;
        self.predict_with_control(code, &control, t0, steps)
    }

    pub fn predict_with_control(&self, code: &WaveCode, control: &LatentControl, t0: f64, steps: usize) -> Result<Vec<f64>> {
        let grid = &self.arch.grid;
        let k = grid.consts();
        let limit = k.max_speed_multiplier();
        if control.fields.iter().flatten().any(|c| !(*c <= limit)) {
            return Err(Error::NumericalBlowup(format!("latent speed multiplier exceeds stability limit {limit:.4}")));
        }
        let g = grid.cells;
        let mut z = code.z0.packed();
        let mut next = vec![0.0; 2 * g];
        let mut out = Vec::with_capacity(steps);
        for n in 0..steps {
            let c = control.at(n);
            stencil::step_forward(&k, &z, &c, &code.exo.damping, &code.exo.forcing, t0 + n as f64 * k.dt, &mut next);
            std::mem::swap(&mut z, &mut next);
            let e = stencil::energy_forward(&k, &z, &code.weight);
            if !e.is_finite() {
                return Err(Error::NumericalBlowup(format!("latent rollout non-finite at step {n}")));
            }
            out.push(e);
        }
        Ok(out)
    }

    /// Physical-unit σ̂ for an image, design instants and start time.
    pub fn predict(&self, image: &[f64], designs: &[Vec<f64>], t0: f64, substeps: usize, steps: usize) -> Result<Vec<f64>> {
        let code = self.encode_wave(image)?;
        let s = self.predict_from_code(&code, designs, t0, substeps, steps)?;
        Ok(s.into_iter().map(|x| x * self.norm.sigma_scale).collect())
    }
}
