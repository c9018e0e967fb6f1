use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::{ConvStack, Dense};
use super::surrogate::Normalization;
use super::LatentControl;
use crate::diffcore::{NamedBlock, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::field2d::SimConfig;

/// Hyperparameters of the neural-ODE baseline.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeArch {
    pub image: usize,
    pub channels: Vec<usize>,
    /// Width of the dense layer between the conv stack and `h0`; tuned to
    /// match a target parameter count.
    pub dense: usize,
    pub latent: usize,
    pub embed: usize,
    pub design_dim: usize,
    pub robot_hidden: usize,
    pub dyn_hidden: usize,
    /// Integration step in model time units (one unit = one action period).
    pub dt: f64,
}

impl NodeArch {
    pub fn for_env(sim: &SimConfig, design_dim: usize) -> Self {
        NodeArch {
            image: sim.sensor_size,
            channels: vec![8, 16, 32, 32],
            dense: 256,
            latent: 64,
            embed: 32,
            design_dim,
            robot_hidden: 64,
            dyn_hidden: 256,
            dt: 1.0 / sim.substeps() as f64,
        }
    }

    pub fn param_count(&self) -> usize {
        let conv: usize = {
            let mut cin = 1;
            self.channels
                .iter()
                .map(|&co| {
                    let n = co * cin * 9 + co;
                    cin = co;
                    n
                })
                .sum()
        };
        let feats = ConvStack::features(self.image, &self.channels);
        let dense = |i: usize, o: usize| i * o + o;
        conv + dense(feats, self.dense)
            + dense(self.dense, self.latent)
            + dense(self.design_dim, self.robot_hidden)
            + dense(self.robot_hidden, self.robot_hidden)
            + dense(self.robot_hidden, self.embed)
            + dense(self.latent + self.embed, self.dyn_hidden)
            + dense(self.dyn_hidden, self.latent)
            + dense(self.latent, 1)
    }

    /// Choose the dense width whose total parameter count is closest to `target`.
    pub fn match_params(mut self, target: usize) -> Self {
        self.dense = 1;
        let base = self.param_count();
        self.dense = 2;
        let per = self.param_count() - base;
        let w = ((target as f64 - base as f64) / per as f64 + 1.0).round().max(1.0) as usize;
        self.dense = w;
        self
    }

    pub(crate) fn to_blocks(&self) -> Vec<NamedBlock> {
        let mut v = vec![
            NamedBlock::scalar("arch.image", self.image as f64),
            NamedBlock::scalar("arch.dense", self.dense as f64),
            NamedBlock::scalar("arch.latent", self.latent as f64),
            NamedBlock::scalar("arch.embed", self.embed as f64),
            NamedBlock::scalar("arch.design_dim", self.design_dim as f64),
            NamedBlock::scalar("arch.robot_hidden", self.robot_hidden as f64),
            NamedBlock::scalar("arch.dyn_hidden", self.dyn_hidden as f64),
            NamedBlock::scalar("arch.dt", self.dt),
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
        Ok(NodeArch {
            image: f(blocks, "arch.image")? as usize,
            channels,
            dense: f(blocks, "arch.dense")? as usize,
            latent: f(blocks, "arch.latent")? as usize,
            embed: f(blocks, "arch.embed")? as usize,
            design_dim: f(blocks, "arch.design_dim")? as usize,
            robot_hidden: f(blocks, "arch.robot_hidden")? as usize,
            dyn_hidden: f(blocks, "arch.dyn_hidden")? as usize,
            dt: f(blocks, "arch.dt")?,
        })
    }
}

/// One classical Runge-Kutta step of `ḣ = f(h)` on a tape.
pub fn rk4_step<F>(tape: &mut Tape<'_>, h: Var, dt: f64, mut f: F) -> Result<Var>
where
    F: FnMut(&mut Tape<'_>, Var) -> Result<Var>,
{
    let k1 = f(tape, h)?;
    let d = tape.scale(k1, 0.5 * dt)?;
    let h2 = tape.add(h, d)?;
    let k2 = f(tape, h2)?;
    let d = tape.scale(k2, 0.5 * dt)?;
    let h3 = tape.add(h, d)?;
    let k3 = f(tape, h3)?;
    let d = tape.scale(k3, dt)?;
    let h4 = tape.add(h, d)?;
    let k4 = f(tape, h4)?;
    let a = tape.add(k1, k4)?;
    let b = tape.add(k2, k3)?;
    let b = tape.scale(b, 2.0)?;
    let sum = tape.add(a, b)?;
    let d = tape.scale(sum, dt / 6.0)?;
    tape.add(h, d)
}

#[derive(Clone, Debug)]
struct NodeIds {
    conv: ConvStack,
    trunk: Dense,
    init: Dense,
    robot: [Dense; 3],
    dyn0: Dense,
    dyn1: Dense,
    readout: Dense,
}

impl NodeIds {
    fn build(store: &mut ParamStore, a: &NodeArch, rng: &mut ChaCha8Rng) -> Self {
        let conv = ConvStack::add(store, "node", a.image, &a.channels, rng);
        let feats = ConvStack::features(a.image, &a.channels);
        NodeIds {
            conv,
            trunk: Dense::add(store, "node.trunk", feats, a.dense, rng, 1.0),
            init: Dense::add(store, "node.init", a.dense, a.latent, rng, 1.0),
            robot: [
                Dense::add(store, "node.robot0", a.design_dim, a.robot_hidden, rng, 1.0),
                Dense::add(store, "node.robot1", a.robot_hidden, a.robot_hidden, rng, 1.0),
                Dense::add(store, "node.robot2", a.robot_hidden, a.embed, rng, 1.0),
            ],
            dyn0: Dense::add(store, "node.dyn0", a.latent + a.embed, a.dyn_hidden, rng, 1.0),
            dyn1: Dense::add(store, "node.dyn1", a.dyn_hidden, a.latent, rng, 0.1),
            readout: Dense::add(store, "node.readout", a.latent, 1, rng, 1.0),
        }
    }

    fn lookup(store: &ParamStore, a: &NodeArch) -> Result<Self> {
        let miss = || Error::Format("checkpoint does not match the NODE layout".into());
        let d = |n: &str| Dense::lookup(store, n).ok_or_else(miss);
        Ok(NodeIds {
            conv: ConvStack::lookup(store, "node", a.image, a.channels.len()).ok_or_else(miss)?,
            trunk: d("node.trunk")?,
            init: d("node.init")?,
            robot: [d("node.robot0")?, d("node.robot1")?, d("node.robot2")?],
            dyn0: d("node.dyn0")?,
            dyn1: d("node.dyn1")?,
            readout: d("node.readout")?,
        })
    }
}

/// Neural-ODE baseline: `ḣ = MLP([h; c_τ])`, RK4, linear readout.
#[derive(Clone, Debug)]
pub struct NodeModel {
    pub arch: NodeArch,
    pub norm: Normalization,
    pub store: ParamStore,
    ids: NodeIds,
}

/// Latent states beyond this magnitude are treated as a blowup.
const NODE_STATE_BOUND: f64 = 1e6;

impl NodeModel {
    pub fn new(arch: NodeArch, norm: Normalization, seed: u64) -> Result<Self> {
        norm.check_design_dim(arch.design_dim)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let ids = NodeIds::build(&mut store, &arch, &mut rng);
        Ok(NodeModel { arch, norm, store, ids })
    }

    pub(crate) fn from_parts(arch: NodeArch, norm: Normalization, store: ParamStore) -> Result<Self> {
        let ids = NodeIds::lookup(&store, &arch)?;
        Ok(NodeModel { arch, norm, store, ids })
    }

    pub(crate) fn empty_store(arch: &NodeArch) -> ParamStore {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        NodeIds::build(&mut store, arch, &mut rng);
        store
    }

    pub fn num_params(&self) -> usize {
        self.store.num_scalars()
    }

    pub fn encode_tape(&self, tape: &mut Tape<'_>, image: &[f64]) -> Result<Var> {
        let side = self.arch.image;
        if image.len() != side * side {
            return Err(Error::ShapeMismatch(format!("image of {} pixels, model expects {side}x{side}", image.len())));
        }
        let x = self.norm.image(image);
        let f = self.ids.conv.apply(tape, &x)?;
        let h = self.ids.trunk.apply(tape, f)?;
        let h = tape.tanh(h)?;
        self.ids.init.apply(tape, h)
    }

    pub fn embed_tape(&self, tape: &mut Tape<'_>, design: &[f64]) -> Result<Var> {
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
        r2.apply(tape, h)
    }

    fn dynamics(&self, tape: &mut Tape<'_>, h: Var, e: Var) -> Result<Var> {
        let x = tape.concat(&[h, e])?;
        let y = self.ids.dyn0.apply(tape, x)?;
        let y = tape.tanh(y)?;
        self.ids.dyn1.apply(tape, y)
    }

    /// Roll `steps` RK4 steps from `h0`; σ̂ nodes (normalized) after each.
    pub fn rollout_nodes(&self, tape: &mut Tape<'_>, h0: Var, embeds: &[Var], substeps: usize, steps: usize) -> Result<Vec<Var>> {
        let control = LatentControl { fields: vec![Vec::new(); embeds.len()], substeps };
        let mut h = h0;
        let mut out = Vec::with_capacity(steps);
        for n in 0..steps {
            // embedding held at the midpoint of the step
            let (tau, f) = control.position(n);
            let e = if tau + 1 == embeds.len() {
                embeds[tau]
            } else {
                tape.lerp(embeds[tau], embeds[tau + 1], f + 0.5 / substeps as f64)?
            };
            h = rk4_step(tape, h, self.arch.dt, |t, x| self.dynamics(t, x, e))?;
            if tape.value(h).iter().any(|x| !(x.abs() < NODE_STATE_BOUND)) {
                return Err(Error::NumericalBlowup(format!("NODE state diverged at step {n}")));
            }
            let y = self.ids.readout.apply(tape, h)?;
            out.push(y);
        }
        Ok(out)
    }

    pub fn prediction_nodes(
        &self,
        tape: &mut Tape<'_>,
        image: &[f64],
        designs: &[Vec<f64>],
        substeps: usize,
        steps: usize,
    ) -> Result<Vec<Var>> {
        let h0 = self.encode_tape(tape, image)?;
        let embeds = designs.iter().map(|d| self.embed_tape(tape, d)).collect::<Result<Vec<_>>>()?;
        self.rollout_nodes(tape, h0, &embeds, substeps, steps)
    }

    pub fn encode(&self, image: &[f64]) -> Result<Vec<f64>> {
        let mut tape = Tape::new(&self.store);
        let h = self.encode_tape(&mut tape, image)?;
        Ok(tape.value(h).to_vec())
    }

    pub fn predict_from_code(&self, h0: &[f64], designs: &[Vec<f64>], substeps: usize, steps: usize) -> Result<Vec<f64>> {
        let mut tape = Tape::new(&self.store);
        let h = tape.input(&[h0.len()], h0.to_vec())?;
        let embeds = designs.iter().map(|d| self.embed_tape(&mut tape, d)).collect::<Result<Vec<_>>>()?;
        let out = self.rollout_nodes(&mut tape, h, &embeds, substeps, steps)?;
        Ok(out.iter().map(|v| tape.scalar(*v)).collect())
    }

    pub fn predict(&self, image: &[f64], designs: &[Vec<f64>], substeps: usize, steps: usize) -> Result<Vec<f64>> {
        let h0 = self.encode(image)?;
        let s = self.predict_from_code(&h0, designs, substeps, steps)?;
        Ok(s.into_iter().map(|x| x * self.norm.sigma_scale).collect())
    }
}
