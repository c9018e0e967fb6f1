use std::path::Path;

use super::model::{AemArch, AemModel, WaveCode};
use super::node::{NodeArch, NodeModel};
use crate::diffcore::{
    blocks_from_store, find_scalar, load_checkpoint, restore_store, save_checkpoint, NamedBlock, ParamStore, Tape, Var,
};
use crate::error::{Error, Result};

/// Fixed input/output scalings, stored with the checkpoint but never trained.
#[derive(Clone, Debug, PartialEq)]
pub struct Normalization {
    /// σ is divided by this before it reaches the loss.
    pub sigma_scale: f64,
    pub image_scale: f64,
    pub design_offset: Vec<f64>,
    pub design_scale: Vec<f64>,
}

impl Normalization {
    pub fn identity(design_dim: usize) -> Self {
        Normalization {
            sigma_scale: 1.0,
            image_scale: 1.0,
            design_offset: vec![0.0; design_dim],
            design_scale: vec![1.0; design_dim],
        }
    }

    pub fn image(&self, raw: &[f64]) -> Vec<f64> {
        let inv = 1.0 / self.image_scale;
        raw.iter().map(|x| x * inv).collect()
    }

    pub fn design(&self, raw: &[f64]) -> Vec<f64> {
        raw.iter()
            .zip(&self.design_offset)
            .zip(&self.design_scale)
            .map(|((x, o), s)| (x - o) / s)
            .collect()
    }

    pub(crate) fn check_design_dim(&self, dim: usize) -> Result<()> {
        if self.design_offset.len() != dim || self.design_scale.len() != dim {
            return Err(Error::ShapeMismatch(format!(
                "normalization covers {} design coordinates, model has {dim}",
                self.design_offset.len()
            )));
        }
        if !(self.sigma_scale > 0.0 && self.image_scale > 0.0) || self.design_scale.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::Config("normalization scales must be positive".into()));
        }
        Ok(())
    }

    fn to_blocks(&self) -> Vec<NamedBlock> {
        let n = self.design_offset.len();
        vec![
            NamedBlock::scalar("norm.sigma", self.sigma_scale),
            NamedBlock::scalar("norm.image", self.image_scale),
            NamedBlock { name: "norm.design_offset".into(), shape: vec![n], data: self.design_offset.clone() },
            NamedBlock { name: "norm.design_scale".into(), shape: vec![n], data: self.design_scale.clone() },
        ]
    }

    fn from_blocks(blocks: &[NamedBlock]) -> Result<Self> {
        let vec_block = |name: &str| {
            blocks
                .iter()
                .find(|b| b.name == name)
                .map(|b| b.data.clone())
                .ok_or_else(|| Error::Format(format!("checkpoint lacks `{name}`")))
        };
        Ok(Normalization {
            sigma_scale: find_scalar(blocks, "norm.sigma")?,
            image_scale: find_scalar(blocks, "norm.image")?,
            design_offset: vec_block("norm.design_offset")?,
            design_scale: vec_block("norm.design_scale")?,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SurrogateKind {
    Aem,
    Node,
}

impl std::fmt::Display for SurrogateKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SurrogateKind::Aem => "aem",
            SurrogateKind::Node => "node",
        })
    }
}

impl std::str::FromStr for SurrogateKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "aem" => Ok(SurrogateKind::Aem),
            "node" => Ok(SurrogateKind::Node),
            _ => Err(Error::Config(format!("unknown model `{s}` (expected aem or node)"))),
        }
    }
}

/// Image encoding computed once per planning call.
#[derive(Clone, Debug)]
pub enum PlanCode {
    Aem(WaveCode),
    Node(Vec<f64>),
}

/// Either surrogate behind one interface.
#[derive(Clone, Debug)]
pub enum Surrogate {
    Aem(AemModel),
    Node(NodeModel),
}

impl Surrogate {
    pub fn kind(&self) -> SurrogateKind {
        match self {
            Surrogate::Aem(_) => SurrogateKind::Aem,
            Surrogate::Node(_) => SurrogateKind::Node,
        }
    }

    pub fn store(&self) -> &ParamStore {
        match self {
            Surrogate::Aem(m) => &m.store,
            Surrogate::Node(m) => &m.store,
        }
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        match self {
            Surrogate::Aem(m) => &mut m.store,
            Surrogate::Node(m) => &mut m.store,
        }
    }

    pub fn norm(&self) -> &Normalization {
        match self {
            Surrogate::Aem(m) => &m.norm,
            Surrogate::Node(m) => &m.norm,
        }
    }

    pub fn design_dim(&self) -> usize {
        match self {
            Surrogate::Aem(m) => m.arch.design_dim,
            Surrogate::Node(m) => m.arch.design_dim,
        }
    }

    pub fn num_params(&self) -> usize {
        self.store().num_scalars()
    }

    /// Normalized σ̂ nodes on a tape built against `self.store()`.
    pub fn prediction_nodes(
        &self,
        tape: &mut Tape<'_>,
        image: &[f64],
        designs: &[Vec<f64>],
        t0: f64,
        substeps: usize,
        steps: usize,
    ) -> Result<Vec<Var>> {
        match self {
            Surrogate::Aem(m) => m.prediction_nodes(tape, image, designs, t0, substeps, steps),
            Surrogate::Node(m) => m.prediction_nodes(tape, image, designs, substeps, steps),
        }
    }

    pub fn encode_for_planning(&self, image: &[f64]) -> Result<PlanCode> {
        match self {
            Surrogate::Aem(m) => Ok(PlanCode::Aem(m.encode_wave(image)?)),
            Surrogate::Node(m) => Ok(PlanCode::Node(m.encode(image)?)),
        }
    }

    /// Normalized σ̂ from a planning code.
    pub fn predict_from_code(
        &self,
        code: &PlanCode,
        designs: &[Vec<f64>],
        t0: f64,
        substeps: usize,
        steps: usize,
    ) -> Result<Vec<f64>> {
        match (self, code) {
            (Surrogate::Aem(m), PlanCode::Aem(c)) => m.predict_from_code(c, designs, t0, substeps, steps),
            (Surrogate::Node(m), PlanCode::Node(h)) => m.predict_from_code(h, designs, substeps, steps),
            _ => Err(Error::ShapeMismatch("planning code from a different model kind".into())),
        }
    }

    /// Physical-unit σ̂.
    pub fn predict(&self, image: &[f64], designs: &[Vec<f64>], t0: f64, substeps: usize, steps: usize) -> Result<Vec<f64>> {
        match self {
            Surrogate::Aem(m) => m.predict(image, designs, t0, substeps, steps),
            Surrogate::Node(m) => m.predict(image, designs, substeps, steps),
        }
    }

    pub fn to_blocks(&self) -> Vec<NamedBlock> {
        let (kind, arch, norm) = match self {
            Surrogate::Aem(m) => (0.0, m.arch.to_blocks(), &m.norm),
            Surrogate::Node(m) => (1.0, m.arch.to_blocks(), &m.norm),
        };
        let mut blocks = vec![NamedBlock::scalar("arch.kind", kind)];
        blocks.extend(arch);
        blocks.extend(norm.to_blocks());
        blocks.extend(blocks_from_store(self.store()));
        blocks
    }

    pub fn from_blocks(blocks: &[NamedBlock]) -> Result<Self> {
        let norm = Normalization::from_blocks(blocks)?;
        match find_scalar(blocks, "arch.kind")? as i64 {
            0 => {
                let arch = AemArch::from_blocks(blocks)?;
                norm.check_design_dim(arch.design_dim)?;
                let mut store = AemModel::empty_store(&arch);
                restore_store(&mut store, blocks)?;
                Ok(Surrogate::Aem(AemModel::from_parts(arch, norm, store)?))
            }
            1 => {
                let arch = NodeArch::from_blocks(blocks)?;
                norm.check_design_dim(arch.design_dim)?;
                let mut store = NodeModel::empty_store(&arch);
                restore_store(&mut store, blocks)?;
                Ok(Surrogate::Node(NodeModel::from_parts(arch, norm, store)?))
            }
            k => Err(Error::Format(format!("unknown model kind {k} in checkpoint"))),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_checkpoint(path, &self.to_blocks())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_blocks(&load_checkpoint(path)?)
    }
}
