//! Reverse-mode differentiation over tensors of `f64`.
//!
//! A [`Tape`] records operations eagerly, each node caching its primal value.
//! [`Tape::backward`] sweeps the record in reverse and returns gradients for
//! every block of the [`ParamStore`] the tape was built against.

mod checkpoint;
mod gradcheck;
mod params;
pub mod stencil;
mod tape;

pub use checkpoint::{
    blocks_from_store, decode_checkpoint, encode_checkpoint, find_scalar, load_checkpoint, restore_store,
    save_checkpoint, NamedBlock, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use gradcheck::{grad_check, BlockReport, GradCheckOptions, GradCheckReport};
pub use params::{AdamConfig, Gradients, ParamBlock, ParamId, ParamStore};
pub use stencil::StencilConsts;
pub use tape::{Tape, Var};
