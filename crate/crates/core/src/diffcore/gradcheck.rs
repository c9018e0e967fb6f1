use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::params::{ParamId, ParamStore};
use super::tape::{Tape, Var};
use crate::error::Result;

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    /// Central difference step.
    pub h: f64,
    pub tolerance: f64,
    /// Relative errors are taken against `max(|ad|, |fd|, floor·max(1, |f|))`
    /// so entries that are zero up to finite-difference noise do not count.
    pub floor: f64,
    /// Check at most this many entries per block (sampled); `None` checks all.
    pub max_per_block: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions { h: 1e-4, tolerance: 1e-4, floor: 1e-6, max_per_block: None, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockReport {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub blocks: Vec<BlockReport>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn max_error(&self) -> f64 {
        self.blocks.iter().fold(0.0, |m, b| m.max(b.max_rel_error))
    }

    pub fn passed(&self) -> bool {
        self.blocks.iter().all(|b| b.max_rel_error < self.tolerance)
    }
}

impl std::fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for b in &self.blocks {
            writeln!(
                f,
                "{:<24} n={:<5} max_rel={:.3e} at {} (ad {:.6e}, fd {:.6e})",
                b.name, b.checked, b.max_rel_error, b.worst_index, b.analytic, b.numeric
            )?;
        }
        Ok(())
    }
}

/// Compare reverse-mode gradients of the scalar built by `f` against central
/// finite differences, block by block.
pub fn grad_check<F>(f: F, params: &ParamStore, opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<'_>) -> Result<Var>,
{
    let eval = |store: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new(store);
        let out = f(&mut tape)?;
        Ok(tape.scalar(out))
    };
    let (f0, grads) = {
        let mut tape = Tape::new(params);
        let out = f(&mut tape)?;
        (tape.scalar(out), tape.backward(out)?)
    };
    let floor = opts.floor * f0.abs().max(1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut work = params.clone();
    let mut blocks = Vec::new();
    for (bi, block) in params.blocks().iter().enumerate() {
        let id = ParamId(bi);
        let n = block.len();
        let mut idx: Vec<usize> = match opts.max_per_block {
            Some(m) if m < n => sample(&mut rng, n, m).into_vec(),
            _ => (0..n).collect(),
        };
        idx.sort_unstable();
        let mut rep = BlockReport {
            name: block.name.clone(),
            checked: idx.len(),
            max_rel_error: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for &i in &idx {
            let orig = block.value[i];
            work.value_mut(id)[i] = orig + opts.h;
            let fp = eval(&work)?;
            work.value_mut(id)[i] = orig - opts.h;
            let fm = eval(&work)?;
            work.value_mut(id)[i] = orig;
            let fd = (fp - fm) / (2.0 * opts.h);
            let ad = grads.get(id)[i];
            let err = (ad - fd).abs() / ad.abs().max(fd.abs()).max(floor);
            if err >= rep.max_rel_error {
                rep.max_rel_error = err;
                rep.worst_index = i;
                rep.analytic = ad;
                rep.numeric = fd;
            }
        }
        blocks.push(rep);
    }
    Ok(GradCheckReport { blocks, tolerance: opts.tolerance })
}
