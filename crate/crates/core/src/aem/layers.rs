use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::diffcore::{ParamId, ParamStore, Tape, Var};
use crate::error::Result;

/// Glorot-uniform initial weights.
pub(crate) fn glorot(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize, n: usize, gain: f64) -> Vec<f64> {
    let a = gain * (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..n).map(|_| rng.random_range(-a..a)).collect()
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Dense {
    pub w: ParamId,
    pub b: ParamId,
}

impl Dense {
    pub fn add(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng, gain: f64) -> Self {
        let w = store.add(&format!("{name}.w"), &[fan_out, fan_in], glorot(rng, fan_in, fan_out, fan_in * fan_out, gain));
        let b = store.add(&format!("{name}.b"), &[fan_out], vec![0.0; fan_out]);
        Dense { w, b }
    }

    pub fn lookup(store: &ParamStore, name: &str) -> Option<Self> {
        Some(Dense { w: store.id(&format!("{name}.w"))?, b: store.id(&format!("{name}.b"))? })
    }

    pub fn apply(&self, tape: &mut Tape<'_>, x: Var) -> Result<Var> {
        let (w, b) = (tape.param(self.w), tape.param(self.b));
        tape.affine(x, w, b)
    }
}

/// Stride-2, 3×3, zero-padded convolutions with tanh activations.
#[derive(Clone, Debug)]
pub(crate) struct ConvStack {
    pub layers: Vec<(ParamId, ParamId)>,
    pub image: usize,
}

/// Spatial size after `layers` stride-2 convolutions of an `n`-pixel side.
pub(crate) fn conv_out_side(n: usize, layers: usize) -> usize {
    (0..layers).fold(n, |s, _| s.div_ceil(2))
}

impl ConvStack {
    pub fn add(store: &mut ParamStore, prefix: &str, image: usize, channels: &[usize], rng: &mut ChaCha8Rng) -> Self {
        let mut layers = Vec::new();
        let mut cin = 1;
        for (i, &co) in channels.iter().enumerate() {
            let n = co * cin * 9;
            let w = store.add(&format!("{prefix}.conv{i}.w"), &[co, cin, 3, 3], glorot(rng, cin * 9, co * 9, n, 1.0));
            let b = store.add(&format!("{prefix}.conv{i}.b"), &[co], vec![0.0; co]);
            layers.push((w, b));
            cin = co;
        }
        ConvStack { layers, image }
    }

    pub fn lookup(store: &ParamStore, prefix: &str, image: usize, count: usize) -> Option<Self> {
        let layers = (0..count)
            .map(|i| Some((store.id(&format!("{prefix}.conv{i}.w"))?, store.id(&format!("{prefix}.conv{i}.b"))?)))
            .collect::<Option<Vec<_>>>()?;
        Some(ConvStack { layers, image })
    }

    pub fn features(image: usize, channels: &[usize]) -> usize {
        let side = conv_out_side(image, channels.len());
        channels.last().copied().unwrap_or(1) * side * side
    }

    /// Flattened features of a normalized single-channel image.
    pub fn apply(&self, tape: &mut Tape<'_>, image: &[f64]) -> Result<Var> {
        let mut x = tape.input(&[1, self.image, self.image], image.to_vec())?;
        for &(w, b) in &self.layers {
            let (wv, bv) = (tape.param(w), tape.param(b));
            let y = tape.conv2d(x, wv, bv, 2, 1)?;
            x = tape.tanh(y)?;
        }
        let n = tape.value(x).len();
        tape.reshape(x, &[n])
    }
}
