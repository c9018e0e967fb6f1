use crate::error::{Error, Result};

/// Handle to a parameter block inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct ParamBlock {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<f64>,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl ParamBlock {
    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

/// Named trainable blocks plus the Adam moment buffers.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    blocks: Vec<ParamBlock>,
    step: u64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Register a block. Panics if `value.len()` disagrees with `shape`.
    pub fn add(&mut self, name: &str, shape: &[usize], value: Vec<f64>) -> ParamId {
        assert_eq!(shape.iter().product::<usize>(), value.len(), "block `{name}`");
        assert!(self.id(name).is_none(), "duplicate parameter block `{name}`");
        let n = value.len();
        self.blocks.push(ParamBlock {
            name: name.to_string(),
            shape: shape.to_vec(),
            value,
            m: vec![0.0; n],
            v: vec![0.0; n],
        });
        ParamId(self.blocks.len() - 1)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.blocks.iter().position(|b| b.name == name).map(ParamId)
    }

    pub fn block(&self, id: ParamId) -> &ParamBlock {
        &self.blocks[id.0]
    }

    pub fn blocks(&self) -> &[ParamBlock] {
        &self.blocks
    }

    pub fn value(&self, id: ParamId) -> &[f64] {
        &self.blocks[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.blocks[id.0].value
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.blocks.iter().map(|b| b.value.len()).sum()
    }

    pub fn adam_steps_taken(&self) -> u64 {
        self.step
    }

    pub fn all_finite(&self) -> bool {
        self.blocks.iter().all(|b| b.value.iter().all(|x| x.is_finite()))
    }

    /// One Adam update. Nothing is modified if any gradient is non-finite.
    pub fn adam_step(&mut self, grads: &Gradients, cfg: &AdamConfig) -> Result<()> {
        if grads.blocks.len() != self.blocks.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} gradient blocks for {} parameter blocks",
                grads.blocks.len(),
                self.blocks.len()
            )));
        }
        for (b, g) in self.blocks.iter().zip(&grads.blocks) {
            if g.len() != b.value.len() {
                return Err(Error::ShapeMismatch(format!("gradient for `{}`", b.name)));
            }
            if g.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFiniteGradient(b.name.clone()));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        for (b, g) in self.blocks.iter_mut().zip(&grads.blocks) {
            for i in 0..g.len() {
                b.m[i] = cfg.beta1 * b.m[i] + (1.0 - cfg.beta1) * g[i];
                b.v[i] = cfg.beta2 * b.v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
                let mh = b.m[i] / c1;
                let vh = b.v[i] / c2;
                b.value[i] -= cfg.lr * mh / (vh.sqrt() + cfg.eps);
            }
        }
        Ok(())
    }
}

/// Gradient blocks shaped like a [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub(crate) blocks: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Gradients { blocks: store.blocks.iter().map(|b| vec![0.0; b.value.len()]).collect() }
    }

    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.blocks[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.blocks[id.0]
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.blocks.iter_mut().zip(&other.blocks) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, f: f64) {
        for a in &mut self.blocks {
            for x in a.iter_mut() {
                *x *= f;
            }
        }
    }

    pub fn norm(&self) -> f64 {
        self.blocks.iter().flatten().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.blocks.iter().flatten().all(|x| x.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> (ParamStore, ParamId) {
        let mut s = ParamStore::new();
        let id = s.add("w", &[3], vec![1.0, -2.0, 0.5]);
        (s, id)
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let (mut s, id) = store();
        let g = Gradients::zeros_like(&s);
        for _ in 0..5 {
            s.adam_step(&g, &AdamConfig::default()).unwrap();
        }
        assert_eq!(s.value(id), &[1.0, -2.0, 0.5]);
    }

    #[test]
    fn zero_learning_rate_is_identity() {
        let (mut s, id) = store();
        let mut g = Gradients::zeros_like(&s);
        g.get_mut(id).copy_from_slice(&[0.3, -7.0, 1e3]);
        let cfg = AdamConfig { lr: 0.0, ..Default::default() };
        s.adam_step(&g, &cfg).unwrap();
        assert_eq!(s.value(id), &[1.0, -2.0, 0.5]);
    }

    #[test]
    fn constant_gradient_steps_are_bounded_by_lr() {
        let (mut s, id) = store();
        let mut g = Gradients::zeros_like(&s);
        g.get_mut(id).copy_from_slice(&[0.3, -7.0, 1e-3]);
        let cfg = AdamConfig { lr: 0.01, ..Default::default() };
        let mut prev = s.value(id).to_vec();
        for _ in 0..500 {
            s.adam_step(&g, &cfg).unwrap();
            let now = s.value(id).to_vec();
            for i in 0..3 {
                let d = now[i] - prev[i];
                assert!(d.abs() <= cfg.lr * (1.0 + cfg.eps), "{d}");
                // moves against the gradient sign
                assert!(d * g.get(id)[i] < 0.0);
            }
            prev = now;
        }
        // with a constant gradient the bias-corrected ratio is exactly sign-like
        let before = s.value(id).to_vec();
        s.adam_step(&g, &cfg).unwrap();
        let d0 = s.value(id)[0] - before[0];
        assert!((d0 + cfg.lr).abs() < 1e-6);
    }

    #[test]
    fn non_finite_gradient_is_rejected_without_update() {
        let (mut s, id) = store();
        let mut g = Gradients::zeros_like(&s);
        g.get_mut(id)[1] = f64::NAN;
        assert!(matches!(
            s.adam_step(&g, &AdamConfig::default()),
            Err(Error::NonFiniteGradient(_))
        ));
        assert_eq!(s.adam_steps_taken(), 0);
        assert_eq!(s.value(id), &[1.0, -2.0, 0.5]);
    }
}
