use super::params::{Gradients, ParamId, ParamStore};
use super::stencil::{self, StencilConsts};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct ConvGeom {
    cin: usize,
    cout: usize,
    k: usize,
    stride: usize,
    pad: usize,
    /// Input extents (h, w). For 1D convolutions `h == 1`.
    ih: usize,
    iw: usize,
    oh: usize,
    ow: usize,
}

#[derive(Clone, Debug)]
enum Op {
    Input,
    Param(ParamId),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    Lerp(Var, Var, f64),
    Affine { x: Var, w: Var, b: Var },
    Conv { x: Var, w: Var, b: Var, geom: ConvGeom, two_d: bool },
    AvgPool { x: Var, k: usize, c: usize, h: usize, w: usize },
    Tanh(Var),
    Softplus(Var),
    Square(Var),
    Sum(Var),
    Dot(Var, Var),
    Concat(Vec<Var>),
    Slice { x: Var, start: usize },
    Reshape(Var),
    LatentStep { z: Var, c: Var, l: Var, s: Var, t: f64, k: StencilConsts },
    LatentSegment { z: Var, cs: Vec<Var>, l: Var, s: Var, t0: f64, k: StencilConsts },
    LatentEnergy { z: Var, w: Var, k: StencilConsts },
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    value: Vec<f64>,
    shape: Vec<usize>,
    len: usize,
    needs_grad: bool,
}

/// Append-only computation record. Nodes can only reference earlier nodes,
/// so insertion order is a topological order.
pub struct Tape<'p> {
    store: &'p ParamStore,
    nodes: Vec<Node>,
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn mismatch(what: &str, a: &[usize], b: &[usize]) -> Error {
    Error::ShapeMismatch(format!("{what}: {a:?} vs {b:?}"))
}

#[inline]
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl<'p> Tape<'p> {
    pub fn new(store: &'p ParamStore) -> Self {
        Tape { store, nodes: Vec::new() }
    }

    pub fn store(&self) -> &'p ParamStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[f64] {
        let n = &self.nodes[v.0];
        match n.op {
            Op::Param(id) => self.store.value(id),
            _ => &n.value,
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[0]
    }

    fn check(&self, v: Var) -> Result<()> {
        if v.0 >= self.nodes.len() {
            return Err(Error::GraphCycle(v.0));
        }
        Ok(())
    }

    fn push(&mut self, op: Op, value: Vec<f64>, shape: Vec<usize>, needs_grad: bool) -> Var {
        let len = numel(&shape);
        debug_assert!(value.len() == len || matches!(op, Op::Param(_)));
        self.nodes.push(Node { op, value, shape, len, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Data that does not receive gradients.
    pub fn input(&mut self, shape: &[usize], data: Vec<f64>) -> Result<Var> {
        if numel(shape) != data.len() {
            return Err(Error::ShapeMismatch(format!("input of {} values for shape {shape:?}", data.len())));
        }
        Ok(self.push(Op::Input, data, shape.to_vec(), false))
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        let shape = self.store.block(id).shape.clone();
        self.push(Op::Param(id), Vec::new(), shape, true)
    }

    fn same_shape(&self, what: &str, a: Var, b: Var) -> Result<()> {
        self.check(a)?;
        self.check(b)?;
        if self.nodes[a.0].len != self.nodes[b.0].len {
            return Err(mismatch(what, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn zip(&mut self, what: &str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        self.same_shape(what, a, b)?;
        let value = self.value(a).iter().zip(self.value(b)).map(|(x, y)| f(*x, *y)).collect();
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(op, value, self.shape(a).to_vec(), ng))
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Result<Var> {
        self.check(a)?;
        let value = self.value(a).iter().map(|x| f(*x)).collect();
        let ng = self.ng(a);
        Ok(self.push(op, value, self.shape(a).to_vec(), ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, f: f64) -> Result<Var> {
        self.map(a, |x| f * x, Op::Scale(a, f))
    }

    pub fn offset(&mut self, a: Var, c: f64) -> Result<Var> {
        self.map(a, |x| x + c, Op::Offset(a))
    }

    /// `(1 - f) a + f b`.
    pub fn lerp(&mut self, a: Var, b: Var, f: f64) -> Result<Var> {
        self.zip("lerp", a, b, |x, y| (1.0 - f) * x + f * y, Op::Lerp(a, b, f))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.map(a, f64::tanh, Op::Tanh(a))
    }

    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        self.map(a, softplus, Op::Softplus(a))
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.map(a, |x| x * x, Op::Square(a))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let s = self.value(a).iter().sum();
        let ng = self.ng(a);
        Ok(self.push(Op::Sum(a), vec![s], vec![1], ng))
    }

    /// Weighted sum `Σ a_i b_i`.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("dot", a, b)?;
        let s = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x * y).sum();
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Op::Dot(a, b), vec![s], vec![1], ng))
    }

    /// `W x + b` with `W` of shape `[out, in]`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        self.check(x)?;
        self.check(w)?;
        self.check(b)?;
        let ws = self.shape(w).to_vec();
        if ws.len() != 2 || ws[1] != self.nodes[x.0].len || ws[0] != self.nodes[b.0].len {
            return Err(mismatch("affine", &ws, self.shape(x)));
        }
        let (no, ni) = (ws[0], ws[1]);
        let xv = self.value(x);
        let wv = self.value(w);
        let mut out = self.value(b).to_vec();
        for (o, acc) in out.iter_mut().enumerate() {
            let row = &wv[o * ni..(o + 1) * ni];
            *acc += row.iter().zip(xv).map(|(p, q)| p * q).sum::<f64>();
        }
        let ng = self.ng(x) || self.ng(w) || self.ng(b);
        Ok(self.push(Op::Affine { x, w, b }, out, vec![no], ng))
    }

    /// 1D convolution: `x` is `[cin, n]`, `w` is `[cout, cin, k]`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        self.check(x)?;
        self.check(w)?;
        self.check(b)?;
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 2 || ws.len() != 3 || ws[1] != xs[0] || self.nodes[b.0].len != ws[0] {
            return Err(mismatch("conv1d", &xs, &ws));
        }
        self.conv(x, w, b, stride, pad, [ws[0], xs[0], ws[2], 1, xs[1]], false)
    }

    /// 2D convolution: `x` is `[cin, h, w]`, `w` is `[cout, cin, k, k]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        self.check(x)?;
        self.check(w)?;
        self.check(b)?;
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 3 || ws.len() != 4 || ws[1] != xs[0] || ws[2] != ws[3] || self.nodes[b.0].len != ws[0] {
            return Err(mismatch("conv2d", &xs, &ws));
        }
        self.conv(x, w, b, stride, pad, [ws[0], xs[0], ws[2], xs[1], xs[2]], true)
    }

    #[allow(clippy::too_many_arguments)]
    fn conv(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize, dims: [usize; 5], two_d: bool) -> Result<Var> {
        let [cout, cin, k, ih, iw] = dims;
        let kh = if two_d { k } else { 1 };
        let pad_h = if two_d { pad } else { 0 };
        if stride == 0 || ih + 2 * pad_h < kh || iw + 2 * pad < k {
            return Err(Error::ShapeMismatch(format!("conv kernel {k} does not fit input {ih}x{iw}")));
        }
        let oh = if two_d { (ih + 2 * pad - k) / stride + 1 } else { 1 };
        let ow = (iw + 2 * pad - k) / stride + 1;
        let geom = ConvGeom { cin, cout, k, stride, pad, ih, iw, oh, ow };
        let xv = self.value(x);
        let wv = self.value(w);
        let bv = self.value(b);
        let mut out = vec![0.0; cout * oh * ow];
        conv_forward(&geom, two_d, xv, wv, bv, &mut out);
        let shape = if two_d { vec![cout, oh, ow] } else { vec![cout, ow] };
        let ng = self.ng(x) || self.ng(w) || self.ng(b);
        Ok(self.push(Op::Conv { x, w, b, geom, two_d }, out, shape, ng))
    }

    /// Non-overlapping `k×k` average pooling of a `[c, h, w]` tensor.
    pub fn avg_pool2d(&mut self, x: Var, k: usize) -> Result<Var> {
        self.check(x)?;
        let xs = self.shape(x).to_vec();
        if xs.len() != 3 || k == 0 || xs[1] % k != 0 || xs[2] % k != 0 {
            return Err(Error::ShapeMismatch(format!("avg_pool2d({k}) of {xs:?}")));
        }
        let (c, h, w) = (xs[0], xs[1], xs[2]);
        let (oh, ow) = (h / k, w / k);
        let xv = self.value(x);
        let mut out = vec![0.0; c * oh * ow];
        let inv = 1.0 / (k * k) as f64;
        for ch in 0..c {
            for y in 0..h {
                for xx in 0..w {
                    out[(ch * oh + y / k) * ow + xx / k] += xv[(ch * h + y) * w + xx] * inv;
                }
            }
        }
        let ng = self.ng(x);
        Ok(self.push(Op::AvgPool { x, k, c, h, w }, out, vec![c, oh, ow], ng))
    }

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let mut value = Vec::new();
        let mut ng = false;
        for &p in parts {
            self.check(p)?;
            value.extend_from_slice(self.value(p));
            ng |= self.ng(p);
        }
        let n = value.len();
        Ok(self.push(Op::Concat(parts.to_vec()), value, vec![n], ng))
    }

    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        self.check(x)?;
        if start + len > self.nodes[x.0].len {
            return Err(Error::ShapeMismatch(format!(
                "slice {start}..{} of length {}",
                start + len,
                self.nodes[x.0].len
            )));
        }
        let value = self.value(x)[start..start + len].to_vec();
        let ng = self.ng(x);
        Ok(self.push(Op::Slice { x, start }, value, vec![len], ng))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        self.check(x)?;
        if numel(shape) != self.nodes[x.0].len {
            return Err(mismatch("reshape", self.shape(x), shape));
        }
        let value = self.value(x).to_vec();
        let ng = self.ng(x);
        Ok(self.push(Op::Reshape(x), value, shape.to_vec(), ng))
    }

    fn latent_args(&self, z: Var, c: Var, l: Var, s: Var) -> Result<usize> {
        for v in [z, c, l, s] {
            self.check(v)?;
        }
        let g = self.nodes[c.0].len;
        if g < 3 || self.nodes[z.0].len != 2 * g || self.nodes[l.0].len != g || self.nodes[s.0].len != g {
            return Err(Error::ShapeMismatch(format!(
                "latent step with state {} and fields {}/{}/{}",
                self.nodes[z.0].len, g, self.nodes[l.0].len, self.nodes[s.0].len
            )));
        }
        Ok(g)
    }

    fn cfl_guard(&self, k: &StencilConsts, c: Var) -> Result<()> {
        let limit = k.max_speed_multiplier();
        let worst = self.value(c).iter().fold(0.0f64, |m, x| m.max(*x));
        if !(worst <= limit) {
            return Err(Error::NumericalBlowup(format!(
                "latent speed multiplier {worst:.4} exceeds stability limit {limit:.4}"
            )));
        }
        Ok(())
    }

    /// One leapfrog step of the latent wave equation as a single node.
    pub fn latent_step(&mut self, z: Var, c: Var, l: Var, s: Var, t: f64, k: StencilConsts) -> Result<Var> {
        let g = self.latent_args(z, c, l, s)?;
        self.cfl_guard(&k, c)?;
        let mut out = vec![0.0; 2 * g];
        stencil::step_forward(&k, self.value(z), self.value(c), self.value(l), self.value(s), t, &mut out);
        if out.iter().any(|x| !x.is_finite()) {
            return Err(Error::NumericalBlowup(format!("latent state non-finite at t={t}")));
        }
        let ng = [z, c, l, s].iter().any(|v| self.ng(*v));
        Ok(self.push(Op::LatentStep { z, c, l, s, t, k }, out, vec![2 * g], ng))
    }

    /// Several latent steps as one node that keeps only its input state and
    /// recomputes the intermediate states during the backward pass.
    pub fn latent_segment(&mut self, z: Var, cs: &[Var], l: Var, s: Var, t0: f64, k: StencilConsts) -> Result<Var> {
        if cs.is_empty() {
            return Err(Error::ShapeMismatch("latent segment without steps".into()));
        }
        let g = self.latent_args(z, cs[0], l, s)?;
        for &c in cs {
            self.check(c)?;
            if self.nodes[c.0].len != g {
                return Err(mismatch("latent segment speed field", self.shape(c), &[g]));
            }
            self.cfl_guard(&k, c)?;
        }
        let mut cur = self.value(z).to_vec();
        let mut next = vec![0.0; 2 * g];
        for (i, &c) in cs.iter().enumerate() {
            let t = t0 + i as f64 * k.dt;
            stencil::step_forward(&k, &cur, self.value(c), self.value(l), self.value(s), t, &mut next);
            std::mem::swap(&mut cur, &mut next);
        }
        if cur.iter().any(|x| !x.is_finite()) {
            return Err(Error::NumericalBlowup("latent segment non-finite".into()));
        }
        let ng = self.ng(z) || self.ng(l) || self.ng(s) || cs.iter().any(|c| self.ng(*c));
        Ok(self.push(Op::LatentSegment { z, cs: cs.to_vec(), l, s, t0, k }, cur, vec![2 * g], ng))
    }

    /// Weighted latent energy of one state.
    pub fn latent_energy(&mut self, z: Var, w: Var, k: StencilConsts) -> Result<Var> {
        self.check(z)?;
        self.check(w)?;
        if self.nodes[z.0].len != 2 * self.nodes[w.0].len {
            return Err(mismatch("latent energy", self.shape(z), self.shape(w)));
        }
        let e = stencil::energy_forward(&k, self.value(z), self.value(w));
        let ng = self.ng(z) || self.ng(w);
        Ok(self.push(Op::LatentEnergy { z, w, k }, vec![e], vec![1], ng))
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let mut grads = Gradients::zeros_like(self.store);
        self.backward_into(loss, &mut grads)?;
        Ok(grads)
    }

    /// Reverse sweep that accumulates into existing gradient blocks.
    pub fn backward_into(&self, loss: Var, grads: &mut Gradients) -> Result<()> {
        self.check(loss)?;
        if self.nodes[loss.0].len != 1 {
            return Err(Error::ShapeMismatch(format!("backward from non-scalar {:?}", self.shape(loss))));
        }
        if grads.blocks.len() != self.store.len() {
            return Err(Error::ShapeMismatch("gradient buffer from another store".into()));
        }
        if !self.nodes[loss.0].needs_grad {
            return Ok(());
        }
        let mut adj: Vec<Vec<f64>> = vec![Vec::new(); loss.0 + 1];
        match self.nodes[loss.0].op {
            Op::Param(id) => grads.blocks[id.0][0] += 1.0,
            _ => adj[loss.0] = vec![1.0],
        }
        for i in (0..=loss.0).rev() {
            if adj[i].is_empty() {
                continue;
            }
            let g = std::mem::take(&mut adj[i]);
            self.backprop(i, &g, &mut adj, grads);
        }
        Ok(())
    }

    fn backprop(&self, i: usize, g: &[f64], adj: &mut [Vec<f64>], grads: &mut Gradients) {
        let node = &self.nodes[i];
        let mut acc = Acc { nodes: &self.nodes, adj, grads };
        match &node.op {
            Op::Input | Op::Param(_) => {}
            Op::Add(a, b) => {
                acc.with(*a, |ga| axpy(ga, 1.0, g));
                acc.with(*b, |gb| axpy(gb, 1.0, g));
            }
            Op::Sub(a, b) => {
                acc.with(*a, |ga| axpy(ga, 1.0, g));
                acc.with(*b, |gb| axpy(gb, -1.0, g));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                acc.with(*a, |ga| ga.iter_mut().zip(g).zip(bv).for_each(|((x, gi), y)| *x += gi * y));
                acc.with(*b, |gb| gb.iter_mut().zip(g).zip(av).for_each(|((x, gi), y)| *x += gi * y));
            }
            Op::Scale(a, f) => acc.with(*a, |ga| axpy(ga, *f, g)),
            Op::Offset(a) | Op::Reshape(a) => acc.with(*a, |ga| axpy(ga, 1.0, g)),
            Op::Lerp(a, b, f) => {
                acc.with(*a, |ga| axpy(ga, 1.0 - f, g));
                acc.with(*b, |gb| axpy(gb, *f, g));
            }
            Op::Tanh(a) => {
                let y = &node.value;
                acc.with(*a, |ga| {
                    for j in 0..ga.len() {
                        ga[j] += g[j] * (1.0 - y[j] * y[j]);
                    }
                })
            }
            Op::Softplus(a) => {
                let x = self.value(*a);
                acc.with(*a, |ga| {
                    for j in 0..ga.len() {
                        ga[j] += g[j] * sigmoid(x[j]);
                    }
                })
            }
            Op::Square(a) => {
                let x = self.value(*a);
                acc.with(*a, |ga| {
                    for j in 0..ga.len() {
                        ga[j] += 2.0 * g[j] * x[j];
                    }
                })
            }
            Op::Sum(a) => acc.with(*a, |ga| ga.iter_mut().for_each(|x| *x += g[0])),
            Op::Dot(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                acc.with(*a, |ga| axpy(ga, g[0], bv));
                acc.with(*b, |gb| axpy(gb, g[0], av));
            }
            Op::Affine { x, w, b } => {
                let xv = self.value(*x);
                let wv = self.value(*w);
                let ni = xv.len();
                acc.with(*b, |gb| axpy(gb, 1.0, g));
                acc.with(*w, |gw| {
                    for (o, go) in g.iter().enumerate() {
                        if *go != 0.0 {
                            axpy(&mut gw[o * ni..(o + 1) * ni], *go, xv);
                        }
                    }
                });
                acc.with(*x, |gx| {
                    for (o, go) in g.iter().enumerate() {
                        if *go != 0.0 {
                            axpy(gx, *go, &wv[o * ni..(o + 1) * ni]);
                        }
                    }
                });
            }
            Op::Conv { x, w, b, geom, two_d } => {
                let xv = self.value(*x);
                let wv = self.value(*w);
                acc.with(*b, |gb| {
                    let per = geom.oh * geom.ow;
                    for (o, gbo) in gb.iter_mut().enumerate() {
                        *gbo += g[o * per..(o + 1) * per].iter().sum::<f64>();
                    }
                });
                acc.with(*w, |gw| conv_backward_weights(geom, *two_d, xv, g, gw));
                acc.with(*x, |gx| conv_backward_input(geom, *two_d, wv, g, gx));
            }
            Op::AvgPool { x, k, c, h, w } => {
                let (oh, ow) = (h / k, w / k);
                let inv = 1.0 / (k * k) as f64;
                acc.with(*x, |gx| {
                    for ch in 0..*c {
                        for y in 0..*h {
                            for xx in 0..*w {
                                gx[(ch * h + y) * w + xx] += g[(ch * oh + y / k) * ow + xx / k] * inv;
                            }
                        }
                    }
                });
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for p in parts {
                    let n = self.nodes[p.0].len;
                    acc.with(*p, |gp| axpy(gp, 1.0, &g[off..off + n]));
                    off += n;
                }
            }
            Op::Slice { x, start } => {
                acc.with(*x, |gx| axpy(&mut gx[*start..*start + g.len()], 1.0, g));
            }
            Op::LatentStep { z, c, l, s, t, k } => {
                let (zv, cv, lv) = (self.value(*z), self.value(*c), self.value(*l));
                let mut bufs = acc.take(&[*z, *c, *l, *s]);
                let [bz, bc, bl, bs] = &mut bufs[..] else { unreachable!() };
                stencil::step_backward(
                    k,
                    zv,
                    cv,
                    lv,
                    *t,
                    &node.value,
                    g,
                    bz.as_deref_mut(),
                    bc.as_deref_mut(),
                    bl.as_deref_mut(),
                    bs.as_deref_mut(),
                );
                acc.put(&[*z, *c, *l, *s], bufs);
            }
            Op::LatentSegment { z, cs, l, s, t0, k } => {
                let (lv, sv) = (self.value(*l), self.value(*s));
                let n = cs.len();
                let dim = node.len;
                let mut states = Vec::with_capacity(n + 1);
                states.push(self.value(*z).to_vec());
                for (i, c) in cs.iter().enumerate() {
                    let mut next = vec![0.0; dim];
                    stencil::step_forward(k, &states[i], self.value(*c), lv, sv, t0 + i as f64 * k.dt, &mut next);
                    states.push(next);
                }
                let mut gl = vec![0.0; lv.len()];
                let mut gs = vec![0.0; sv.len()];
                let mut gcur = g.to_vec();
                for i in (0..n).rev() {
                    let mut gprev = vec![0.0; dim];
                    let mut gc = vec![0.0; lv.len()];
                    stencil::step_backward(
                        k,
                        &states[i],
                        self.value(cs[i]),
                        lv,
                        t0 + i as f64 * k.dt,
                        &states[i + 1],
                        &gcur,
                        Some(&mut gprev),
                        Some(&mut gc),
                        Some(&mut gl),
                        Some(&mut gs),
                    );
                    acc.with(cs[i], |x| axpy(x, 1.0, &gc));
                    gcur = gprev;
                }
                acc.with(*z, |x| axpy(x, 1.0, &gcur));
                acc.with(*l, |x| axpy(x, 1.0, &gl));
                acc.with(*s, |x| axpy(x, 1.0, &gs));
            }
            Op::LatentEnergy { z, w, k } => {
                let (zv, wv) = (self.value(*z), self.value(*w));
                let mut bufs = acc.take(&[*z, *w]);
                let [bz, bw] = &mut bufs[..] else { unreachable!() };
                stencil::energy_backward(k, zv, wv, g[0], bz.as_deref_mut(), bw.as_deref_mut());
                acc.put(&[*z, *w], bufs);
            }
        }
    }
}

/// Routes adjoint contributions either to interior node buffers or to the
/// parameter gradient blocks.
struct Acc<'a> {
    nodes: &'a [Node],
    adj: &'a mut [Vec<f64>],
    grads: &'a mut Gradients,
}

impl Acc<'_> {
    fn with(&mut self, v: Var, f: impl FnOnce(&mut [f64])) {
        let n = &self.nodes[v.0];
        if !n.needs_grad {
            return;
        }
        match n.op {
            Op::Param(id) => f(&mut self.grads.blocks[id.0]),
            _ => {
                let slot = &mut self.adj[v.0];
                if slot.is_empty() {
                    *slot = vec![0.0; n.len];
                }
                f(slot)
            }
        }
    }

    /// Detach private zeroed buffers for several inputs at once. Inputs
    /// that do not need gradients get `None`.
    fn take(&mut self, vars: &[Var]) -> Vec<Option<Vec<f64>>> {
        vars.iter()
            .map(|v| {
                let n = &self.nodes[v.0];
                n.needs_grad.then(|| vec![0.0; n.len])
            })
            .collect()
    }

    fn put(&mut self, vars: &[Var], bufs: Vec<Option<Vec<f64>>>) {
        for (v, b) in vars.iter().zip(bufs) {
            if let Some(b) = b {
                self.with(*v, |x| axpy(x, 1.0, &b));
            }
        }
    }
}

#[inline]
fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Visits every (output, input, weight) triple of a convolution whose input
/// index is inside the unpadded image.
#[inline]
fn conv_visit(g: &ConvGeom, two_d: bool, mut f: impl FnMut(usize, usize, usize)) {
    let kh = if two_d { g.k } else { 1 };
    let pad_h = if two_d { g.pad } else { 0 };
    for o in 0..g.cout {
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let oi = (o * g.oh + oy) * g.ow + ox;
                for c in 0..g.cin {
                    for ky in 0..kh {
                        let iy = (oy * g.stride + ky) as isize - pad_h as isize;
                        if iy < 0 || iy >= g.ih as isize {
                            continue;
                        }
                        for kx in 0..g.k {
                            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                            if ix < 0 || ix >= g.iw as isize {
                                continue;
                            }
                            let xi = (c * g.ih + iy as usize) * g.iw + ix as usize;
                            let wi = ((o * g.cin + c) * kh + ky) * g.k + kx;
                            f(oi, xi, wi);
                        }
                    }
                }
            }
        }
    }
}

fn conv_forward(g: &ConvGeom, two_d: bool, x: &[f64], w: &[f64], b: &[f64], out: &mut [f64]) {
    let per = g.oh * g.ow;
    for (o, chunk) in out.chunks_mut(per).enumerate() {
        chunk.fill(b[o]);
    }
    conv_visit(g, two_d, |oi, xi, wi| out[oi] += w[wi] * x[xi]);
}

fn conv_backward_weights(g: &ConvGeom, two_d: bool, x: &[f64], gout: &[f64], gw: &mut [f64]) {
    conv_visit(g, two_d, |oi, xi, wi| gw[wi] += gout[oi] * x[xi]);
}

fn conv_backward_input(g: &ConvGeom, two_d: bool, w: &[f64], gout: &[f64], gx: &mut [f64]) {
    conv_visit(g, two_d, |oi, xi, wi| gx[xi] += gout[oi] * w[wi]);
}
