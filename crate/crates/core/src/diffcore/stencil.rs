//! Forward and adjoint kernels of the latent 1D wave stencil.
//!
//! The state vector is `z = [u; v]` with `G` entries each. `v` lives on the
//! half step, so one step reads `u^n, v^{n-1/2}` and writes `u^{n+1}, v^{n+1/2}`.

/// Scalar constants of the latent scheme.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StencilConsts {
    pub dx: f64,
    pub c0: f64,
    pub dt: f64,
    /// Angular frequency of the tonal forcing carrier.
    pub omega: f64,
}

impl StencilConsts {
    /// Largest speed multiplier the explicit scheme tolerates.
    pub fn max_speed_multiplier(&self) -> f64 {
        self.dx / (self.c0 * self.dt)
    }
}

#[inline]
fn laplacian(u: &[f64], j: usize, inv_dx2: f64) -> f64 {
    (u[j + 1] - 2.0 * u[j] + u[j - 1]) * inv_dx2
}

/// One leapfrog step. Endpoints are pinned to zero.
pub fn step_forward(
    k: &StencilConsts,
    z: &[f64],
    c: &[f64],
    l: &[f64],
    s: &[f64],
    t: f64,
    out: &mut [f64],
) {
    let g = c.len();
    let (u, v) = z.split_at(g);
    let (uo, vo) = out.split_at_mut(g);
    let inv_dx2 = 1.0 / (k.dx * k.dx);
    let drive = (k.omega * t).sin();
    let half = 0.5 * k.dt;
    uo[0] = 0.0;
    vo[0] = 0.0;
    uo[g - 1] = 0.0;
    vo[g - 1] = 0.0;
    for j in 1..g - 1 {
        let kappa = (k.c0 * c[j]).powi(2);
        let a = 1.0 / (1.0 + half * l[j]);
        let vn = a * ((1.0 - half * l[j]) * v[j] + k.dt * (kappa * laplacian(u, j, inv_dx2) + s[j] * drive));
        vo[j] = vn;
        uo[j] = u[j] + k.dt * vn;
    }
}

/// Adjoint of [`step_forward`]. `out` is the forward result, `gout` its
/// adjoint. Each gradient slot is optional and accumulated into.
#[allow(clippy::too_many_arguments)]
pub fn step_backward(
    k: &StencilConsts,
    z: &[f64],
    c: &[f64],
    l: &[f64],
    t: f64,
    out: &[f64],
    gout: &[f64],
    mut gz: Option<&mut [f64]>,
    mut gc: Option<&mut [f64]>,
    mut gl: Option<&mut [f64]>,
    mut gs: Option<&mut [f64]>,
) {
    let g = c.len();
    let (u, v) = z.split_at(g);
    let vo = &out[g..];
    let (gu_out, gv_out) = gout.split_at(g);
    let inv_dx2 = 1.0 / (k.dx * k.dx);
    let drive = (k.omega * t).sin();
    let half = 0.5 * k.dt;
    for j in 1..g - 1 {
        // u' = u + dt v'  feeds back into the adjoint of v'
        let gvn = gv_out[j] + k.dt * gu_out[j];
        let a = 1.0 / (1.0 + half * l[j]);
        let lap = laplacian(u, j, inv_dx2);
        let kappa = (k.c0 * c[j]).powi(2);
        if let Some(gz) = gz.as_deref_mut() {
            let (gu, gv) = gz.split_at_mut(g);
            gu[j] += gu_out[j];
            gv[j] += gvn * a * (1.0 - half * l[j]);
            let w = gvn * a * k.dt * kappa * inv_dx2;
            gu[j - 1] += w;
            gu[j] -= 2.0 * w;
            gu[j + 1] += w;
        }
        if let Some(gc) = gc.as_deref_mut() {
            gc[j] += gvn * a * k.dt * 2.0 * k.c0 * k.c0 * c[j] * lap;
        }
        if let Some(gl) = gl.as_deref_mut() {
            gl[j] -= gvn * half * a * (vo[j] + v[j]);
        }
        if let Some(gs) = gs.as_deref_mut() {
            gs[j] += gvn * a * k.dt * drive;
        }
    }
}

/// Weighted latent energy `dx Σ w (v² + (c0 D⁺u)²)`.
pub fn energy_forward(k: &StencilConsts, z: &[f64], w: &[f64]) -> f64 {
    let g = w.len();
    let (u, v) = z.split_at(g);
    let mut acc = 0.0;
    for j in 0..g {
        let mut e = v[j] * v[j];
        if j + 1 < g {
            let q = k.c0 * (u[j + 1] - u[j]) / k.dx;
            e += q * q;
        }
        acc += w[j] * e;
    }
    acc * k.dx
}

pub fn energy_backward(
    k: &StencilConsts,
    z: &[f64],
    w: &[f64],
    gout: f64,
    mut gz: Option<&mut [f64]>,
    mut gw: Option<&mut [f64]>,
) {
    let g = w.len();
    let (u, v) = z.split_at(g);
    for j in 0..g {
        let q = if j + 1 < g { k.c0 * (u[j + 1] - u[j]) / k.dx } else { 0.0 };
        if let Some(gw) = gw.as_deref_mut() {
            gw[j] += gout * k.dx * (v[j] * v[j] + q * q);
        }
        if let Some(gz) = gz.as_deref_mut() {
            let (gu, gv) = gz.split_at_mut(g);
            gv[j] += gout * k.dx * w[j] * 2.0 * v[j];
            if j + 1 < g {
                let d = gout * k.dx * w[j] * 2.0 * q * k.c0 / k.dx;
                gu[j + 1] += d;
                gu[j] -= d;
            }
        }
    }
}

/// Time-centred energy `dx [Σ v'²/C² + c0² Σ D⁺u·D⁺u']` between consecutive
/// states. For a time-constant speed field, zero forcing and `L = 0` one
/// step of [`step_forward`] conserves it exactly; with `L ≥ 0` it does not grow.
pub fn symmetric_energy(k: &StencilConsts, c: &[f64], z_prev: &[f64], z_next: &[f64]) -> f64 {
    let g = c.len();
    let up = &z_prev[..g];
    let (un, vn) = z_next.split_at(g);
    let mut acc = 0.0;
    for j in 1..g - 1 {
        acc += vn[j] * vn[j] / (c[j] * c[j]);
    }
    let kappa = k.c0 * k.c0 / (k.dx * k.dx);
    for j in 0..g - 1 {
        acc += kappa * (up[j + 1] - up[j]) * (un[j + 1] - un[j]);
    }
    acc * k.dx
}

/// Residual of the discrete latent equations between two stored states:
/// the largest violation of `v'` and `u'` update rules, scaled by the
/// magnitude of the state.
pub fn step_residual(
    k: &StencilConsts,
    z: &[f64],
    c: &[f64],
    l: &[f64],
    s: &[f64],
    t: f64,
    z_next: &[f64],
) -> f64 {
    let g = c.len();
    let (u, v) = z.split_at(g);
    let (un, vn) = z_next.split_at(g);
    let inv_dx2 = 1.0 / (k.dx * k.dx);
    let drive = (k.omega * t).sin();
    let scale = z.iter().chain(z_next).fold(1e-300f64, |m, x| m.max(x.abs()));
    let mut worst: f64 = un[0].abs().max(un[g - 1].abs()).max(vn[0].abs()).max(vn[g - 1].abs());
    for j in 1..g - 1 {
        let kappa = (k.c0 * c[j]).powi(2);
        // (v' - v)/dt = κ Δu - L (v' + v)/2 + s sin(ωt)
        let r_v = (vn[j] - v[j]) / k.dt - kappa * laplacian(u, j, inv_dx2) + l[j] * 0.5 * (vn[j] + v[j])
            - s[j] * drive;
        let r_u = (un[j] - u[j]) / k.dt - vn[j];
        worst = worst.max((r_v * k.dt).abs()).max((r_u * k.dt).abs());
    }
    worst / scale
}
