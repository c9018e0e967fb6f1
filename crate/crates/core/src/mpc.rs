//! Receding-horizon control with a trained surrogate as the planning model.

use std::fmt::Write as _;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::aem::{PlanCode, Surrogate};
use crate::env::{EnvConfig, Environment};
use crate::error::{Error, Result};
use crate::kv::{self, KvMap};
use crate::robot::{ActionSpec, DesignState, Robot, SpaceName};
use crate::train::derive_seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Task {
    /// Drive σ toward zero.
    Suppress,
    /// Drive σ toward an unreachable high reference.
    Focus,
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Task::Suppress => "suppress",
            Task::Focus => "focus",
        })
    }
}

impl std::str::FromStr for Task {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "suppress" => Ok(Task::Suppress),
            "focus" => Ok(Task::Focus),
            _ => Err(Error::Config(format!("unknown task `{s}` (expected suppress or focus)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MpcConfig {
    /// Planning horizon in actions.
    pub horizon: usize,
    pub candidates: usize,
    pub elite_fraction: f64,
    /// Cross-entropy refinement rounds; 1 is plain random shooting.
    pub iterations: usize,
    /// Weight of the action penalty. Actions enter it divided by their bounds.
    pub beta: f64,
    pub task: Task,
    /// Focus reference in physical σ units.
    pub sigma_hi: f64,
    /// Initial sampling deviation as a fraction of each action bound.
    pub init_std: f64,
}

impl Default for MpcConfig {
    fn default() -> Self {
        MpcConfig {
            horizon: 5,
            candidates: 128,
            elite_fraction: 0.1,
            iterations: 3,
            beta: 1e-3,
            task: Task::Suppress,
            sigma_hi: 1.0,
            init_std: 0.6,
        }
    }
}

impl MpcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 || self.candidates < 2 || self.iterations == 0 {
            return Err(Error::Config("MPC needs horizon >= 1, candidates >= 2 and iterations >= 1".into()));
        }
        if !(self.elite_fraction > 0.0 && self.elite_fraction < 1.0) {
            return Err(Error::Config(format!("elite_fraction {} outside (0, 1)", self.elite_fraction)));
        }
        if !(self.beta >= 0.0) || !(self.init_std >= 0.0) || !self.sigma_hi.is_finite() {
            return Err(Error::Config("beta and init_std must be non-negative, sigma_hi finite".into()));
        }
        Ok(())
    }

    pub fn elites(&self) -> usize {
        ((self.candidates as f64 * self.elite_fraction).ceil() as usize).clamp(1, self.candidates)
    }

    pub fn from_kv(kv: &mut KvMap) -> Result<Self> {
        let mut c = MpcConfig::default();
        kv.take("mpc_horizon", &mut c.horizon)?;
        kv.take("mpc_candidates", &mut c.candidates)?;
        kv.take("mpc_elite_fraction", &mut c.elite_fraction)?;
        kv.take("mpc_iterations", &mut c.iterations)?;
        kv.take("mpc_beta", &mut c.beta)?;
        kv.take("mpc_init_std", &mut c.init_std)?;
        kv.take("sigma_hi", &mut c.sigma_hi)?;
        if let Some(t) = kv.take_raw("task") {
            c.task = t.parse()?;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn to_text(&self) -> String {
        kv::render([
            ("mpc_horizon", self.horizon.to_string()),
            ("mpc_candidates", self.candidates.to_string()),
            ("mpc_elite_fraction", format!("{:?}", self.elite_fraction)),
            ("mpc_iterations", self.iterations.to_string()),
            ("mpc_beta", format!("{:?}", self.beta)),
            ("mpc_init_std", format!("{:?}", self.init_std)),
            ("sigma_hi", format!("{:?}", self.sigma_hi)),
            ("task", self.task.to_string()),
        ])
    }
}

/// Reference σ* over `horizon` actions of `substeps` samples each.
pub fn reference_signal(task: Task, sigma_hi: f64, horizon: usize, substeps: usize) -> Vec<f64> {
    let v = match task {
        Task::Suppress => 0.0,
        Task::Focus => sigma_hi,
    };
    vec![v; horizon * substeps]
}

/// Outcome of one planning call.
#[derive(Clone, Debug, PartialEq)]
pub struct Plan {
    /// Best action sequence, `horizon` rows.
    pub sequence: Vec<Vec<f64>>,
    pub cost: f64,
    /// Best cost seen after each refinement round.
    pub best_costs: Vec<f64>,
}

impl Plan {
    pub fn first_action(&self) -> ActionSpec {
        ActionSpec { rates: self.sequence[0].clone() }
    }
}

/// Cross-entropy search over flat `horizon x dim` action sequences.
///
/// The first candidate of each round is the current mean. Candidates are
/// clipped componentwise to `bounds`; `cost` may return `f64::INFINITY` to
/// disqualify one.
pub fn cross_entropy<F>(
    cost: F,
    bounds: &[f64],
    mean: Vec<f64>,
    std: Vec<f64>,
    cfg: &MpcConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<f64>, f64, Vec<f64>)>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let dim = bounds.len();
    let n = mean.len();
    if n == 0 || n % dim != 0 || std.len() != n {
        return Err(Error::ShapeMismatch(format!("CEM mean of {n} values for action dim {dim}")));
    }
    let clip = |x: f64, j: usize| {
        let b = bounds[j % dim];
        x.clamp(-b, b)
    };
    let (mut mean, mut std) = (mean, std);
    let mut best: (Vec<f64>, f64) = (mean.iter().enumerate().map(|(j, x)| clip(*x, j)).collect(), f64::INFINITY);
    let mut history = Vec::with_capacity(cfg.iterations);
    let elites = cfg.elites();
    for _ in 0..cfg.iterations {
        let cands: Vec<Vec<f64>> = (0..cfg.candidates)
            .map(|k| {
                (0..n)
                    .map(|j| {
                        let z: f64 = rng.sample(StandardNormal);
                        let x = if k == 0 { mean[j] } else { mean[j] + std[j] * z };
                        clip(x, j)
                    })
                    .collect()
            })
            .collect();
        let costs: Vec<f64> = cands.par_iter().map(|c| cost(c)).map(|c| if c.is_nan() { f64::INFINITY } else { c }).collect();
        let mut order: Vec<usize> = (0..cands.len()).collect();
        order.sort_by(|a, b| costs[*a].total_cmp(&costs[*b]).then(a.cmp(b)));
        if costs[order[0]] < best.1 {
            best = (cands[order[0]].clone(), costs[order[0]]);
        }
        history.push(best.1);
        let top: Vec<&Vec<f64>> = order[..elites].iter().filter(|i| costs[**i].is_finite()).map(|i| &cands[*i]).collect();
        if top.is_empty() {
            continue;
        }
        let m = top.len() as f64;
        for j in 0..n {
            let mu = top.iter().map(|c| c[j]).sum::<f64>() / m;
            let var = top.iter().map(|c| (c[j] - mu).powi(2)).sum::<f64>() / m;
            mean[j] = mu;
            std[j] = var.sqrt();
        }
    }
    Ok((best.0, best.1, history))
}

/// Physical σ* in the model's normalized units.
fn normalized_reference(model: &Surrogate, cfg: &MpcConfig, substeps: usize) -> Vec<f64> {
    let s = model.norm().sigma_scale;
    reference_signal(cfg.task, cfg.sigma_hi / s, cfg.horizon, substeps)
}

/// Design at every action boundary of a sequence.
pub fn design_instants(robot: &Robot, d0: &DesignState, seq: &[f64], period: f64) -> Result<Vec<Vec<f64>>> {
    let dim = robot.dim();
    let mut d = d0.clone();
    let mut out = vec![d.to_flat()];
    for a in seq.chunks(dim) {
        d = robot.advance(&d, &ActionSpec { rates: a.to_vec() }, period)?;
        out.push(d.to_flat());
    }
    Ok(out)
}

/// Tracking cost of a candidate sequence under the surrogate.
#[allow(clippy::too_many_arguments)]
fn sequence_cost(
    model: &Surrogate,
    code: &PlanCode,
    robot: &Robot,
    d0: &DesignState,
    seq: &[f64],
    reference: &[f64],
    t0: f64,
    period: f64,
    substeps: usize,
    dt: f64,
    beta: f64,
) -> Result<f64> {
    let designs = design_instants(robot, d0, seq, period)?;
    let pred = model.predict_from_code(code, &designs, t0, substeps, reference.len())?;
    let track: f64 = pred.iter().zip(reference).map(|(p, r)| (p - r).powi(2)).sum::<f64>() * dt;
    let bounds = &robot.space.bounds;
    let effort: f64 = seq
        .iter()
        .enumerate()
        .map(|(j, a)| {
            let b = bounds[j % bounds.len()];
            if b > 0.0 {
                (a / b).powi(2)
            } else {
                0.0
            }
        })
        .sum::<f64>()
        * period;
    Ok(track + beta * effort)
}

/// Everything the planner needs about the environment.
#[derive(Clone, Debug)]
pub struct PlanContext<'a> {
    pub robot: &'a Robot,
    pub action_period: f64,
    pub substeps: usize,
    pub dt: f64,
}

/// Plan from the current observation; the returned sequence is clipped to
/// the action bounds.
pub fn plan(
    model: &Surrogate,
    ctx: &PlanContext<'_>,
    image: &[f64],
    design: &DesignState,
    t0: f64,
    cfg: &MpcConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Plan> {
    cfg.validate()?;
    let code = model.encode_for_planning(image)?;
    let reference = normalized_reference(model, cfg, ctx.substeps);
    let bounds = &ctx.robot.space.bounds;
    let n = cfg.horizon * bounds.len();
    let mean = vec![0.0; n];
    let std: Vec<f64> = (0..n).map(|j| cfg.init_std * bounds[j % bounds.len()]).collect();
    let cost = |seq: &[f64]| {
        sequence_cost(
            model,
            &code,
            ctx.robot,
            design,
            seq,
            &reference,
            t0,
            ctx.action_period,
            ctx.substeps,
            ctx.dt,
            cfg.beta,
        )
        .unwrap_or(f64::INFINITY)
    };
    let (best, cost, best_costs) = cross_entropy(cost, bounds, mean, std, cfg, rng)?;
    Ok(Plan { sequence: best.chunks(bounds.len()).map(|c| c.to_vec()).collect(), cost, best_costs })
}

/// Who chooses the actions in a closed-loop episode.
#[derive(Clone, Debug)]
pub enum Controller {
    Random,
    Mpc { model: Box<Surrogate>, config: MpcConfig },
}

impl Controller {
    pub fn label(&self) -> String {
        match self {
            Controller::Random => "random".into(),
            Controller::Mpc { model, .. } => format!("mpc-{}", model.kind()),
        }
    }
}

/// Log of one closed-loop episode.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeMetrics {
    pub controller: String,
    pub seed: u64,
    pub action_period: f64,
    pub substeps: usize,
    /// σ after every solver substep.
    pub sigma: Vec<f64>,
    /// Design at the start of every action step.
    pub designs: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    /// Wall time spent choosing each action.
    pub plan_ms: Vec<f64>,
}

impl EpisodeMetrics {
    pub fn dt(&self) -> f64 {
        self.action_period / self.substeps as f64
    }

    pub fn duration(&self) -> f64 {
        self.sigma.len() as f64 * self.dt()
    }

    /// Per-substep log: `step,t,sigma,d0..,a0..`. Planning times are kept
    /// out so that the file is a pure function of config and seed.
    pub fn to_csv(&self) -> String {
        let dim = self.designs.first().map_or(0, |d| d.len());
        let mut s = String::from("step,t,sigma");
        for j in 0..dim {
            let _ = write!(s, ",design_{j}");
        }
        for j in 0..dim {
            let _ = write!(s, ",action_{j}");
        }
        s.push('\n');
        let dt = self.dt();
        for (k, sig) in self.sigma.iter().enumerate() {
            let step = k / self.substeps;
            let _ = write!(s, "{step},{:?},{:?}", (k + 1) as f64 * dt, sig);
            for x in self.designs[step].iter().chain(&self.actions[step]) {
                let _ = write!(s, ",{x:?}");
            }
            s.push('\n');
        }
        s
    }

    pub fn timing_csv(&self) -> String {
        let mut s = String::from("step,plan_ms\n");
        for (i, t) in self.plan_ms.iter().enumerate() {
            let _ = writeln!(s, "{i},{t:.3}");
        }
        s
    }
}

/// Run one closed-loop episode of `steps` actions.
///
/// The initial design is drawn from `seed` exactly as dataset episodes are,
/// and the random controller then continues on the same generator, so its
/// episodes match dataset episodes with the same seed.
pub fn run_controlled_episode(
    env: &EnvConfig,
    space: SpaceName,
    controller: &Controller,
    steps: usize,
    seed: u64,
) -> Result<EpisodeMetrics> {
    run_observed_episode(env, space, controller, steps, seed, &mut |_, _| Ok(()))
}

/// [`run_controlled_episode`] that also hands the environment to `observe`
/// before the first action (step 0) and after every action.
pub fn run_observed_episode(
    env: &EnvConfig,
    space: SpaceName,
    controller: &Controller,
    steps: usize,
    seed: u64,
    observe: &mut dyn FnMut(usize, &Environment) -> Result<()>,
) -> Result<EpisodeMetrics> {
    let robot = env.robot(space)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d0 = robot.sample_design(&mut rng)?;
    let mut plan_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x6d70_63));
    let sim = &env.sim;
    let mut e = Environment::new(sim, robot.clone(), &d0)?;
    let ctx = PlanContext { robot: &robot, action_period: sim.action_period, substeps: sim.substeps(), dt: sim.time_step() };
    if let Controller::Mpc { model, .. } = controller {
        if model.design_dim() != robot.dim() {
            return Err(Error::ShapeMismatch(format!(
                "model expects {} design coordinates, space {space} has {}",
                model.design_dim(),
                robot.dim()
            )));
        }
    }
    let mut m = EpisodeMetrics {
        controller: controller.label(),
        seed,
        action_period: sim.action_period,
        substeps: sim.substeps(),
        sigma: Vec::with_capacity(steps * sim.substeps()),
        designs: Vec::with_capacity(steps),
        actions: Vec::with_capacity(steps),
        plan_ms: Vec::with_capacity(steps),
    };
    observe(0, &e)?;
    for k in 0..steps {
        let clock = Instant::now();
        let action = match controller {
            Controller::Random => robot.random_action(&mut rng),
            Controller::Mpc { model, config } => {
                plan(model, &ctx, &e.observe().data, e.design(), e.source_time(), config, &mut plan_rng)?.first_action()
            }
        };
        let action = action.clamped(&robot.space);
        m.plan_ms.push(clock.elapsed().as_secs_f64() * 1e3);
        m.designs.push(e.design().to_flat());
        let out = e.step(&action)?;
        m.sigma.extend(&out.sigma);
        m.actions.push(action.rates);
        observe(k + 1, &e)?;
    }
    Ok(m)
}

/// Time-mean of σ over the samples whose time lies in `(start, end]`.
pub fn steady_state_energy(metrics: &EpisodeMetrics, start: f64, end: f64) -> Result<f64> {
    window_mean(&metrics.sigma, metrics.dt(), start, end)
}

/// Mean of `sigma[k]`, sampled at `t = (k + 1) dt`, over `t ∈ (start, end]`.
pub fn window_mean(sigma: &[f64], dt: f64, start: f64, end: f64) -> Result<f64> {
    let duration = sigma.len() as f64 * dt;
    let eps = 1e-9 * duration.max(dt);
    if !(start >= 0.0 && start < end && end <= duration + eps) {
        return Err(Error::WindowOutOfRange { start, end, duration });
    }
    let (mut sum, mut n) = (0.0, 0usize);
    for (k, s) in sigma.iter().enumerate() {
        let t = (k + 1) as f64 * dt;
        if t > start + eps && t <= end + eps {
            sum += s;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::WindowOutOfRange { start, end, duration });
    }
    Ok(sum / n as f64)
}

/// The averaging window used for steady-state reporting, seconds.
pub const STEADY_WINDOW: (f64, f64) = (0.10, 0.20);
