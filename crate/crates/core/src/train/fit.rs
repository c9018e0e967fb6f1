use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::dataset::{derive_seed, Dataset};
use super::window::{DatasetWindows, Window, WindowPool, WindowSource};
use crate::aem::{rollout, rollout_residual, AemArch, AemModel, NodeArch, NodeModel, Normalization, Surrogate, SurrogateKind};
use crate::diffcore::{blocks_from_store, restore_store, AdamConfig, Gradients, Tape, Var};
use crate::error::{Error, Result};
use crate::kv::{self, KvMap};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub horizon_actions: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batches_per_epoch: usize,
    pub validation_fraction: f64,
    /// Fixed windows on which per-epoch train and validation losses are measured.
    pub eval_windows: usize,
    /// Global gradient norm clip; 0 disables clipping.
    pub clip_norm: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            horizon_actions: 20,
            batch_size: 8,
            learning_rate: 1e-3,
            epochs: 40,
            batches_per_epoch: 25,
            validation_fraction: 0.1,
            eval_windows: 32,
            clip_norm: 1.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon_actions == 0 {
            return Err(Error::Config("horizon_actions must be at least 1".into()));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::Config(format!("validation_fraction {} outside (0, 1)", self.validation_fraction)));
        }
        if self.batch_size == 0 || self.eval_windows == 0 {
            return Err(Error::Config("batch_size and eval_windows must be positive".into()));
        }
        if !(self.learning_rate >= 0.0) || !(self.clip_norm >= 0.0) {
            return Err(Error::Config("learning_rate and clip_norm must be non-negative".into()));
        }
        Ok(())
    }

    pub fn from_kv(kv: &mut KvMap) -> Result<Self> {
        let mut c = TrainConfig::default();
        kv.take("horizon_actions", &mut c.horizon_actions)?;
        kv.take("batch_size", &mut c.batch_size)?;
        kv.take("learning_rate", &mut c.learning_rate)?;
        kv.take("epochs", &mut c.epochs)?;
        kv.take("batches_per_epoch", &mut c.batches_per_epoch)?;
        kv.take("validation_fraction", &mut c.validation_fraction)?;
        kv.take("eval_windows", &mut c.eval_windows)?;
        kv.take("clip_norm", &mut c.clip_norm)?;
        kv.take("train_seed", &mut c.seed)?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_text(&self) -> String {
        kv::render([
            ("horizon_actions", self.horizon_actions.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("learning_rate", format!("{:?}", self.learning_rate)),
            ("epochs", self.epochs.to_string()),
            ("batches_per_epoch", self.batches_per_epoch.to_string()),
            ("validation_fraction", format!("{:?}", self.validation_fraction)),
            ("eval_windows", self.eval_windows.to_string()),
            ("clip_norm", format!("{:?}", self.clip_norm)),
            ("train_seed", self.seed.to_string()),
        ])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub skipped_windows: usize,
    pub wall_seconds: f64,
    /// Largest latent equation residual on the probe window (AEM only).
    pub latent_residual: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct History {
    pub initial_train_loss: f64,
    pub initial_val_loss: f64,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
}

impl History {
    pub fn best_val_loss(&self) -> f64 {
        self.epochs.iter().map(|e| e.val_loss).fold(self.initial_val_loss, f64::min)
    }

    /// Losses per epoch. Wall times live in [`timing_csv`](Self::timing_csv)
    /// so that this file is reproducible.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_loss,skipped_windows\n");
        for e in &self.epochs {
            let _ = writeln!(s, "{},{:e},{:e},{}", e.epoch, e.train_loss, e.val_loss, e.skipped_windows);
        }
        s
    }

    pub fn timing_csv(&self) -> String {
        let mut s = String::from("epoch,wall_seconds\n");
        for e in &self.epochs {
            let _ = writeln!(s, "{},{:.3}", e.epoch, e.wall_seconds);
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

pub fn window_loss_tape(model: &Surrogate, tape: &mut Tape<'_>, w: &Window) -> Result<Var> {
    let n = w.steps();
    let pred = model.prediction_nodes(tape, &w.image, &w.designs, w.t0, w.substeps, n)?;
    let pred = tape.concat(&pred)?;
    let inv = 1.0 / model.norm().sigma_scale;
    let target = tape.input(&[n], w.sigma.iter().map(|s| -s * inv).collect())?;
    let r = tape.add(pred, target)?;
    let r = tape.square(r)?;
    let r = tape.sum(r)?;
    tape.scale(r, 1.0 / n as f64)
}

/// Mean squared error between predicted and recorded σ over the window,
/// both divided by the model's σ scale.
pub fn window_loss(model: &Surrogate, w: &Window) -> Result<f64> {
    let mut tape = Tape::new(model.store());
    let l = window_loss_tape(model, &mut tape, w)?;
    checked(tape.scalar(l))
}

pub fn window_loss_and_grad(model: &Surrogate, w: &Window) -> Result<(f64, Gradients)> {
    let mut tape = Tape::new(model.store());
    let l = window_loss_tape(model, &mut tape, w)?;
    let loss = checked(tape.scalar(l))?;
    let g = tape.backward(l)?;
    if !g.all_finite() {
        return Err(Error::NumericalBlowup("non-finite gradient".into()));
    }
    Ok((loss, g))
}

fn checked(l: f64) -> Result<f64> {
    if l.is_finite() {
        Ok(l)
    } else {
        Err(Error::NumericalBlowup(format!("window loss {l}")))
    }
}

fn is_blowup(e: &Error) -> bool {
    matches!(e, Error::NumericalBlowup(_))
}

/// Mean loss over `windows`; blown-up windows are left out and counted.
pub fn mean_loss(model: &Surrogate, windows: &[Window]) -> Result<(f64, usize)> {
    let losses: Vec<Result<f64>> = windows.par_iter().map(|w| window_loss(model, w)).collect();
    let (mut sum, mut n, mut skipped) = (0.0, 0usize, 0usize);
    for l in losses {
        match l {
            Ok(v) => {
                sum += v;
                n += 1;
            }
            Err(e) if is_blowup(&e) => skipped += 1,
            Err(e) => return Err(e),
        }
    }
    let mean = if n == 0 { f64::NAN } else { sum / n as f64 };
    Ok((mean, skipped))
}

/// Largest relative residual of the latent update along a rollout from `w`.
pub fn latent_residual(model: &Surrogate, w: &Window) -> Result<Option<f64>> {
    let Surrogate::Aem(m) = model else { return Ok(None) };
    let code = m.encode_wave(&w.image)?;
    let control = m.encode_control(&w.designs, w.substeps)?;
    let traj = rollout(&code.z0, &control, &code.exo, w.t0, w.steps(), &m.arch.grid)?;
    Ok(Some(rollout_residual(&code.z0, &traj, &control, &code.exo, w.t0, &m.arch.grid)))
}

pub fn draw_windows(source: &dyn WindowSource, count: usize, seed: u64) -> Result<Vec<Window>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| source.sample(&mut rng)).collect()
}

/// Minibatch Adam on windows from `train`. The parameters with the best
/// validation loss seen (including the initial ones) are restored at the end.
pub fn fit(model: &mut Surrogate, train: &dyn WindowSource, val: &dyn WindowSource, cfg: &TrainConfig) -> Result<History> {
    cfg.validate()?;
    let train_eval = draw_windows(train, cfg.eval_windows, derive_seed(cfg.seed, 1))?;
    let val_eval = draw_windows(val, cfg.eval_windows, derive_seed(cfg.seed, 2))?;
    let adam = AdamConfig { lr: cfg.learning_rate, ..AdamConfig::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 3));

    let (initial_train, _) = mean_loss(model, &train_eval)?;
    let (initial_val, _) = mean_loss(model, &val_eval)?;
    if !initial_val.is_finite() {
        return Err(Error::Divergence("initial validation loss is not finite".into()));
    }
    let mut history =
        History { initial_train_loss: initial_train, initial_val_loss: initial_val, epochs: Vec::new(), best_epoch: None };
    let mut best = (initial_val, blocks_from_store(model.store()));
    let start = Instant::now();

    for epoch in 1..=cfg.epochs {
        let mut skipped = 0;
        for _ in 0..cfg.batches_per_epoch {
            let batch = (0..cfg.batch_size).map(|_| train.sample(&mut rng)).collect::<Result<Vec<_>>>()?;
            let snapshot = &*model;
            let results: Vec<Result<(f64, Gradients)>> =
                batch.par_iter().map(|w| window_loss_and_grad(snapshot, w)).collect();
            let mut total = Gradients::zeros_like(model.store());
            let mut used = 0usize;
            for r in results {
                match r {
                    Ok((_, g)) => {
                        total.add_assign(&g);
                        used += 1;
                    }
                    Err(e) if is_blowup(&e) => skipped += 1,
                    Err(e) => return Err(e),
                }
            }
            if used == 0 {
                continue;
            }
            total.scale(1.0 / used as f64);
            if cfg.clip_norm > 0.0 {
                let n = total.norm();
                if n > cfg.clip_norm {
                    total.scale(cfg.clip_norm / n);
                }
            }
            model.store_mut().adam_step(&total, &adam)?;
        }

        let (train_loss, s1) = mean_loss(model, &train_eval)?;
        let (val_loss, s2) = mean_loss(model, &val_eval)?;
        if val_loss.is_nan() {
            return Err(Error::Divergence(format!(
                "validation loss is NaN after epoch {epoch} ({} of {} windows blew up)",
                s2,
                val_eval.len()
            )));
        }
        let latent_residual = latent_residual(model, &val_eval[0]).or_else(|e| if is_blowup(&e) { Ok(None) } else { Err(e) })?;
        if let Some(r) = latent_residual {
            if r > 1e-12 {
                return Err(Error::NumericalBlowup(format!("latent equations violated by {r:e} after epoch {epoch}")));
            }
        }
        if val_loss < best.0 {
            best = (val_loss, blocks_from_store(model.store()));
            history.best_epoch = Some(epoch);
        }
        history.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            skipped_windows: skipped + s1 + s2,
            wall_seconds: start.elapsed().as_secs_f64(),
            latent_residual,
        });
    }
    restore_store(model.store_mut(), &best.1)?;
    Ok(history)
}

/// Split dataset episodes into training and validation sets; the last
/// `ceil(fraction * n)` episodes validate.
pub fn split_episodes(n: usize, fraction: f64) -> Result<(Vec<usize>, Vec<usize>)> {
    let nv = ((n as f64 * fraction).ceil() as usize).max(1);
    if n < 2 || nv >= n {
        return Err(Error::Config(format!("cannot split {n} episodes into training and validation")));
    }
    Ok(((0..n - nv).collect(), (n - nv..n).collect()))
}

/// [`fit`] on windows cut from a dataset.
pub fn fit_dataset(model: &mut Surrogate, dataset: &Dataset, cfg: &TrainConfig) -> Result<History> {
    if dataset.episodes.is_empty() {
        return Err(Error::Config("cannot train on an empty dataset".into()));
    }
    let (tr, va) = split_episodes(dataset.episodes.len(), cfg.validation_fraction)?;
    let train = DatasetWindows::new(dataset, tr, cfg.horizon_actions)?;
    let val = DatasetWindows::new(dataset, va, cfg.horizon_actions)?;
    fit(model, &train, &val, cfg)
}

/// Input and output scalings estimated from a dataset.
pub fn normalization_from(dataset: &Dataset) -> Normalization {
    let h = &dataset.header;
    let d = h.design_dim;
    let mut norm = Normalization::identity(d);
    let sigma: Vec<f64> = dataset.episodes.iter().flat_map(|e| &e.sigma).map(|x| *x as f64).collect();
    if !sigma.is_empty() {
        let mean = sigma.iter().sum::<f64>() / sigma.len() as f64;
        if mean > 0.0 {
            norm.sigma_scale = mean;
        }
    }
    let mut sq = 0.0;
    let mut count = 0usize;
    for e in &dataset.episodes {
        sq += e.images.iter().map(|x| (*x as f64).powi(2)).sum::<f64>();
        count += e.images.len();
    }
    if count > 0 && sq > 0.0 {
        norm.image_scale = (sq / count as f64).sqrt();
    }
    let rows: Vec<&[f32]> = dataset.episodes.iter().flat_map(|e| e.designs.chunks_exact(d)).collect();
    if !rows.is_empty() {
        let n = rows.len() as f64;
        for j in 0..d {
            let mean = rows.iter().map(|r| r[j] as f64).sum::<f64>() / n;
            let var = rows.iter().map(|r| (r[j] as f64 - mean).powi(2)).sum::<f64>() / n;
            norm.design_offset[j] = mean;
            norm.design_scale[j] = if var.sqrt() > 1e-6 { var.sqrt() } else { 1.0 };
        }
    }
    norm
}

/// A freshly initialized surrogate of `kind` for `dataset`. The NODE is
/// widened to roughly the parameter count of the AEM at the same settings.
pub fn new_surrogate(kind: SurrogateKind, dataset: &Dataset, seed: u64) -> Result<Surrogate> {
    let env = dataset.header.env()?;
    let dim = dataset.header.design_dim;
    let norm = normalization_from(dataset);
    let aem = AemModel::new(AemArch::for_env(&env.sim, dim), norm.clone(), seed)?;
    Ok(match kind {
        SurrogateKind::Aem => Surrogate::Aem(aem),
        SurrogateKind::Node => {
            let arch = NodeArch::for_env(&env.sim, dim).match_params(aem.num_params());
            Surrogate::Node(NodeModel::new(arch, norm, seed)?)
        }
    })
}

/// Replace the σ record of each window with the teacher's prediction.
pub fn relabel_windows(teacher: &Surrogate, windows: Vec<Window>) -> Result<Vec<Window>> {
    windows
        .into_par_iter()
        .map(|mut w| {
            w.sigma = teacher.predict(&w.image, &w.designs, w.t0, w.substeps, w.steps())?;
            Ok(w)
        })
        .collect()
}

/// Teacher-labelled training and validation pools drawn from dataset windows.
pub fn teacher_pools(
    teacher: &Surrogate,
    dataset: &Dataset,
    horizon: usize,
    train_count: usize,
    val_count: usize,
    seed: u64,
) -> Result<(WindowPool, WindowPool)> {
    let (tr, va) = split_episodes(dataset.episodes.len(), 0.2)?;
    let tr = DatasetWindows::new(dataset, tr, horizon)?;
    let va = DatasetWindows::new(dataset, va, horizon)?;
    let train = relabel_windows(teacher, draw_windows(&tr, train_count, derive_seed(seed, 10))?)?;
    let val = relabel_windows(teacher, draw_windows(&va, val_count, derive_seed(seed, 11))?)?;
    Ok((WindowPool { windows: train }, WindowPool { windows: val }))
}

/// Per-action-step prediction error averaged over episodes.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionCurve {
    /// Mean relative error at each action step.
    pub mean: Vec<f64>,
    /// `per_episode[e][i]`: relative error of episode `e` at action step `i`.
    pub per_episode: Vec<Vec<f64>>,
    /// Episode-mean predicted σ per action step, physical units.
    pub predicted: Vec<Vec<f64>>,
}

impl PredictionCurve {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,mean_rel_error");
        for e in 0..self.per_episode.len() {
            let _ = write!(s, ",episode_{e}");
        }
        s.push('\n');
        for (i, m) in self.mean.iter().enumerate() {
            let _ = write!(s, "{},{:e}", i + 1, m);
            for ep in &self.per_episode {
                let _ = write!(s, ",{:e}", ep[i]);
            }
            s.push('\n');
        }
        s
    }
}

/// Relative L2 error per action step of `pred` against `truth`, floored at
/// 1e-3 of the episode's RMS σ.
pub fn relative_step_errors(pred: &[f64], truth: &[f64], substeps: usize) -> Vec<f64> {
    let rms = (truth.iter().map(|x| x * x).sum::<f64>() / truth.len().max(1) as f64).sqrt();
    let floor = (1e-3 * rms * (substeps as f64).sqrt()).max(f64::MIN_POSITIVE);
    pred.chunks(substeps)
        .zip(truth.chunks(substeps))
        .map(|(p, t)| {
            let num = p.iter().zip(t).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let den = t.iter().map(|b| b * b).sum::<f64>().sqrt();
            num / den.max(floor)
        })
        .collect()
}

/// Roll the model from the first observation of each listed episode for
/// `horizon` actions and compare with the recorded σ.
pub fn evaluate_prediction(model: &Surrogate, dataset: &Dataset, episodes: &[usize], horizon: usize) -> Result<PredictionCurve> {
    let src = DatasetWindows::new(dataset, episodes.to_vec(), horizon)?;
    let rows: Vec<Result<(Vec<f64>, Vec<f64>)>> = episodes
        .par_iter()
        .map(|&e| {
            let w = src.window(e, 0)?;
            let pred = match model.predict(&w.image, &w.designs, w.t0, w.substeps, w.steps()) {
                Ok(p) => p,
                Err(err) if is_blowup(&err) => vec![f64::INFINITY; w.steps()],
                Err(err) => return Err(err),
            };
            let err = relative_step_errors(&pred, &w.sigma, w.substeps);
            let means = pred.chunks(w.substeps).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect();
            Ok((err, means))
        })
        .collect();
    let mut per_episode = Vec::new();
    let mut predicted = Vec::new();
    for r in rows {
        let (e, p) = r?;
        per_episode.push(e);
        predicted.push(p);
    }
    let mean = (0..horizon)
        .map(|i| per_episode.iter().map(|e| e[i]).sum::<f64>() / per_episode.len() as f64)
        .collect();
    Ok(PredictionCurve { mean, per_episode, predicted })
}
