use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use wavebench_core::aem::{Surrogate, SurrogateKind};
use wavebench_core::bench::{
    long_term_prediction_report, oracle_frozen_config, run_benchmark, without_damping, write_artifacts, write_atomic,
    BenchmarkSpec, OracleGrid,
};
use wavebench_core::env::{hex, Environment};
use wavebench_core::field2d::Field2;
use wavebench_core::mpc::{run_controlled_episode, steady_state_energy, Controller, STEADY_WINDOW};
use wavebench_core::robot::ActionSpec;
use wavebench_core::train::{fit_dataset, generate_dataset, new_surrogate, Dataset};
use wavebench_core::Error;

use crate::config::RunConfig;
use crate::manifest::{beside, Recorder};
use crate::{plot, Command};

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Simulate(a) => simulate(a),
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train(a),
        Command::EvalPred(a) => eval_pred(a),
        Command::Control(a) => control(a),
        Command::Bench(a) => bench(a),
        Command::Oracle(a) => oracle(a),
        Command::Plot(a) => plot::plot(&a),
    }
}

fn out_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn put(rec: &mut Recorder, path: PathBuf, text: &str) -> Result<()> {
    write_atomic(&path, text.as_bytes())?;
    rec.artifact(&path)
}

fn recorder(manifest: PathBuf, cfg: &RunConfig, extra: &str) -> Recorder {
    let text = format!("{}{extra}", cfg.to_text());
    Recorder::start(manifest, hex(&Sha256::digest(text.as_bytes())), text)
}

/// Grid values, one line per row of cells, bottom row first.
fn field_csv(f: &Field2) -> String {
    let mut s = String::new();
    for row in f.data.chunks(f.nx) {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        s.push_str(&cells.join(","));
        s.push('\n');
    }
    s
}

fn simulate(a: crate::SimulateArgs) -> Result<()> {
    let cfg = RunConfig::load(a.config.as_deref())?;
    let env = &cfg.env;
    if a.snapshot_stride == Some(0) {
        bail!(Error::Config("--snapshot-stride must be at least 1".into()));
    }
    let robot = env.robot(a.space)?;
    let design = robot.sample_design(&mut ChaCha8Rng::seed_from_u64(a.seed))?;
    let steps = a.steps.unwrap_or(env.sim.episode_steps);
    out_dir(&a.out)?;
    let mut rec = recorder(a.out.join("manifest.json"), &cfg, &format!("space = {}\nsteps = {steps}\n", a.space));
    rec.seeds([a.seed]);
    if let Some(c) = &a.config {
        rec.input(c)?;
    }
    let snaps = a.out.join("snapshots");
    let snapshot = |k: usize, e: &Environment, rec: &mut Recorder| -> Result<()> {
        match a.snapshot_stride {
            Some(s) if k % s == 0 => {
                fs::create_dir_all(&snaps)?;
                put(rec, snaps.join(format!("pressure_{k:04}.csv")), &field_csv(&e.pressure()))?;
                put(rec, snaps.join(format!("scattered_{k:04}.csv")), &field_csv(&e.scattered()))
            }
            _ => Ok(()),
        }
    };
    let mut e = Environment::new(&env.sim, robot.clone(), &design)?;
    let still = ActionSpec::zeros(robot.dim());
    let dt = env.sim.time_step();
    let mut sigma = String::from("step,t,sigma\n");
    let mut n = 0usize;
    snapshot(0, &e, &mut rec)?;
    for k in 0..steps {
        for s in e.step(&still)?.sigma {
            n += 1;
            let _ = writeln!(sigma, "{k},{:?},{s:?}", n as f64 * dt);
        }
        snapshot(k + 1, &e, &mut rec)?;
    }
    put(&mut rec, a.out.join("sigma.csv"), &sigma)?;
    let mut d = String::from("disk,x,y,r\n");
    for (i, (c, r)) in design.centers.iter().zip(&design.radii).enumerate() {
        let _ = writeln!(d, "{i},{:?},{:?},{r:?}", c[0], c[1]);
    }
    put(&mut rec, a.out.join("design.csv"), &d)?;
    rec.finish()?;
    Ok(())
}

fn gen_data(a: crate::GenDataArgs) -> Result<()> {
    let cfg = RunConfig::load(a.config.as_deref())?;
    if a.episodes == 0 {
        bail!(Error::Config("--episodes must be at least 1".into()));
    }
    let mut rec = recorder(beside(&a.out), &cfg, &format!("space = {}\nepisodes = {}\n", a.space, a.episodes));
    rec.seeds([a.seed]);
    if let Some(c) = &a.config {
        rec.input(c)?;
    }
    if let Some(dir) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        out_dir(dir)?;
    }
    let h = generate_dataset(&cfg.env, a.space, a.episodes, a.seed, &a.out)?;
    rec.artifact(&a.out)?;
    rec.finish()?;
    println!("{} episodes of {} actions, space {}", h.episodes, h.steps, h.space);
    Ok(())
}

fn train(a: crate::TrainArgs) -> Result<()> {
    let mut cfg = RunConfig::load(a.config.as_deref())?;
    if let Some(s) = a.seed {
        cfg.train.seed = s;
    }
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    let data = Dataset::load(&a.data).with_context(|| format!("reading {}", a.data.display()))?;
    let mut rec = recorder(beside(&a.out), &cfg, &format!("model = {}\n", a.model));
    rec.seeds([cfg.train.seed]);
    rec.input(&a.data)?;
    if let Some(c) = &a.config {
        rec.input(c)?;
    }
    let mut model = new_surrogate(a.model, &data, cfg.train.seed)?;
    let history = fit_dataset(&mut model, &data, &cfg.train)?;
    if let Some(dir) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        out_dir(dir)?;
    }
    model.save(&a.out)?;
    rec.artifact(&a.out)?;
    let mut hist = a.out.as_os_str().to_owned();
    hist.push(".history.csv");
    put(&mut rec, hist.into(), &history.to_csv())?;
    let mut timing = a.out.as_os_str().to_owned();
    timing.push(".timing.csv");
    write_atomic(Path::new(&timing), history.timing_csv().as_bytes())?;
    rec.finish()?;
    println!(
        "{} parameters, best validation loss {:.4e} (initial {:.4e})",
        model.num_params(),
        history.best_val_loss(),
        history.initial_val_loss
    );
    Ok(())
}

fn eval_pred(a: crate::EvalPredArgs) -> Result<()> {
    let data = Dataset::load(&a.data).with_context(|| format!("reading {}", a.data.display()))?;
    let n = data.episodes.len();
    if a.episodes == 0 || a.episodes > n {
        bail!(Error::Config(format!("--episodes must be in 1..={n}")));
    }
    let episodes: Vec<usize> = (n - a.episodes..n).collect();
    let mut models: Vec<(String, Surrogate)> = Vec::new();
    for path in &a.ckpts {
        let m = Surrogate::load(path).with_context(|| format!("loading {}", path.display()))?;
        let base = m.kind().to_string();
        let mut label = base.clone();
        let mut k = 2;
        while models.iter().any(|(l, _)| *l == label) {
            label = format!("{base}{k}");
            k += 1;
        }
        let ablated = if a.ablation && m.kind() == SurrogateKind::Aem { Some(without_damping(&m)?) } else { None };
        if let Some(z) = ablated {
            models.push((label.clone(), m));
            models.push((format!("{label}-no-pml"), z));
        } else {
            models.push((label, m));
        }
    }
    out_dir(&a.out)?;
    let text = format!("{}horizon = {}\nepisodes = {:?}\nablation = {}\n", data.header.config_text, a.horizon, episodes, a.ablation);
    let mut rec = Recorder::start(a.out.join("manifest.json"), hex(&Sha256::digest(text.as_bytes())), text);
    rec.input(&a.data)?;
    for p in &a.ckpts {
        rec.input(p)?;
    }
    let refs: Vec<(String, &Surrogate)> = models.iter().map(|(l, m)| (l.clone(), m)).collect();
    let report = long_term_prediction_report(&refs, &data, &episodes, a.horizon)?;
    put(&mut rec, a.out.join("sigma.csv"), &report.sigma_csv())?;
    put(&mut rec, a.out.join("errors.csv"), &report.error_csv())?;
    let mut summary = String::from("model,step,mean_error\n");
    for m in &report.models {
        let _ = writeln!(summary, "{},{},{:?}", m.label, a.horizon, m.mean_error(a.horizon));
    }
    put(&mut rec, a.out.join("summary.csv"), &summary)?;
    rec.finish()?;
    print!("{summary}");
    Ok(())
}

fn control(a: crate::ControlArgs) -> Result<()> {
    let mut cfg = RunConfig::load(a.config.as_deref())?;
    cfg.set_task(a.task);
    if let Some(h) = a.horizon {
        cfg.mpc.horizon = h;
    }
    if let Some(s) = a.sigma_hi {
        cfg.mpc.sigma_hi = s;
    }
    cfg.mpc.validate()?;
    if a.steps == 0 {
        bail!(Error::Config("--steps must be at least 1".into()));
    }
    out_dir(&a.out)?;
    let extra = format!("space = {}\nsteps = {}\ncontroller = {}\n", a.space, a.steps, if a.ckpt.is_some() { "mpc" } else { "random" });
    let mut rec = recorder(a.out.join("manifest.json"), &cfg, &extra);
    rec.seeds([a.seed]);
    if let Some(c) = &a.config {
        rec.input(c)?;
    }
    let controller = match &a.ckpt {
        None => Controller::Random,
        Some(p) => {
            rec.input(p)?;
            let model = Surrogate::load(p).with_context(|| format!("loading {}", p.display()))?;
            Controller::Mpc { model: Box::new(model), config: cfg.mpc.clone() }
        }
    };
    let m = run_controlled_episode(&cfg.env, a.space, &controller, a.steps, a.seed)?;
    put(&mut rec, a.out.join("episode.csv"), &m.to_csv())?;
    write_atomic(&a.out.join("timing.csv"), m.timing_csv().as_bytes())?;
    let dur = m.duration();
    let (w0, w1) = if dur + 1e-12 >= STEADY_WINDOW.1 { STEADY_WINDOW } else { (0.5 * dur, dur) };
    let energy = steady_state_energy(&m, w0, w1)?;
    let summary = format!("controller,task,seed,window_start,window_end,steady_state_energy\n{},{},{},{w0:?},{w1:?},{energy:?}\n", m.controller, cfg.mpc.task, a.seed);
    put(&mut rec, a.out.join("summary.csv"), &summary)?;
    rec.finish()?;
    println!("{} {}: steady-state energy {energy:.4e} over [{w0}, {w1}] s", m.controller, cfg.mpc.task);
    Ok(())
}

fn bench(a: crate::BenchArgs) -> Result<()> {
    let spec = BenchmarkSpec::load(&a.spec).with_context(|| format!("reading {}", a.spec.display()))?;
    out_dir(&a.out)?;
    let text = spec.to_text();
    let mut rec = Recorder::start(a.out.join("manifest.json"), hex(&Sha256::digest(text.as_bytes())), text);
    rec.seeds(spec.seeds());
    rec.input(&a.spec)?;
    for p in [&spec.aem_checkpoint, &spec.node_checkpoint, &spec.dataset].into_iter().flatten() {
        rec.input(p)?;
    }
    let outcome = run_benchmark(&spec)?;
    for p in write_artifacts(&spec, &outcome, &a.out)? {
        rec.artifact(&p)?;
    }
    rec.finish()?;
    print!("{}", outcome.table.render(a.format));
    Ok(())
}

fn oracle(a: crate::OracleArgs) -> Result<()> {
    let mut cfg = RunConfig::load(a.config.as_deref())?;
    cfg.set_task(a.task);
    let grid = OracleGrid::from_resolution(a.resolution)?;
    out_dir(&a.out)?;
    let extra = format!("space = {}\nresolution = {}\n", a.space, a.resolution);
    let mut rec = recorder(a.out.join("manifest.json"), &cfg, &extra);
    if let Some(c) = &a.config {
        rec.input(c)?;
    }
    let r = oracle_frozen_config(&cfg.env, a.space, cfg.mpc.task, &grid)?;
    let mut d = String::from("disk,x,y,r\n");
    for (i, (c, rad)) in r.design.centers.iter().zip(&r.design.radii).enumerate() {
        let _ = writeln!(d, "{i},{:?},{:?},{rad:?}", c[0], c[1]);
    }
    put(&mut rec, a.out.join("design.csv"), &d)?;
    let summary = format!("space,task,energy,evaluated\n{},{},{:?},{}\n", a.space, cfg.mpc.task, r.energy, r.evaluated);
    put(&mut rec, a.out.join("summary.csv"), &summary)?;
    rec.finish()?;
    println!("{} {}: best frozen energy {:.4e} after {} designs", a.space, cfg.mpc.task, r.energy, r.evaluated);
    Ok(())
}
