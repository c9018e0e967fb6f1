use std::collections::HashSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::aem::{AemArch, AemModel, NodeArch, NodeModel, Normalization, Surrogate};
use crate::diffcore::{grad_check, GradCheckOptions};
use crate::env::EnvConfig;
use crate::error::Error;
use crate::field2d::SimConfig;
use crate::robot::SpaceName;

fn tiny_env(steps: usize) -> EnvConfig {
    EnvConfig {
        sim: SimConfig { grid_n: 64, pml_width: 8, episode_steps: steps, sensor_size: 16, ..SimConfig::default() },
        ..EnvConfig::default()
    }
}

fn p1() -> SpaceName {
    "P1".parse().unwrap()
}

fn tiny_aem(env: &EnvConfig, norm: Normalization, seed: u64) -> Surrogate {
    let mut arch = AemArch::for_env(&env.sim, 3);
    arch.grid.cells = 32;
    arch.grid.span = 8.0;
    arch.channels = vec![2, 3];
    arch.dense = 8;
    arch.robot_hidden = 6;
    Surrogate::Aem(AemModel::new(arch, norm, seed).unwrap())
}

fn tiny_node(env: &EnvConfig, norm: Normalization, seed: u64) -> Surrogate {
    let arch = NodeArch {
        channels: vec![2, 2],
        dense: 6,
        latent: 4,
        embed: 3,
        robot_hidden: 5,
        dyn_hidden: 7,
        ..NodeArch::for_env(&env.sim, 3)
    };
    Surrogate::Node(NodeModel::new(arch, norm, seed).unwrap())
}

#[test]
fn empty_dataset_has_valid_header() {
    let env = tiny_env(4);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("empty.wvds");
    let h = generate_dataset(&env, p1(), 0, 1, &path).unwrap();
    let d = Dataset::load(&path).unwrap();
    assert_eq!(d.header, h);
    assert!(d.episodes.is_empty());
    assert_eq!(d.header.env().unwrap(), env);
    assert!(!dir.path().join("empty.partial").exists());
}

#[test]
fn dataset_is_deterministic_across_thread_counts() {
    let env = tiny_env(5);
    let dir = tempfile::tempdir().unwrap();
    let mut bytes = Vec::new();
    for threads in [1, 3] {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        let path = dir.path().join(format!("d{threads}.wvds"));
        pool.install(|| generate_dataset(&env, p1(), 5, 42, &path)).unwrap();
        bytes.push(std::fs::read(&path).unwrap());
    }
    assert_eq!(bytes[0], bytes[1]);
    let mem = generate_in_memory(&env, p1(), 5, 42).unwrap();
    assert_eq!(mem.to_bytes(), bytes[0]);
    let other = generate_in_memory(&env, p1(), 5, 43).unwrap();
    assert_ne!(other.to_bytes(), bytes[0]);
}

#[test]
fn stored_sigma_is_finite_and_non_negative() {
    let env = tiny_env(30);
    let d = generate_in_memory(&env, p1(), 4, 7).unwrap();
    let h = &d.header;
    for e in &d.episodes {
        assert_eq!(e.sigma.len(), h.steps * h.substeps);
        assert_eq!(e.images.len(), h.steps * h.image_len());
        assert_eq!(e.designs.len(), h.steps * h.design_dim);
    }
    assert!(d.sigma_valid());
    assert!(d.max_sigma() > 0.0);
}

#[test]
fn dataset_round_trip_and_corruption() {
    let env = tiny_env(3);
    let d = generate_in_memory(&env, p1(), 2, 3).unwrap();
    let bytes = d.to_bytes();
    assert_eq!(Dataset::from_bytes(&bytes).unwrap(), d);
    assert!(matches!(Dataset::from_bytes(&bytes[..bytes.len() - 3]), Err(Error::Format(_))));
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(matches!(Dataset::from_bytes(&extra), Err(Error::Format(_))));
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(Dataset::from_bytes(&bad), Err(Error::Format(_))));

    let mut tampered = d.clone();
    tampered.header.config_text = tampered.header.config_text.replace("episode_steps = 3", "episode_steps = 4");
    assert!(matches!(tampered.header.env(), Err(Error::Format(_))));
}

#[test]
fn writer_rejects_short_files() {
    let env = tiny_env(3);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("short.wvds");
    let h = DatasetHeader::for_env(&env, p1(), 2);
    let mut w = DatasetWriter::create(&path, &h).unwrap();
    let robot = env.robot(p1()).unwrap();
    w.write_episode(&random_episode(&env, &robot, 1).unwrap()).unwrap();
    assert!(w.finish().is_err());
    assert!(!path.exists());
}

#[test]
fn full_length_window_starts_at_episode_start() {
    let env = tiny_env(4);
    let d = generate_in_memory(&env, p1(), 3, 5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..20 {
        let w = sample_window(&d, 4, &mut rng).unwrap();
        assert_eq!(w.offset, 0);
        assert_eq!(w.t0, env.sim.warm_up_time());
        assert_eq!(w.designs.len(), 5);
        assert_eq!(w.steps(), 4 * d.header.substeps);
    }
    assert!(sample_window(&d, 5, &mut rng).is_err());
}

#[test]
fn windows_match_episode_slices() {
    let env = tiny_env(6);
    let d = generate_in_memory(&env, p1(), 2, 11).unwrap();
    let h = &d.header;
    let src = DatasetWindows::all(&d, 2).unwrap();
    let robot = h.robot().unwrap();
    for e in 0..2 {
        for o in 0..src.offsets() {
            let w = src.window(e, o).unwrap();
            let ep = &d.episodes[e];
            let want: Vec<f64> = ep.sigma[o * h.substeps..(o + 2) * h.substeps].iter().map(|x| *x as f64).collect();
            assert_eq!(w.sigma, want);
            assert_eq!(w.image, ep.image(h, o));
            assert_eq!(w.designs[0], ep.design(h, o));
            if o + 2 < h.steps {
                assert_eq!(w.designs[2], ep.design(h, o + 2));
            }
        }
    }
    // the design after the final step comes from re-applying the last action
    let w = src.window(0, src.offsets() - 1).unwrap();
    let last = crate::robot::DesignState::from_flat(&w.designs[1]).unwrap();
    let act = crate::robot::ActionSpec { rates: w.actions[1].clone() };
    let next = robot.advance(&last, &act, h.action_period).unwrap().to_flat();
    assert_eq!(w.designs[2], next);
}

#[test]
fn window_draws_cover_offsets() {
    // 10 episodes x 181 offsets; coupon-collector expectation of the unseen
    // fraction after n draws is (1 - 1/N)^n.
    let (episodes, offsets, draws) = (10usize, 181usize, 10_000usize);
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let seen: HashSet<(usize, usize)> = (0..draws).map(|_| sample_window_index(episodes, offsets, &mut rng)).collect();
    let n = (episodes * offsets) as f64;
    let covered = seen.len() as f64 / n;
    let expected = 1.0 - (1.0 - 1.0 / n).powi(draws as i32);
    assert!(covered >= 0.99, "covered {covered}");
    assert!((covered - expected).abs() < 0.005, "covered {covered}, expected {expected}");
    assert!(seen.iter().all(|(e, o)| *e < episodes && *o < offsets));
}

#[test]
fn same_rng_state_same_window() {
    let env = tiny_env(6);
    let d = generate_in_memory(&env, p1(), 3, 9).unwrap();
    let mut a = ChaCha8Rng::seed_from_u64(77);
    let mut b = a.clone();
    for _ in 0..5 {
        assert_eq!(sample_window(&d, 3, &mut a).unwrap(), sample_window(&d, 3, &mut b).unwrap());
    }
}

fn small_dataset(steps: usize, episodes: usize, seed: u64) -> (EnvConfig, Dataset) {
    let env = tiny_env(steps);
    let d = generate_in_memory(&env, p1(), episodes, seed).unwrap();
    (env, d)
}

#[test]
fn loss_of_exact_prediction_is_zero() {
    let (env, d) = small_dataset(5, 2, 1);
    let m = tiny_aem(&env, normalization_from(&d), 4);
    let w = DatasetWindows::all(&d, 3).unwrap().window(0, 1).unwrap();
    let mut w = relabel_windows(&m, vec![w]).unwrap().remove(0);
    assert!(window_loss(&m, &w).unwrap() < 1e-24);
    // constant target against a zero predictor gives k^2
    let mut zero = tiny_node(&env, Normalization::identity(3), 1);
    let store = zero.store_mut();
    for i in 0..store.len() {
        let id = store.id(&store.blocks()[i].name.clone()).unwrap();
        store.value_mut(id).fill(0.0);
    }
    let k = 3.5;
    w.sigma.fill(k);
    assert!((window_loss(&zero, &w).unwrap() - k * k).abs() < 1e-12);
}

#[test]
fn loss_gradient_matches_finite_differences() {
    let (env, d) = small_dataset(6, 2, 2);
    let norm = normalization_from(&d);
    let w = DatasetWindows::all(&d, 5).unwrap().window(1, 1).unwrap();
    for m in [tiny_aem(&env, norm.clone(), 8), tiny_node(&env, norm.clone(), 8)] {
        let opts = GradCheckOptions { max_per_block: Some(12), ..GradCheckOptions::default() };
        let rep = grad_check(|t| window_loss_tape(&m, t, &w), m.store(), &opts).unwrap();
        assert!(rep.passed(), "{}: {rep}", m.kind());
        assert!(rep.max_error() < 1e-4);
    }
}

#[test]
fn loss_is_a_pure_function_of_params() {
    let (env, d) = small_dataset(5, 2, 3);
    let m = tiny_aem(&env, normalization_from(&d), 2);
    let w = DatasetWindows::all(&d, 4).unwrap().window(0, 0).unwrap();
    let a = window_loss_and_grad(&m, &w).unwrap();
    let b = window_loss_and_grad(&m, &w).unwrap();
    assert_eq!(a.0.to_bits(), b.0.to_bits());
    assert_eq!(a.1, b.1);
}

#[test]
fn zero_learning_rate_leaves_params_and_history_flat() {
    let (env, d) = small_dataset(6, 6, 4);
    let mut m = tiny_aem(&env, normalization_from(&d), 5);
    let before = m.store().clone();
    let cfg = TrainConfig {
        horizon_actions: 3,
        batch_size: 2,
        learning_rate: 0.0,
        epochs: 3,
        batches_per_epoch: 2,
        validation_fraction: 0.3,
        eval_windows: 4,
        ..TrainConfig::default()
    };
    let h = fit_dataset(&mut m, &d, &cfg).unwrap();
    assert_eq!(h.epochs.len(), 3);
    for e in &h.epochs {
        assert_eq!(e.train_loss.to_bits(), h.initial_train_loss.to_bits());
        assert_eq!(e.val_loss.to_bits(), h.initial_val_loss.to_bits());
        assert!(e.latent_residual.unwrap() < 1e-12);
    }
    for (a, b) in before.blocks().iter().zip(m.store().blocks()) {
        assert_eq!(a.value, b.value);
    }
    let csv = h.to_csv();
    assert!(csv.starts_with("epoch,train_loss,val_loss,skipped_windows\n"));
    assert_eq!(h.timing_csv().lines().count(), csv.lines().count());
    assert_eq!(csv.lines().count(), 4);
}

#[test]
fn training_reduces_loss_deterministically_and_keeps_file_intact() {
    let (env, d) = small_dataset(6, 6, 5);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.wvds");
    d.save(&path).unwrap();
    let before = std::fs::read(&path).unwrap();
    let loaded = Dataset::load(&path).unwrap();
    let cfg = TrainConfig {
        horizon_actions: 3,
        batch_size: 4,
        learning_rate: 3e-3,
        epochs: 4,
        batches_per_epoch: 5,
        validation_fraction: 0.3,
        eval_windows: 6,
        ..TrainConfig::default()
    };
    let mut runs = Vec::new();
    for threads in [1, 2] {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        let mut m = tiny_node(&env, normalization_from(&loaded), 6);
        let h = pool.install(|| fit_dataset(&mut m, &loaded, &cfg)).unwrap();
        assert!(h.best_val_loss() <= h.initial_val_loss);
        runs.push((blocks_of(&m), h.epochs.iter().map(|e| e.val_loss.to_bits()).collect::<Vec<_>>()));
    }
    assert_eq!(runs[0], runs[1]);
    assert_eq!(std::fs::read(&path).unwrap(), before);
}

fn blocks_of(m: &Surrogate) -> Vec<Vec<f64>> {
    m.store().blocks().iter().map(|b| b.value.clone()).collect()
}

#[test]
fn fit_rejects_empty_or_bad_config() {
    let (env, d) = small_dataset(3, 0, 1);
    let mut m = tiny_aem(&env, Normalization::identity(3), 1);
    assert!(matches!(fit_dataset(&mut m, &d, &TrainConfig::default()), Err(Error::Config(_))));
    let bad = TrainConfig { validation_fraction: 1.0, ..TrainConfig::default() };
    assert!(bad.validate().is_err());
    assert!(TrainConfig { horizon_actions: 0, ..TrainConfig::default() }.validate().is_err());
}

#[test]
fn train_config_text_round_trip() {
    let c = TrainConfig { epochs: 7, learning_rate: 2.5e-4, seed: 99, ..TrainConfig::default() };
    let mut kv = crate::kv::KvMap::parse(&c.to_text()).unwrap();
    assert_eq!(TrainConfig::from_kv(&mut kv).unwrap(), c);
}

#[test]
fn normalization_is_estimated_from_data() {
    let (_, d) = small_dataset(30, 3, 6);
    let n = normalization_from(&d);
    let all: Vec<f64> = d.episodes.iter().flat_map(|e| &e.sigma).map(|x| *x as f64).collect();
    let mean = all.iter().sum::<f64>() / all.len() as f64;
    assert!((n.sigma_scale - mean).abs() <= 1e-9 * mean);
    assert!(n.image_scale > 0.0);
    // fixed radii in P mode: that coordinate keeps unit scale
    assert_eq!(n.design_scale[2], 1.0);
    assert!(n.design_scale[0] > 0.1);
}

/// Replace each episode's σ with the teacher's rollout from its first frame.
fn teacher_dataset(teacher: &Surrogate, d: &Dataset) -> Dataset {
    let h = d.header.steps;
    let src = DatasetWindows::all(d, h).unwrap();
    let mut out = d.clone();
    for (e, ep) in out.episodes.iter_mut().enumerate() {
        let w = src.window(e, 0).unwrap();
        let s = teacher.predict(&w.image, &w.designs, 0.0, w.substeps, w.steps()).unwrap();
        ep.sigma = s.iter().map(|x| *x as f32).collect();
    }
    out
}

#[test]
fn prediction_curve_for_teacher_and_zero_models() {
    let (env, d) = small_dataset(30, 3, 12);
    let mut teacher = tiny_aem(&env, normalization_from(&d), 21);
    // undamped, so the teacher's σ stays well inside f32 range
    if let Surrogate::Aem(m) = &mut teacher {
        m.zero_damping = true;
    }
    let td = teacher_dataset(&teacher, &d);
    let c = evaluate_prediction(&teacher, &td, &[0, 1, 2], 30).unwrap();
    assert_eq!(c.mean.len(), 30);
    assert_eq!(c.per_episode.len(), 3);
    assert!(c.mean.iter().all(|e| *e < 1e-3), "{:?}", c.mean);

    let mut zero = tiny_node(&env, normalization_from(&d), 1);
    let store = zero.store_mut();
    for i in 0..store.len() {
        let id = store.id(&store.blocks()[i].name.clone()).unwrap();
        store.value_mut(id).fill(0.0);
    }
    let c = evaluate_prediction(&zero, &d, &[0, 1], 30).unwrap();
    // while σ is still below the floor the error is below one
    assert!(c.mean.iter().all(|e| *e <= 1.0 + 1e-12), "{:?}", c.mean);
    assert!((c.mean[29] - 1.0).abs() < 1e-9);
    let csv = c.to_csv();
    assert_eq!(csv.lines().count(), 31);
    assert!(csv.starts_with("step,mean_rel_error,episode_0,episode_1\n"));
}

#[test]
fn relative_errors_use_a_floor() {
    let truth = vec![0.0, 0.0, 2.0, 2.0];
    let pred = vec![0.0, 0.0, 1.0, 3.0];
    let e = relative_step_errors(&pred, &truth, 2);
    assert_eq!(e[0], 0.0);
    assert!((e[1] - (2.0f64).sqrt() / (8.0f64).sqrt()).abs() < 1e-12);
}

#[test]
fn student_fits_teacher_pool() {
    let (env, d) = small_dataset(6, 6, 13);
    let norm = normalization_from(&d);
    let teacher = tiny_aem(&env, norm.clone(), 31);
    let (train, val) = teacher_pools(&teacher, &d, 3, 24, 8, 5).unwrap();
    // a student starting at the teacher has zero loss everywhere
    let (l, _) = mean_loss(&teacher, &val.windows).unwrap();
    assert!(l < 1e-24);
    // the teacher's σ is far below the dataset's, so rescale the student loss
    let norm = Normalization { sigma_scale: train.mean_sigma(), ..norm };
    let mut student = tiny_aem(&env, norm, 32);
    let cfg = TrainConfig {
        horizon_actions: 3,
        batch_size: 4,
        learning_rate: 1e-2,
        epochs: 3,
        batches_per_epoch: 5,
        eval_windows: 8,
        ..TrainConfig::default()
    };
    let h = fit(&mut student, &train, &val, &cfg).unwrap();
    assert!(h.best_val_loss() < h.initial_val_loss);
    let (after, _) = mean_loss(&student, &draw_windows(&val, 8, derive_seed(cfg.seed, 2)).unwrap()).unwrap();
    assert_eq!(after.to_bits(), h.best_val_loss().to_bits());
}
