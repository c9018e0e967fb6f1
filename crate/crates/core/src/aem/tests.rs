use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::diffcore::{grad_check, stencil, GradCheckOptions, Tape};
use crate::field2d::SimConfig;

fn grid() -> LatentGrid {
    LatentGrid { cells: 64, span: 15.0, c0: 343.0, dt: 3.333e-4, frequency: 200.0 }
}

fn random_state(rng: &mut ChaCha8Rng, g: usize) -> LatentState {
    let mut z = LatentState {
        u: (0..g).map(|_| rng.random_range(-1e-3..1e-3)).collect(),
        v: (0..g).map(|_| rng.random_range(-1.0..1.0)).collect(),
    };
    for f in [&mut z.u, &mut z.v] {
        f[0] = 0.0;
        f[g - 1] = 0.0;
    }
    z
}

fn exo(g: usize, l: f64, s: f64) -> LatentExogenous {
    LatentExogenous { damping: vec![l; g], forcing: vec![s; g] }
}

fn small_arch(image: usize) -> (AemArch, Normalization) {
    let sim = SimConfig { sensor_size: image, ..SimConfig::default() };
    let mut arch = AemArch::for_env(&sim, 3);
    arch.grid.cells = 32;
    arch.grid.span = 8.0;
    arch.channels = vec![2, 3];
    arch.dense = 8;
    arch.robot_hidden = 6;
    let norm = Normalization {
        sigma_scale: 2.0,
        image_scale: 0.5,
        design_offset: vec![0.0, 0.0, 0.5],
        design_scale: vec![9.0, 9.0, 0.5],
    };
    (arch, norm)
}

fn image(rng: &mut ChaCha8Rng, side: usize) -> Vec<f64> {
    (0..side * side).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn designs(n: usize) -> Vec<Vec<f64>> {
    (0..n).map(|i| vec![-3.0 + 0.4 * i as f64, 1.0 - 0.2 * i as f64, 0.8]).collect()
}

#[test]
fn zero_state_without_forcing_stays_zero() {
    let g = grid();
    let z = LatentState::zeros(g.cells);
    let next = latent_step(&z, &vec![1.0; g.cells], &exo(g.cells, 10.0, 0.0), 0.01, &g).unwrap();
    assert_eq!(next, z);
}

#[test]
fn lossless_step_conserves_time_centred_energy() {
    let g = grid();
    let k = g.consts();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let c = vec![1.0; g.cells];
    let e = exo(g.cells, 0.0, 0.0);
    let mut prev = random_state(&mut rng, g.cells);
    let mut cur = latent_step(&prev, &c, &e, 0.0, &g).unwrap();
    let e0 = stencil::symmetric_energy(&k, &c, &prev.packed(), &cur.packed());
    for n in 1..200 {
        let next = latent_step(&cur, &c, &e, n as f64 * g.dt, &g).unwrap();
        let en = stencil::symmetric_energy(&k, &c, &cur.packed(), &next.packed());
        assert!(((en - e0) / e0).abs() < 1e-6, "step {n}: {en} vs {e0}");
        prev = cur;
        cur = next;
    }
    let _ = prev;
}

#[test]
fn uniform_damping_shrinks_velocity() {
    let g = grid();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let z = LatentState { u: vec![0.3; g.cells], v: (0..g.cells).map(|_| rng.random_range(-1.0..1.0)).collect() };
    let next = latent_step(&z, &vec![1.0; g.cells], &exo(g.cells, 5e3, 0.0), 0.0, &g).unwrap();
    for j in 0..g.cells {
        assert!(next.v[j].abs() <= z.v[j].abs(), "cell {j}");
    }
}

#[test]
fn rollout_lengths_and_exactness() {
    let g = grid();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let z0 = random_state(&mut rng, g.cells);
    let control = LatentControl {
        fields: (0..5).map(|_| (0..g.cells).map(|_| rng.random_range(0.5..1.5)).collect()).collect(),
        substeps: 3,
    };
    let e = LatentExogenous {
        damping: (0..g.cells).map(|_| rng.random_range(0.0..800.0)).collect(),
        forcing: (0..g.cells).map(|_| rng.random_range(-1e3..1e3)).collect(),
    };
    assert_eq!(rollout(&z0, &control, &e, 0.0, 0, &g).unwrap(), vec![z0.clone()]);
    let a = rollout(&z0, &control, &e, 0.02, 6, &g).unwrap();
    let b = rollout(&z0, &control, &e, 0.02, 12, &g).unwrap();
    assert_eq!(a.len(), 7);
    assert_eq!(b.len(), 13);
    let w = vec![1.0; g.cells];
    assert_eq!(readout(&b, &w, &g).len(), 2 * readout(&a, &w, &g).len());
    let r = rollout_residual(&z0, &b, &control, &e, 0.02, &g);
    assert!(r < 1e-12, "{r}");
}

#[test]
fn rollout_rejects_speed_beyond_cfl() {
    let g = grid();
    let z0 = LatentState::zeros(g.cells);
    let control = LatentControl { fields: vec![vec![g.max_speed_multiplier() + 0.01; g.cells]], substeps: 3 };
    let err = rollout(&z0, &control, &exo(g.cells, 0.0, 1.0), 0.0, 3, &g).unwrap_err();
    assert!(matches!(err, crate::Error::NumericalBlowup(_)));
}

#[test]
fn readout_trivial_cases() {
    let g = grid();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let zeros = vec![LatentState::zeros(g.cells); 3];
    assert!(readout(&zeros, &vec![1.0; g.cells], &g).iter().all(|x| *x == 0.0));
    let traj: Vec<_> = (0..3).map(|_| random_state(&mut rng, g.cells)).collect();
    assert!(readout(&traj, &vec![0.0; g.cells], &g).iter().all(|x| *x == 0.0));
    for _ in 0..1000 {
        let traj = vec![LatentState::zeros(g.cells), random_state(&mut rng, g.cells)];
        let w: Vec<f64> = (0..g.cells).map(|_| rng.random_range(0.0..2.0)).collect();
        assert!(readout(&traj, &w, &g)[0] >= 0.0);
    }
}

#[test]
fn control_interpolation() {
    let c1 = vec![1.0, 2.0];
    let c2 = vec![3.0, 0.0];
    let ctl = LatentControl { fields: vec![c1.clone(), c2.clone()], substeps: 2 };
    assert_eq!(ctl.at(0), c1);
    assert_eq!(ctl.at(1), vec![2.0, 1.0]);
    assert_eq!(ctl.at(2), c2);
    let same = LatentControl { fields: vec![c1.clone(); 4], substeps: 3 };
    assert!((0..9).all(|n| same.at(n) == c1));
}

#[test]
fn wave_encoder_shapes_and_bias_path() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for side in [32, 64] {
        let sim = SimConfig { sensor_size: side, ..SimConfig::default() };
        let arch = AemArch::for_env(&sim, 3);
        let mut m = AemModel::new(arch.clone(), Normalization::identity(3), 1).unwrap();
        let img = image(&mut rng, side);
        let a = m.encode_wave(&img).unwrap();
        assert_eq!(a.z0.u.len(), arch.grid.cells);
        assert_eq!(a.exo.damping.len(), arch.grid.cells);
        assert_eq!(a.exo.forcing.len(), arch.grid.cells);
        assert_eq!(a, m.encode_wave(&img).unwrap());
        assert!(a.exo.damping.iter().all(|l| *l >= 0.0));
        // zero every bias: a zero image then propagates zeros to the head
        for i in 0..m.store.len() {
            let id = m.store.id(&m.store.blocks()[i].name.clone()).unwrap();
            if m.store.block(id).name.ends_with(".b") {
                m.store.value_mut(id).fill(0.0);
            }
        }
        let z = m.encode_wave(&vec![0.0; side * side]).unwrap();
        assert!(z.z0.u.iter().chain(&z.z0.v).chain(&z.exo.forcing).all(|x| *x == 0.0));
        assert!(z.exo.damping.iter().all(|x| *x == z.exo.damping[0]));
    }
}

#[test]
fn design_encoder_range_over_random_weights() {
    let (arch, norm) = small_arch(16);
    let limit = arch.grid.max_speed_multiplier();
    let mut m = AemModel::new(arch, norm, 0).unwrap();
    // C = 1 for every cell at initialization
    assert!(m.encode_design(&[1.0, 2.0, 0.5]).unwrap().iter().all(|c| (c - 1.0).abs() < 0.5));
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let names: Vec<String> =
        m.store.blocks().iter().filter(|b| b.name.starts_with("aem.robot")).map(|b| b.name.clone()).collect();
    for _ in 0..1000 {
        for n in &names {
            let id = m.store.id(n).unwrap();
            m.store.value_mut(id).iter_mut().for_each(|x| *x = rng.random_range(-5.0..5.0));
        }
        let d = vec![rng.random_range(-9.0..9.0), rng.random_range(-9.0..9.0), rng.random_range(0.2..1.0)];
        assert!(m.encode_design(&d).unwrap().iter().all(|c| *c >= 0.1 && *c < limit));
    }
}

#[test]
fn predict_is_deterministic_and_matches_tape() {
    let (arch, norm) = small_arch(16);
    let m = AemModel::new(arch.clone(), norm, 7).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let img = image(&mut rng, 16);
    let ds = designs(4);
    let a = m.predict(&img, &ds, 0.05, 3, 9).unwrap();
    assert_eq!(a.len(), 9);
    assert_eq!(a, m.predict(&img, &ds, 0.05, 3, 9).unwrap());
    let mut tape = Tape::new(&m.store);
    let nodes = m.prediction_nodes(&mut tape, &img, &ds, 0.05, 3, 9).unwrap();
    for (n, x) in nodes.iter().zip(&a) {
        assert_eq!(tape.scalar(*n) * m.norm.sigma_scale, *x);
    }
}

fn mse_of(s: &Surrogate, img: &[f64], ds: &[Vec<f64>], target: &[f64]) -> impl Fn(&mut Tape<'_>) -> crate::Result<crate::diffcore::Var> {
    let (img, ds, target) = (img.to_vec(), ds.to_vec(), target.to_vec());
    let s = s.clone();
    move |tape| {
        let out = s.prediction_nodes(tape, &img, &ds, 0.013, 3, target.len())?;
        let v = tape.concat(&out)?;
        let t = tape.input(&[target.len()], target.clone())?;
        let d = tape.sub(v, t)?;
        let sq = tape.square(d)?;
        let sum = tape.sum(sq)?;
        tape.scale(sum, 1.0 / target.len() as f64)
    }
}

#[test]
fn prediction_loss_passes_grad_check() {
    let (arch, norm) = small_arch(16);
    let mut m = AemModel::new(arch, norm, 8).unwrap();
    // give the damping and forcing heads some spread
    let hb = m.store.id("aem.head.b").unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    m.store.value_mut(hb).iter_mut().for_each(|x| *x = rng.random_range(-1.0..1.0));
    let img = image(&mut rng, 16);
    let ds = designs(6);
    let target: Vec<f64> = (0..15).map(|i| 0.5 + 0.02 * i as f64).collect();
    let s = Surrogate::Aem(m);
    let rep = grad_check(mse_of(&s, &img, &ds, &target), s.store(), &GradCheckOptions::default()).unwrap();
    assert!(rep.passed(), "{rep}");
}

#[test]
fn node_loss_passes_grad_check() {
    let sim = SimConfig { sensor_size: 16, ..SimConfig::default() };
    let arch = NodeArch {
        channels: vec![2, 2],
        dense: 6,
        latent: 4,
        embed: 3,
        robot_hidden: 5,
        dyn_hidden: 7,
        ..NodeArch::for_env(&sim, 3)
    };
    let (_, norm) = small_arch(16);
    let m = NodeModel::new(arch, norm, 9).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let img = image(&mut rng, 16);
    let ds = designs(3);
    let target: Vec<f64> = (0..6).map(|i| 0.1 * i as f64).collect();
    let s = Surrogate::Node(m);
    let rep = grad_check(mse_of(&s, &img, &ds, &target), s.store(), &GradCheckOptions::default()).unwrap();
    assert!(rep.passed(), "{rep}");
}

#[test]
fn rk4_matches_exponential_decay() {
    let store = crate::diffcore::ParamStore::new();
    let mut tape = Tape::new(&store);
    let mut h = tape.input(&[1], vec![1.0]).unwrap();
    for _ in 0..100 {
        h = rk4_step(&mut tape, h, 0.01, |t, x| t.scale(x, -1.0)).unwrap();
    }
    assert!((tape.scalar(h) - (-1.0f64).exp()).abs() < 1e-6);
}

#[test]
fn node_with_zero_weights_is_constant() {
    let sim = SimConfig::default();
    let mut m = NodeModel::new(NodeArch::for_env(&sim, 3), Normalization::identity(3), 1).unwrap();
    for id in ["node.dyn0.w", "node.dyn0.b", "node.dyn1.w", "node.dyn1.b"] {
        let id = m.store.id(id).unwrap();
        m.store.value_mut(id).fill(0.0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let img = image(&mut rng, sim.sensor_size);
    let out = m.predict(&img, &designs(3), 3, 6).unwrap();
    assert_eq!(out.len(), 6);
    assert!(out.iter().all(|x| *x == out[0]));
}

#[test]
fn parameter_counts_match() {
    let sim = SimConfig::default();
    for dim in [3, 6, 57] {
        let aem = AemModel::new(AemArch::for_env(&sim, dim), Normalization::identity(dim), 0).unwrap();
        let arch = NodeArch::for_env(&sim, dim).match_params(aem.num_params());
        let node = NodeModel::new(arch.clone(), Normalization::identity(dim), 0).unwrap();
        assert_eq!(node.num_params(), arch.param_count());
        let ratio = node.num_params() as f64 / aem.num_params() as f64;
        assert!((ratio - 1.0).abs() < 0.01, "dim {dim}: {ratio}");
    }
}

#[test]
fn checkpoint_round_trip_preserves_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let img = image(&mut rng, 16);
    let ds = designs(3);
    let (arch, norm) = small_arch(16);
    let sim = SimConfig { sensor_size: 16, ..SimConfig::default() };
    let models = [
        Surrogate::Aem(AemModel::new(arch, norm.clone(), 3).unwrap()),
        Surrogate::Node(NodeModel::new(NodeArch { channels: vec![2], dense: 5, ..NodeArch::for_env(&sim, 3) }, norm, 3).unwrap()),
    ];
    for m in models {
        let path = dir.path().join(format!("{}.wvck", m.kind()));
        m.save(&path).unwrap();
        let back = Surrogate::load(&path).unwrap();
        assert_eq!(back.kind(), m.kind());
        assert_eq!(back.norm(), m.norm());
        assert_eq!(back.predict(&img, &ds, 0.0, 3, 6).unwrap(), m.predict(&img, &ds, 0.0, 3, 6).unwrap());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn damped_unforced_energy_never_grows(seed in 0u64..1000, lmax in 0.0f64..3000.0) {
        let g = grid();
        let k = g.consts();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c: Vec<f64> = (0..g.cells).map(|_| rng.random_range(0.3..1.8)).collect();
        let e = LatentExogenous {
            damping: (0..g.cells).map(|_| rng.random_range(0.0..=lmax)).collect(),
            forcing: vec![0.0; g.cells],
        };
        let mut cur = random_state(&mut rng, g.cells);
        let mut next = latent_step(&cur, &c, &e, 0.0, &g).unwrap();
        let mut last = stencil::symmetric_energy(&k, &c, &cur.packed(), &next.packed());
        for n in 1..100 {
            cur = next;
            next = latent_step(&cur, &c, &e, n as f64 * g.dt, &g).unwrap();
            let en = stencil::symmetric_energy(&k, &c, &cur.packed(), &next.packed());
            prop_assert!(en <= last + 1e-9 * last.abs(), "step {}: {} > {}", n, en, last);
            last = en;
        }
    }
}
