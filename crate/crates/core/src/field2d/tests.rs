use super::*;
use crate::robot::DesignState;
use proptest::prelude::*;

fn quiet() -> SimConfig {
    SimConfig { source_amplitude: 0.0, ..SimConfig::default() }
}

fn disk(x: f64, y: f64, r: f64) -> DesignState {
    DesignState { centers: vec![[x, y]], radii: vec![r] }
}

#[test]
fn pml_profile_shape() {
    let c = SimConfig { pml_width: 16, pml_strength: 800.0, ..SimConfig::default() };
    let pml = build_pml(&c);
    let n = c.grid_n;
    assert_eq!(pml.sigma_x[0], 800.0);
    assert_eq!(pml.sigma_x[n - 1], 800.0);
    assert_eq!(pml.sigma_x[8], 100.0);
    assert_eq!(pml.sigma_x[n - 1 - 8], 100.0);
    assert!(pml.sigma_x[16..n - 16].iter().all(|&s| s == 0.0));
    assert!(pml.sigma_x[15] > 0.0);
    assert_eq!(pml.sigma_x, pml.sigma_y);
}

#[test]
fn null_dynamics_stay_zero() {
    let c = quiet();
    let mut s = SimState::new(&c).unwrap();
    step(&mut s, &c, 50).unwrap();
    assert!(s.total.px.iter().chain(&s.total.vx).chain(&s.free.py).all(|&v| v == 0.0));
}

#[test]
fn twins_identical_without_scatterers() {
    let c = SimConfig::default();
    let mut s = SimState::new(&c).unwrap();
    for _ in 0..300 {
        step(&mut s, &c, 1).unwrap();
    }
    assert_eq!(s.total, s.free);
    assert!(scattered_field(&s, &c).data.iter().all(|&v| v == 0.0));
}

#[test]
fn closed_box_conserves_discrete_energy() {
    let c = SimConfig { pml_strength: 0.0, source_amplitude: 0.0, ..SimConfig::default() };
    let mut s = SimState::new(&c).unwrap();
    s.set_initial_pressure(&c, |x, y| (-(x * x + y * y)).exp());
    let mut prev = s.total.pressure();
    step(&mut s, &c, 1).unwrap();
    let e0 = acoustic_energy(&prev, &s.total, &c);
    for _ in 0..1000 {
        prev = s.total.pressure();
        step(&mut s, &c, 1).unwrap();
        let e = acoustic_energy(&prev, &s.total, &c);
        assert!(((e - e0) / e0).abs() < 1e-3);
    }
}

/// Manhattan distance from cell `(i, j)` to the nearest masked cell.
fn distance_to_mask(mask: &ScattererMask, i: usize, j: usize) -> usize {
    let n = mask.grid_n();
    let mut best = usize::MAX;
    for b in 0..n {
        for a in 0..n {
            if mask.cell(a, b) {
                best = best.min(a.abs_diff(i) + b.abs_diff(j));
            }
        }
    }
    best
}

#[test]
fn scattered_field_respects_causality() {
    // Source next to the disk so the incident wave arrives almost at once.
    let c = SimConfig { source_position: (-3.0, 0.0), ..SimConfig::default() };
    let mut s = SimState::new(&c).unwrap();
    s.set_design(&disk(0.0, 0.0, 1.0), &c).unwrap();
    let steps = 40;
    step(&mut s, &c, steps).unwrap();
    let scat = scattered_field(&s, &c);
    let w = c.pml_width;
    let peak = scat.data.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(peak > 0.0);
    // Each leapfrog step widens the discrete domain of dependence by one cell.
    let cone_m = c.sound_speed * s.time + 1.0 + 3.0 * c.cell_size();
    for j in 0..scat.ny {
        for i in 0..scat.nx {
            let v = scat.at(i, j);
            if distance_to_mask(&s.mask, i + w, j + w) > steps as usize {
                assert_eq!(v, 0.0);
            }
            if scat.x(i).hypot(scat.y(j)) > cone_m {
                assert!(v.abs() <= 1e-6 * peak, "precursor {v:e} at ({}, {})", scat.x(i), scat.y(j));
            }
        }
    }
}

#[test]
fn scattered_field_is_linear_in_amplitude() {
    let run = |amp: f64| {
        let c = SimConfig { source_amplitude: amp, ..SimConfig::default() };
        let mut s = SimState::new(&c).unwrap();
        s.set_design(&disk(-2.0, 1.0, 0.8), &c).unwrap();
        step(&mut s, &c, 150).unwrap();
        scattered_field(&s, &c)
    };
    let one = run(1.0);
    let two = run(2.0);
    let scale = one.data.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(scale > 0.0);
    for (a, b) in one.data.iter().zip(&two.data) {
        assert!((2.0 * a - b).abs() <= 1e-12 * scale);
    }
}

#[test]
fn energy_examples() {
    let c = SimConfig::default();
    let s = SimState::new(&c).unwrap();
    let zero = scattered_field(&s, &c);
    assert_eq!(energy(&zero, RegionSpec::FullInterior), 0.0);
    let mut one = zero.clone();
    one.data[17] = 1.0;
    assert_eq!(energy(&one, RegionSpec::FullInterior), c.cell_size().powi(2));
}

proptest! {
    #[test]
    fn quadrant_energy_bounded_by_full(values in proptest::collection::vec(-5.0..5.0f64, 16 * 16)) {
        let f = Field2 { nx: 16, ny: 16, dx: 0.5, x0: -3.75, y0: -3.75, data: values };
        let q = energy(&f, RegionSpec::UpperRightQuadrant);
        let full = energy(&f, RegionSpec::FullInterior);
        prop_assert!(q >= 0.0 && q <= full);
    }

    #[test]
    fn sensor_mean_matches_field_mean(values in proptest::collection::vec(-3.0..3.0f64, 96 * 96), d in 1usize..=96) {
        let f = Field2 { nx: 96, ny: 96, dx: 0.25, x0: 0.0, y0: 0.0, data: values };
        let img = downsample(&f, d, d);
        prop_assert!((img.mean() - f.mean()).abs() < 1e-12);
    }
}

#[test]
fn sensor_examples() {
    let c = SimConfig { pml_width: 16, grid_n: 128, sensor_size: 32, ..SimConfig::default() };
    let s = SimState::new(&c).unwrap();
    let img = sensor_read(&s, &c);
    assert_eq!((img.rows, img.cols), (32, 32));
    assert!(img.data.iter().all(|&v| v == 0.0));

    let k = 0.37;
    let constant = Field2 { nx: 96, ny: 96, dx: 1.0, x0: 0.0, y0: 0.0, data: vec![k; 96 * 96] };
    for d in [32, 64, 96, 7] {
        let img = downsample(&constant, d, d);
        assert!(img.data.iter().all(|&v| (v - k).abs() < 1e-14));
    }

    // Interior divisible by the sensor size: plain block means.
    let data: Vec<f64> = (0..96 * 96).map(|k| ((k * 7919) % 101) as f64 / 13.0).collect();
    let f = Field2 { nx: 96, ny: 96, dx: 1.0, x0: 0.0, y0: 0.0, data };
    let img = downsample(&f, 32, 32);
    let block = (0..3).flat_map(|j| (0..3).map(move |i| (i, j))).map(|(i, j)| f.at(3 + i, 6 + j)).sum::<f64>() / 9.0;
    assert!((img.data[2 * 32 + 1] - block).abs() < 1e-12);
    assert!((img.mean() - f.mean()).abs() < 1e-12);
}

fn still(design: &DesignState, c: &SimConfig) -> Vec<DesignState> {
    vec![design.clone(); c.substeps() + 1]
}

#[test]
fn run_window_quiet_and_nonnegative() {
    let c = quiet();
    let d = disk(1.0, 1.0, 0.7);
    let mut s = SimState::new(&c).unwrap();
    s.set_design(&d, &c).unwrap();
    let out = run_window(&mut s, &still(&d, &c), &c).unwrap();
    assert_eq!(out.sigma.len(), c.substeps());
    assert!(out.sigma.iter().all(|&v| v == 0.0));

    let c = SimConfig::default();
    let mut s = SimState::new(&c).unwrap();
    for _ in 0..40 {
        let out = run_window(&mut s, &still(&d, &c), &c).unwrap();
        assert!(out.sigma.iter().all(|&v| v >= 0.0 && v.is_finite()));
    }
    assert!(run_window(&mut s, &[d.clone()], &c).is_err());
}

#[test]
fn steady_design_reaches_steady_envelope() {
    let c = SimConfig::default();
    let d = disk(2.0, -3.0, 1.0);
    let mut s = SimState::new(&c).unwrap();
    s.set_design(&d, &c).unwrap();
    let mut per_action = Vec::new();
    for _ in 0..c.episode_steps {
        let out = run_window(&mut s, &still(&d, &c), &c).unwrap();
        per_action.push(out.sigma.iter().sum::<f64>() / out.sigma.len() as f64);
    }
    // Mean over consecutive 20-action blocks: rises, then settles.
    let blocks: Vec<f64> = per_action.chunks(20).map(|b| b.iter().sum::<f64>() / 20.0).collect();
    assert!(blocks[0] < blocks[4]);
    let tail = &blocks[5..];
    let hi = tail.iter().cloned().fold(f64::MIN, f64::max);
    let lo = tail.iter().cloned().fold(f64::MAX, f64::min);
    assert!((hi - lo) / hi < 0.05, "tail blocks {tail:?}");
}

#[test]
fn blowup_is_reported() {
    let c = SimConfig { blowup_bound: 1e-3, ..SimConfig::default() };
    let mut s = SimState::new(&c).unwrap();
    match step(&mut s, &c, 20) {
        Err(crate::Error::NumericalBlowup(_)) => {}
        other => panic!("expected blowup, got {other:?}"),
    }
}

#[test]
fn deterministic_runs() {
    let c = SimConfig::default();
    let run = || {
        let mut s = SimState::new(&c).unwrap();
        s.set_design(&disk(-1.0, 2.0, 0.9), &c).unwrap();
        step(&mut s, &c, 120).unwrap();
        s
    };
    assert_eq!(run(), run());
}

#[test]
fn pml_absorbs_outgoing_pulse() {
    let c = SimConfig { pml_width: 20, source_amplitude: 0.0, ..SimConfig::default() };
    let interior = |s: &SimState| energy(&interior_pressure(s, &c), RegionSpec::FullInterior);
    let mut s = SimState::new(&c).unwrap();
    s.set_initial_pressure(&c, |x, y| (-(x * x + y * y)).exp());
    let peak = interior(&s);
    // Time for the front to cross the interior diagonal and the layer twice.
    let crossing = 2.0 * c.domain_half_width * std::f64::consts::SQRT_2 / c.sound_speed;
    let steps = (crossing / s.dt()).ceil() as usize;
    step(&mut s, &c, steps).unwrap();
    assert!(interior(&s) / peak < 1e-3, "residual {:e}", interior(&s) / peak);
}
