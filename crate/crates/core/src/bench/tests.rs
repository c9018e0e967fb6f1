use super::*;
use crate::aem::{AemArch, AemModel, NodeArch, NodeModel, Normalization};
use crate::field2d::SimConfig;
use crate::train::generate_in_memory;

fn tiny_env() -> EnvConfig {
    EnvConfig {
        sim: SimConfig { grid_n: 64, pml_width: 8, sensor_size: 16, warm_up_steps: 20, ..SimConfig::default() },
        ..EnvConfig::default()
    }
}

fn p1() -> SpaceName {
    "P1".parse().unwrap()
}

fn tiny_aem(env: &EnvConfig, norm: Normalization) -> Surrogate {
    let mut arch = AemArch::for_env(&env.sim, 3);
    arch.grid.cells = 32;
    arch.grid.span = 8.0;
    arch.channels = vec![2, 3];
    arch.dense = 8;
    arch.robot_hidden = 6;
    Surrogate::Aem(AemModel::new(arch, norm, 3).unwrap())
}

fn tiny_node(env: &EnvConfig, norm: Normalization) -> Surrogate {
    let arch = NodeArch { channels: vec![2, 2], dense: 6, latent: 4, embed: 3, robot_hidden: 5, dyn_hidden: 7, ..NodeArch::for_env(&env.sim, 3) };
    Surrogate::Node(NodeModel::new(arch, norm, 4).unwrap())
}

fn row(conf: &str, task: &str, method: &str, mean: f64, std: f64, runs: usize) -> ReportRow {
    ReportRow { configuration: conf.into(), task: task.into(), method: method.into(), mean, std, runs }
}

fn sample_table() -> ReportTable {
    ReportTable {
        rows: vec![
            row("P1", "suppress", "random", 3.0012345, 0.7234, 12),
            row("P1", "suppress", "mpc-aem", 1.0799999, 0.18, 12),
            row("P2", "suppress", "random", 6.87e-3, 1.89e-4, 12),
            row("R", "focus", "mpc-aem", 12345.678, 0.0, 2),
        ],
    }
}

#[test]
fn levels_are_nested_across_resolutions() {
    assert_eq!(levels(-2.0, 2.0, 1), vec![0.0]);
    assert_eq!(levels(0.0, 1.0, 3), vec![0.0, 0.5, 1.0]);
    let coarse = levels(-3.0, 3.0, 5);
    let fine = levels(-3.0, 3.0, 9);
    assert!(coarse.iter().all(|c| fine.iter().any(|f| (f - c).abs() < 1e-12)));
    let g = OracleGrid::from_resolution(9).unwrap();
    assert_eq!((g.positions, g.radii), (9, 5));
    assert!(OracleGrid::from_resolution(0).is_err());
}

#[test]
fn resolution_one_evaluates_only_the_centroid() {
    let env = tiny_env();
    let r = oracle_frozen_config(&env, p1(), Task::Suppress, &OracleGrid::from_resolution(1).unwrap()).unwrap();
    assert_eq!(r.evaluated, 1);
    assert_eq!(r.design.centers, vec![[0.0, 0.0]]);
    let robot = env.robot(p1()).unwrap();
    let direct = frozen_energy(&env, &robot, &r.design, STEADY_WINDOW).unwrap();
    assert_eq!(direct.to_bits(), r.energy.to_bits());
}

#[test]
fn finer_oracle_grid_is_never_worse() {
    let env = tiny_env();
    let mut last = f64::INFINITY;
    for n in [1, 3, 5] {
        let r = oracle_frozen_config(&env, p1(), Task::Suppress, &OracleGrid::from_resolution(n).unwrap()).unwrap();
        assert!(r.energy <= last, "resolution {n}: {} > {last}", r.energy);
        last = r.energy;
    }
    let mut prev = 0.0;
    for n in [1, 3] {
        let r = oracle_frozen_config(&env, p1(), Task::Focus, &OracleGrid::from_resolution(n).unwrap()).unwrap();
        assert!(r.energy >= prev);
        prev = r.energy;
    }
}

#[test]
fn coordinate_descent_improves_on_its_start() {
    let env = tiny_env();
    let space: SpaceName = "P2".parse().unwrap();
    let robot = env.robot(space).unwrap();
    let start = frozen_energy(&env, &robot, &base_design(&robot).unwrap(), STEADY_WINDOW).unwrap();
    let grid = OracleGrid { positions: 3, radii: 1, sweeps: 1 };
    let r = oracle_frozen_config(&env, space, Task::Suppress, &grid).unwrap();
    assert!(r.energy <= start);
    assert!(robot.is_feasible(&r.design));
    assert!(r.evaluated > 1);
}

#[test]
fn mean_std_matches_two_pass_formula() {
    let v = [1.0, 2.0, 4.0, 7.0];
    let (m, s) = mean_std(&v);
    assert_eq!(m, 3.5);
    // squared deviations 6.25 + 2.25 + 0.25 + 12.25 = 21, over n - 1 = 3
    assert!((s - 7.0f64.sqrt()).abs() < 1e-15);
    assert_eq!(mean_std(&[2.5]), (2.5, 0.0));
    assert!(mean_std(&[]).0.is_nan());
}

#[test]
fn sig4_keeps_four_significant_digits() {
    assert_eq!(sig4(1.08), "1.080e0");
    assert_eq!(sig4(0.000123456), "1.235e-4");
    assert_eq!(sig4(-2500.0), "-2.500e3");
    assert_eq!(sig4(f64::INFINITY), "inf");
}

#[test]
fn empty_table_renders_header_only() {
    let t = ReportTable::default();
    assert_eq!(t.to_csv(), "configuration,task,method,mean,std,runs\n");
    assert_eq!(ReportTable::parse_csv(&t.to_csv()).unwrap(), t);
    assert_eq!(t.to_markdown().lines().count(), 2);
}

#[test]
fn csv_and_markdown_round_trip() {
    let t = sample_table();
    for f in [ReportFormat::Csv, ReportFormat::Markdown] {
        let text = t.render(f);
        let back = ReportTable::parse(&text, f).unwrap();
        assert_eq!(back, t.rounded(), "{f:?}");
        assert_eq!(back.render(f), text);
    }
    let md = t.to_markdown();
    assert!(md.contains("| suppress | M=1 (P) | 3.001e0 ± 7.234e-1 (12) | 1.080e0 ± 1.800e-1 (12) |"), "{md}");
    assert!(md.contains("| focus | M=19 (R) | N/A | 1.235e4 ± 0.000e0 (2) |"), "{md}");
}

#[test]
fn malformed_reports_are_format_errors() {
    assert!(matches!(ReportTable::parse_csv("a,b\n"), Err(Error::Format(_))));
    let bad = "configuration,task,method,mean,std,runs\nP1,suppress,random,x,1,2\n";
    assert!(matches!(ReportTable::parse_csv(bad), Err(Error::Format(_))));
    assert!(ReportTable::parse_markdown("| x |\n").is_err());
}

#[test]
fn emit_report_writes_the_rendered_text() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("r.md");
    emit_report(&sample_table(), ReportFormat::Markdown, &p).unwrap();
    assert_eq!(std::fs::read_to_string(&p).unwrap(), sample_table().to_markdown());
    assert!(emit_report(&sample_table(), ReportFormat::Csv, &dir.path().join("missing/r.csv")).is_err());
}

#[test]
fn spec_text_round_trips_and_validates() {
    let text = "space = P2\ntask = focus\nmethods = random, mpc-node\nruns = 3\nseed = 7\ntask_region = quadrant\nmpc_candidates = 16\nsigma_hi = 4.0\n";
    let s = BenchmarkSpec::parse(text).unwrap();
    assert_eq!(s.methods, vec![Method::Random, Method::MpcNode]);
    assert_eq!(s.mpc.task, Task::Focus);
    assert_eq!(s.mpc.candidates, 16);
    assert_eq!(s.seeds(), vec![7, 8, 9]);
    assert_eq!(BenchmarkSpec::parse(&s.to_text()).unwrap(), s);

    for bad in [
        "runs = 1\n",
        "methods = random, random\n",
        "methods = aem\n",
        "task = focus\n",
        "task = long-term-prediction\nmethods = aem\n",
        "methods = teleport\n",
        "bogus = 1\n",
    ] {
        assert!(matches!(BenchmarkSpec::parse(bad), Err(Error::Config(_))), "{bad}");
    }
}

#[test]
fn spec_paths_resolve_against_the_spec_file() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bench.cfg");
    std::fs::write(&p, "aem_checkpoint = m.wvck\nnode_checkpoint = /abs/n.wvck\n").unwrap();
    let s = BenchmarkSpec::load(&p).unwrap();
    assert_eq!(s.aem_checkpoint.unwrap(), dir.path().join("m.wvck"));
    assert_eq!(s.node_checkpoint.unwrap(), PathBuf::from("/abs/n.wvck"));
}

#[test]
fn missing_checkpoint_is_reported() {
    let spec = BenchmarkSpec { env: tiny_env(), runs: 2, ..BenchmarkSpec::default() };
    assert!(matches!(run_benchmark(&spec), Err(Error::Config(_))));
    let spec = BenchmarkSpec { aem_checkpoint: Some("/nonexistent/x.wvck".into()), ..spec };
    assert!(matches!(run_benchmark(&spec), Err(Error::Io(_))));
}

#[test]
fn random_benchmark_is_reproducible_and_auditable() {
    let spec = BenchmarkSpec { env: tiny_env(), methods: vec![Method::Random], runs: 2, seed: 5, ..BenchmarkSpec::default() };
    let a = run_benchmark(&spec).unwrap();
    assert_eq!(a.table.rows.len(), 1);
    let r = &a.table.rows[0];
    assert_eq!((r.configuration.as_str(), r.task.as_str(), r.method.as_str(), r.runs), ("P1", "suppress", "random", 2));
    let b = run_benchmark(&spec).unwrap();
    assert_eq!(a, b);
    let subs = spec.env.sim.substeps();
    for run in &a.runs {
        let v = audit_run_csv(spec.task, &run.csv, subs).unwrap();
        assert_eq!(v.to_bits(), run.value.to_bits());
    }
    let values: Vec<f64> = a.runs.iter().map(|r| r.value).collect();
    assert_eq!(mean_std(&values).0, r.mean);

    let dir = tempfile::tempdir().unwrap();
    let files = write_artifacts(&spec, &a, dir.path()).unwrap();
    assert!(files.iter().all(|f| f.exists()));
    let back = ReportTable::parse_csv(&std::fs::read_to_string(dir.path().join("report.csv")).unwrap()).unwrap();
    assert_eq!(back, a.table.rounded());
    let persisted = std::fs::read_to_string(dir.path().join("runs").join(a.runs[1].file_name())).unwrap();
    assert_eq!(persisted, a.runs[1].csv);
}

#[test]
fn mpc_benchmark_runs_with_a_saved_checkpoint() {
    let env = tiny_env();
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("aem.wvck");
    tiny_aem(&env, Normalization::identity(3)).save(&ckpt).unwrap();
    let spec = BenchmarkSpec {
        env,
        methods: vec![Method::MpcAem],
        runs: 2,
        aem_checkpoint: Some(ckpt),
        mpc: MpcConfig { candidates: 6, iterations: 1, horizon: 2, ..MpcConfig::default() },
        ..BenchmarkSpec::default()
    };
    let out = run_benchmark(&spec).unwrap();
    assert_eq!(out.table.rows[0].method, "mpc-aem");
    assert!(out.runs.iter().all(|r| r.value.is_finite() && r.value >= 0.0));
    let node_as_aem = BenchmarkSpec { aem_checkpoint: Some(dir.path().join("node.wvck")), ..spec };
    tiny_node(&node_as_aem.env, Normalization::identity(3)).save(node_as_aem.aem_checkpoint.as_ref().unwrap()).unwrap();
    assert!(matches!(run_benchmark(&node_as_aem), Err(Error::Config(_))));
}

#[test]
fn prediction_report_truth_is_the_dataset_record() {
    let env = EnvConfig { sim: SimConfig { episode_steps: 12, ..tiny_env().sim }, ..tiny_env() };
    let d = generate_in_memory(&env, p1(), 3, 9).unwrap();
    let aem = tiny_aem(&env, Normalization::identity(3));
    let ablated = without_damping(&aem).unwrap();
    let node = tiny_node(&env, Normalization::identity(3));
    assert!(without_damping(&node).is_err());
    let models = vec![("aem".to_string(), &aem), ("aem-no-pml".to_string(), &ablated), ("node".to_string(), &node)];
    let rep = long_term_prediction_report(&models, &d, &[1, 2], 12).unwrap();
    let s = d.header.substeps;
    for (i, e) in [1usize, 2].iter().enumerate() {
        let recorded = &d.episodes[*e].sigma[..12 * s];
        assert_eq!(rep.truth[i].len(), recorded.len());
        assert!(rep.truth[i].iter().zip(recorded).all(|(a, b)| (*a as f32).to_bits() == b.to_bits() && *a == *b as f64));
    }
    let csv = rep.sigma_csv();
    assert_eq!(csv.lines().next().unwrap(), "episode,sample,t,truth,aem,aem-no-pml,node");
    assert_eq!(csv.lines().count(), 1 + 2 * 12 * s);
    let first: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(first[3].parse::<f64>().unwrap(), rep.truth[0][0]);
    let err = rep.error_csv();
    assert_eq!(err.lines().count(), 13);
    assert!(err.starts_with("step,aem_mean,aem-no-pml_mean,node_mean,aem_ep1,aem_ep2,"));
    let w = rep.wins("aem", "node", 12).unwrap();
    assert!(w <= 2);
    assert_eq!(rep.wins("aem", "aem", 12).unwrap(), 0);
    assert!(rep.wins("aem", "nope", 1).is_err());
}

#[test]
fn monotone_growth_uses_block_means() {
    let rising: Vec<f64> = (0..60).map(|k| k as f64 + if k % 2 == 0 { 0.9 } else { -0.9 }).collect();
    assert!(monotone_growth(&rising, 1, 10));
    // noisy per step, but block means rise
    assert!(!rising.windows(2).all(|w| w[1] >= w[0]));
    let mut dip = rising.clone();
    dip[45] = -100.0;
    assert!(!monotone_growth(&dip, 1, 10));
    assert!(monotone_growth(&dip, 51, 5));
    assert!(!monotone_growth(&rising, 61, 10));
    assert!(!monotone_growth(&rising, 55, 10));
}

#[test]
fn prediction_benchmark_reports_the_horizon_error() {
    let env = EnvConfig { sim: SimConfig { episode_steps: 10, ..tiny_env().sim }, ..tiny_env() };
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.wvds");
    crate::train::generate_dataset(&env, p1(), 4, 2, &data).unwrap();
    let ckpt = dir.path().join("aem.wvck");
    tiny_aem(&env, Normalization::identity(3)).save(&ckpt).unwrap();
    let spec = BenchmarkSpec {
        env,
        task: BenchTask::LongTermPrediction,
        methods: vec![Method::Aem, Method::AemNoPml],
        runs: 2,
        aem_checkpoint: Some(ckpt),
        dataset: Some(data),
        horizon: 10,
        ..BenchmarkSpec::default()
    };
    let out = run_benchmark(&spec).unwrap();
    let rep = out.prediction.as_ref().unwrap();
    assert_eq!(rep.episodes, vec![2, 3]);
    assert_eq!(out.table.rows.len(), 2);
    for r in &out.runs {
        let m = rep.model(r.method.label()).unwrap();
        assert_eq!(r.value.to_bits(), m.errors[r.run][9].to_bits());
        let audited = audit_run_csv(spec.task, &r.csv, rep.substeps).unwrap();
        assert_eq!(audited.to_bits(), r.value.to_bits());
    }
    let too_many = BenchmarkSpec { runs: 5, ..spec };
    assert!(run_benchmark(&too_many).is_err());
}
