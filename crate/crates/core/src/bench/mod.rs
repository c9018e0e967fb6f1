//! Experiment harness: seeded benchmark runs, the frozen-design oracle,
//! long-horizon prediction comparisons and report tables.

mod oracle;
mod prediction;
mod report;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

pub use oracle::{base_design, frozen_energy, levels, oracle_frozen_config, OracleGrid, OracleResult};
pub use prediction::{long_term_prediction_report, monotone_growth, without_damping, ModelPrediction, PredictionReport};
pub use report::{
    configuration_label, emit_report, mean_std, sig4, write_atomic, ReportFormat, ReportRow, ReportTable,
};

use crate::aem::{Surrogate, SurrogateKind};
use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::field2d::RegionSpec;
use crate::kv::{self, KvMap};
use crate::mpc::{run_controlled_episode, steady_state_energy, window_mean, Controller, MpcConfig, Task, STEADY_WINDOW};
use crate::robot::SpaceName;
use crate::train::{relative_step_errors, Dataset};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BenchTask {
    Suppress,
    Focus,
    LongTermPrediction,
}

impl BenchTask {
    pub fn control(self) -> Option<Task> {
        match self {
            BenchTask::Suppress => Some(Task::Suppress),
            BenchTask::Focus => Some(Task::Focus),
            BenchTask::LongTermPrediction => None,
        }
    }
}

impl std::fmt::Display for BenchTask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            BenchTask::Suppress => "suppress",
            BenchTask::Focus => "focus",
            BenchTask::LongTermPrediction => "long-term-prediction",
        })
    }
}

impl std::str::FromStr for BenchTask {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "suppress" => Ok(BenchTask::Suppress),
            "focus" => Ok(BenchTask::Focus),
            "long-term-prediction" | "prediction" => Ok(BenchTask::LongTermPrediction),
            _ => Err(Error::Config(format!("unknown benchmark task `{s}`"))),
        }
    }
}

/// A compared method. The first three act in closed loop, the last three
/// predict σ open loop.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    Random,
    MpcAem,
    MpcNode,
    Aem,
    AemNoPml,
    Node,
}

impl Method {
    pub fn label(self) -> &'static str {
        match self {
            Method::Random => "random",
            Method::MpcAem => "mpc-aem",
            Method::MpcNode => "mpc-node",
            Method::Aem => "aem",
            Method::AemNoPml => "aem-no-pml",
            Method::Node => "node",
        }
    }

    pub fn is_control(self) -> bool {
        matches!(self, Method::Random | Method::MpcAem | Method::MpcNode)
    }

    /// Checkpoint kind the method needs, if any.
    pub fn model(self) -> Option<SurrogateKind> {
        match self {
            Method::Random => None,
            Method::MpcAem | Method::Aem | Method::AemNoPml => Some(SurrogateKind::Aem),
            Method::MpcNode | Method::Node => Some(SurrogateKind::Node),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        [Method::Random, Method::MpcAem, Method::MpcNode, Method::Aem, Method::AemNoPml, Method::Node]
            .into_iter()
            .find(|m| m.label() == s)
            .ok_or_else(|| Error::Config(format!("unknown method `{s}`")))
    }
}

/// Everything needed to reproduce one benchmark table.
#[derive(Clone, Debug, PartialEq)]
pub struct BenchmarkSpec {
    pub space: SpaceName,
    pub task: BenchTask,
    pub methods: Vec<Method>,
    /// Closed-loop episodes per method, or held-out episodes for prediction.
    pub runs: usize,
    /// Run `k` uses seed `seed + k`.
    pub seed: u64,
    pub aem_checkpoint: Option<PathBuf>,
    pub node_checkpoint: Option<PathBuf>,
    /// Source of held-out episodes for the prediction task.
    pub dataset: Option<PathBuf>,
    /// Prediction horizon in actions.
    pub horizon: usize,
    pub env: EnvConfig,
    pub mpc: MpcConfig,
}

impl Default for BenchmarkSpec {
    fn default() -> Self {
        BenchmarkSpec {
            space: SpaceName { mode: crate::robot::ActuationMode::Positions, count: 1 },
            task: BenchTask::Suppress,
            methods: vec![Method::Random, Method::MpcAem],
            runs: 12,
            seed: 0,
            aem_checkpoint: None,
            node_checkpoint: None,
            dataset: None,
            horizon: 200,
            env: EnvConfig::default(),
            mpc: MpcConfig::default(),
        }
    }
}

fn parse_list<T: std::str::FromStr<Err = Error>>(raw: &str) -> Result<Vec<T>> {
    raw.split(',').map(str::trim).filter(|s| !s.is_empty()).map(str::parse).collect()
}

impl BenchmarkSpec {
    /// Reads benchmark keys plus any environment and MPC keys from `kv`.
    /// The `task` key drives both the benchmark and the planner.
    pub fn from_kv(kv: &mut KvMap) -> Result<Self> {
        let mut s = BenchmarkSpec::default();
        if let Some(raw) = kv.take_raw("space") {
            s.space = raw.parse()?;
        }
        if let Some(raw) = kv.take_raw("task") {
            s.task = raw.parse()?;
        }
        if let Some(raw) = kv.take_raw("methods") {
            s.methods = parse_list(&raw)?;
        }
        kv.take("runs", &mut s.runs)?;
        kv.take("seed", &mut s.seed)?;
        s.aem_checkpoint = kv.take_raw("aem_checkpoint").map(PathBuf::from);
        s.node_checkpoint = kv.take_raw("node_checkpoint").map(PathBuf::from);
        s.dataset = kv.take_raw("dataset").map(PathBuf::from);
        kv.take("horizon", &mut s.horizon)?;
        s.env = EnvConfig::from_kv(kv)?;
        s.mpc = MpcConfig::from_kv(kv)?;
        if let Some(t) = s.task.control() {
            s.mpc.task = t;
        }
        s.validate()?;
        Ok(s)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut kv = KvMap::parse(text)?;
        let s = Self::from_kv(&mut kv)?;
        kv.finish()?;
        Ok(s)
    }

    /// Loads a spec file; relative input paths are taken from its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut s = Self::parse(&std::fs::read_to_string(path)?)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut s.aem_checkpoint, &mut s.node_checkpoint, &mut s.dataset].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.runs < 2 {
            return bad(format!("a benchmark needs at least 2 runs, got {}", self.runs));
        }
        if self.methods.is_empty() {
            return bad("no methods listed".into());
        }
        for (i, m) in self.methods.iter().enumerate() {
            if self.methods[..i].contains(m) {
                return bad(format!("method `{m}` listed twice"));
            }
            if m.is_control() != self.task.control().is_some() {
                return bad(format!("method `{m}` does not apply to task `{}`", self.task));
            }
        }
        let want = match self.task {
            BenchTask::Focus => Some(RegionSpec::UpperRightQuadrant),
            BenchTask::Suppress => Some(RegionSpec::FullInterior),
            BenchTask::LongTermPrediction => None,
        };
        if let Some(r) = want {
            if self.env.sim.task_region != r {
                return bad(format!("task `{}` needs task_region = {r}", self.task));
            }
        }
        if self.task == BenchTask::LongTermPrediction {
            if self.dataset.is_none() {
                return bad("the prediction task needs `dataset`".into());
            }
            if self.horizon == 0 {
                return bad("prediction horizon must be positive".into());
            }
        }
        Ok(())
    }

    /// Seeds of the closed-loop runs, in run order.
    pub fn seeds(&self) -> Vec<u64> {
        (0..self.runs as u64).map(|k| self.seed.wrapping_add(k)).collect()
    }

    /// Canonical text form; `parse(to_text())` reproduces the spec.
    pub fn to_text(&self) -> String {
        let mut s = kv::render([
            ("space", self.space.to_string()),
            ("task", self.task.to_string()),
            ("methods", self.methods.iter().map(|m| m.label()).collect::<Vec<_>>().join(", ")),
            ("runs", self.runs.to_string()),
            ("seed", self.seed.to_string()),
            ("horizon", self.horizon.to_string()),
        ]);
        for (k, v) in [("aem_checkpoint", &self.aem_checkpoint), ("node_checkpoint", &self.node_checkpoint), ("dataset", &self.dataset)] {
            if let Some(p) = v {
                let _ = writeln!(s, "{k} = {}", p.display());
            }
        }
        s.push_str(&self.env.to_text());
        // the planner's task is implied by the benchmark task
        s.extend(self.mpc.to_text().lines().filter(|l| !l.starts_with("task ")).map(|l| format!("{l}\n")));
        s
    }

    fn checkpoint(&self, kind: SurrogateKind) -> Result<Surrogate> {
        let path = match kind {
            SurrogateKind::Aem => &self.aem_checkpoint,
            SurrogateKind::Node => &self.node_checkpoint,
        };
        let path = path.as_ref().ok_or_else(|| Error::Config(format!("no {kind}_checkpoint given")))?;
        let model = Surrogate::load(path)?;
        if model.kind() != kind {
            return Err(Error::Config(format!("{} holds a {} model, expected {kind}", path.display(), model.kind())));
        }
        Ok(model)
    }
}

/// One method's result on one run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    pub method: Method,
    pub run: usize,
    /// Episode seed for control runs, dataset episode index for prediction.
    pub seed: u64,
    /// Steady-state σ, or relative error at the horizon.
    pub value: f64,
    /// Per-run CSV from which `value` can be recomputed.
    pub csv: String,
}

impl RunRecord {
    pub fn file_name(&self) -> String {
        format!("{}_run{:02}.csv", self.method, self.run)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchmarkOutcome {
    pub table: ReportTable,
    pub runs: Vec<RunRecord>,
    /// Present for the prediction task.
    pub prediction: Option<PredictionReport>,
}

/// Aggregates runs per method, in the order methods first appear.
pub fn table_from_runs(configuration: &str, task: &str, runs: &[RunRecord]) -> ReportTable {
    let mut order: Vec<Method> = Vec::new();
    for r in runs {
        if !order.contains(&r.method) {
            order.push(r.method);
        }
    }
    let rows = order
        .into_iter()
        .map(|m| {
            let mut rs: Vec<&RunRecord> = runs.iter().filter(|r| r.method == m).collect();
            rs.sort_by_key(|r| r.run);
            let values: Vec<f64> = rs.iter().map(|r| r.value).collect();
            let (mean, std) = mean_std(&values);
            ReportRow { configuration: configuration.into(), task: task.into(), method: m.label().into(), mean, std, runs: values.len() }
        })
        .collect();
    ReportTable { rows }
}

/// Runs every method of `spec`.
///
/// Control tasks run `runs` seeded closed-loop episodes per method and
/// record steady-state σ over the standard window. The prediction task
/// rolls each model over the last `runs` dataset episodes and records the
/// relative error after `horizon` actions.
pub fn run_benchmark(spec: &BenchmarkSpec) -> Result<BenchmarkOutcome> {
    spec.validate()?;
    let mut models: Vec<(Method, Option<Surrogate>)> = Vec::new();
    for &m in &spec.methods {
        let model = match m.model() {
            Some(kind) => Some(spec.checkpoint(kind)?),
            None => None,
        };
        models.push((m, model));
    }
    let (runs, prediction) = match spec.task.control() {
        Some(task) => (control_runs(spec, task, models)?, None),
        None => {
            let (runs, report) = prediction_runs(spec, models)?;
            (runs, Some(report))
        }
    };
    let table = table_from_runs(&spec.space.to_string(), &spec.task.to_string(), &runs);
    Ok(BenchmarkOutcome { table, runs, prediction })
}

fn control_runs(spec: &BenchmarkSpec, task: Task, models: Vec<(Method, Option<Surrogate>)>) -> Result<Vec<RunRecord>> {
    let mpc = MpcConfig { task, ..spec.mpc.clone() };
    let controllers: Vec<(Method, Controller)> = models
        .into_iter()
        .map(|(m, model)| match model {
            None => (m, Controller::Random),
            Some(model) => (m, Controller::Mpc { model: Box::new(model), config: mpc.clone() }),
        })
        .collect();
    let seeds = spec.seeds();
    let jobs: Vec<(usize, usize)> = (0..controllers.len()).flat_map(|c| (0..seeds.len()).map(move |r| (c, r))).collect();
    jobs.par_iter()
        .map(|&(c, r)| {
            let (method, controller) = &controllers[c];
            let metrics = run_controlled_episode(&spec.env, spec.space, controller, spec.env.sim.episode_steps, seeds[r])?;
            let value = steady_state_energy(&metrics, STEADY_WINDOW.0, STEADY_WINDOW.1)?;
            Ok(RunRecord { method: *method, run: r, seed: seeds[r], value, csv: metrics.to_csv() })
        })
        .collect()
}

fn prediction_runs(spec: &BenchmarkSpec, models: Vec<(Method, Option<Surrogate>)>) -> Result<(Vec<RunRecord>, PredictionReport)> {
    let path = spec.dataset.as_ref().ok_or_else(|| Error::Config("the prediction task needs `dataset`".into()))?;
    let data = Dataset::load(path)?;
    if data.header.space != spec.space {
        return Err(Error::Config(format!("dataset holds space {}, spec asks for {}", data.header.space, spec.space)));
    }
    let n = data.episodes.len();
    if spec.runs > n {
        return Err(Error::Config(format!("{} held-out episodes requested, dataset has {n}", spec.runs)));
    }
    let episodes: Vec<usize> = (n - spec.runs..n).collect();
    let mut owned = Vec::with_capacity(models.len());
    for (m, model) in models {
        let model = model.ok_or_else(|| Error::Config(format!("method `{m}` needs a checkpoint")))?;
        let model = if m == Method::AemNoPml { without_damping(&model)? } else { model };
        owned.push((m.label().to_string(), model));
    }
    let refs: Vec<(String, &Surrogate)> = owned.iter().map(|(l, m)| (l.clone(), m)).collect();
    let report = long_term_prediction_report(&refs, &data, &episodes, spec.horizon)?;
    let mut runs = Vec::new();
    for (&method, mp) in spec.methods.iter().zip(&report.models) {
        for (r, &e) in episodes.iter().enumerate() {
            let mut csv = String::from("sample,t,truth,prediction\n");
            for (k, (t, p)) in report.truth[r].iter().zip(&mp.sigma[r]).enumerate() {
                let _ = writeln!(csv, "{k},{:?},{t:?},{p:?}", (k + 1) as f64 * report.dt);
            }
            runs.push(RunRecord { method, run: r, seed: e as u64, value: mp.errors[r][spec.horizon - 1], csv });
        }
    }
    Ok((runs, report))
}

/// Recomputes a run's value from its persisted CSV.
pub fn audit_run_csv(task: BenchTask, csv: &str, substeps: usize) -> Result<f64> {
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().ok_or_else(|| Error::Format("empty run CSV".into()))?.split(',').collect();
    let col = |name: &str| header.iter().position(|h| *h == name).ok_or_else(|| Error::Format(format!("run CSV lacks `{name}`")));
    let rows: Vec<Vec<f64>> = lines
        .map(|l| l.split(',').map(|x| x.parse::<f64>().map_err(|_| Error::Format(format!("bad value `{x}`")))).collect())
        .collect::<Result<_>>()?;
    let t = col("t")?;
    let dt = rows.first().map(|r| r[t]).ok_or_else(|| Error::Format("run CSV has no samples".into()))?;
    match task {
        BenchTask::LongTermPrediction => {
            let (ti, pi) = (col("truth")?, col("prediction")?);
            let truth: Vec<f64> = rows.iter().map(|r| r[ti]).collect();
            let pred: Vec<f64> = rows.iter().map(|r| r[pi]).collect();
            relative_step_errors(&pred, &truth, substeps)
                .last()
                .copied()
                .ok_or_else(|| Error::Format("run CSV has no samples".into()))
        }
        _ => {
            let si = col("sigma")?;
            let sigma: Vec<f64> = rows.iter().map(|r| r[si]).collect();
            window_mean(&sigma, dt, STEADY_WINDOW.0, STEADY_WINDOW.1)
        }
    }
}

/// Writes per-run CSVs, `runs.csv` and both report formats into `dir`.
/// Returns the written paths in a fixed order.
pub fn write_artifacts(spec: &BenchmarkSpec, outcome: &BenchmarkOutcome, dir: &Path) -> Result<Vec<PathBuf>> {
    let runs_dir = dir.join("runs");
    std::fs::create_dir_all(&runs_dir)?;
    let mut written = Vec::new();
    let mut index = String::from("method,run,seed,value\n");
    for r in &outcome.runs {
        let p = runs_dir.join(r.file_name());
        write_atomic(&p, r.csv.as_bytes())?;
        written.push(p);
        let _ = writeln!(index, "{},{},{},{:?}", r.method, r.run, r.seed, r.value);
    }
    let mut put = |name: &str, text: &str| -> Result<()> {
        let p = dir.join(name);
        write_atomic(&p, text.as_bytes())?;
        written.push(p);
        Ok(())
    };
    put("runs.csv", &index)?;
    put("report.csv", &outcome.table.to_csv())?;
    put("report.md", &outcome.table.to_markdown())?;
    put("spec.txt", &spec.to_text())?;
    if let Some(p) = &outcome.prediction {
        put("prediction_sigma.csv", &p.sigma_csv())?;
        put("prediction_error.csv", &p.error_csv())?;
    }
    Ok(written)
}

#[cfg(test)]
mod tests;
