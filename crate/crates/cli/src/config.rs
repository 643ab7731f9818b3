//! Flat key-value experiment configuration.
//!
//! A config file is TOML whose tables flatten to dotted keys
//! (`[schedule] c = 2` is the key `schedule.c`). Command-line overrides use
//! the same keys. Every key must be recognised; leftovers are an error so
//! typos do not silently fall back to defaults.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use svrb::problems::{ReweightingConfig, WeightMode};
use svrb::schedule::{BetaMultipliers, EstimatorKind, ScheduleConfig, StepMode};
use svrb::solvers::{StagePlan, TtsaSampling};
use toml::Value;

use crate::CliError;

/// Dotted keys mapped to TOML values.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FlatConfig {
    entries: BTreeMap<String, Value>,
}

fn flatten(prefix: &str, table: &toml::Table, out: &mut BTreeMap<String, Value>) {
    for (k, v) in table {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            Value::Table(t) => flatten(&key, t, out),
            other => {
                out.insert(key, other.clone());
            }
        }
    }
}

/// Parses the right-hand side of `key=value` as a TOML value, falling back
/// to a bare string.
pub fn parse_value(text: &str) -> Value {
    let doc = format!("v = {text}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| Value::String(text.to_string())),
        Err(_) => Value::String(text.to_string()),
    }
}

/// Renders a value for CSV cells and messages (strings unquoted).
pub fn display_value(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

impl FlatConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let table: toml::Table = text.parse().map_err(|e| CliError::Config(format!("{e}")))?;
        let mut entries = BTreeMap::new();
        flatten("", &table, &mut entries);
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn set(&mut self, key: &str, value: Value) {
        self.entries.insert(key.to_string(), value);
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, spec: &str) -> Result<(), CliError> {
        let (key, value) = spec
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("override `{spec}` is not key=value")))?;
        let key = key.trim();
        if key.is_empty() {
            return Err(CliError::Config(format!("override `{spec}` has an empty key")));
        }
        self.set(key, parse_value(value.trim()));
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&Value> {
        self.entries.get(key)
    }

    pub fn entries(&self) -> &BTreeMap<String, Value> {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Tracks which keys were read.
struct Reader<'a> {
    cfg: &'a FlatConfig,
    used: BTreeSet<String>,
}

fn type_error(key: &str, want: &str, got: &Value) -> CliError {
    CliError::Config(format!("`{key}` must be {want}, got {}", got))
}

impl<'a> Reader<'a> {
    fn new(cfg: &'a FlatConfig) -> Self {
        Self {
            cfg,
            used: BTreeSet::new(),
        }
    }

    fn raw(&mut self, key: &str) -> Option<&'a Value> {
        let v = self.cfg.get(key)?;
        self.used.insert(key.to_string());
        Some(v)
    }

    fn f64(&mut self, key: &str) -> Result<Option<f64>, CliError> {
        match self.raw(key) {
            None => Ok(None),
            Some(Value::Float(f)) => Ok(Some(*f)),
            Some(Value::Integer(i)) => Ok(Some(*i as f64)),
            Some(v) => Err(type_error(key, "a number", v)),
        }
    }

    fn u64(&mut self, key: &str) -> Result<Option<u64>, CliError> {
        match self.raw(key) {
            None => Ok(None),
            Some(Value::Integer(i)) if *i >= 0 => Ok(Some(*i as u64)),
            Some(v) => Err(type_error(key, "a non-negative integer", v)),
        }
    }

    fn usize(&mut self, key: &str) -> Result<Option<usize>, CliError> {
        Ok(self.u64(key)?.map(|v| v as usize))
    }

    fn bool(&mut self, key: &str) -> Result<Option<bool>, CliError> {
        match self.raw(key) {
            None => Ok(None),
            Some(Value::Boolean(b)) => Ok(Some(*b)),
            Some(v) => Err(type_error(key, "true or false", v)),
        }
    }

    fn string(&mut self, key: &str) -> Result<Option<String>, CliError> {
        match self.raw(key) {
            None => Ok(None),
            Some(Value::String(s)) => Ok(Some(s.clone())),
            Some(v) => Err(type_error(key, "a string", v)),
        }
    }

    fn strings(&mut self, key: &str) -> Result<Option<Vec<String>>, CliError> {
        match self.raw(key) {
            None => Ok(None),
            Some(Value::String(s)) => Ok(Some(vec![s.clone()])),
            Some(Value::Array(items)) => items
                .iter()
                .map(|v| match v {
                    Value::String(s) => Ok(s.clone()),
                    other => Err(type_error(key, "a list of strings", other)),
                })
                .collect::<Result<Vec<_>, _>>()
                .map(Some),
            Some(v) => Err(type_error(key, "a string or list of strings", v)),
        }
    }

    fn u64s(&mut self, key: &str) -> Result<Option<Vec<u64>>, CliError> {
        match self.raw(key) {
            None => Ok(None),
            Some(Value::Integer(i)) if *i >= 0 => Ok(Some(vec![*i as u64])),
            Some(Value::Array(items)) => items
                .iter()
                .map(|v| match v {
                    Value::Integer(i) if *i >= 0 => Ok(*i as u64),
                    other => Err(type_error(key, "a list of non-negative integers", other)),
                })
                .collect::<Result<Vec<_>, _>>()
                .map(Some),
            Some(v) => Err(type_error(key, "an integer or list of integers", v)),
        }
    }

    fn finish(self) -> Result<(), CliError> {
        let unknown: Vec<&String> = self.cfg.entries.keys().filter(|k| !self.used.contains(*k)).collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            let names: Vec<&str> = unknown.iter().map(|s| s.as_str()).collect();
            Err(CliError::Config(format!("unknown key(s): {}", names.join(", "))))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Files { train: PathBuf, validation: PathBuf },
    Toy {
        n_train: usize,
        n_validation: usize,
        n_features: usize,
        label_noise: f64,
        seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProblemSpec {
    /// `m` random quadratic tasks; `m = 1` is the single-task problem.
    Quadratic {
        dim: usize,
        lower_dim: usize,
        cond: f64,
        alpha: f64,
        noise: f64,
        seed: u64,
        m: usize,
    },
    Reweighting {
        data: DataSource,
        config: ReweightingConfig,
    },
    Temperature {
        data: DataSource,
        config: ReweightingConfig,
        m: usize,
        seed: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Algorithm {
    Svrb,
    Rsvrb,
    ReRsvrb,
    Ttsa,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Svrb => "svrb",
            Algorithm::Rsvrb => "rsvrb",
            Algorithm::ReRsvrb => "re_rsvrb",
            Algorithm::Ttsa => "ttsa",
        }
    }

    fn parse(s: &str) -> Result<Self, CliError> {
        match s {
            "svrb" => Ok(Algorithm::Svrb),
            "rsvrb" => Ok(Algorithm::Rsvrb),
            "re_rsvrb" => Ok(Algorithm::ReRsvrb),
            "ttsa" => Ok(Algorithm::Ttsa),
            other => Err(CliError::Config(format!(
                "unknown algorithm `{other}` (expected svrb, rsvrb, re_rsvrb or ttsa)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverSpec {
    pub algorithm: Algorithm,
    pub schedule: ScheduleConfig,
    /// Stage plan for `re_rsvrb`.
    pub stages: Option<StagePlan>,
    pub sampling: TtsaSampling,
}

impl SolverSpec {
    /// Iterations the run will take.
    pub fn steps(&self, steps: u64) -> u64 {
        self.stages.as_ref().map_or(steps, StagePlan::total_steps)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum StartPoint {
    Fill(f64),
    Vector(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub problem: ProblemSpec,
    pub solvers: Vec<SolverSpec>,
    pub steps: u64,
    /// `B0`.
    pub batch_size: usize,
    pub y0_tol: Option<f64>,
    pub sample_budget: Option<u64>,
    pub tasks_per_iter: usize,
    pub seeds: Vec<u64>,
    /// Steps between trace rows; `None` means `max(1, T/200)`.
    pub log_every: Option<u64>,
    pub inner_tol: f64,
    pub out: Option<PathBuf>,
    pub x0: StartPoint,
}

impl ExperimentConfig {
    /// Trace cadence for a run of `steps` iterations.
    pub fn cadence(&self, steps: u64) -> u64 {
        self.log_every.unwrap_or((steps / 200).max(1))
    }
}

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

fn data_source(r: &mut Reader) -> Result<DataSource, CliError> {
    let train = r.string("problem.train")?;
    let validation = r.string("problem.validation")?;
    let toy_keys = [
        "problem.toy_train",
        "problem.toy_validation",
        "problem.toy_features",
        "problem.toy_noise",
        "problem.toy_seed",
    ];
    match (train, validation) {
        (Some(train), Some(validation)) => {
            if let Some(k) = toy_keys.iter().find(|k| r.cfg.get(k).is_some()) {
                return Err(config_err(format!("`{k}` conflicts with problem.train/problem.validation")));
            }
            let (train, validation) = (PathBuf::from(train), PathBuf::from(validation));
            for p in [&train, &validation] {
                if !p.is_file() {
                    return Err(config_err(format!("dataset file {} does not exist", p.display())));
                }
            }
            Ok(DataSource::Files { train, validation })
        }
        (None, None) => Ok(DataSource::Toy {
            n_train: r.usize("problem.toy_train")?.unwrap_or(100),
            n_validation: r.usize("problem.toy_validation")?.unwrap_or(50),
            n_features: r.usize("problem.toy_features")?.unwrap_or(10),
            label_noise: r.f64("problem.toy_noise")?.unwrap_or(0.3),
            seed: r.u64("problem.toy_seed")?.unwrap_or(0),
        }),
        _ => Err(config_err("problem.train and problem.validation must be given together")),
    }
}

fn reweighting_config(r: &mut Reader) -> Result<ReweightingConfig, CliError> {
    let d = ReweightingConfig::default();
    let mode = match r.string("problem.mode")?.as_deref() {
        None | Some("sigmoid") => WeightMode::Sigmoid,
        Some("raw") => WeightMode::Raw,
        Some(other) => return Err(config_err(format!("unknown weight mode `{other}` (sigmoid or raw)"))),
    };
    Ok(ReweightingConfig {
        lambda_reg: r.f64("problem.lambda")?.unwrap_or(d.lambda_reg),
        mode,
        batch_train: r.usize("problem.batch_train")?.unwrap_or(d.batch_train),
        batch_val: r.usize("problem.batch_validation")?.unwrap_or(d.batch_val),
        regularize_intercept: r.bool("problem.regularize_intercept")?.unwrap_or(d.regularize_intercept),
    })
}

fn problem(r: &mut Reader) -> Result<ProblemSpec, CliError> {
    let kind = r
        .string("problem.kind")?
        .ok_or_else(|| config_err("missing `problem.kind`"))?;
    match kind.as_str() {
        "quadratic" | "quadratic_family" => {
            let default_m = if kind == "quadratic" { 1 } else { 5 };
            let m = r.usize("problem.m")?.unwrap_or(default_m);
            if kind == "quadratic" && m != 1 {
                return Err(config_err("problem.kind = quadratic has m = 1; use quadratic_family"));
            }
            Ok(ProblemSpec::Quadratic {
                dim: r.usize("problem.dim")?.unwrap_or(10),
                lower_dim: r.usize("problem.lower_dim")?.unwrap_or(10),
                cond: r.f64("problem.cond")?.unwrap_or(4.0),
                alpha: r.f64("problem.alpha")?.unwrap_or(0.1),
                noise: r.f64("problem.noise")?.unwrap_or(1.0),
                seed: r.u64("problem.seed")?.unwrap_or(0),
                m,
            })
        }
        "reweighting" => Ok(ProblemSpec::Reweighting {
            data: data_source(r)?,
            config: reweighting_config(r)?,
        }),
        "temperature" => Ok(ProblemSpec::Temperature {
            data: data_source(r)?,
            config: reweighting_config(r)?,
            m: r.usize("problem.m")?.unwrap_or(10),
            seed: r.u64("problem.seed")?.unwrap_or(0),
        }),
        other => Err(config_err(format!(
            "unknown problem kind `{other}` (quadratic, quadratic_family, reweighting or temperature)"
        ))),
    }
}

const SCHEDULE_KEYS: [&str; 14] = [
    "mode", "eta", "tau_t", "beta", "beta_fx", "beta_fy", "beta_gxy", "beta_gyy", "beta_gy", "beta_d", "c", "c0",
    "gamma", "tau",
];

/// `schedule.<algo>.<key>` wins over `schedule.<key>`; both are read so
/// that neither counts as unknown.
fn sched_f64(r: &mut Reader, algo: Algorithm, key: &str) -> Result<Option<f64>, CliError> {
    let specific = r.f64(&format!("schedule.{}.{key}", algo.name()))?;
    let shared = r.f64(&format!("schedule.{key}"))?;
    Ok(specific.or(shared))
}

fn sched_str(r: &mut Reader, algo: Algorithm, key: &str) -> Result<Option<String>, CliError> {
    let specific = r.string(&format!("schedule.{}.{key}", algo.name()))?;
    let shared = r.string(&format!("schedule.{key}"))?;
    Ok(specific.or(shared))
}

fn schedule(r: &mut Reader, algo: Algorithm) -> Result<ScheduleConfig, CliError> {
    let default_mode = if algo == Algorithm::Ttsa { "half" } else { "third" };
    let mode_name = sched_str(r, algo, "mode")?.unwrap_or_else(|| default_mode.to_string());
    let mode = match mode_name.as_str() {
        "third" => StepMode::PolynomialThird,
        "half" => StepMode::PolynomialHalf,
        "constant" => StepMode::Constant {
            eta: sched_f64(r, algo, "eta")?.ok_or_else(|| config_err("constant schedule needs `schedule.eta`"))?,
            tau_t: sched_f64(r, algo, "tau_t")?.ok_or_else(|| config_err("constant schedule needs `schedule.tau_t`"))?,
        },
        other => return Err(config_err(format!("unknown schedule mode `{other}` (third, half or constant)"))),
    };
    let d = ScheduleConfig::default();
    let mut beta = BetaMultipliers::uniform(sched_f64(r, algo, "beta")?.unwrap_or(1.0));
    for (kind, name) in [
        (EstimatorKind::Fx, "beta_fx"),
        (EstimatorKind::Fy, "beta_fy"),
        (EstimatorKind::Gxy, "beta_gxy"),
        (EstimatorKind::Gyy, "beta_gyy"),
        (EstimatorKind::Gy, "beta_gy"),
        (EstimatorKind::D, "beta_d"),
    ] {
        if let Some(v) = sched_f64(r, algo, name)? {
            beta.set(kind, v);
        }
    }
    let cfg = ScheduleConfig {
        c: sched_f64(r, algo, "c")?.unwrap_or(d.c),
        c0: sched_f64(r, algo, "c0")?.unwrap_or(d.c0),
        gamma: sched_f64(r, algo, "gamma")?.unwrap_or(d.gamma),
        tau: sched_f64(r, algo, "tau")?.unwrap_or(d.tau),
        beta,
        mode,
    };
    cfg.validate().map_err(|e| config_err(format!("{} schedule: {e}", algo.name())))?;
    Ok(cfg)
}

fn stage_plan(r: &mut Reader) -> Result<StagePlan, CliError> {
    let plan = StagePlan::geometric(
        r.f64("stages.eta1")?.unwrap_or(0.05),
        r.f64("stages.tau1")?.unwrap_or(0.05),
        r.u64("stages.t1")?.unwrap_or(1000),
        r.usize("stages.count")?.unwrap_or(4),
    );
    plan.validate().map_err(|e| config_err(format!("stage plan: {e}")))?;
    Ok(plan)
}

fn start_point(r: &mut Reader) -> Result<StartPoint, CliError> {
    match r.raw("run.x0") {
        None => Ok(StartPoint::Fill(0.0)),
        Some(Value::Float(f)) => Ok(StartPoint::Fill(*f)),
        Some(Value::Integer(i)) => Ok(StartPoint::Fill(*i as f64)),
        Some(Value::Array(items)) => items
            .iter()
            .map(|v| match v {
                Value::Float(f) => Ok(*f),
                Value::Integer(i) => Ok(*i as f64),
                other => Err(type_error("run.x0", "a list of numbers", other)),
            })
            .collect::<Result<Vec<_>, _>>()
            .map(StartPoint::Vector),
        Some(v) => Err(type_error("run.x0", "a number or list of numbers", v)),
    }
}

impl ExperimentConfig {
    /// Builds the typed config. Rejects unknown keys and values that are out
    /// of range on their own; dimension checks need the problem and live in
    /// [`crate::experiment::Experiment::build`].
    pub fn from_flat(cfg: &FlatConfig) -> Result<Self, CliError> {
        let mut r = Reader::new(cfg);
        let problem = problem(&mut r)?;
        let names = r
            .strings("solver.algorithm")?
            .ok_or_else(|| config_err("missing `solver.algorithm`"))?;
        if names.is_empty() {
            return Err(config_err("`solver.algorithm` is empty"));
        }
        let mut algorithms = Vec::new();
        for n in &names {
            let a = Algorithm::parse(n)?;
            if algorithms.contains(&a) {
                return Err(config_err(format!("algorithm `{n}` listed twice")));
            }
            algorithms.push(a);
        }
        let sampling = match r.string("solver.sampling")?.as_deref() {
            None | Some("one_task") => TtsaSampling::OneTask,
            Some("per_task") => TtsaSampling::PerTask,
            Some(other) => return Err(config_err(format!("unknown sampling `{other}` (one_task or per_task)"))),
        };
        let plan = if algorithms.contains(&Algorithm::ReRsvrb) {
            Some(stage_plan(&mut r)?)
        } else {
            None
        };
        let mut solvers = Vec::new();
        for &algorithm in &algorithms {
            solvers.push(SolverSpec {
                algorithm,
                schedule: schedule(&mut r, algorithm)?,
                stages: if algorithm == Algorithm::ReRsvrb { plan.clone() } else { None },
                sampling,
            });
        }
        // sections for solvers not selected (e.g. after an override) are allowed
        for other in [Algorithm::Svrb, Algorithm::Rsvrb, Algorithm::ReRsvrb, Algorithm::Ttsa] {
            if !algorithms.contains(&other) {
                for key in &SCHEDULE_KEYS {
                    r.raw(&format!("schedule.{}.{key}", other.name()));
                }
            }
        }
        let steps = r.u64("solver.steps")?.unwrap_or(1000);
        let batch_size = r.usize("solver.batch_size")?.unwrap_or(1);
        let y0_tol = r.f64("solver.y0_tol")?;
        let sample_budget = r.u64("solver.sample_budget")?;
        let tasks_per_iter = r.usize("solver.tasks_per_iter")?.unwrap_or(1);
        let seeds = r.u64s("run.seeds")?.unwrap_or_else(|| vec![0]);
        let log_every = r.u64("run.log_every")?;
        let inner_tol = r.f64("run.inner_tol")?.unwrap_or(svrb::objective::DEFAULT_INNER_TOL);
        let out = r.string("run.out")?.map(PathBuf::from);
        let x0 = start_point(&mut r)?;
        r.finish()?;

        if steps == 0 {
            return Err(config_err("`solver.steps` must be >= 1"));
        }
        if batch_size == 0 {
            return Err(config_err("`solver.batch_size` must be >= 1"));
        }
        if tasks_per_iter == 0 {
            return Err(config_err("`solver.tasks_per_iter` must be >= 1"));
        }
        if y0_tol.is_some_and(|t| !(t > 0.0)) {
            return Err(config_err("`solver.y0_tol` must be positive"));
        }
        if sample_budget == Some(0) {
            return Err(config_err("`solver.sample_budget` must be >= 1"));
        }
        if seeds.is_empty() {
            return Err(config_err("`run.seeds` is empty"));
        }
        if log_every == Some(0) {
            return Err(config_err("`run.log_every` must be >= 1"));
        }
        if !(inner_tol > 0.0) {
            return Err(config_err("`run.inner_tol` must be positive"));
        }
        Ok(Self {
            problem,
            solvers,
            steps,
            batch_size,
            y0_tol,
            sample_budget,
            tasks_per_iter,
            seeds,
            log_every,
            inner_tol,
            out,
            x0,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<ExperimentConfig, CliError> {
        ExperimentConfig::from_flat(&FlatConfig::parse(text)?)
    }

    const BASE: &str = "[problem]\nkind = \"quadratic\"\n[solver]\nalgorithm = \"svrb\"\n";

    #[test]
    fn sections_flatten_to_dotted_keys() {
        let cfg = FlatConfig::parse("[a]\nb = 1\n[a.c]\nd = \"x\"\ne = [1, 2]\n").unwrap();
        let keys: Vec<&str> = cfg.entries().keys().map(|s| s.as_str()).collect();
        assert_eq!(keys, vec!["a.b", "a.c.d", "a.c.e"]);
    }

    #[test]
    fn overrides_parse_toml_values() {
        let mut cfg = FlatConfig::parse(BASE).unwrap();
        cfg.apply_override("schedule.c=2.5").unwrap();
        cfg.apply_override("run.seeds=[1, 2]").unwrap();
        cfg.apply_override("solver.algorithm=rsvrb").unwrap();
        let exp = ExperimentConfig::from_flat(&cfg).unwrap();
        assert_eq!(exp.solvers[0].schedule.c, 2.5);
        assert_eq!(exp.seeds, vec![1, 2]);
        assert_eq!(exp.solvers[0].algorithm, Algorithm::Rsvrb);
        assert!(cfg.apply_override("novalue").is_err());
    }

    #[test]
    fn defaults_follow_algorithm() {
        let exp = parse(&format!("{BASE}[run]\nseeds = 3\n")).unwrap();
        assert_eq!(exp.solvers[0].schedule.mode, StepMode::PolynomialThird);
        assert_eq!(exp.seeds, vec![3]);
        assert_eq!(exp.cadence(1000), 5);
        assert_eq!(exp.cadence(10), 1);
        let ttsa = parse("[problem]\nkind = \"quadratic\"\n[solver]\nalgorithm = \"ttsa\"\n").unwrap();
        assert_eq!(ttsa.solvers[0].schedule.mode, StepMode::PolynomialHalf);
    }

    #[test]
    fn per_algorithm_schedule_keys_win() {
        let exp = parse(
            "[problem]\nkind = \"quadratic\"\n[solver]\nalgorithm = [\"svrb\", \"ttsa\"]\n\
             [schedule]\nc = 2\n[schedule.ttsa]\nc = 7\n",
        )
        .unwrap();
        assert_eq!(exp.solvers[0].schedule.c, 2.0);
        assert_eq!(exp.solvers[1].schedule.c, 7.0);

        let mut cfg = FlatConfig::parse(
            "[problem]\nkind = \"quadratic\"\n[solver]\nalgorithm = [\"svrb\", \"ttsa\"]\n\
             [schedule]\nc = 2\n[schedule.ttsa]\nc = 7\n",
        )
        .unwrap();
        cfg.apply_override("solver.algorithm=svrb").unwrap();
        assert_eq!(ExperimentConfig::from_flat(&cfg).unwrap().solvers.len(), 1);
    }

    #[test]
    fn rejects_bad_configs() {
        let cases = [
            "[problem]\nkind = \"quadratic\"\n",
            "[problem]\nkind = \"cubic\"\n[solver]\nalgorithm = \"svrb\"\n",
            "[problem]\nkind = \"quadratic\"\n[solver]\nalgorithm = \"sgd\"\n",
            &format!("{BASE}[run]\nseeds = []\n"),
            &format!("{BASE}[run]\nbogus = 1\n"),
            &format!("{BASE}[schedule]\nc = -1\n"),
            &format!("{BASE}[schedule]\nmode = \"constant\"\n"),
            &format!("{BASE}[solver.x]\ny = 1\n"),
            &format!("{BASE}steps = \"many\"\n"),
            "[problem]\nkind = \"reweighting\"\ntrain = \"/nonexistent\"\nvalidation = \"/nonexistent\"\n\
             [solver]\nalgorithm = \"svrb\"\n",
            "not toml = = 1",
        ];
        for text in cases {
            let r = parse(text);
            assert!(matches!(r, Err(CliError::Config(_))), "{text:?} gave {r:?}");
        }
    }

    #[test]
    fn stage_plan_only_for_restarts() {
        let exp = parse(
            "[problem]\nkind = \"quadratic_family\"\nm = 2\n[solver]\nalgorithm = [\"rsvrb\", \"re_rsvrb\"]\n\
             [stages]\nt1 = 10\ncount = 2\n",
        )
        .unwrap();
        assert!(exp.solvers[0].stages.is_none());
        assert_eq!(exp.solvers[1].steps(exp.steps), 30);
    }
}
