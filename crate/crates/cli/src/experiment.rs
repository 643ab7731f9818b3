//! Problem construction and single-run execution.

use std::sync::Arc;

use svrb::objective::TrueObjective;
use svrb::problems::{
    read_sparse_file, toy_reweighting, MultiTaskTemperatureProblem, ReweightingConfig, ReweightingProblem,
};
use svrb::quadratic::QuadraticTask;
use svrb::rng::{stream, StreamKind};
use svrb::schedule::{ScheduleConfig, StepMode};
use svrb::solvers::{drive, DriveLog, InitConfig, Rsvrb, RsvrbOptions, RunConfig, Solver, Svrb, TraceRow, Ttsa};
use svrb::{par, BilevelTask, DenseVector, Error, TaskFamily};

use crate::config::{Algorithm, DataSource, ExperimentConfig, ProblemSpec, SolverSpec, StartPoint};
use crate::CliError;

/// A config with its problem instantiated and checked.
pub struct Experiment {
    pub config: ExperimentConfig,
    pub family: TaskFamily,
    pub x0: DenseVector,
    evaluator: TrueObjective,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RunStatus {
    Ok,
    Diverged { step: usize },
    Failed(String),
}

impl RunStatus {
    pub fn label(&self) -> &'static str {
        match self {
            RunStatus::Ok => "ok",
            RunStatus::Diverged { .. } => "diverged",
            RunStatus::Failed(_) => "failed",
        }
    }

    pub fn is_ok(&self) -> bool {
        matches!(self, RunStatus::Ok)
    }
}

/// Trace and status of one (solver, seed) run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub algorithm: Algorithm,
    pub seed: u64,
    pub trace: Vec<TraceRow>,
    pub status: RunStatus,
}

impl RunOutcome {
    /// Objective at the last trace row of a completed run.
    pub fn final_objective(&self) -> Option<f64> {
        if self.status.is_ok() {
            self.trace.last().and_then(|r| r.true_objective)
        } else {
            None
        }
    }

    pub fn best_objective(&self) -> Option<f64> {
        self.trace
            .iter()
            .filter_map(|r| r.true_objective)
            .filter(|v| v.is_finite())
            .min_by(f64::total_cmp)
    }

    pub fn steps(&self) -> u64 {
        self.trace.last().map_or(0, |r| r.step)
    }

    pub fn samples(&self) -> u64 {
        self.trace.last().map_or(0, |r| r.samples)
    }
}

fn setup_err(e: Error) -> CliError {
    match e {
        Error::Io(m) => CliError::Io(m),
        other => CliError::Config(other.to_string()),
    }
}

fn load_data(data: &DataSource, config: ReweightingConfig) -> Result<ReweightingProblem, CliError> {
    match data {
        DataSource::Files { train, validation } => {
            let tr = read_sparse_file(train).map_err(setup_err)?;
            let va = read_sparse_file(validation).map_err(setup_err)?;
            ReweightingProblem::new(tr, va, config).map_err(setup_err)
        }
        DataSource::Toy {
            n_train,
            n_validation,
            n_features,
            label_noise,
            seed,
        } => toy_reweighting(*n_train, *n_validation, *n_features, *label_noise, *seed, config).map_err(setup_err),
    }
}

/// Task family described by `spec`.
pub fn build_family(spec: &ProblemSpec) -> Result<TaskFamily, CliError> {
    match spec {
        ProblemSpec::Quadratic {
            dim,
            lower_dim,
            cond,
            alpha,
            noise,
            seed,
            m,
        } => {
            if *m == 0 {
                return Err(CliError::Config("`problem.m` must be >= 1".into()));
            }
            let mut rng = stream(*seed, 0, 0, StreamKind::Problem);
            let mut tasks: Vec<Arc<dyn BilevelTask>> = Vec::with_capacity(*m);
            for _ in 0..*m {
                let t = QuadraticTask::random(*dim, *lower_dim, *cond, *alpha, *noise, &mut rng).map_err(setup_err)?;
                tasks.push(Arc::new(t));
            }
            TaskFamily::uniform(tasks).map_err(setup_err)
        }
        ProblemSpec::Reweighting { data, config } => {
            let prob = load_data(data, *config)?;
            Ok(TaskFamily::single(Arc::new(prob)))
        }
        ProblemSpec::Temperature { data, config, m, seed } => {
            let base = load_data(data, *config)?;
            let prob = MultiTaskTemperatureProblem::new(base, *m, *seed).map_err(setup_err)?;
            prob.family().map_err(setup_err)
        }
    }
}

impl Experiment {
    /// Instantiates the problem and checks dimensions against the config.
    pub fn build(config: ExperimentConfig) -> Result<Self, CliError> {
        let family = build_family(&config.problem)?;
        let d = family.upper_dim();
        let x0 = match &config.x0 {
            StartPoint::Fill(v) => DenseVector::from_element(d, *v),
            StartPoint::Vector(v) if v.len() == d => DenseVector::from_column_slice(v),
            StartPoint::Vector(v) => {
                return Err(CliError::Config(format!(
                    "`run.x0` has {} entries but the problem has upper dimension {d}",
                    v.len()
                )))
            }
        };
        if family.len() > 1 {
            if let Some(s) = config.solvers.iter().find(|s| s.algorithm == Algorithm::Svrb) {
                return Err(CliError::Config(format!(
                    "{} handles one lower problem but the problem has m = {}",
                    s.algorithm.name(),
                    family.len()
                )));
            }
        }
        let evaluator = TrueObjective::new(family.clone(), config.inner_tol).map_err(setup_err)?;
        Ok(Self {
            config,
            family,
            x0,
            evaluator,
        })
    }

    fn init(&self) -> InitConfig {
        let init = InitConfig::new(self.x0.clone()).batch_size(self.config.batch_size);
        match self.config.y0_tol {
            Some(tol) => init.y0_tol(tol),
            None => init,
        }
    }

    fn run_config(&self, solver: &SolverSpec, seed: u64) -> RunConfig {
        let steps = solver.steps(self.config.steps);
        let run = RunConfig::new(steps, seed).log_every(self.config.cadence(steps));
        match self.config.sample_budget {
            Some(b) => run.sample_budget(b),
            None => run,
        }
    }

    /// Runs one solver with one seed. Failures are reported in the outcome
    /// together with the trace logged up to that point.
    pub fn run(&self, solver: &SolverSpec, seed: u64) -> RunOutcome {
        let mut log = DriveLog::default();
        let result = self.drive(solver, seed, &mut log);
        let status = match result {
            Ok(()) => RunStatus::Ok,
            Err(Error::DivergenceDetected { step }) => RunStatus::Diverged { step },
            Err(e) => RunStatus::Failed(e.to_string()),
        };
        match &status {
            RunStatus::Ok => log::info!("{} seed {}: done", solver.algorithm.name(), seed),
            other => log::warn!("{} seed {}: {:?}", solver.algorithm.name(), seed, other),
        }
        RunOutcome {
            algorithm: solver.algorithm,
            seed,
            trace: log.trace,
            status,
        }
    }

    fn drive(&self, spec: &SolverSpec, seed: u64, log: &mut DriveLog) -> svrb::Result<()> {
        let run = self.run_config(spec, seed);
        let init = self.init();
        let ev = Some(&self.evaluator as &dyn svrb::solvers::ObjectiveEvaluator);
        let cfg = spec.schedule;
        let options = RsvrbOptions {
            tasks_per_iter: self.config.tasks_per_iter,
        };
        match spec.algorithm {
            Algorithm::Svrb => {
                let mut s = Svrb::new(self.family.task(0).clone(), cfg, &init, seed)?;
                drive(&mut s, run.steps, &run, ev, true, None, log)
            }
            Algorithm::Rsvrb => {
                let mut s = Rsvrb::new(self.family.clone(), cfg, options, &init, seed)?;
                drive(&mut s, run.steps, &run, ev, true, None, log)
            }
            Algorithm::Ttsa => {
                let mut s = Ttsa::with_sampling(self.family.clone(), cfg, spec.sampling, &init, seed)?;
                drive(&mut s, run.steps, &run, ev, true, None, log)
            }
            Algorithm::ReRsvrb => {
                let plan = spec.stages.as_ref().expect("re_rsvrb carries a stage plan");
                let stage_cfg = |k: usize| ScheduleConfig {
                    mode: StepMode::Constant {
                        eta: plan.stages[k].eta,
                        tau_t: plan.stages[k].tau_t,
                    },
                    ..cfg
                };
                let mut s = Rsvrb::new(self.family.clone(), stage_cfg(0), options, &init, seed)?;
                for (k, stage) in plan.stages.iter().enumerate() {
                    if k > 0 {
                        s.set_schedule(stage_cfg(k))?;
                    }
                    drive(&mut s, stage.steps, &run, ev, k == 0, None, log)?;
                    if run.sample_budget.is_some_and(|b| s.samples() >= b) {
                        break;
                    }
                }
                Ok(())
            }
        }
    }

    /// Every (solver, seed) pair, in config order, fanned out over seeds.
    pub fn run_all(&self) -> Vec<RunOutcome> {
        let jobs: Vec<(&SolverSpec, u64)> = self
            .config
            .solvers
            .iter()
            .flat_map(|s| self.config.seeds.iter().map(move |&seed| (s, seed)))
            .collect();
        par::map(&jobs, |&(s, seed)| self.run(s, seed))
    }
}
