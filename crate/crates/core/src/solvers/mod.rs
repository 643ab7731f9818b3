//! Optimization loops and the shared run driver.

mod init;
mod restart;
mod rsvrb;
mod svrb;
mod ttsa;

use std::time::Instant;

use rand::Rng;

pub use init::{init_estimators, InitConfig, InitState, SlotInit};
pub use restart::{re_rsvrb_run, Stage, StagePlan};
pub use rsvrb::{rsvrb_run, Rsvrb, RsvrbOptions};
pub use svrb::{svrb_run, Svrb};
pub use ttsa::{ttsa_baseline_run, ttsa_run, Ttsa, TtsaSampling};

use crate::error::{invalid, Error, Result};
use crate::linalg::DenseVector;
use crate::rng::{stream, StreamKind};

/// One metrics row of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub step: u64,
    pub samples: u64,
    pub wall_ms: f64,
    pub true_objective: Option<f64>,
    pub grad_norm_sq: Option<f64>,
    pub y_gap: Option<f64>,
}

/// Objective metrics at an iterate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub objective: f64,
    pub grad_norm_sq: Option<f64>,
    pub y_gap: Option<f64>,
}

/// Computes trace metrics from the current iterate. `ys` holds the lower
/// iterates brought up to the current step.
pub trait ObjectiveEvaluator: Sync {
    fn evaluate(&self, x: &DenseVector, ys: &[DenseVector]) -> Result<Evaluation>;
}

/// Which iterate a run reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReportedIterate {
    #[default]
    Last,
    /// `x_t̃` for `t̃` uniform on `{0, …, T}`.
    UniformRandom,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub steps: u64,
    pub seed: u64,
    /// Steps between trace rows; the first and last step are always logged.
    pub log_every: u64,
    /// Stop early once this many oracle samples have been drawn.
    pub sample_budget: Option<u64>,
    pub reported: ReportedIterate,
}

impl RunConfig {
    pub fn new(steps: u64, seed: u64) -> Self {
        Self {
            steps,
            seed,
            log_every: steps.max(1),
            sample_budget: None,
            reported: ReportedIterate::Last,
        }
    }

    pub fn log_every(mut self, every: u64) -> Self {
        self.log_every = every;
        self
    }

    pub fn sample_budget(mut self, budget: u64) -> Self {
        self.sample_budget = Some(budget);
        self
    }

    pub fn reported(mut self, reported: ReportedIterate) -> Self {
        self.reported = reported;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(invalid("number of steps must be >= 1"));
        }
        if self.log_every == 0 {
            return Err(invalid("logging cadence must be >= 1"));
        }
        Ok(())
    }
}

/// Common interface of the iterative solvers.
pub trait Solver {
    fn step(&mut self) -> Result<()>;
    /// Number of completed steps.
    fn t(&self) -> u64;
    fn samples(&self) -> u64;
    fn x(&self) -> &DenseVector;
    /// Lower iterates brought up to the current step.
    fn ys(&self) -> Vec<DenseVector>;
    fn is_finite(&self) -> bool;
}

/// Final state and trace of a run.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub x: DenseVector,
    pub ys: Vec<DenseVector>,
    pub reported_x: DenseVector,
    pub reported_step: u64,
    pub steps: u64,
    pub samples: u64,
    pub trace: Vec<TraceRow>,
    /// Upper iterate at the end of each stage (restarted runs only).
    pub stage_iterates: Vec<DenseVector>,
}

/// Progress of [`drive`], kept by the caller so a partial trace survives a
/// failed run.
#[derive(Debug, Clone, Default)]
pub struct DriveLog {
    pub trace: Vec<TraceRow>,
    pub wall_ms: f64,
    pub reported: Option<(u64, DenseVector)>,
}

fn log_row<S: Solver + ?Sized>(
    solver: &S,
    evaluator: Option<&dyn ObjectiveEvaluator>,
    wall_ms: f64,
) -> Result<TraceRow> {
    let (true_objective, grad_norm_sq, y_gap) = match evaluator {
        Some(ev) => {
            let e = ev.evaluate(solver.x(), &solver.ys())?;
            (Some(e.objective), e.grad_norm_sq, e.y_gap)
        }
        None => (None, None, None),
    };
    Ok(TraceRow {
        step: solver.t(),
        samples: solver.samples(),
        wall_ms,
        true_objective,
        grad_norm_sq,
        y_gap,
    })
}

/// Runs `steps` more iterations of `solver`, appending trace rows to `log`.
/// The clock excludes objective evaluation. With `log_initial` the current
/// state is logged before the first step.
pub fn drive<S: Solver + ?Sized>(
    solver: &mut S,
    steps: u64,
    run: &RunConfig,
    evaluator: Option<&dyn ObjectiveEvaluator>,
    log_initial: bool,
    reported_step: Option<u64>,
    log: &mut DriveLog,
) -> Result<()> {
    run.validate()?;
    if log_initial {
        log.trace.push(log_row(solver, evaluator, log.wall_ms)?);
    }
    if reported_step == Some(solver.t()) {
        log.reported = Some((solver.t(), solver.x().clone()));
    }
    let end = solver.t() + steps;
    while solver.t() < end {
        if run.sample_budget.is_some_and(|b| solver.samples() >= b) {
            break;
        }
        let started = Instant::now();
        solver.step()?;
        log.wall_ms += started.elapsed().as_secs_f64() * 1e3;
        if !solver.is_finite() {
            return Err(Error::DivergenceDetected {
                step: solver.t() as usize,
            });
        }
        let t = solver.t();
        if reported_step == Some(t) {
            log.reported = Some((t, solver.x().clone()));
        }
        let at_end = t == end || run.sample_budget.is_some_and(|b| solver.samples() >= b);
        if t.is_multiple_of(run.log_every) || at_end {
            log.trace.push(log_row(solver, evaluator, log.wall_ms)?);
        }
    }
    Ok(())
}

pub(crate) fn reported_step(run: &RunConfig) -> Option<u64> {
    match run.reported {
        ReportedIterate::Last => None,
        ReportedIterate::UniformRandom => {
            let mut rng = stream(run.seed, 0, 0, StreamKind::Report);
            Some(rng.random_range(0..=run.steps))
        }
    }
}

/// Runs a freshly initialized solver for `run.steps` steps.
pub(crate) fn run_to_completion<S: Solver>(
    mut solver: S,
    run: &RunConfig,
    evaluator: Option<&dyn ObjectiveEvaluator>,
) -> Result<RunResult> {
    let target = reported_step(run);
    let mut log = DriveLog::default();
    drive(&mut solver, run.steps, run, evaluator, true, target, &mut log)?;
    Ok(finish(&solver, log))
}

pub(crate) fn finish<S: Solver + ?Sized>(solver: &S, log: DriveLog) -> RunResult {
    let (reported_step, reported_x) = log
        .reported
        .unwrap_or_else(|| (solver.t(), solver.x().clone()));
    RunResult {
        x: solver.x().clone(),
        ys: solver.ys(),
        reported_x,
        reported_step,
        steps: solver.t(),
        samples: solver.samples(),
        trace: log.trace,
        stage_iterates: Vec::new(),
    }
}

/// `y ← (1 − τ_t) y + τ_t Π_R[y − τ w]`.
pub(crate) fn averaged_lower_step(y: &DenseVector, w: &DenseVector, tau_t: f64, tau: f64, radius: f64) -> DenseVector {
    let mut inner = y - w * tau;
    if radius.is_finite() {
        let n = inner.norm();
        if n > radius {
            inner *= radius / n;
        }
    }
    y * (1.0 - tau_t) + inner * tau_t
}

pub(crate) fn vector_is_finite(v: &DenseVector) -> bool {
    v.iter().all(|x| x.is_finite())
}
