//! Stagewise restarts of RSVRB with decreasing constant step sizes.

use super::init::InitConfig;
use super::rsvrb::{Rsvrb, RsvrbOptions};
use super::{drive, finish, reported_step, DriveLog, ObjectiveEvaluator, RunConfig, RunResult, Solver};
use crate::error::{invalid, Result};
use crate::oracle::TaskFamily;
use crate::schedule::{ScheduleConfig, StepMode};

/// Constant step sizes and length of one stage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stage {
    pub eta: f64,
    pub tau_t: f64,
    pub steps: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StagePlan {
    pub stages: Vec<Stage>,
}

impl StagePlan {
    /// `η_k = η_1 / 2^{(k−1)/2}`, `τ_k` likewise, `T_k = T_1 · 2^{k−1}`.
    pub fn geometric(eta1: f64, tau1: f64, t1: u64, stages: usize) -> Self {
        let stages = (0..stages)
            .map(|k| {
                let shrink = 2f64.powf(-(k as f64) / 2.0);
                Stage {
                    eta: eta1 * shrink,
                    tau_t: tau1 * shrink,
                    steps: t1 << k,
                }
            })
            .collect();
        Self { stages }
    }

    pub fn total_steps(&self) -> u64 {
        self.stages.iter().map(|s| s.steps).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(invalid("stage plan needs at least one stage"));
        }
        for (k, s) in self.stages.iter().enumerate() {
            if s.steps == 0 {
                return Err(invalid(format!("stage {} has zero steps", k + 1)));
            }
            if !(s.eta >= 0.0) || !(s.tau_t >= 0.0) || !s.eta.is_finite() || !s.tau_t.is_finite() {
                return Err(invalid(format!("stage {} has invalid step sizes", k + 1)));
            }
        }
        Ok(())
    }
}

fn stage_schedule(base: &ScheduleConfig, stage: &Stage) -> ScheduleConfig {
    ScheduleConfig {
        mode: StepMode::Constant {
            eta: stage.eta,
            tau_t: stage.tau_t,
        },
        ..*base
    }
}

/// Runs the stages back to back, each warm-started from the full state of
/// the previous one. `cfg` supplies γ, τ and the β multipliers; its step
/// mode is replaced per stage. `run.steps` is ignored in favour of the plan.
pub fn re_rsvrb_run(
    family: &TaskFamily,
    cfg: &ScheduleConfig,
    plan: &StagePlan,
    options: RsvrbOptions,
    run: &RunConfig,
    init: &InitConfig,
    evaluator: Option<&dyn ObjectiveEvaluator>,
) -> Result<RunResult> {
    plan.validate()?;
    let run = RunConfig {
        steps: plan.total_steps(),
        ..run.clone()
    };
    let first = stage_schedule(cfg, &plan.stages[0]);
    let mut solver = Rsvrb::new(family.clone(), first, options, init, run.seed)?;
    let target = reported_step(&run);
    let mut log = DriveLog::default();
    let mut stage_iterates = Vec::with_capacity(plan.stages.len());
    for (k, stage) in plan.stages.iter().enumerate() {
        if k > 0 {
            solver.set_schedule(stage_schedule(cfg, stage))?;
        }
        drive(&mut solver, stage.steps, &run, evaluator, k == 0, target, &mut log)?;
        stage_iterates.push(solver.x().clone());
        if run.sample_budget.is_some_and(|b| solver.samples() >= b) {
            break;
        }
    }
    let mut result = finish(&solver, log);
    result.stage_iterates = stage_iterates;
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::DenseVector;
    use crate::oracle::BilevelTask;
    use crate::quadratic::QuadraticTask;
    use crate::solvers::rsvrb_run;
    use std::sync::Arc;

    #[test]
    fn geometric_plan() {
        let plan = StagePlan::geometric(0.4, 0.2, 100, 3);
        assert_eq!(plan.stages[2].steps, 400);
        assert!((plan.stages[2].eta - 0.2).abs() < 1e-15);
        assert!((plan.stages[1].tau_t - 0.2 / 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(plan.total_steps(), 700);
    }

    #[test]
    fn zero_length_stage_rejected() {
        let mut plan = StagePlan::geometric(0.1, 0.1, 10, 2);
        plan.stages[1].steps = 0;
        assert!(matches!(plan.validate(), Err(crate::Error::InvalidInput(_))));
    }

    #[test]
    fn one_stage_equals_plain_run() {
        let task: Arc<dyn BilevelTask> = Arc::new(QuadraticTask::isotropic(2, 2, 2.0, 0.5));
        let fam = TaskFamily::uniform(vec![task.clone(), task]).unwrap();
        let init = InitConfig::new(DenseVector::from_element(2, 1.0));
        let plan = StagePlan::geometric(0.1, 0.2, 50, 1);
        let run = RunConfig::new(50, 9).log_every(10);
        let base = ScheduleConfig::default();
        let a = re_rsvrb_run(&fam, &base, &plan, RsvrbOptions::default(), &run, &init, None).unwrap();
        let b = rsvrb_run(&fam, &ScheduleConfig::constant(0.1, 0.2), RsvrbOptions::default(), &run, &init, None).unwrap();
        assert_eq!(a.x, b.x);
        assert_eq!(a.ys, b.ys);
        assert_eq!(a.stage_iterates, vec![b.x.clone()]);
    }
}
