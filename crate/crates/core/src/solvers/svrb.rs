//! Single lower problem: five STORM estimators, implicit hypergradient via
//! CG, plain `y ← y − τ_t τ w` lower step.

use std::sync::Arc;

use super::init::{init_estimators, InitConfig, InitState};
use super::{run_to_completion, vector_is_finite, ObjectiveEvaluator, RunConfig, RunResult, Solver};
use crate::error::{invalid, Result};
use crate::estimators::{assemble_hypergradient, Projection, StormEstimator};
use crate::linalg::{DenseMatrix, DenseVector};
use crate::oracle::{sample_paired, BilevelTask, TaskFamily};
use crate::rng::OracleDraws;
use crate::schedule::{EstimatorKind, ScheduleConfig};

#[derive(Debug, Clone)]
pub struct Svrb {
    task: Arc<dyn BilevelTask>,
    cfg: ScheduleConfig,
    seed: u64,
    x: DenseVector,
    x_prev: DenseVector,
    y: DenseVector,
    y_prev: DenseVector,
    u: StormEstimator<DenseVector>,
    v: StormEstimator<DenseVector>,
    jac: StormEstimator<DenseMatrix>,
    hess: StormEstimator<DenseMatrix>,
    w: StormEstimator<DenseVector>,
    z: DenseVector,
    t: u64,
    samples: u64,
}

impl Svrb {
    pub fn new(task: Arc<dyn BilevelTask>, cfg: ScheduleConfig, init: &InitConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let family = TaskFamily::single(task.clone());
        let state = init_estimators(&family, init, seed)?;
        Self::from_init(task, cfg, state, seed)
    }

    pub fn from_init(task: Arc<dyn BilevelTask>, cfg: ScheduleConfig, state: InitState, seed: u64) -> Result<Self> {
        if state.slots.len() != 1 {
            return Err(invalid("SVRB handles exactly one lower problem"));
        }
        let b = task.bounds();
        let slot = state.slots.into_iter().next().expect("one slot");
        let y = state.ys.into_iter().next().expect("one lower iterate");
        let u = StormEstimator::new(slot.u, Projection::None)?;
        let v = StormEstimator::new(slot.v, Projection::Ball(b.c_fy))?;
        let jac = StormEstimator::new(slot.jac, Projection::SpectralCeiling(b.c_gxy))?;
        let hess = StormEstimator::new(slot.hess, Projection::SpectralFloor(b.lambda))?;
        let w = StormEstimator::new(slot.w, Projection::None)?;
        let z = assemble_hypergradient(u.value(), v.value(), jac.value(), hess.value())?;
        Ok(Self {
            task,
            cfg,
            seed,
            x_prev: state.x0.clone(),
            x: state.x0,
            y_prev: y.clone(),
            y,
            u,
            v,
            jac,
            hess,
            w,
            z,
            t: 0,
            samples: state.samples,
        })
    }

    /// Latest hypergradient estimate `z_t`.
    pub fn z(&self) -> &DenseVector {
        &self.z
    }

    pub fn y(&self) -> &DenseVector {
        &self.y
    }

    pub fn estimates(&self) -> (&DenseVector, &DenseVector, &DenseMatrix, &DenseMatrix, &DenseVector) {
        (
            self.u.value(),
            self.v.value(),
            self.jac.value(),
            self.hess.value(),
            self.w.value(),
        )
    }
}

impl Solver for Svrb {
    fn step(&mut self) -> Result<()> {
        let t = self.t;
        let draws = OracleDraws::new(self.seed, t, 0);
        let (curr, prev) = sample_paired(self.task.as_ref(), &self.x, &self.y, &self.x_prev, &self.y_prev, &draws)?;
        let beta = |k| self.cfg.beta(k, t);
        self.u.update(&curr.grad_fx, &prev.grad_fx, beta(EstimatorKind::Fx))?;
        self.v.update(&curr.grad_fy, &prev.grad_fy, beta(EstimatorKind::Fy))?;
        self.jac.update(&curr.jac_gxy, &prev.jac_gxy, beta(EstimatorKind::Gxy))?;
        self.hess.update(&curr.hess_gyy, &prev.hess_gyy, beta(EstimatorKind::Gyy))?;
        self.w.update(&curr.grad_gy, &prev.grad_gy, beta(EstimatorKind::Gy))?;
        self.z = assemble_hypergradient(self.u.value(), self.v.value(), self.jac.value(), self.hess.value())?;

        let x_next = &self.x - &self.z * (self.cfg.eta(t) * self.cfg.gamma);
        let y_next = &self.y - self.w.value() * (self.cfg.tau_t(t) * self.cfg.tau);
        self.x_prev = std::mem::replace(&mut self.x, x_next);
        self.y_prev = std::mem::replace(&mut self.y, y_next);
        self.t += 1;
        self.samples += curr.samples_consumed;
        Ok(())
    }

    fn t(&self) -> u64 {
        self.t
    }

    fn samples(&self) -> u64 {
        self.samples
    }

    fn x(&self) -> &DenseVector {
        &self.x
    }

    fn ys(&self) -> Vec<DenseVector> {
        vec![self.y.clone()]
    }

    fn is_finite(&self) -> bool {
        vector_is_finite(&self.x) && vector_is_finite(&self.y)
    }
}

/// Initializes and runs SVRB for `run.steps` steps.
pub fn svrb_run(
    task: Arc<dyn BilevelTask>,
    cfg: &ScheduleConfig,
    run: &RunConfig,
    init: &InitConfig,
    evaluator: Option<&dyn ObjectiveEvaluator>,
) -> Result<RunResult> {
    run.validate()?;
    let solver = Svrb::new(task, *cfg, init, run.seed)?;
    run_to_completion(solver, run, evaluator)
}
