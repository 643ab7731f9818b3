//! Many lower problems: randomized-coordinate STORM banks with delayed decay,
//! an outer d-estimator, and averaged projected lower steps that are replayed
//! for a task only when it is next sampled.

use std::collections::BTreeMap;

use rand::Rng;

use super::init::{init_estimators, slot_projections, InitConfig, InitState};
use super::{averaged_lower_step, run_to_completion, vector_is_finite, ObjectiveEvaluator, RunConfig, RunResult, Solver};
use crate::error::{invalid, Result};
use crate::estimators::{assemble_hypergradient, DEstimator, EstimateValue, RcStormBank};
use crate::linalg::{DenseMatrix, DenseVector};
use crate::oracle::{sample_paired, TaskFamily};
use crate::rng::{stream, OracleDraws, StreamKind};
use crate::schedule::{EstimatorKind, ScheduleConfig};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RsvrbOptions {
    /// Tasks drawn (with replacement) per step; each distinct draw gets one
    /// paired oracle call.
    pub tasks_per_iter: usize,
}

impl Default for RsvrbOptions {
    fn default() -> Self {
        Self { tasks_per_iter: 1 }
    }
}

/// Per-step coefficients of the lower update, kept for replay.
#[derive(Debug, Clone, Copy)]
struct LowerCoefficients {
    beta_gy: f64,
    tau_t: f64,
    tau: f64,
}

/// Lower iterate of one task together with its `w` estimate, both valid at
/// `step`.
#[derive(Debug, Clone)]
struct LowerState {
    y: DenseVector,
    y_prev: DenseVector,
    w: DenseVector,
    step: u64,
}

impl LowerState {
    fn replay(&mut self, history: &[LowerCoefficients], to: u64, radius: f64) {
        while self.step < to {
            let c = history[self.step as usize];
            self.w *= 1.0 - c.beta_gy;
            let next = averaged_lower_step(&self.y, &self.w, c.tau_t, c.tau, radius);
            self.y_prev = std::mem::replace(&mut self.y, next);
            self.step += 1;
        }
    }
}

#[derive(Debug, Clone)]
pub struct Rsvrb {
    family: TaskFamily,
    cfg: ScheduleConfig,
    /// Step at which the current schedule started (restarts reset it).
    origin: u64,
    options: RsvrbOptions,
    seed: u64,
    x: DenseVector,
    x_prev: DenseVector,
    lower: Vec<LowerState>,
    history: Vec<LowerCoefficients>,
    u: RcStormBank<DenseVector>,
    v: RcStormBank<DenseVector>,
    jac: RcStormBank<DenseMatrix>,
    hess: RcStormBank<DenseMatrix>,
    z_cache: Vec<(u64, DenseVector)>,
    d: DEstimator,
    t: u64,
    samples: u64,
    last_pair: Option<(usize, usize)>,
}

impl Rsvrb {
    pub fn new(
        family: TaskFamily,
        cfg: ScheduleConfig,
        options: RsvrbOptions,
        init: &InitConfig,
        seed: u64,
    ) -> Result<Self> {
        let state = init_estimators(&family, init, seed)?;
        Self::from_init(family, cfg, options, state, seed)
    }

    pub fn from_init(
        family: TaskFamily,
        cfg: ScheduleConfig,
        options: RsvrbOptions,
        state: InitState,
        seed: u64,
    ) -> Result<Self> {
        cfg.validate()?;
        if options.tasks_per_iter == 0 {
            return Err(invalid("tasks per iteration must be >= 1"));
        }
        if state.slots.len() != family.len() || state.ys.len() != family.len() {
            return Err(invalid("initial state does not match the task family"));
        }
        let projections: Vec<_> = family.tasks().iter().map(|t| slot_projections(t.as_ref())).collect();
        let column = |k: usize| projections.iter().map(|p| p[k]).collect::<Vec<_>>();
        let mut us = Vec::new();
        let mut vs = Vec::new();
        let mut jacs = Vec::new();
        let mut hesses = Vec::new();
        let mut lower = Vec::new();
        let mut z_cache = Vec::new();
        for (slot, y) in state.slots.into_iter().zip(state.ys) {
            us.push(slot.u);
            vs.push(slot.v);
            jacs.push(slot.jac);
            hesses.push(slot.hess);
            z_cache.push((0, slot.z));
            lower.push(LowerState {
                y_prev: y.clone(),
                y,
                w: slot.w,
                step: 0,
            });
        }
        Ok(Self {
            cfg,
            origin: 0,
            options,
            seed,
            x_prev: state.x0.clone(),
            x: state.x0,
            lower,
            history: Vec::new(),
            u: RcStormBank::with_projections(us, column(0))?,
            v: RcStormBank::with_projections(vs, column(1))?,
            jac: RcStormBank::with_projections(jacs, column(2))?,
            hess: RcStormBank::with_projections(hesses, column(3))?,
            z_cache,
            d: DEstimator::new(state.d0),
            t: 0,
            samples: state.samples,
            last_pair: None,
            family,
        })
    }

    /// Switches to a new schedule whose step counter starts at the current
    /// step.
    pub fn set_schedule(&mut self, cfg: ScheduleConfig) -> Result<()> {
        cfg.validate()?;
        self.cfg = cfg;
        self.origin = self.t;
        Ok(())
    }

    pub fn family(&self) -> &TaskFamily {
        &self.family
    }

    pub fn d(&self) -> &DenseVector {
        &self.d.value
    }

    /// `(i_t, j_t)` of the last step (first drawn task for `i_t`).
    pub fn last_pair(&self) -> Option<(usize, usize)> {
        self.last_pair
    }

    /// Hypergradient estimate of task `i` at the current step.
    pub fn z(&mut self, i: usize) -> Result<DenseVector> {
        self.z_at_clock(i)
    }

    fn local(&self, t: u64) -> u64 {
        t - self.origin
    }

    fn z_at_clock(&mut self, i: usize) -> Result<DenseVector> {
        let now = self.u.step();
        if let Some((step, z)) = self.z_cache.get(i) {
            if *step == now {
                return Ok(z.clone());
            }
        }
        let u = self.u.materialize(i)?.clone();
        let v = self.v.materialize(i)?.clone();
        let jac = self.jac.materialize(i)?.clone();
        let hess = self.hess.materialize(i)?;
        let z = assemble_hypergradient(&u, &v, &jac, hess)?;
        self.z_cache[i] = (now, z.clone());
        Ok(z)
    }

    fn draw_tasks(&self, t: u64) -> BTreeMap<usize, usize> {
        let mut rng = stream(self.seed, t, 0, StreamKind::TaskSelect);
        let mut counts = BTreeMap::new();
        for _ in 0..self.options.tasks_per_iter {
            *counts.entry(self.family.sample_task(&mut rng)).or_insert(0) += 1;
        }
        counts
    }
}

impl Solver for Rsvrb {
    fn step(&mut self) -> Result<()> {
        let t = self.t;
        let local = self.local(t);
        let beta = |k| self.cfg.beta(k, local);
        let (b_fx, b_fy, b_gxy, b_gyy, b_gy, b_d) = (
            beta(EstimatorKind::Fx),
            beta(EstimatorKind::Fy),
            beta(EstimatorKind::Gxy),
            beta(EstimatorKind::Gyy),
            beta(EstimatorKind::Gy),
            beta(EstimatorKind::D),
        );
        let coeffs = LowerCoefficients {
            beta_gy: b_gy,
            tau_t: self.cfg.tau_t(local),
            tau: self.cfg.tau,
        };

        let drawn = self.draw_tasks(t);
        let m = self.family.len();
        let j = stream(self.seed, t, 0, StreamKind::SlotSelect).random_range(0..m);
        let z_j_t = self.z_at_clock(j)?;

        let batch = self.options.tasks_per_iter as f64;
        let mut consumed = 0;
        for (&i, &count) in &drawn {
            let task = self.family.task(i).clone();
            let radius = task.y_radius();
            self.lower[i].replay(&self.history, t, radius);
            let st = &self.lower[i];
            let draws = OracleDraws::new(self.seed, t, i as u64);
            let (curr, prev) = sample_paired(task.as_ref(), &self.x, &st.y, &self.x_prev, &st.y_prev, &draws)?;
            consumed += curr.samples_consumed;
            let scale = count as f64 / (batch * self.family.prob(i));
            self.u.update(i, &curr.grad_fx, &prev.grad_fx, b_fx, scale)?;
            self.v.update(i, &curr.grad_fy, &prev.grad_fy, b_fy, scale)?;
            self.jac.update(i, &curr.jac_gxy, &prev.jac_gxy, b_gxy, scale)?;
            self.hess.update(i, &curr.hess_gyy, &prev.hess_gyy, b_gyy, scale)?;
            let st = &mut self.lower[i];
            st.w = st.w.storm_combine(&curr.grad_gy, &prev.grad_gy, b_gy, scale);
        }
        self.u.advance(b_fx)?;
        self.v.advance(b_fy)?;
        self.jac.advance(b_gxy)?;
        self.hess.advance(b_gyy)?;

        for &i in drawn.keys() {
            self.z_at_clock(i)?;
        }
        let z_j_t1 = self.z_at_clock(j)?;
        self.d.update(&z_j_t, &z_j_t1, b_d)?;

        let x_next = &self.x - &self.d.value * (self.cfg.eta(local) * self.cfg.gamma);
        self.x_prev = std::mem::replace(&mut self.x, x_next);

        for &i in drawn.keys() {
            let radius = self.family.task(i).y_radius();
            let st = &mut self.lower[i];
            let next = averaged_lower_step(&st.y, &st.w, coeffs.tau_t, coeffs.tau, radius);
            st.y_prev = std::mem::replace(&mut st.y, next);
            st.step = t + 1;
        }
        self.history.push(coeffs);
        self.last_pair = drawn.keys().next().map(|&i| (i, j));
        self.t += 1;
        self.samples += consumed;
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
        self.lower
            .iter()
            .zip(self.family.tasks())
            .map(|(st, task)| {
                let mut st = st.clone();
                st.replay(&self.history, self.t, task.y_radius());
                st.y
            })
            .collect()
    }

    fn is_finite(&self) -> bool {
        vector_is_finite(&self.x) && vector_is_finite(&self.d.value)
    }
}

/// Initializes and runs RSVRB for `run.steps` steps.
pub fn rsvrb_run(
    family: &TaskFamily,
    cfg: &ScheduleConfig,
    options: RsvrbOptions,
    run: &RunConfig,
    init: &InitConfig,
    evaluator: Option<&dyn ObjectiveEvaluator>,
) -> Result<RunResult> {
    run.validate()?;
    let solver = Rsvrb::new(family.clone(), *cfg, options, init, run.seed)?;
    run_to_completion(solver, run, evaluator)
}
