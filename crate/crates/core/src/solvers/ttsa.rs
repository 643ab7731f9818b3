//! Two-timescale stochastic bilevel SGD baseline: raw oracle samples, no
//! momentum.

use super::init::{lower_start, InitConfig};
use super::{run_to_completion, vector_is_finite, ObjectiveEvaluator, RunConfig, RunResult, Solver};
use crate::error::Result;
use crate::estimators::assemble_hypergradient;
use crate::linalg::{project_spectral_floor, DenseVector};
use crate::oracle::{sample_once, OracleSample, TaskFamily};
use crate::par;
use crate::rng::{stream, OracleDraws, StreamKind};
use crate::schedule::ScheduleConfig;

/// Which lower problems a step touches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TtsaSampling {
    /// One task `i ~ p`; the direction is scaled by `1 / (m p_i)`.
    #[default]
    OneTask,
    /// Every task once; the direction is the mean over tasks.
    PerTask,
}

/// Per step, for each visited task `i`: form `zᵢ` from one sample at
/// `(x, y_i)` with the Hessian floored at λ and set `y_i ← y_i − τ τ_t ∇ᵧg`.
/// Then `x ← x − γ η_t z` with `z` the combined direction.
#[derive(Debug, Clone)]
pub struct Ttsa {
    family: TaskFamily,
    cfg: ScheduleConfig,
    sampling: TtsaSampling,
    seed: u64,
    x: DenseVector,
    ys: Vec<DenseVector>,
    last_direction: Option<DenseVector>,
    t: u64,
    samples: u64,
}

impl Ttsa {
    pub fn new(family: TaskFamily, cfg: ScheduleConfig, init: &InitConfig, seed: u64) -> Result<Self> {
        Self::with_sampling(family, cfg, TtsaSampling::OneTask, init, seed)
    }

    pub fn with_sampling(
        family: TaskFamily,
        cfg: ScheduleConfig,
        sampling: TtsaSampling,
        init: &InitConfig,
        seed: u64,
    ) -> Result<Self> {
        cfg.validate()?;
        let ys = lower_start(&family, init)?;
        Ok(Self {
            family,
            cfg,
            sampling,
            seed,
            x: init.x0.clone(),
            ys,
            last_direction: None,
            t: 0,
            samples: 0,
        })
    }

    /// Stochastic hypergradient used by the last step (before step sizes).
    pub fn last_direction(&self) -> Option<&DenseVector> {
        self.last_direction.as_ref()
    }

    fn direction(&self, i: usize, s: &OracleSample) -> Result<DenseVector> {
        let hess = project_spectral_floor(&s.hess_gyy, self.family.task(i).bounds().lambda)?;
        assemble_hypergradient(&s.grad_fx, &s.grad_fy, &s.jac_gxy, &hess)
    }

    fn sample(&self, i: usize) -> Result<OracleSample> {
        let draws = OracleDraws::new(self.seed, self.t, i as u64);
        sample_once(self.family.task(i).as_ref(), &self.x, &self.ys[i], &draws)
    }
}

impl Solver for Ttsa {
    fn step(&mut self) -> Result<()> {
        let t = self.t;
        let m = self.family.len();
        let (z, lower) = match self.sampling {
            TtsaSampling::OneTask => {
                let i = self
                    .family
                    .sample_task(&mut stream(self.seed, t, 0, StreamKind::TaskSelect));
                let s = self.sample(i)?;
                let z = self.direction(i, &s)? / (m as f64 * self.family.prob(i));
                (z, vec![(i, s)])
            }
            TtsaSampling::PerTask => {
                let idx: Vec<usize> = (0..m).collect();
                let parts = par::try_map(&idx, |&i| {
                    let s = self.sample(i)?;
                    Ok::<_, crate::Error>((self.direction(i, &s)?, (i, s)))
                })?;
                let mut z = DenseVector::zeros(self.x.len());
                let mut lower = Vec::with_capacity(m);
                for (zi, pair) in parts {
                    z += zi;
                    lower.push(pair);
                }
                (z / m as f64, lower)
            }
        };
        self.x -= &z * (self.cfg.gamma * self.cfg.eta(t));
        let lower_step = self.cfg.tau * self.cfg.tau_t(t);
        for (i, s) in lower {
            self.ys[i] -= &s.grad_gy * lower_step;
            self.samples += s.samples_consumed;
        }
        self.last_direction = Some(z);
        self.t += 1;
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
        self.ys.clone()
    }

    fn is_finite(&self) -> bool {
        vector_is_finite(&self.x) && self.ys.iter().all(vector_is_finite)
    }
}

/// Runs the baseline for `run.steps` steps. Typically paired with
/// [`ScheduleConfig::polynomial_half`].
pub fn ttsa_baseline_run(
    family: &TaskFamily,
    cfg: &ScheduleConfig,
    run: &RunConfig,
    init: &InitConfig,
    evaluator: Option<&dyn ObjectiveEvaluator>,
) -> Result<RunResult> {
    ttsa_run(family, cfg, TtsaSampling::OneTask, run, init, evaluator)
}

/// [`ttsa_baseline_run`] with an explicit task-sampling rule.
pub fn ttsa_run(
    family: &TaskFamily,
    cfg: &ScheduleConfig,
    sampling: TtsaSampling,
    run: &RunConfig,
    init: &InitConfig,
    evaluator: Option<&dyn ObjectiveEvaluator>,
) -> Result<RunResult> {
    run.validate()?;
    let solver = Ttsa::with_sampling(family.clone(), *cfg, sampling, init, run.seed)?;
    run_to_completion(solver, run, evaluator)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::BilevelTask;
    use crate::quadratic::QuadraticTask;
    use approx::assert_relative_eq;
    use std::sync::Arc;

    fn quad(noise: f64) -> Arc<QuadraticTask> {
        let mut rng = stream(2, 0, 0, StreamKind::Problem);
        Arc::new(QuadraticTask::random(3, 3, 4.0, 0.1, noise, &mut rng).unwrap())
    }

    #[test]
    fn zero_noise_direction_is_exact_hypergradient() {
        let task = quad(0.0);
        let x0 = DenseVector::from_vec(vec![0.2, 0.4, -1.0]);
        let init = InitConfig::new(x0.clone()).y0(vec![task.y_star(&x0)]);
        let fam = TaskFamily::single(task.clone());
        let mut s = Ttsa::new(fam, ScheduleConfig::polynomial_half(0.1, 1.0, 1.0), &init, 0).unwrap();
        s.step().unwrap();
        assert_relative_eq!(s.last_direction().unwrap(), &task.hypergradient(&x0), epsilon = 1e-8);
    }

    #[test]
    fn zero_eta_keeps_x() {
        let task: Arc<dyn BilevelTask> = quad(1.0);
        let x0 = DenseVector::from_element(3, 1.0);
        let fam = TaskFamily::single(task);
        let run = RunConfig::new(20, 0);
        let res = ttsa_baseline_run(&fam, &ScheduleConfig::constant(0.0, 0.1), &run, &InitConfig::new(x0.clone()), None).unwrap();
        assert_eq!(res.x, x0);
        assert_eq!(res.samples, 20);
    }

    #[test]
    fn per_task_direction_is_mean_hypergradient() {
        let a = quad(0.0);
        let mut rng = stream(5, 0, 0, StreamKind::Problem);
        let b = Arc::new(QuadraticTask::random(3, 3, 2.0, 0.1, 0.0, &mut rng).unwrap());
        let x0 = DenseVector::from_vec(vec![0.5, -0.2, 0.3]);
        let init = InitConfig::new(x0.clone()).y0(vec![a.y_star(&x0), b.y_star(&x0)]);
        let fam = TaskFamily::uniform(vec![a.clone(), b.clone()]).unwrap();
        let cfg = ScheduleConfig::polynomial_half(0.1, 1.0, 1.0);
        let mut s = Ttsa::with_sampling(fam, cfg, TtsaSampling::PerTask, &init, 3).unwrap();
        s.step().unwrap();
        let want = (a.hypergradient(&x0) + b.hypergradient(&x0)) / 2.0;
        assert_relative_eq!(s.last_direction().unwrap(), &want, epsilon = 1e-8);
        assert_eq!(s.samples(), 2);
    }
}
