//! Stochastic oracle abstraction for a single bilevel task, the multi-task
//! family container, and deterministic helpers built on exact oracles.
//!
//! A task describes `min_x f(x, y*(x))` with `y*(x) = argmin_y g(x, y)`.
//! Its stochastic oracle returns the five quantities the solvers consume:
//! `∇ₓf`, `∇ᵧf`, `∇ᵧg`, `∇²ₓᵧg` (shape `d × d′`) and `∇²ᵧᵧg` (shape `d′ × d′`).

use std::fmt;
use std::sync::Arc;

use rand::Rng;

use crate::error::{invalid, Error, Result};
use crate::linalg::{cg_solve_matrix, DenseMatrix, DenseVector};
use crate::rng::{OracleDraws, StreamRng};

/// One draw of the five stochastic quantities at a single point.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleSample {
    pub grad_fx: DenseVector,
    pub grad_fy: DenseVector,
    pub grad_gy: DenseVector,
    pub jac_gxy: DenseMatrix,
    pub hess_gyy: DenseMatrix,
    pub samples_consumed: u64,
}

impl OracleSample {
    pub fn zeros(d: usize, d_lower: usize) -> Self {
        Self {
            grad_fx: DenseVector::zeros(d),
            grad_fy: DenseVector::zeros(d_lower),
            grad_gy: DenseVector::zeros(d_lower),
            jac_gxy: DenseMatrix::zeros(d, d_lower),
            hess_gyy: DenseMatrix::zeros(d_lower, d_lower),
            samples_consumed: 0,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.grad_fx.iter().all(|v| v.is_finite())
            && self.grad_fy.iter().all(|v| v.is_finite())
            && self.grad_gy.iter().all(|v| v.is_finite())
            && self.jac_gxy.iter().all(|v| v.is_finite())
            && self.hess_gyy.iter().all(|v| v.is_finite())
    }
}

/// Projection radii and the strong-convexity floor used by the estimators.
/// Infinite radii disable the corresponding projection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundConstants {
    pub c_fx: f64,
    pub c_fy: f64,
    pub c_gxy: f64,
    pub lambda: f64,
}

impl BoundConstants {
    pub fn with_lambda(lambda: f64) -> Self {
        Self {
            c_fx: f64::INFINITY,
            c_fy: f64::INFINITY,
            c_gxy: f64::INFINITY,
            lambda,
        }
    }
}

/// A single `(f, g)` pair.
///
/// `sample` must be a pure function of `(x, y)` and the state of `draws`:
/// evaluating it twice with clones of the same draws at two different points
/// yields the correlated pair that STORM differences rely on.
pub trait BilevelTask: Send + Sync + fmt::Debug {
    fn upper_dim(&self) -> usize;
    fn lower_dim(&self) -> usize;

    /// Radius of the ball known to contain `y*(x)`.
    fn y_radius(&self) -> f64 {
        f64::INFINITY
    }

    fn bounds(&self) -> BoundConstants;

    fn sample(&self, x: &DenseVector, y: &DenseVector, draws: &mut OracleDraws) -> Result<OracleSample>;

    /// Full-expectation counterpart of [`BilevelTask::sample`].
    fn exact(&self, _x: &DenseVector, _y: &DenseVector) -> Result<OracleSample> {
        Err(invalid("task has no exact oracle"))
    }

    fn has_exact(&self) -> bool {
        false
    }

    fn upper_value(&self, _x: &DenseVector, _y: &DenseVector) -> Result<f64> {
        Err(invalid("task has no upper objective value"))
    }

    fn lower_value(&self, _x: &DenseVector, _y: &DenseVector) -> Result<f64> {
        Err(invalid("task has no lower objective value"))
    }

    fn lower_grad(&self, x: &DenseVector, y: &DenseVector) -> Result<DenseVector> {
        Ok(self.exact(x, y)?.grad_gy)
    }

    fn lower_hessian(&self, x: &DenseVector, y: &DenseVector) -> Result<DenseMatrix> {
        Ok(self.exact(x, y)?.hess_gyy)
    }

    /// Deterministic lower solve to `‖∇ᵧg‖ ≤ tol`.
    fn solve_lower(&self, x: &DenseVector, start: Option<&DenseVector>, tol: f64) -> Result<DenseVector> {
        gradient_descent_lower(self, x, start, tol, DEFAULT_LOWER_ITERS)
    }

    /// Whether `y*(x)` is cheap and exact (synthetic instances).
    fn is_synthetic(&self) -> bool {
        false
    }
}

pub(crate) const DEFAULT_LOWER_ITERS: usize = 200_000;

fn check_point(task: &(impl BilevelTask + ?Sized), x: &DenseVector, y: &DenseVector) -> Result<()> {
    if x.len() != task.upper_dim() || y.len() != task.lower_dim() {
        return Err(invalid(format!(
            "point dims ({}, {}) do not match task dims ({}, {})",
            x.len(),
            y.len(),
            task.upper_dim(),
            task.lower_dim()
        )));
    }
    Ok(())
}

/// Evaluates the oracle at the current and previous points with one shared
/// random draw. `samples_consumed` is charged once, on the current sample.
pub fn sample_paired(
    task: &(impl BilevelTask + ?Sized),
    x_curr: &DenseVector,
    y_curr: &DenseVector,
    x_prev: &DenseVector,
    y_prev: &DenseVector,
    draws: &OracleDraws,
) -> Result<(OracleSample, OracleSample)> {
    check_point(task, x_curr, y_curr)?;
    check_point(task, x_prev, y_prev)?;
    let curr = task.sample(x_curr, y_curr, &mut draws.clone())?;
    let mut prev = task.sample(x_prev, y_prev, &mut draws.clone())?;
    prev.samples_consumed = 0;
    Ok((curr, prev))
}

/// Single (unpaired) oracle call with dimension checks.
pub fn sample_once(
    task: &(impl BilevelTask + ?Sized),
    x: &DenseVector,
    y: &DenseVector,
    draws: &OracleDraws,
) -> Result<OracleSample> {
    check_point(task, x, y)?;
    task.sample(x, y, &mut draws.clone())
}

/// `∇ₓf − ∇²ₓᵧg [∇²ᵧᵧg]⁻¹ ∇ᵧf` from the exact oracle at `(x, y)`; equals
/// `∇F(x)` when `y = y*(x)`.
pub fn exact_hypergradient(task: &(impl BilevelTask + ?Sized), x: &DenseVector, y: &DenseVector) -> Result<DenseVector> {
    check_point(task, x, y)?;
    let s = task.exact(x, y)?;
    hypergradient_from_parts(&s.grad_fx, &s.grad_fy, &s.jac_gxy, &s.hess_gyy, 1e-12)
}

pub(crate) fn hypergradient_from_parts(
    grad_fx: &DenseVector,
    grad_fy: &DenseVector,
    jac_gxy: &DenseMatrix,
    hess_gyy: &DenseMatrix,
    tol: f64,
) -> Result<DenseVector> {
    let n = grad_fy.len();
    let sol = cg_solve_matrix(hess_gyy, grad_fy, tol, 10 * n + 100)?;
    if !sol.converged {
        return Err(Error::ToleranceNotMet {
            what: "hypergradient inner solve".into(),
            achieved: sol.residual_norm,
            target: tol,
            iterations: sol.iterations,
        });
    }
    Ok(grad_fx - jac_gxy * sol.x)
}

/// Full-batch gradient descent with Armijo backtracking on `g(x, ·)`.
pub fn gradient_descent_lower(
    task: &(impl BilevelTask + ?Sized),
    x: &DenseVector,
    start: Option<&DenseVector>,
    tol: f64,
    max_iter: usize,
) -> Result<DenseVector> {
    let mut y = start.cloned().unwrap_or_else(|| DenseVector::zeros(task.lower_dim()));
    check_point(task, x, &y)?;
    let mut step = 1.0;
    let mut value = task.lower_value(x, &y)?;
    for _ in 0..max_iter {
        let g = task.lower_grad(x, &y)?;
        let gn2 = g.norm_squared();
        if gn2.sqrt() <= tol {
            return Ok(y);
        }
        step *= 2.0;
        loop {
            let cand = &y - &g * step;
            let cv = task.lower_value(x, &cand)?;
            if cv <= value - 0.5 * step * gn2 || step < 1e-20 {
                y = cand;
                value = cv;
                break;
            }
            step *= 0.5;
        }
        if !value.is_finite() {
            return Err(Error::NumericalFailure("lower descent produced non-finite value".into()));
        }
    }
    let achieved = task.lower_grad(x, &y)?.norm();
    if achieved <= tol {
        return Ok(y);
    }
    Err(Error::ToleranceNotMet {
        what: "lower-level gradient descent".into(),
        achieved,
        target: tol,
        iterations: max_iter,
    })
}

/// Damped Newton on `g(x, ·)` using the exact lower gradient and Hessian.
pub fn newton_lower(
    task: &(impl BilevelTask + ?Sized),
    x: &DenseVector,
    start: Option<&DenseVector>,
    tol: f64,
    max_iter: usize,
) -> Result<DenseVector> {
    let mut y = start.cloned().unwrap_or_else(|| DenseVector::zeros(task.lower_dim()));
    check_point(task, x, &y)?;
    let mut value = task.lower_value(x, &y)?;
    for _ in 0..max_iter {
        let g = task.lower_grad(x, &y)?;
        let gn = g.norm();
        if gn <= tol {
            return Ok(y);
        }
        let h = task.lower_hessian(x, &y)?;
        let dir = match h.clone().cholesky() {
            Some(ch) => ch.solve(&g),
            None => g.clone(),
        };
        let slope = g.dot(&dir);
        let mut step = 1.0;
        loop {
            let cand = &y - &dir * step;
            let cv = task.lower_value(x, &cand)?;
            // full steps also pass on gradient decrease, for value ties in rounding
            let accept = cv <= value - 1e-4 * step * slope
                || step < 1e-12
                || (step == 1.0 && task.lower_grad(x, &cand)?.norm() < gn);
            if accept {
                y = cand;
                value = cv;
                break;
            }
            step *= 0.5;
        }
        if !value.is_finite() {
            return Err(Error::NumericalFailure("lower Newton produced non-finite value".into()));
        }
    }
    let achieved = task.lower_grad(x, &y)?.norm();
    if achieved <= tol {
        return Ok(y);
    }
    Err(Error::ToleranceNotMet {
        what: "lower-level Newton solve".into(),
        achieved,
        target: tol,
        iterations: max_iter,
    })
}

/// `m ≥ 1` tasks sharing the upper variable, with task sampling
/// probabilities `p`. The upper objective is the task average.
#[derive(Debug, Clone)]
pub struct TaskFamily {
    tasks: Vec<Arc<dyn BilevelTask>>,
    probs: Vec<f64>,
    cumulative: Vec<f64>,
}

impl TaskFamily {
    pub fn new(tasks: Vec<Arc<dyn BilevelTask>>, probs: Vec<f64>) -> Result<Self> {
        if tasks.is_empty() {
            return Err(invalid("task family needs at least one task"));
        }
        if probs.len() != tasks.len() {
            return Err(invalid(format!(
                "{} probabilities for {} tasks",
                probs.len(),
                tasks.len()
            )));
        }
        if probs.iter().any(|&p| !(p > 0.0) || !p.is_finite()) {
            return Err(invalid("sampling probabilities must be positive"));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(invalid(format!("sampling probabilities sum to {total}, not 1")));
        }
        let d = tasks[0].upper_dim();
        if tasks.iter().any(|t| t.upper_dim() != d) {
            return Err(invalid("tasks must share the upper dimension"));
        }
        let mut acc = 0.0;
        let cumulative = probs
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        Ok(Self {
            tasks,
            probs,
            cumulative,
        })
    }

    pub fn uniform(tasks: Vec<Arc<dyn BilevelTask>>) -> Result<Self> {
        let m = tasks.len().max(1);
        Self::new(tasks, vec![1.0 / m as f64; m])
    }

    pub fn single(task: Arc<dyn BilevelTask>) -> Self {
        Self::new(vec![task], vec![1.0]).expect("single task family is valid")
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn upper_dim(&self) -> usize {
        self.tasks[0].upper_dim()
    }

    pub fn task(&self, i: usize) -> &Arc<dyn BilevelTask> {
        &self.tasks[i]
    }

    pub fn tasks(&self) -> &[Arc<dyn BilevelTask>] {
        &self.tasks
    }

    pub fn prob(&self, i: usize) -> f64 {
        self.probs[i]
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Draws a task index according to `p`.
    pub fn sample_task(&self, rng: &mut StreamRng) -> usize {
        let u: f64 = rng.random();
        self.cumulative
            .iter()
            .position(|&c| u < c)
            .unwrap_or(self.tasks.len() - 1)
    }
}
