//! Deterministic evaluation of `F(x) = (1/m) Σᵢ fᵢ(x, yᵢ*(x))`.

use crate::error::{invalid, Result};
use crate::linalg::DenseVector;
use crate::oracle::{exact_hypergradient, TaskFamily};
use crate::par;
use crate::solvers::{Evaluation, ObjectiveEvaluator};

/// Lower-solve accuracy used for reported objectives.
pub const DEFAULT_INNER_TOL: f64 = 1e-8;

/// Trace evaluator backed by exact lower solves. Every lower problem is
/// solved from zero, so the result depends on `x` alone.
#[derive(Debug, Clone)]
pub struct TrueObjective {
    family: TaskFamily,
    inner_tol: f64,
    gradient: bool,
}

impl TrueObjective {
    pub fn new(family: TaskFamily, inner_tol: f64) -> Result<Self> {
        if !(inner_tol > 0.0) {
            return Err(invalid(format!("inner tolerance must be positive, got {inner_tol}")));
        }
        let gradient = family.tasks().iter().all(|t| t.has_exact());
        Ok(Self {
            family,
            inner_tol,
            gradient,
        })
    }

    /// Skips the `‖∇F‖²` column.
    pub fn without_gradient(mut self) -> Self {
        self.gradient = false;
        self
    }

    pub fn family(&self) -> &TaskFamily {
        &self.family
    }

    /// Exact lower solutions at `x`.
    pub fn lower_solutions(&self, x: &DenseVector) -> Result<Vec<DenseVector>> {
        par::try_map(self.family.tasks(), |t| t.solve_lower(x, None, self.inner_tol))
    }

    pub fn value(&self, x: &DenseVector) -> Result<f64> {
        let ys = self.lower_solutions(x)?;
        self.value_at(x, &ys)
    }

    fn value_at(&self, x: &DenseVector, ys: &[DenseVector]) -> Result<f64> {
        let mut total = 0.0;
        for (t, y) in self.family.tasks().iter().zip(ys) {
            total += t.upper_value(x, y)?;
        }
        Ok(total / self.family.len() as f64)
    }

    /// `∇F(x)` from exact hypergradients at the solved lower points.
    pub fn gradient(&self, x: &DenseVector) -> Result<DenseVector> {
        let ys = self.lower_solutions(x)?;
        self.gradient_at(x, &ys)
    }

    fn gradient_at(&self, x: &DenseVector, ys: &[DenseVector]) -> Result<DenseVector> {
        let idx: Vec<usize> = (0..self.family.len()).collect();
        let grads = par::try_map(&idx, |&i| exact_hypergradient(self.family.task(i).as_ref(), x, &ys[i]))?;
        let mut acc = DenseVector::zeros(x.len());
        for g in &grads {
            acc += g;
        }
        Ok(acc / self.family.len() as f64)
    }
}

impl ObjectiveEvaluator for TrueObjective {
    fn evaluate(&self, x: &DenseVector, ys: &[DenseVector]) -> Result<Evaluation> {
        let stars = self.lower_solutions(x)?;
        let objective = self.value_at(x, &stars)?;
        let grad_norm_sq = if self.gradient {
            Some(self.gradient_at(x, &stars)?.norm_squared())
        } else {
            None
        };
        let y_gap = match (self.family.len(), ys.first()) {
            (1, Some(y)) if self.family.task(0).is_synthetic() => Some((y - &stars[0]).norm()),
            _ => None,
        };
        Ok(Evaluation {
            objective,
            grad_norm_sq,
            y_gap,
        })
    }
}

/// `F(x)` with every lower problem solved to `‖∇ᵧgᵢ‖ ≤ inner_tol`.
pub fn evaluate_true_objective(family: &TaskFamily, x: &DenseVector, inner_tol: f64) -> Result<f64> {
    TrueObjective::new(family.clone(), inner_tol)?.value(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::BilevelTask;
    use crate::quadratic::QuadraticTask;
    use crate::rng::{stream, StreamKind};
    use approx::assert_relative_eq;
    use std::sync::Arc;

    #[test]
    fn quadratic_closed_form() {
        let mut rng = stream(3, 0, 0, StreamKind::Problem);
        let q = Arc::new(QuadraticTask::random(4, 3, 5.0, 0.3, 1.0, &mut rng).unwrap());
        let fam = TaskFamily::single(q.clone());
        let x = DenseVector::from_vec(vec![0.1, -0.4, 2.0, 1.0]);
        let v = evaluate_true_objective(&fam, &x, 1e-10).unwrap();
        assert_relative_eq!(v, q.objective(&x), epsilon = 1e-8);
        assert_eq!(v, evaluate_true_objective(&fam, &x, 1e-10).unwrap());
    }

    #[test]
    fn family_average_and_gap() {
        let a: Arc<dyn BilevelTask> = Arc::new(QuadraticTask::isotropic(2, 2, 1.0, 0.0));
        let b: Arc<dyn BilevelTask> = Arc::new(QuadraticTask::isotropic(2, 2, 2.0, 0.0));
        let x = DenseVector::from_vec(vec![1.0, 2.0]);
        let fam = TaskFamily::uniform(vec![a.clone(), b]).unwrap();
        let ev = TrueObjective::new(fam, 1e-10).unwrap();
        let e = ev.evaluate(&x, &[]).unwrap();
        // y* = x/a, f = ½‖y*‖²
        assert_relative_eq!(e.objective, 0.5 * (2.5 + 0.625), epsilon = 1e-12);
        assert!(e.y_gap.is_none());

        let single = TrueObjective::new(TaskFamily::single(a), 1e-10).unwrap();
        let e = single.evaluate(&x, &[DenseVector::zeros(2)]).unwrap();
        assert_relative_eq!(e.y_gap.unwrap(), 5f64.sqrt(), epsilon = 1e-12);
        assert_relative_eq!(e.grad_norm_sq.unwrap(), 5.0, epsilon = 1e-10);
    }

    #[test]
    fn rejects_bad_tolerance() {
        let a: Arc<dyn BilevelTask> = Arc::new(QuadraticTask::isotropic(2, 2, 1.0, 0.0));
        assert!(TrueObjective::new(TaskFamily::single(a), 0.0).is_err());
    }
}
