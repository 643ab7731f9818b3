//! Multi-task hyperparameter optimization: `m` reweighting tasks that share
//! the example weights and differ in the loss temperature `σᵢ`.

use std::sync::Arc;

use rand::Rng;

use super::reweighting::ReweightingProblem;
use crate::error::{invalid, Result};
use crate::oracle::{BilevelTask, TaskFamily};
use crate::rng::{stream, StreamKind};

#[derive(Debug, Clone)]
pub struct MultiTaskTemperatureProblem {
    base: ReweightingProblem,
    temperatures: Vec<f64>,
}

impl MultiTaskTemperatureProblem {
    /// `m` temperatures drawn uniformly from `[1, 11]` under `seed`.
    pub fn new(base: ReweightingProblem, m: usize, seed: u64) -> Result<Self> {
        let mut rng = stream(seed, 0, 0, StreamKind::Problem);
        let temperatures = (0..m).map(|_| rng.random_range(1.0..=11.0)).collect();
        Self::with_temperatures(base, temperatures)
    }

    pub fn with_temperatures(base: ReweightingProblem, temperatures: Vec<f64>) -> Result<Self> {
        if temperatures.is_empty() {
            return Err(invalid("need at least one task"));
        }
        if temperatures.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(invalid("temperatures must be positive"));
        }
        Ok(Self { base, temperatures })
    }

    pub fn len(&self) -> usize {
        self.temperatures.len()
    }

    pub fn is_empty(&self) -> bool {
        self.temperatures.is_empty()
    }

    pub fn temperatures(&self) -> &[f64] {
        &self.temperatures
    }

    pub fn base(&self) -> &ReweightingProblem {
        &self.base
    }

    /// Task `i` (0-based).
    pub fn task(&self, i: usize) -> Result<ReweightingProblem> {
        let s = *self
            .temperatures
            .get(i)
            .ok_or_else(|| invalid(format!("task index {i} out of range for {} tasks", self.len())))?;
        self.base.with_temperature(s)
    }

    /// All tasks with uniform sampling probabilities.
    pub fn family(&self) -> Result<TaskFamily> {
        let tasks = (0..self.len())
            .map(|i| Ok(Arc::new(self.task(i)?) as Arc<dyn BilevelTask>))
            .collect::<Result<Vec<_>>>()?;
        TaskFamily::uniform(tasks)
    }
}

/// Task `i` of `prob`.
pub fn temperature_task(prob: &MultiTaskTemperatureProblem, i: usize) -> Result<ReweightingProblem> {
    prob.task(i)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::DenseVector;
    use crate::objective::TrueObjective;
    use crate::problems::reweighting::ReweightingConfig;
    use crate::problems::sparse::parse_sparse_text;
    use crate::problems::toy::toy_reweighting;
    use approx::assert_relative_eq;

    #[test]
    fn temperatures_in_range_and_reproducible() {
        let base = toy_reweighting(5, 3, 2, 0.0, 0, ReweightingConfig::default()).unwrap();
        let a = MultiTaskTemperatureProblem::new(base.clone(), 50, 3).unwrap();
        let b = MultiTaskTemperatureProblem::new(base, 50, 3).unwrap();
        assert_eq!(a.temperatures(), b.temperatures());
        assert!(a.temperatures().iter().all(|&s| (1.0..=11.0).contains(&s)));
        assert!(a.task(50).is_err());
    }

    #[test]
    fn unit_temperature_is_base() {
        let base = toy_reweighting(6, 4, 3, 0.1, 2, ReweightingConfig::default()).unwrap();
        let prob = MultiTaskTemperatureProblem::with_temperatures(base.clone(), vec![1.0]).unwrap();
        let t = temperature_task(&prob, 0).unwrap();
        let p = DenseVector::from_element(6, 0.3);
        let w = DenseVector::from_element(4, -0.2);
        assert_eq!(t.exact(&p, &w).unwrap(), base.exact(&p, &w).unwrap());
    }

    #[test]
    fn large_temperature_limit() {
        let train = parse_sparse_text("+1 1:2 2:1\n").unwrap();
        let base = ReweightingProblem::new(train.clone(), train, ReweightingConfig::default()).unwrap();
        let s = 1e6;
        let t = base.with_temperature(s).unwrap();
        let w = DenseVector::from_vec(vec![0.3, -0.1, 0.05]);
        let row = &t.train().rows[0];
        assert_relative_eq!(t.loss(row, &w), 2f64.ln(), epsilon = 1e-6);
        let g = t.example_gradient(row, &w);
        let expected = DenseVector::from_vec(vec![2.0, 1.0, 1.0]) * (-1.0 / (2.0 * s));
        assert_relative_eq!(g, expected, epsilon = 1e-12);
    }

    #[test]
    fn two_task_gradient_matches_finite_differences() {
        let train = parse_sparse_text("+1 1:1 2:0.5\n-1 1:-0.5 2:1\n+1 2:-1\n").unwrap();
        let val = parse_sparse_text("+1 1:0.7\n-1 2:0.4\n").unwrap();
        let base = ReweightingProblem::new(train, val, ReweightingConfig::default()).unwrap();
        let prob = MultiTaskTemperatureProblem::with_temperatures(base, vec![1.0, 2.0]).unwrap();
        let ev = TrueObjective::new(prob.family().unwrap(), 1e-12).unwrap();
        let p = DenseVector::from_vec(vec![0.2, -0.4, 0.9]);
        let g = ev.gradient(&p).unwrap();
        for k in 0..3 {
            let mut pp = p.clone();
            pp[k] += 1e-5;
            let mut pm = p.clone();
            pm[k] -= 1e-5;
            let fd = (ev.value(&pp).unwrap() - ev.value(&pm).unwrap()) / 2e-5;
            assert!((fd - g[k]).abs() <= 1e-4 * g.amax(), "{k}: {fd} vs {}", g[k]);
        }
    }
}
