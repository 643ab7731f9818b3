//! Data reweighting for logistic regression.
//!
//! Upper variable `p ∈ ℝⁿ` (one weight parameter per training example),
//! lower variable `w ∈ ℝ^{k+1}` (feature weights, intercept last):
//!
//! ```text
//! f(p, w) = mean_{val} ℓ(w; a, b)
//! g(p, w) = mean_{j ∈ train} ω(p_j) ℓ(w; a_j, b_j) + ½ λ ‖w‖²
//! ℓ(w; a, b) = log(1 + exp(−b (wᵀa + w₀) / σ))
//! ```
//!
//! with `ω = sigmoid` or the identity, and temperature `σ` (1 for plain
//! reweighting).

use std::sync::Arc;

use rand::Rng;

use super::sparse::{SparseDataset, SparseRow};
use crate::error::{invalid, Result};
use crate::linalg::{DenseMatrix, DenseVector};
use crate::oracle::{newton_lower, BilevelTask, BoundConstants, OracleSample};
use crate::rng::{OracleDraws, StreamRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WeightMode {
    /// `ω(p) = 1 / (1 + e^{−p})`.
    #[default]
    Sigmoid,
    /// `ω(p) = p`; the lower problem loses strong convexity once a weight
    /// turns negative.
    Raw,
}

impl WeightMode {
    pub fn weight(self, p: f64) -> f64 {
        match self {
            WeightMode::Sigmoid => sigmoid(p),
            WeightMode::Raw => p,
        }
    }

    pub fn derivative(self, p: f64) -> f64 {
        match self {
            WeightMode::Sigmoid => {
                let s = sigmoid(p);
                s * (1.0 - s)
            }
            WeightMode::Raw => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReweightingConfig {
    pub lambda_reg: f64,
    pub mode: WeightMode,
    pub batch_train: usize,
    pub batch_val: usize,
    pub regularize_intercept: bool,
}

impl Default for ReweightingConfig {
    fn default() -> Self {
        Self {
            lambda_reg: 1e-2,
            mode: WeightMode::Sigmoid,
            batch_train: 8,
            batch_val: 8,
            regularize_intercept: true,
        }
    }
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^{−z})` without overflow.
fn log1p_exp_neg(z: f64) -> f64 {
    if z > 0.0 {
        (-z).exp().ln_1p()
    } else {
        -z + z.exp().ln_1p()
    }
}

#[derive(Debug, Clone)]
pub struct ReweightingProblem {
    train: Arc<SparseDataset>,
    validation: Arc<SparseDataset>,
    n_features: usize,
    config: ReweightingConfig,
    temperature: f64,
}

impl ReweightingProblem {
    pub fn new(train: SparseDataset, validation: SparseDataset, config: ReweightingConfig) -> Result<Self> {
        if train.is_empty() || validation.is_empty() {
            return Err(invalid("reweighting needs non-empty train and validation sets"));
        }
        if !(config.lambda_reg > 0.0) {
            return Err(invalid(format!("lambda_reg must be positive, got {}", config.lambda_reg)));
        }
        if config.batch_train == 0 || config.batch_val == 0 {
            return Err(invalid("minibatch sizes must be >= 1"));
        }
        let n_features = train.n_features.max(validation.n_features);
        Ok(Self {
            train: Arc::new(train),
            validation: Arc::new(validation),
            n_features,
            config,
            temperature: 1.0,
        })
    }

    /// Copy sharing the datasets, with loss temperature `σ`.
    pub fn with_temperature(&self, temperature: f64) -> Result<Self> {
        if !(temperature > 0.0) || !temperature.is_finite() {
            return Err(invalid(format!("temperature must be positive, got {temperature}")));
        }
        Ok(Self {
            temperature,
            ..self.clone()
        })
    }

    /// Keeps `k` validation rows chosen without replacement.
    pub fn with_validation_subsample(&self, k: usize, rng: &mut StreamRng) -> Result<Self> {
        let n = self.validation.n_rows();
        if k == 0 {
            return Err(invalid("validation subsample must be non-empty"));
        }
        if k >= n {
            return Ok(self.clone());
        }
        let mut idx = rand::seq::index::sample(rng, n, k).into_vec();
        idx.sort_unstable();
        Ok(Self {
            validation: Arc::new(self.validation.subset(&idx)),
            ..self.clone()
        })
    }

    pub fn with_config(&self, config: ReweightingConfig) -> Self {
        Self { config, ..self.clone() }
    }

    pub fn config(&self) -> &ReweightingConfig {
        &self.config
    }

    pub fn train(&self) -> &SparseDataset {
        &self.train
    }

    pub fn validation(&self) -> &SparseDataset {
        &self.validation
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    fn margin(&self, row: &SparseRow, w: &DenseVector) -> f64 {
        let nf = self.n_features;
        let lin = row.features.iter().map(|&(i, v)| w[i as usize - 1] * v).sum::<f64>() + w[nf];
        row.label * lin / self.temperature
    }

    /// Per-example loss.
    pub fn loss(&self, row: &SparseRow, w: &DenseVector) -> f64 {
        log1p_exp_neg(self.margin(row, w))
    }

    /// `∂ℓ/∂(wᵀã)`: the gradient is this times `ã = (a, 1)`.
    fn grad_coef(&self, row: &SparseRow, w: &DenseVector) -> f64 {
        -row.label / self.temperature * sigmoid(-self.margin(row, w))
    }

    fn hess_coef(&self, row: &SparseRow, w: &DenseVector) -> f64 {
        let m = self.margin(row, w);
        sigmoid(m) * sigmoid(-m) / (self.temperature * self.temperature)
    }

    fn add_row(&self, out: &mut DenseVector, row: &SparseRow, coef: f64) {
        for &(i, v) in &row.features {
            out[i as usize - 1] += coef * v;
        }
        out[self.n_features] += coef;
    }

    fn add_outer(&self, out: &mut DenseMatrix, row: &SparseRow, coef: f64) {
        let nf = self.n_features;
        let idx = || {
            row.features
                .iter()
                .map(|&(i, v)| (i as usize - 1, v))
                .chain(std::iter::once((nf, 1.0)))
        };
        for (a, va) in idx() {
            for (b, vb) in idx() {
                out[(a, b)] += coef * va * vb;
            }
        }
    }

    /// Per-example `∇_w ℓ`.
    pub fn example_gradient(&self, row: &SparseRow, w: &DenseVector) -> DenseVector {
        let mut g = DenseVector::zeros(self.n_features + 1);
        self.add_row(&mut g, row, self.grad_coef(row, w));
        g
    }

    fn reg_mask(&self) -> DenseVector {
        let mut r = DenseVector::from_element(self.n_features + 1, self.config.lambda_reg);
        if !self.config.regularize_intercept {
            r[self.n_features] = 0.0;
        }
        r
    }

    /// Oracle assembled from multisets of validation and train indices.
    fn assemble(&self, p: &DenseVector, w: &DenseVector, val: &[(usize, f64)], tr: &[(usize, f64)]) -> OracleSample {
        let dl = self.n_features + 1;
        let n = self.train.n_rows();
        let mut grad_fy = DenseVector::zeros(dl);
        for &(k, c) in val {
            let row = &self.validation.rows[k];
            self.add_row(&mut grad_fy, row, c * self.grad_coef(row, w));
        }
        let reg = self.reg_mask();
        let mut grad_gy = w.component_mul(&reg);
        let mut hess = DenseMatrix::from_diagonal(&reg);
        let mut jac = DenseMatrix::zeros(n, dl);
        for &(j, c) in tr {
            let row = &self.train.rows[j];
            let gc = self.grad_coef(row, w);
            let weight = self.config.mode.weight(p[j]);
            self.add_row(&mut grad_gy, row, c * weight * gc);
            self.add_outer(&mut hess, row, c * weight * self.hess_coef(row, w));
            let dw = c * self.config.mode.derivative(p[j]) * gc;
            for &(i, v) in &row.features {
                jac[(j, i as usize - 1)] += dw * v;
            }
            jac[(j, self.n_features)] += dw;
        }
        OracleSample {
            grad_fx: DenseVector::zeros(n),
            grad_fy,
            grad_gy,
            jac_gxy: jac,
            hess_gyy: hess,
            samples_consumed: 0,
        }
    }

    fn check(&self, p: &DenseVector, w: &DenseVector) -> Result<()> {
        if p.len() != self.train.n_rows() || w.len() != self.n_features + 1 {
            return Err(invalid(format!(
                "reweighting point dims ({}, {}) expected ({}, {})",
                p.len(),
                w.len(),
                self.train.n_rows(),
                self.n_features + 1
            )));
        }
        Ok(())
    }
}

fn draw_batch(rng: &mut StreamRng, n: usize, b: usize) -> Vec<(usize, f64)> {
    let c = 1.0 / b as f64;
    (0..b).map(|_| (rng.random_range(0..n), c)).collect()
}

fn full_batch(n: usize) -> Vec<(usize, f64)> {
    let c = 1.0 / n as f64;
    (0..n).map(|k| (k, c)).collect()
}

impl BilevelTask for ReweightingProblem {
    fn upper_dim(&self) -> usize {
        self.train.n_rows()
    }

    fn lower_dim(&self) -> usize {
        self.n_features + 1
    }

    fn bounds(&self) -> BoundConstants {
        BoundConstants::with_lambda(self.config.lambda_reg)
    }

    fn sample(&self, p: &DenseVector, w: &DenseVector, draws: &mut OracleDraws) -> Result<OracleSample> {
        self.check(p, w)?;
        let val = draw_batch(&mut draws.upper, self.validation.n_rows(), self.config.batch_val);
        let tr = draw_batch(&mut draws.lower, self.train.n_rows(), self.config.batch_train);
        let mut s = self.assemble(p, w, &val, &tr);
        s.samples_consumed = (self.config.batch_train + self.config.batch_val) as u64;
        Ok(s)
    }

    fn exact(&self, p: &DenseVector, w: &DenseVector) -> Result<OracleSample> {
        self.check(p, w)?;
        Ok(self.assemble(
            p,
            w,
            &full_batch(self.validation.n_rows()),
            &full_batch(self.train.n_rows()),
        ))
    }

    fn has_exact(&self) -> bool {
        true
    }

    fn upper_value(&self, p: &DenseVector, w: &DenseVector) -> Result<f64> {
        self.check(p, w)?;
        let total: f64 = self.validation.rows.iter().map(|r| self.loss(r, w)).sum();
        Ok(total / self.validation.n_rows() as f64)
    }

    fn lower_value(&self, p: &DenseVector, w: &DenseVector) -> Result<f64> {
        self.check(p, w)?;
        let n = self.train.n_rows() as f64;
        let data: f64 = self
            .train
            .rows
            .iter()
            .enumerate()
            .map(|(j, r)| self.config.mode.weight(p[j]) * self.loss(r, w))
            .sum();
        Ok(data / n + 0.5 * w.component_mul(w).dot(&self.reg_mask()))
    }

    fn lower_grad(&self, p: &DenseVector, w: &DenseVector) -> Result<DenseVector> {
        self.check(p, w)?;
        let n = self.train.n_rows() as f64;
        let mut g = w.component_mul(&self.reg_mask());
        for (j, r) in self.train.rows.iter().enumerate() {
            let c = self.config.mode.weight(p[j]) * self.grad_coef(r, w) / n;
            self.add_row(&mut g, r, c);
        }
        Ok(g)
    }

    fn lower_hessian(&self, p: &DenseVector, w: &DenseVector) -> Result<DenseMatrix> {
        self.check(p, w)?;
        let n = self.train.n_rows() as f64;
        let mut h = DenseMatrix::from_diagonal(&self.reg_mask());
        for (j, r) in self.train.rows.iter().enumerate() {
            let c = self.config.mode.weight(p[j]) * self.hess_coef(r, w) / n;
            self.add_outer(&mut h, r, c);
        }
        Ok(h)
    }

    fn solve_lower(&self, p: &DenseVector, start: Option<&DenseVector>, tol: f64) -> Result<DenseVector> {
        newton_lower(self, p, start, tol, 200)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{exact_hypergradient, sample_once};
    use crate::problems::sparse::parse_sparse_text;
    use crate::problems::toy::toy_reweighting;
    use crate::rng::{stream, StreamKind};
    use approx::assert_relative_eq;

    fn tiny() -> ReweightingProblem {
        let train = parse_sparse_text("+1 1:1 2:-0.5\n-1 2:2\n+1 1:-1\n").unwrap();
        let val = parse_sparse_text("-1 1:0.3\n+1 2:1\n").unwrap();
        ReweightingProblem::new(train, val, ReweightingConfig::default()).unwrap()
    }

    #[test]
    fn sigmoid_weights_at_zero() {
        let p = DenseVector::zeros(3);
        for j in 0..3 {
            assert_eq!(WeightMode::Sigmoid.weight(p[j]), 0.5);
        }
    }

    #[test]
    fn single_point_gradient_matches_hand_formula() {
        let train = parse_sparse_text("+1 1:2 2:-1\n").unwrap();
        let val = parse_sparse_text("-1 1:1\n").unwrap();
        let cfg = ReweightingConfig {
            batch_train: 1,
            batch_val: 1,
            ..Default::default()
        };
        let prob = ReweightingProblem::new(train, val, cfg).unwrap();
        let p = DenseVector::from_vec(vec![0.3]);
        let w = DenseVector::from_vec(vec![0.1, 0.2, -0.3]);
        let s = prob.exact(&p, &w).unwrap();
        let x = [2.0, -1.0, 1.0];
        let margin: f64 = 0.1 * 2.0 - 0.2 - 0.3;
        let weight = 1.0 / (1.0 + (-0.3f64).exp());
        let sneg = 1.0 / (1.0 + margin.exp());
        for k in 0..3 {
            let expected = weight * (-x[k] * sneg) + 1e-2 * w[k];
            assert_relative_eq!(s.grad_gy[k], expected, epsilon = 1e-14);
        }

        let mut draws = OracleDraws::new(0, 0, 0);
        let single = prob.sample(&p, &w, &mut draws).unwrap();
        let vrow = &prob.validation().rows[0];
        assert_relative_eq!(single.grad_fy, prob.example_gradient(vrow, &w), epsilon = 1e-15);
        assert_eq!(single.samples_consumed, 2);
    }

    #[test]
    fn hessian_is_strongly_convex() {
        let prob = tiny();
        let mut rng = stream(0, 0, 0, StreamKind::Problem);
        for _ in 0..20 {
            let p = DenseVector::from_fn(3, |_, _| rng.random_range(-3.0..3.0));
            let w = DenseVector::from_fn(3, |_, _| rng.random_range(-3.0..3.0));
            let h = prob.lower_hessian(&p, &w).unwrap();
            let min = h.symmetric_eigenvalues().min();
            assert!(min >= 1e-2 - 1e-10, "{min}");
        }
    }

    #[test]
    fn exact_matches_lower_derivatives() {
        let prob = tiny();
        let p = DenseVector::from_vec(vec![0.1, -2.0, 1.0]);
        let w = DenseVector::from_vec(vec![0.5, -0.5, 0.2]);
        let s = prob.exact(&p, &w).unwrap();
        assert_relative_eq!(s.grad_gy, prob.lower_grad(&p, &w).unwrap(), epsilon = 1e-14);
        assert_relative_eq!(s.hess_gyy, prob.lower_hessian(&p, &w).unwrap(), epsilon = 1e-14);
        let h = 1e-6;
        for k in 0..3 {
            let mut wp = w.clone();
            wp[k] += h;
            let mut wm = w.clone();
            wm[k] -= h;
            let fd = (prob.lower_value(&p, &wp).unwrap() - prob.lower_value(&p, &wm).unwrap()) / (2.0 * h);
            assert_relative_eq!(fd, s.grad_gy[k], epsilon = 1e-8);
        }
    }

    #[test]
    fn hypergradient_matches_finite_differences() {
        let prob = toy_reweighting(12, 6, 4, 0.2, 11, ReweightingConfig::default()).unwrap();
        let mut rng = stream(1, 0, 0, StreamKind::Problem);
        let p = DenseVector::from_fn(12, |_, _| rng.random_range(-1.0..1.0));
        let w = prob.solve_lower(&p, None, 1e-12).unwrap();
        let g = exact_hypergradient(&prob, &p, &w).unwrap();
        let f = |p: &DenseVector| {
            let w = prob.solve_lower(p, None, 1e-12).unwrap();
            prob.upper_value(p, &w).unwrap()
        };
        for k in 0..5 {
            let mut pp = p.clone();
            pp[k] += 1e-5;
            let mut pm = p.clone();
            pm[k] -= 1e-5;
            let fd = (f(&pp) - f(&pm)) / 2e-5;
            assert!((fd - g[k]).abs() <= 1e-4 * g.amax(), "{k}: {fd} vs {}", g[k]);
        }
    }

    #[test]
    fn minibatch_mean_is_unbiased() {
        let prob = tiny();
        let p = DenseVector::from_vec(vec![0.4, -0.1, 0.0]);
        let w = DenseVector::from_vec(vec![0.2, 0.1, -0.1]);
        let exact = prob.exact(&p, &w).unwrap();
        let n = 4000;
        let mut mean = DenseMatrix::zeros(3, 3);
        for k in 0..n {
            let s = sample_once(&prob, &p, &w, &OracleDraws::new(9, k, 0)).unwrap();
            mean += s.jac_gxy / n as f64;
        }
        assert!((mean - exact.jac_gxy).amax() < 0.02);
    }

    #[test]
    fn dimension_mismatch() {
        let prob = tiny();
        assert!(prob.exact(&DenseVector::zeros(2), &DenseVector::zeros(3)).is_err());
    }
}
