//! Synthetic quadratic bilevel instance with closed-form ground truth:
//!
//! ```text
//! g(x, y) = ½ yᵀA y − yᵀ(Bx + b)          (A ⪰ λI)
//! f(x, y) = ½ ‖y − c‖² + ½ α ‖x‖²
//! y*(x)   = A⁻¹(Bx + b)
//! ∇F(x)   = αx + BᵀA⁻¹(y*(x) − c)
//! ```
//!
//! Stochastic draws perturb the data of both problems:
//! `A_ζ = A + N_A` (symmetric), `B_ζ = B + N_B`, `b_ζ = b + n_b`, and
//! `f(x, y; ξ) = ½‖y − c − ξ_c‖² + ½α‖x‖² + ξ_xᵀx`, all noise zero-mean with
//! scale `noise_sigma`. Every sampled quantity is the exact derivative of the
//! sampled function, so paired draws differ Lipschitz-continuously.

use nalgebra::Cholesky;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, Result};
use crate::linalg::{DenseMatrix, DenseVector, SymmetricEigenDecomposition};
use crate::oracle::{BilevelTask, BoundConstants, OracleSample};
use crate::rng::{OracleDraws, StreamRng};

#[derive(Debug, Clone)]
pub struct QuadraticTask {
    a: DenseMatrix,
    b_mat: DenseMatrix,
    b: DenseVector,
    c: DenseVector,
    alpha: f64,
    noise_sigma: f64,
    lambda: f64,
    l_g: f64,
    y_radius: f64,
    bounds: BoundConstants,
    a_chol: Cholesky<f64, nalgebra::Dyn>,
}

fn gaussian_vector(rng: &mut StreamRng, n: usize, scale: f64) -> DenseVector {
    DenseVector::from_iterator(n, (0..n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)))
}

fn gaussian_matrix(rng: &mut StreamRng, r: usize, c: usize, scale: f64) -> DenseMatrix {
    // column-major fill order; fixed so draws are reproducible
    DenseMatrix::from_iterator(r, c, (0..r * c).map(|_| scale * rng.sample::<f64, _>(StandardNormal)))
}

/// Random orthogonal matrix from the QR factorization of a Gaussian matrix.
pub fn random_orthogonal(rng: &mut StreamRng, n: usize) -> DenseMatrix {
    let g = gaussian_matrix(rng, n, n, 1.0);
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

impl QuadraticTask {
    pub fn new(
        a: DenseMatrix,
        b_mat: DenseMatrix,
        b: DenseVector,
        c: DenseVector,
        alpha: f64,
        noise_sigma: f64,
    ) -> Result<Self> {
        let dl = a.nrows();
        if !a.is_square() || b_mat.nrows() != dl || b.len() != dl || c.len() != dl {
            return Err(invalid("quadratic task: inconsistent shapes"));
        }
        if b_mat.ncols() == 0 || dl == 0 {
            return Err(invalid("quadratic task: dimensions must be positive"));
        }
        if !(alpha >= 0.0) || !(noise_sigma >= 0.0) {
            return Err(invalid("quadratic task: alpha and noise must be >= 0"));
        }
        if (&a - a.transpose()).amax() > 1e-12 * a.amax().max(1.0) {
            return Err(invalid("quadratic task: A must be symmetric"));
        }
        let eig = SymmetricEigenDecomposition::new(&a)?;
        let lambda = eig.min_eigenvalue();
        if !(lambda > 0.0) {
            return Err(invalid(format!("quadratic task: A not positive definite (min eig {lambda})")));
        }
        let a_chol = a.clone().cholesky().ok_or_else(|| invalid("A not SPD"))?;
        Ok(Self {
            l_g: eig.max_eigenvalue(),
            a,
            b_mat,
            b,
            c,
            alpha,
            noise_sigma,
            lambda,
            y_radius: f64::INFINITY,
            bounds: BoundConstants::with_lambda(lambda),
            a_chol,
        })
    }

    /// `A = a·I`, `B` with ones on its main diagonal, `b = c = 0`, `α = 0`.
    pub fn isotropic(d: usize, d_lower: usize, a: f64, noise_sigma: f64) -> Self {
        let b_mat = DenseMatrix::from_fn(d_lower, d, |i, j| if i == j { 1.0 } else { 0.0 });
        Self::new(
            DenseMatrix::identity(d_lower, d_lower) * a,
            b_mat,
            DenseVector::zeros(d_lower),
            DenseVector::zeros(d_lower),
            0.0,
            noise_sigma,
        )
        .expect("isotropic quadratic is valid")
    }

    /// Random instance: `A = Q diag(σ) Qᵀ` with eigenvalues log-spaced in
    /// `[1, cond]`, Gaussian `B` scaled by `1/√d`, Gaussian `b` and `c`.
    pub fn random(d: usize, d_lower: usize, cond: f64, alpha: f64, noise_sigma: f64, rng: &mut StreamRng) -> Result<Self> {
        if d == 0 || d_lower == 0 || !(cond >= 1.0) {
            return Err(invalid("quadratic task: need d, d' > 0 and cond >= 1"));
        }
        let q = random_orthogonal(rng, d_lower);
        let eigs = DenseVector::from_iterator(
            d_lower,
            (0..d_lower).map(|i| {
                if d_lower == 1 {
                    1.0
                } else {
                    cond.powf(i as f64 / (d_lower - 1) as f64)
                }
            }),
        );
        let a = &q * DenseMatrix::from_diagonal(&eigs) * q.transpose();
        let a = (&a + a.transpose()) * 0.5;
        let b_mat = gaussian_matrix(rng, d_lower, d, 1.0 / (d as f64).sqrt());
        let b = gaussian_vector(rng, d_lower, 1.0);
        let c = gaussian_vector(rng, d_lower, 1.0);
        Self::new(a, b_mat, b, c, alpha, noise_sigma)
    }

    pub fn with_y_radius(mut self, radius: f64) -> Self {
        self.y_radius = radius;
        self
    }

    pub fn with_bounds(mut self, bounds: BoundConstants) -> Self {
        self.bounds = bounds;
        self
    }

    pub fn with_noise(mut self, noise_sigma: f64) -> Self {
        self.noise_sigma = noise_sigma;
        self
    }

    pub fn a(&self) -> &DenseMatrix {
        &self.a
    }

    pub fn b_mat(&self) -> &DenseMatrix {
        &self.b_mat
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn noise_sigma(&self) -> f64 {
        self.noise_sigma
    }

    /// Smallest eigenvalue of `A`.
    pub fn strong_convexity(&self) -> f64 {
        self.lambda
    }

    /// Largest eigenvalue of `A` (smoothness of `g` in `y`).
    pub fn smoothness(&self) -> f64 {
        self.l_g
    }

    /// `A⁻¹(Bx + b)`.
    pub fn y_star(&self, x: &DenseVector) -> DenseVector {
        self.a_chol.solve(&(&self.b_mat * x + &self.b))
    }

    /// `F(x) = f(x, y*(x))`.
    pub fn objective(&self, x: &DenseVector) -> f64 {
        let y = self.y_star(x);
        0.5 * (&y - &self.c).norm_squared() + 0.5 * self.alpha * x.norm_squared()
    }

    /// Closed-form `∇F(x)`.
    pub fn hypergradient(&self, x: &DenseVector) -> DenseVector {
        let y = self.y_star(x);
        let inner = self.a_chol.solve(&(y - &self.c));
        x * self.alpha + self.b_mat.transpose() * inner
    }

    /// Minimizer of `F` (unique when `α > 0` or `B` has full column rank).
    pub fn minimizer(&self) -> Result<DenseVector> {
        family_minimizer(std::slice::from_ref(self))
    }

    /// `F(x) = ½‖Mx + r‖² + ½α‖x‖²` with `M = A⁻¹B`, `r = A⁻¹b − c`.
    fn normal_equations(&self) -> (DenseMatrix, DenseVector) {
        let m = self.a_chol.solve(&self.b_mat);
        let r = self.a_chol.solve(&self.b) - &self.c;
        let d = self.b_mat.ncols();
        let normal = m.transpose() * &m + DenseMatrix::identity(d, d) * self.alpha;
        let rhs = -(m.transpose() * r);
        (normal, rhs)
    }

    pub fn optimal_value(&self) -> Result<f64> {
        Ok(self.objective(&self.minimizer()?))
    }
}

impl BilevelTask for QuadraticTask {
    fn upper_dim(&self) -> usize {
        self.b_mat.ncols()
    }

    fn lower_dim(&self) -> usize {
        self.a.nrows()
    }

    fn y_radius(&self) -> f64 {
        self.y_radius
    }

    fn bounds(&self) -> BoundConstants {
        self.bounds
    }

    fn sample(&self, x: &DenseVector, y: &DenseVector, draws: &mut OracleDraws) -> Result<OracleSample> {
        let d = self.upper_dim();
        let dl = self.lower_dim();
        let s = self.noise_sigma;
        let xi_x = gaussian_vector(&mut draws.upper, d, s);
        let xi_c = gaussian_vector(&mut draws.upper, dl, s);
        let g = gaussian_matrix(&mut draws.lower, dl, dl, s / (2.0 * dl as f64).sqrt());
        let noise_a = &g + g.transpose();
        let noise_b = gaussian_matrix(&mut draws.lower, dl, d, s / (d as f64).sqrt());
        let noise_b_vec = gaussian_vector(&mut draws.lower, dl, s);

        let a = &self.a + noise_a;
        let b_mat = &self.b_mat + noise_b;
        let b = &self.b + noise_b_vec;
        Ok(OracleSample {
            grad_fx: x * self.alpha + xi_x,
            grad_fy: y - &self.c - xi_c,
            grad_gy: &a * y - &b_mat * x - b,
            jac_gxy: -b_mat.transpose(),
            hess_gyy: a,
            samples_consumed: 1,
        })
    }

    fn exact(&self, x: &DenseVector, y: &DenseVector) -> Result<OracleSample> {
        Ok(OracleSample {
            grad_fx: x * self.alpha,
            grad_fy: y - &self.c,
            grad_gy: &self.a * y - &self.b_mat * x - &self.b,
            jac_gxy: -self.b_mat.transpose(),
            hess_gyy: self.a.clone(),
            samples_consumed: 0,
        })
    }

    fn has_exact(&self) -> bool {
        true
    }

    fn upper_value(&self, x: &DenseVector, y: &DenseVector) -> Result<f64> {
        Ok(0.5 * (y - &self.c).norm_squared() + 0.5 * self.alpha * x.norm_squared())
    }

    fn lower_value(&self, x: &DenseVector, y: &DenseVector) -> Result<f64> {
        Ok(0.5 * y.dot(&(&self.a * y)) - y.dot(&(&self.b_mat * x + &self.b)))
    }

    fn lower_grad(&self, x: &DenseVector, y: &DenseVector) -> Result<DenseVector> {
        Ok(&self.a * y - &self.b_mat * x - &self.b)
    }

    fn lower_hessian(&self, _x: &DenseVector, _y: &DenseVector) -> Result<DenseMatrix> {
        Ok(self.a.clone())
    }

    fn solve_lower(&self, x: &DenseVector, _start: Option<&DenseVector>, _tol: f64) -> Result<DenseVector> {
        Ok(self.y_star(x))
    }

    fn is_synthetic(&self) -> bool {
        true
    }
}

/// Minimizer of `(1/m) Σᵢ Fᵢ(x)` over quadratic tasks sharing `x`.
pub fn family_minimizer(tasks: &[QuadraticTask]) -> Result<DenseVector> {
    let first = tasks.first().ok_or_else(|| invalid("need at least one task"))?;
    let d = first.upper_dim();
    let mut normal = DenseMatrix::zeros(d, d);
    let mut rhs = DenseVector::zeros(d);
    for t in tasks {
        if t.upper_dim() != d {
            return Err(invalid("tasks disagree on the upper dimension"));
        }
        let (n, r) = t.normal_equations();
        normal += n;
        rhs += r;
    }
    normal
        .cholesky()
        .map(|ch| ch.solve(&rhs))
        .ok_or_else(|| invalid("upper objective is not strongly convex"))
}

/// `quadratic_y_star` as a free function.
pub fn quadratic_y_star(task: &QuadraticTask, x: &DenseVector) -> DenseVector {
    task.y_star(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{exact_hypergradient, sample_paired};
    use crate::rng::{stream, StreamKind};
    use approx::assert_relative_eq;

    fn v(xs: &[f64]) -> DenseVector {
        DenseVector::from_vec(xs.to_vec())
    }

    #[test]
    fn y_star_examples() {
        let t = QuadraticTask::isotropic(2, 2, 1.0, 0.0);
        assert_relative_eq!(t.y_star(&v(&[1.0, 2.0])), v(&[1.0, 2.0]), epsilon = 1e-15);

        let t = QuadraticTask::new(
            DenseMatrix::identity(2, 2) * 2.0,
            DenseMatrix::zeros(2, 2),
            v(&[4.0, 6.0]),
            DenseVector::zeros(2),
            0.0,
            0.0,
        )
        .unwrap();
        assert_relative_eq!(t.y_star(&v(&[5.0, -1.0])), v(&[2.0, 3.0]), epsilon = 1e-15);
    }

    #[test]
    fn y_star_residual_random() {
        let mut rng = stream(3, 0, 0, StreamKind::Problem);
        let t = QuadraticTask::random(4, 5, 20.0, 0.1, 0.0, &mut rng).unwrap();
        let x = gaussian_vector(&mut rng, 4, 1.0);
        let y = t.y_star(&x);
        let resid = t.a() * &y - t.b_mat() * &x - &t.b;
        assert!(resid.norm() <= 1e-10);
    }

    #[test]
    fn hypergradient_closed_form_example() {
        let t = QuadraticTask::isotropic(2, 2, 2.0, 0.0);
        let x = v(&[1.0, 0.0]);
        let y = t.y_star(&x);
        let g = exact_hypergradient(&t, &x, &y).unwrap();
        assert_relative_eq!(g, v(&[0.25, 0.0]), epsilon = 1e-14);
        assert_relative_eq!(t.hypergradient(&x), v(&[0.25, 0.0]), epsilon = 1e-14);
    }

    #[test]
    fn decoupled_lower_problem_gives_alpha_x() {
        let t = QuadraticTask::new(
            DenseMatrix::identity(3, 3) * 1.5,
            DenseMatrix::zeros(3, 2),
            v(&[1.0, 2.0, 3.0]),
            v(&[0.5, 0.5, 0.5]),
            0.7,
            0.0,
        )
        .unwrap();
        let x = v(&[1.0, -2.0]);
        let g = exact_hypergradient(&t, &x, &t.y_star(&x)).unwrap();
        assert_relative_eq!(g, &x * 0.7, epsilon = 1e-14);
    }

    #[test]
    fn hypergradient_matches_central_differences() {
        let mut rng = stream(11, 0, 0, StreamKind::Problem);
        let t = QuadraticTask::random(3, 4, 10.0, 0.3, 0.0, &mut rng).unwrap();
        let x = gaussian_vector(&mut rng, 3, 1.0);
        let g = exact_hypergradient(&t, &x, &t.y_star(&x)).unwrap();
        let h = 1e-5;
        for k in 0..3 {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[k] += h;
            xm[k] -= h;
            let fd = (t.objective(&xp) - t.objective(&xm)) / (2.0 * h);
            assert!((fd - g[k]).abs() <= 1e-4 * g.norm(), "k={k} fd={fd} g={}", g[k]);
        }
    }

    #[test]
    fn zero_noise_samples_equal_exact() {
        let mut rng = stream(5, 0, 0, StreamKind::Problem);
        let t = QuadraticTask::random(3, 2, 5.0, 0.2, 0.0, &mut rng).unwrap();
        let x = v(&[0.3, -1.0, 2.0]);
        let y = v(&[1.0, 0.5]);
        let (s, _) = sample_paired(&t, &x, &y, &x, &y, &OracleDraws::new(1, 2, 0)).unwrap();
        let e = t.exact(&x, &y).unwrap();
        assert_relative_eq!(s.grad_fx, e.grad_fx, epsilon = 1e-15);
        assert_relative_eq!(s.grad_fy, e.grad_fy, epsilon = 1e-15);
        assert_relative_eq!(s.grad_gy, e.grad_gy, epsilon = 1e-14);
        assert_relative_eq!(s.jac_gxy, e.jac_gxy, epsilon = 1e-15);
        assert_relative_eq!(s.hess_gyy, e.hess_gyy, epsilon = 1e-15);
    }

    #[test]
    fn paired_samples_at_same_point_are_bitwise_equal() {
        let t = QuadraticTask::isotropic(3, 3, 1.0, 1.0);
        let x = v(&[1.0, 2.0, 3.0]);
        let y = v(&[0.0, -1.0, 0.5]);
        let (a, mut b) = sample_paired(&t, &x, &y, &x, &y, &OracleDraws::new(4, 7, 0)).unwrap();
        b.samples_consumed = a.samples_consumed;
        assert_eq!(a, b);
    }

    #[test]
    fn sampled_hessian_is_symmetric() {
        let t = QuadraticTask::isotropic(2, 4, 1.0, 1.0);
        let s = t
            .sample(&DenseVector::zeros(2), &DenseVector::zeros(4), &mut OracleDraws::new(0, 0, 0))
            .unwrap();
        assert!((&s.hess_gyy - s.hess_gyy.transpose()).amax() <= 1e-12);
    }

    #[test]
    fn minimizer_zeroes_gradient() {
        let mut rng = stream(8, 0, 0, StreamKind::Problem);
        let t = QuadraticTask::random(4, 4, 5.0, 0.5, 0.0, &mut rng).unwrap();
        let xs = t.minimizer().unwrap();
        assert!(t.hypergradient(&xs).norm() < 1e-10);
    }

    #[test]
    fn family_minimizer_zeroes_mean_gradient() {
        let mut rng = stream(9, 0, 0, StreamKind::Problem);
        let ts: Vec<QuadraticTask> = (0..3)
            .map(|_| QuadraticTask::random(3, 2, 4.0, 0.2, 0.0, &mut rng).unwrap())
            .collect();
        let xs = family_minimizer(&ts).unwrap();
        let g = ts.iter().map(|t| t.hypergradient(&xs)).fold(DenseVector::zeros(3), |a, b| a + b);
        assert!(g.norm() < 1e-10);
        assert!(family_minimizer(&[]).is_err());
    }
}
