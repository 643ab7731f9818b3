//! Dense vector/matrix primitives, the three projection operators used by the
//! estimators, and a matrix-free conjugate-gradient solve.

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Error, Result};

pub type DenseVector = DVector<f64>;
pub type DenseMatrix = DMatrix<f64>;

const EIGEN_EPS: f64 = 1e-15;
const EIGEN_MAX_SWEEPS: usize = 10_000;

pub(crate) fn ensure_finite_vector(v: &DenseVector, what: &str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(invalid(format!("{what} has non-finite entries")))
    }
}

pub(crate) fn ensure_finite_matrix(m: &DenseMatrix, what: &str) -> Result<()> {
    if m.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(invalid(format!("{what} has non-finite entries")))
    }
}

/// `(X + Xᵀ) / 2`.
pub fn symmetrize(m: &DenseMatrix) -> DenseMatrix {
    (m + m.transpose()) * 0.5
}

/// Eigendecomposition of a symmetric matrix with eigenvalues in descending
/// order and orthonormal eigenvectors stored column-wise.
#[derive(Debug, Clone)]
pub struct SymmetricEigenDecomposition {
    pub eigenvalues: DenseVector,
    pub eigenvectors: DenseMatrix,
}

impl SymmetricEigenDecomposition {
    /// Decomposes `(m + mᵀ)/2`.
    pub fn new(m: &DenseMatrix) -> Result<Self> {
        if !m.is_square() {
            return Err(invalid(format!(
                "eigendecomposition needs a square matrix, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        ensure_finite_matrix(m, "matrix")?;
        let sym = symmetrize(m);
        let eig = nalgebra::SymmetricEigen::try_new(sym, EIGEN_EPS, EIGEN_MAX_SWEEPS)
            .ok_or_else(|| {
                Error::NumericalFailure("symmetric QR iteration did not converge".into())
            })?;
        let n = eig.eigenvalues.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let eigenvalues = DenseVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
        let mut eigenvectors = DenseMatrix::zeros(n, n);
        for (dst, &src) in order.iter().enumerate() {
            eigenvectors.set_column(dst, &eig.eigenvectors.column(src));
        }
        Ok(Self {
            eigenvalues,
            eigenvectors,
        })
    }

    /// `Q · diag(f(σ)) · Qᵀ`.
    pub fn reconstruct_with(&self, f: impl Fn(f64) -> f64) -> DenseMatrix {
        let q = &self.eigenvectors;
        let mut scaled = q.clone();
        for (j, &s) in self.eigenvalues.iter().enumerate() {
            let fs = f(s);
            scaled.column_mut(j).scale_mut(fs);
        }
        let out = scaled * q.transpose();
        symmetrize(&out)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Euclidean projection onto the ball `{u : ‖u‖ ≤ radius}`. An infinite
/// radius is a no-op.
pub fn project_ball(v: &DenseVector, radius: f64) -> Result<DenseVector> {
    if radius.is_nan() || radius < 0.0 {
        return Err(invalid(format!("ball radius must be >= 0, got {radius}")));
    }
    ensure_finite_vector(v, "vector")?;
    let norm = v.norm();
    if norm <= radius {
        Ok(v.clone())
    } else {
        Ok(v * (radius / norm))
    }
}

/// Projection onto `{X : X ⪰ λI}`: symmetrize, clamp eigenvalues at `lambda`.
pub fn project_spectral_floor(x: &DenseMatrix, lambda: f64) -> Result<DenseMatrix> {
    spectral_floor_after_scaling(x, 1.0, lambda)
}

/// `Q · diag(max(λ, s·σ)) · Qᵀ` for the symmetrized input. With `s = 1` this
/// is the spectral floor projection; for symmetric input already above the
/// floor and `s ∈ (0, 1)` it equals repeated scale-then-project steps whose
/// scale factors multiply to `s`.
pub fn spectral_floor_after_scaling(x: &DenseMatrix, scale: f64, lambda: f64) -> Result<DenseMatrix> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(invalid(format!("spectral floor must be positive, got {lambda}")));
    }
    if !(scale >= 0.0) {
        return Err(invalid(format!("scale must be >= 0, got {scale}")));
    }
    let eig = SymmetricEigenDecomposition::new(x)?;
    if scale == 1.0 && eig.min_eigenvalue() >= lambda {
        return Ok(symmetrize(x));
    }
    Ok(eig.reconstruct_with(|s| (scale * s).max(lambda)))
}

/// Projection onto `{X : ‖X‖₂ ≤ cap}` by clipping singular values. The SVD is
/// obtained from the eigendecomposition of the smaller Gram matrix.
pub fn project_spectral_ceiling(x: &DenseMatrix, cap: f64) -> Result<DenseMatrix> {
    if cap.is_nan() || cap <= 0.0 {
        return Err(invalid(format!("spectral cap must be positive, got {cap}")));
    }
    ensure_finite_matrix(x, "matrix")?;
    if cap.is_infinite() || x.is_empty() {
        return Ok(x.clone());
    }
    // Right singular vectors live in the Gram eigenbasis: X·V = U·Σ.
    let wide = x.nrows() < x.ncols();
    let gram = if wide { x * x.transpose() } else { x.transpose() * x };
    let eig = SymmetricEigenDecomposition::new(&gram)?;
    let top = eig.max_eigenvalue().max(0.0).sqrt();
    if top <= cap {
        return Ok(x.clone());
    }
    let shrink = eig.reconstruct_with(|s| {
        let sigma = s.max(0.0).sqrt();
        if sigma > cap {
            cap / sigma
        } else {
            1.0
        }
    });
    Ok(if wide { shrink * x } else { x * shrink })
}

/// Largest singular value, via the Gram matrix.
pub fn spectral_norm(x: &DenseMatrix) -> Result<f64> {
    if x.is_empty() {
        return Ok(0.0);
    }
    let gram = if x.nrows() < x.ncols() {
        x * x.transpose()
    } else {
        x.transpose() * x
    };
    Ok(SymmetricEigenDecomposition::new(&gram)?
        .max_eigenvalue()
        .max(0.0)
        .sqrt())
}

/// Result of a conjugate-gradient solve.
#[derive(Debug, Clone)]
pub struct CgSolution {
    pub x: DenseVector,
    pub iterations: usize,
    pub residual_norm: f64,
    /// `false` means the iteration cap was hit and `x` is the best iterate.
    pub converged: bool,
}

/// Solves `H x = b` for a symmetric positive definite operator given only
/// through `apply_h`. Stops once `‖Hx − b‖ ≤ tol · max(1, ‖b‖)`.
pub fn cg_solve<F>(apply_h: F, b: &DenseVector, tol: f64, max_iter: usize) -> Result<CgSolution>
where
    F: Fn(&DenseVector) -> DenseVector,
{
    if !(tol > 0.0) {
        return Err(invalid(format!("cg tolerance must be positive, got {tol}")));
    }
    if max_iter == 0 {
        return Err(invalid("cg max_iter must be positive"));
    }
    ensure_finite_vector(b, "cg right-hand side")?;
    let n = b.len();
    let target = tol * b.norm().max(1.0);
    let mut x = DenseVector::zeros(n);
    let mut r = b.clone();
    let mut rr = r.dot(&r);
    let mut best = (x.clone(), rr.sqrt());
    if rr.sqrt() <= target {
        return Ok(CgSolution {
            x,
            iterations: 0,
            residual_norm: rr.sqrt(),
            converged: true,
        });
    }
    let mut p = r.clone();
    for it in 1..=max_iter {
        let hp = apply_h(&p);
        if hp.len() != n {
            return Err(invalid(format!(
                "operator returned length {} for input length {n}",
                hp.len()
            )));
        }
        let curvature = p.dot(&hp);
        if !(curvature > 0.0) {
            return Err(Error::NonPositiveDefinite {
                iteration: it,
                curvature,
            });
        }
        let alpha = rr / curvature;
        x.axpy(alpha, &p, 1.0);
        r.axpy(-alpha, &hp, 1.0);
        let rr_new = r.dot(&r);
        let res = rr_new.sqrt();
        if res < best.1 {
            best = (x.clone(), res);
        }
        if res <= target {
            return Ok(CgSolution {
                x,
                iterations: it,
                residual_norm: res,
                converged: true,
            });
        }
        let beta = rr_new / rr;
        p = &r + &p * beta;
        rr = rr_new;
    }
    log::debug!("cg hit max_iter={max_iter} with residual {:e}", best.1);
    Ok(CgSolution {
        x: best.0,
        iterations: max_iter,
        residual_norm: best.1,
        converged: false,
    })
}

/// Dense SPD solve through [`cg_solve`].
pub fn cg_solve_matrix(h: &DenseMatrix, b: &DenseVector, tol: f64, max_iter: usize) -> Result<CgSolution> {
    if !h.is_square() || h.nrows() != b.len() {
        return Err(invalid(format!(
            "cg: matrix {}x{} incompatible with rhs of length {}",
            h.nrows(),
            h.ncols(),
            b.len()
        )));
    }
    cg_solve(|p| h * p, b, tol, max_iter)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn rotation(theta: f64) -> DenseMatrix {
        DenseMatrix::from_row_slice(2, 2, &[theta.cos(), -theta.sin(), theta.sin(), theta.cos()])
    }

    #[test]
    fn ball_examples() {
        let v = DenseVector::from_vec(vec![3.0, 4.0]);
        assert_eq!(project_ball(&v, 10.0).unwrap(), v);
        assert_eq!(project_ball(&v, 5.0).unwrap(), v);
        let p = project_ball(&v, 1.0).unwrap();
        assert_relative_eq!(p[0], 0.6, epsilon = 1e-15);
        assert_relative_eq!(p[1], 0.8, epsilon = 1e-15);
        assert_eq!(project_ball(&v, f64::INFINITY).unwrap(), v);
    }

    #[test]
    fn ball_rejects_non_finite() {
        let v = DenseVector::from_vec(vec![f64::NAN, 1.0]);
        assert!(matches!(project_ball(&v, 1.0), Err(Error::InvalidInput(_))));
        let v = DenseVector::from_vec(vec![1.0]);
        assert!(project_ball(&v, -1.0).is_err());
    }

    #[test]
    fn floor_diagonal_examples() {
        let x = DenseMatrix::from_diagonal(&DenseVector::from_vec(vec![5.0, 2.0]));
        assert_eq!(project_spectral_floor(&x, 1.0).unwrap(), x);
        let x = DenseMatrix::from_diagonal(&DenseVector::from_vec(vec![5.0, 0.1]));
        let p = project_spectral_floor(&x, 1.0).unwrap();
        let want = DenseMatrix::from_diagonal(&DenseVector::from_vec(vec![5.0, 1.0]));
        assert_relative_eq!(p, want, epsilon = 1e-14);
    }

    // Eigenvalues of a symmetric 2×2 from its characteristic polynomial.
    fn eig2_char_poly(m: &DenseMatrix) -> (f64, f64) {
        let tr = m[(0, 0)] + m[(1, 1)];
        let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
        let disc = (tr * tr / 4.0 - det).sqrt();
        (tr / 2.0 + disc, tr / 2.0 - disc)
    }

    #[test]
    fn floor_rotated_indefinite_matches_char_poly_oracle() {
        let q = rotation(0.7);
        let sigma = DenseMatrix::from_diagonal(&DenseVector::from_vec(vec![3.0, -2.0]));
        let x = &q * sigma * q.transpose();
        let (l1, l2) = eig2_char_poly(&x);
        assert_relative_eq!(l1, 3.0, epsilon = 1e-12);
        assert_relative_eq!(l2, -2.0, epsilon = 1e-12);
        let p = project_spectral_floor(&x, 0.5).unwrap();
        let want = &q * DenseMatrix::from_diagonal(&DenseVector::from_vec(vec![3.0, 0.5])) * q.transpose();
        assert_relative_eq!(p, want, epsilon = 1e-12);
        let (p1, p2) = eig2_char_poly(&p);
        assert_relative_eq!(p1, 3.0, epsilon = 1e-12);
        assert_relative_eq!(p2, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn floor_rejects_bad_input() {
        let x = DenseMatrix::zeros(2, 3);
        assert!(matches!(project_spectral_floor(&x, 1.0), Err(Error::InvalidInput(_))));
        let x = DenseMatrix::identity(2, 2);
        assert!(project_spectral_floor(&x, 0.0).is_err());
    }

    #[test]
    fn ceiling_examples() {
        let x = DenseMatrix::from_diagonal(&DenseVector::from_vec(vec![0.5, 0.2]));
        assert_eq!(project_spectral_ceiling(&x, 1.0).unwrap(), x);
        let x = DenseMatrix::from_diagonal(&DenseVector::from_vec(vec![4.0, 1.0]));
        let want = DenseMatrix::from_diagonal(&DenseVector::from_vec(vec![2.0, 1.0]));
        assert_relative_eq!(project_spectral_ceiling(&x, 2.0).unwrap(), want, epsilon = 1e-12);
    }

    // Power iteration on XᵀX.
    fn top_singular_value(x: &DenseMatrix) -> f64 {
        let g = x.transpose() * x;
        let mut v = DenseVector::from_element(g.ncols(), 1.0).normalize();
        let mut lambda = 0.0;
        for _ in 0..500 {
            let w = &g * &v;
            lambda = w.norm();
            v = w / lambda;
        }
        lambda.sqrt()
    }

    #[test]
    fn ceiling_rank_one_halves() {
        let a = DenseVector::from_vec(vec![1.0, 2.0, 2.0]); // ‖a‖ = 3
        let b = DenseVector::from_vec(vec![0.0, 2.0 / 2f64.sqrt(), 2.0 / 2f64.sqrt(), 0.0]); // ‖b‖ = 2
        let x = &a * b.transpose();
        assert_relative_eq!(top_singular_value(&x), 6.0, epsilon = 1e-10);
        let p = project_spectral_ceiling(&x, 3.0).unwrap();
        assert_relative_eq!(p, &x / 2.0, epsilon = 1e-12);
        // wide orientation exercises the other Gram branch
        let xt = x.transpose();
        let pt = project_spectral_ceiling(&xt, 3.0).unwrap();
        assert_relative_eq!(pt, &xt / 2.0, epsilon = 1e-12);
    }

    #[test]
    fn cg_examples() {
        let b = DenseVector::from_vec(vec![1.0, 2.0, 3.0]);
        let sol = cg_solve(|p| p.clone(), &b, 1e-10, 10).unwrap();
        assert!(sol.converged);
        assert_relative_eq!(sol.x, b, epsilon = 1e-14);

        let h = DenseMatrix::from_diagonal(&DenseVector::from_vec(vec![2.0, 4.0]));
        let sol = cg_solve_matrix(&h, &DenseVector::from_vec(vec![2.0, 8.0]), 1e-12, 10).unwrap();
        assert_relative_eq!(sol.x, DenseVector::from_vec(vec![1.0, 2.0]), epsilon = 1e-12);
    }

    #[test]
    fn cg_detects_indefinite_operator() {
        let h = DenseMatrix::from_diagonal(&DenseVector::from_vec(vec![1.0, -1.0]));
        let b = DenseVector::from_vec(vec![0.0, 1.0]);
        assert!(matches!(
            cg_solve_matrix(&h, &b, 1e-10, 10),
            Err(Error::NonPositiveDefinite { .. })
        ));
    }

    #[test]
    fn cg_flags_tolerance_not_met() {
        let h = DenseMatrix::from_diagonal(&DenseVector::from_vec(vec![1.0, 10.0, 100.0, 1000.0]));
        let b = DenseVector::from_element(4, 1.0);
        let sol = cg_solve_matrix(&h, &b, 1e-14, 1).unwrap();
        assert!(!sol.converged);
        assert_eq!(sol.iterations, 1);
    }

    #[test]
    fn cg_zero_rhs_is_immediate() {
        let b = DenseVector::zeros(3);
        let sol = cg_solve(|p| p * 2.0, &b, 1e-12, 5).unwrap();
        assert_eq!(sol.iterations, 0);
        assert_eq!(sol.x, b);
    }

    #[test]
    fn eigen_sorted_descending_and_orthonormal() {
        let m = DenseMatrix::from_row_slice(3, 3, &[2.0, 1.0, 0.0, 1.0, 3.0, 1.0, 0.0, 1.0, 4.0]);
        let e = SymmetricEigenDecomposition::new(&m).unwrap();
        assert!(e.eigenvalues[0] >= e.eigenvalues[1] && e.eigenvalues[1] >= e.eigenvalues[2]);
        let qtq = e.eigenvectors.transpose() * &e.eigenvectors;
        assert_relative_eq!(qtq, DenseMatrix::identity(3, 3), epsilon = 1e-10);
        assert_relative_eq!(e.reconstruct_with(|s| s), m, epsilon = 1e-10);
    }
}
