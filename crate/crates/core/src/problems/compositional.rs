//! Stochastic compositional optimization `min_x f(E[g(x; ζ)])` written as a
//! bilevel problem with lower objective `−yᵀE[g(x; ζ)] + ½‖y‖²`, so that
//! `y*(x) = E[g(x; ζ)]`.

use std::fmt;

use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, Result};
use crate::linalg::{DenseMatrix, DenseVector};
use crate::oracle::{BilevelTask, BoundConstants, OracleSample};
use crate::rng::{OracleDraws, StreamRng};

/// Stochastic inner map `g(x; ζ)` with its Jacobian.
pub trait InnerMap: Send + Sync + fmt::Debug {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;

    /// `(g(x; ζ), ∂g/∂x (out × in))`.
    fn sample(&self, x: &DenseVector, rng: &mut StreamRng) -> Result<(DenseVector, DenseMatrix)>;

    fn exact(&self, x: &DenseVector) -> Result<(DenseVector, DenseMatrix)>;
}

/// Smooth outer function with a stochastic gradient.
pub trait OuterObjective: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;

    fn value(&self, y: &DenseVector) -> Result<f64>;

    fn sample_grad(&self, y: &DenseVector, rng: &mut StreamRng) -> Result<DenseVector>;

    fn grad(&self, y: &DenseVector) -> Result<DenseVector>;
}

type MapFn = dyn Fn(&DenseVector) -> (DenseVector, DenseMatrix) + Send + Sync;
type ValueFn = dyn Fn(&DenseVector) -> f64 + Send + Sync;
type GradFn = dyn Fn(&DenseVector) -> DenseVector + Send + Sync;

fn gaussian(rng: &mut StreamRng, n: usize, scale: f64) -> DenseVector {
    DenseVector::from_iterator(n, (0..n).map(|_| scale * Distribution::<f64>::sample(&StandardNormal, rng)))
}

/// Deterministic map plus additive Gaussian noise on the value and the
/// Jacobian.
pub struct ClosureInner {
    input_dim: usize,
    output_dim: usize,
    noise: f64,
    f: Box<MapFn>,
}

impl ClosureInner {
    pub fn new(
        input_dim: usize,
        output_dim: usize,
        noise: f64,
        f: impl Fn(&DenseVector) -> (DenseVector, DenseMatrix) + Send + Sync + 'static,
    ) -> Self {
        Self {
            input_dim,
            output_dim,
            noise,
            f: Box::new(f),
        }
    }
}

impl fmt::Debug for ClosureInner {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ClosureInner")
            .field("input_dim", &self.input_dim)
            .field("output_dim", &self.output_dim)
            .field("noise", &self.noise)
            .finish_non_exhaustive()
    }
}

impl InnerMap for ClosureInner {
    fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn output_dim(&self) -> usize {
        self.output_dim
    }

    fn sample(&self, x: &DenseVector, rng: &mut StreamRng) -> Result<(DenseVector, DenseMatrix)> {
        let (v, j) = self.exact(x)?;
        let nv = gaussian(rng, self.output_dim, self.noise);
        let nj = gaussian(rng, self.output_dim * self.input_dim, self.noise);
        let nj = DenseMatrix::from_column_slice(self.output_dim, self.input_dim, nj.as_slice());
        Ok((v + nv, j + nj))
    }

    fn exact(&self, x: &DenseVector) -> Result<(DenseVector, DenseMatrix)> {
        let (v, j) = (self.f)(x);
        if v.len() != self.output_dim || j.shape() != (self.output_dim, self.input_dim) {
            return Err(invalid("inner map returned wrong shapes"));
        }
        Ok((v, j))
    }
}

/// Outer function from value and gradient closures; stochastic gradients add
/// Gaussian noise.
pub struct ClosureOuter {
    dim: usize,
    noise: f64,
    value: Box<ValueFn>,
    grad: Box<GradFn>,
}

impl ClosureOuter {
    pub fn new(
        dim: usize,
        noise: f64,
        value: impl Fn(&DenseVector) -> f64 + Send + Sync + 'static,
        grad: impl Fn(&DenseVector) -> DenseVector + Send + Sync + 'static,
    ) -> Self {
        Self {
            dim,
            noise,
            value: Box::new(value),
            grad: Box::new(grad),
        }
    }
}

impl fmt::Debug for ClosureOuter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ClosureOuter")
            .field("dim", &self.dim)
            .field("noise", &self.noise)
            .finish_non_exhaustive()
    }
}

impl OuterObjective for ClosureOuter {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, y: &DenseVector) -> Result<f64> {
        Ok((self.value)(y))
    }

    fn sample_grad(&self, y: &DenseVector, rng: &mut StreamRng) -> Result<DenseVector> {
        Ok(self.grad(y)? + gaussian(rng, self.dim, self.noise))
    }

    fn grad(&self, y: &DenseVector) -> Result<DenseVector> {
        let g = (self.grad)(y);
        if g.len() != self.dim {
            return Err(invalid("outer gradient has wrong length"));
        }
        Ok(g)
    }
}

#[derive(Debug)]
pub struct CompositionalTask<I, O> {
    inner: I,
    outer: O,
}

/// Wraps `f(E[g(x; ζ)])` as a bilevel task.
pub fn compositional_as_bilevel<I: InnerMap, O: OuterObjective>(inner: I, outer: O) -> Result<CompositionalTask<I, O>> {
    if inner.output_dim() != outer.dim() {
        return Err(invalid(format!(
            "inner map outputs {} values, outer function takes {}",
            inner.output_dim(),
            outer.dim()
        )));
    }
    Ok(CompositionalTask { inner, outer })
}

impl<I: InnerMap, O: OuterObjective> CompositionalTask<I, O> {
    fn assemble(&self, y: &DenseVector, g: DenseVector, jac: DenseMatrix, grad_f: DenseVector) -> OracleSample {
        let n = self.inner.output_dim();
        OracleSample {
            grad_fx: DenseVector::zeros(self.inner.input_dim()),
            grad_fy: grad_f,
            grad_gy: y - g,
            jac_gxy: -jac.transpose(),
            hess_gyy: DenseMatrix::identity(n, n),
            samples_consumed: 1,
        }
    }
}

impl<I: InnerMap, O: OuterObjective> BilevelTask for CompositionalTask<I, O> {
    fn upper_dim(&self) -> usize {
        self.inner.input_dim()
    }

    fn lower_dim(&self) -> usize {
        self.inner.output_dim()
    }

    fn bounds(&self) -> BoundConstants {
        BoundConstants::with_lambda(1.0)
    }

    fn sample(&self, x: &DenseVector, y: &DenseVector, draws: &mut OracleDraws) -> Result<OracleSample> {
        let (g, jac) = self.inner.sample(x, &mut draws.lower)?;
        let grad_f = self.outer.sample_grad(y, &mut draws.upper)?;
        Ok(self.assemble(y, g, jac, grad_f))
    }

    fn exact(&self, x: &DenseVector, y: &DenseVector) -> Result<OracleSample> {
        let (g, jac) = self.inner.exact(x)?;
        let mut s = self.assemble(y, g, jac, self.outer.grad(y)?);
        s.samples_consumed = 0;
        Ok(s)
    }

    fn has_exact(&self) -> bool {
        true
    }

    fn upper_value(&self, _x: &DenseVector, y: &DenseVector) -> Result<f64> {
        self.outer.value(y)
    }

    fn lower_value(&self, x: &DenseVector, y: &DenseVector) -> Result<f64> {
        let (g, _) = self.inner.exact(x)?;
        Ok(-y.dot(&g) + 0.5 * y.norm_squared())
    }

    fn solve_lower(&self, x: &DenseVector, _start: Option<&DenseVector>, _tol: f64) -> Result<DenseVector> {
        Ok(self.inner.exact(x)?.0)
    }
}
