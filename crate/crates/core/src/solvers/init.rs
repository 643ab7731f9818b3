use crate::error::{invalid, Result};
use crate::estimators::{assemble_hypergradient, EstimateValue, Projection};
use crate::linalg::{DenseMatrix, DenseVector};
use crate::oracle::{sample_once, BilevelTask, OracleSample, TaskFamily};
use crate::par;
use crate::rng::OracleDraws;

/// Starting point and warm-up settings shared by all solvers.
#[derive(Debug, Clone)]
pub struct InitConfig {
    pub x0: DenseVector,
    /// Lower starting points; zeros when absent.
    pub y0: Option<Vec<DenseVector>>,
    /// Mini-batch size `B0` for the initial estimator values.
    pub batch_size: usize,
    /// Refine each `y0` by a deterministic lower solve to this gradient norm.
    pub y0_tol: Option<f64>,
    /// Start the d-estimator at zero instead of the all-task average.
    pub zero_d: bool,
}

impl InitConfig {
    pub fn new(x0: DenseVector) -> Self {
        Self {
            x0,
            y0: None,
            batch_size: 1,
            y0_tol: None,
            zero_d: false,
        }
    }

    pub fn batch_size(mut self, b: usize) -> Self {
        self.batch_size = b;
        self
    }

    pub fn y0_tol(mut self, tol: f64) -> Self {
        self.y0_tol = Some(tol);
        self
    }

    pub fn y0(mut self, y0: Vec<DenseVector>) -> Self {
        self.y0 = Some(y0);
        self
    }

    pub fn zero_d(mut self, zero: bool) -> Self {
        self.zero_d = zero;
        self
    }
}

/// Initial (unprojected) estimator values for one task, plus the
/// hypergradient assembled from their projected counterparts.
#[derive(Debug, Clone)]
pub struct SlotInit {
    pub u: DenseVector,
    pub v: DenseVector,
    pub jac: DenseMatrix,
    pub hess: DenseMatrix,
    pub w: DenseVector,
    pub z: DenseVector,
}

#[derive(Debug, Clone)]
pub struct InitState {
    pub x0: DenseVector,
    pub ys: Vec<DenseVector>,
    pub slots: Vec<SlotInit>,
    pub d0: DenseVector,
    pub samples: u64,
}

pub(crate) fn slot_projections(task: &dyn BilevelTask) -> [Projection; 4] {
    let b = task.bounds();
    [
        Projection::Ball(b.c_fx),
        Projection::Ball(b.c_fy),
        Projection::SpectralCeiling(b.c_gxy),
        Projection::SpectralFloor(b.lambda),
    ]
}

pub(crate) fn lower_start(family: &TaskFamily, init: &InitConfig) -> Result<Vec<DenseVector>> {
    let m = family.len();
    if init.x0.len() != family.upper_dim() {
        return Err(invalid(format!(
            "x0 has length {}, tasks expect {}",
            init.x0.len(),
            family.upper_dim()
        )));
    }
    let starts = match &init.y0 {
        Some(ys) if ys.len() == m => ys.clone(),
        Some(ys) => {
            return Err(invalid(format!("{} lower starting points for {m} tasks", ys.len())));
        }
        None => family
            .tasks()
            .iter()
            .map(|t| DenseVector::zeros(t.lower_dim()))
            .collect(),
    };
    let idx: Vec<usize> = (0..m).collect();
    par::try_map(&idx, |&i| {
        let task = family.task(i);
        let y = &starts[i];
        if y.len() != task.lower_dim() {
            return Err(invalid(format!("y0[{i}] has wrong length")));
        }
        match init.y0_tol {
            Some(tol) => task.solve_lower(&init.x0, Some(y), tol),
            None => Ok(y.clone()),
        }
    })
}

fn accumulate(acc: &mut OracleSample, s: &OracleSample) {
    acc.grad_fx += &s.grad_fx;
    acc.grad_fy += &s.grad_fy;
    acc.grad_gy += &s.grad_gy;
    acc.jac_gxy += &s.jac_gxy;
    acc.hess_gyy += &s.hess_gyy;
    acc.samples_consumed += s.samples_consumed;
}

/// Initial lower iterates, estimator values from `B0`-sample means at
/// `(x0, y0_i)`, and `d0` (mean of the per-task `z0`, or zero).
pub fn init_estimators(family: &TaskFamily, init: &InitConfig, seed: u64) -> Result<InitState> {
    if init.batch_size == 0 {
        return Err(invalid("initial batch size must be >= 1"));
    }
    let ys = lower_start(family, init)?;
    let idx: Vec<usize> = (0..family.len()).collect();
    let per_task = par::try_map(&idx, |&i| -> Result<(SlotInit, u64)> {
        let task = family.task(i);
        let y = &ys[i];
        let mut acc = OracleSample::zeros(task.upper_dim(), task.lower_dim());
        for k in 0..init.batch_size {
            let draws = OracleDraws::for_init(seed, k as u64, i as u64);
            let s = sample_once(task.as_ref(), &init.x0, y, &draws)?;
            accumulate(&mut acc, &s);
        }
        let inv = 1.0 / init.batch_size as f64;
        let [pu, pv, pj, ph] = slot_projections(task.as_ref());
        let u = acc.grad_fx.scale(inv);
        let v = acc.grad_fy.scale(inv);
        let jac = acc.jac_gxy.scale(inv);
        let hess = acc.hess_gyy.scale(inv);
        let z = assemble_hypergradient(
            &u.clone().project(pu)?,
            &v.clone().project(pv)?,
            &jac.clone().project(pj)?,
            &hess.clone().project(ph)?,
        )?;
        Ok((
            SlotInit {
                u,
                v,
                jac,
                hess,
                w: acc.grad_gy.scale(inv),
                z,
            },
            acc.samples_consumed,
        ))
    })?;
    let samples = per_task.iter().map(|(_, s)| s).sum();
    let slots: Vec<SlotInit> = per_task.into_iter().map(|(s, _)| s).collect();
    let d0 = if init.zero_d {
        DenseVector::zeros(family.upper_dim())
    } else {
        let mut acc = DenseVector::zeros(family.upper_dim());
        for s in &slots {
            acc += &s.z;
        }
        acc / slots.len() as f64
    };
    Ok(InitState {
        x0: init.x0.clone(),
        ys,
        slots,
        d0,
        samples,
    })
}
