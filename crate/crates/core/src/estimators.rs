//! Recursive momentum (STORM) estimators, the randomized-coordinate bank with
//! lazily applied decay, and the outer d-estimator.

use std::fmt;

use crate::error::{invalid, Result};
use crate::linalg::{
    cg_solve_matrix, project_ball, project_spectral_ceiling, project_spectral_floor,
    spectral_floor_after_scaling, DenseMatrix, DenseVector,
};

/// Constraint applied to an estimator after every update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Projection {
    None,
    Ball(f64),
    SpectralFloor(f64),
    SpectralCeiling(f64),
}

/// Values an estimator can hold.
pub trait EstimateValue: Clone + Send + Sync + fmt::Debug {
    fn shape(&self) -> (usize, usize);

    /// `(1 − β)(self − s·prev) + s·curr`.
    fn storm_combine(&self, curr: &Self, prev: &Self, beta: f64, scale: f64) -> Self;

    fn project(self, projection: Projection) -> Result<Self>;

    /// Value after `factor`-scaled decay steps under the skipped-step rule of
    /// the projection (floored matrices stay floored, everything else is
    /// plain scaling).
    fn decay(&self, factor: f64, projection: Projection) -> Result<Self>;

    fn scale(&self, factor: f64) -> Self;

    fn is_finite(&self) -> bool;
}

impl EstimateValue for DenseVector {
    fn shape(&self) -> (usize, usize) {
        (self.len(), 1)
    }

    fn storm_combine(&self, curr: &Self, prev: &Self, beta: f64, scale: f64) -> Self {
        (self - prev * scale) * (1.0 - beta) + curr * scale
    }

    fn project(self, projection: Projection) -> Result<Self> {
        match projection {
            Projection::None => Ok(self),
            Projection::Ball(r) => project_ball(&self, r),
            other => Err(invalid(format!("{other:?} does not apply to vectors"))),
        }
    }

    fn decay(&self, factor: f64, _projection: Projection) -> Result<Self> {
        Ok(self * factor)
    }

    fn scale(&self, factor: f64) -> Self {
        self * factor
    }

    fn is_finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }
}

impl EstimateValue for DenseMatrix {
    fn shape(&self) -> (usize, usize) {
        (self.nrows(), self.ncols())
    }

    fn storm_combine(&self, curr: &Self, prev: &Self, beta: f64, scale: f64) -> Self {
        (self - prev * scale) * (1.0 - beta) + curr * scale
    }

    fn project(self, projection: Projection) -> Result<Self> {
        match projection {
            Projection::None => Ok(self),
            Projection::SpectralFloor(l) => project_spectral_floor(&self, l),
            Projection::SpectralCeiling(c) => project_spectral_ceiling(&self, c),
            Projection::Ball(_) => Err(invalid("ball projection does not apply to matrices")),
        }
    }

    fn decay(&self, factor: f64, projection: Projection) -> Result<Self> {
        match projection {
            Projection::SpectralFloor(l) => spectral_floor_after_scaling(self, factor, l),
            _ => Ok(self * factor),
        }
    }

    fn scale(&self, factor: f64) -> Self {
        self * factor
    }

    fn is_finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }
}

fn check_beta(beta: f64) -> Result<()> {
    if beta > 0.0 && beta <= 1.0 {
        Ok(())
    } else {
        Err(invalid(format!("beta must lie in (0, 1], got {beta}")))
    }
}

fn check_shapes<T: EstimateValue>(value: &T, curr: &T, prev: &T) -> Result<()> {
    if curr.shape() != value.shape() || prev.shape() != value.shape() {
        return Err(invalid(format!(
            "sample shapes {:?}/{:?} do not match estimator shape {:?}",
            curr.shape(),
            prev.shape(),
            value.shape()
        )));
    }
    Ok(())
}

/// STORM estimator of one oracle stream. The stored value always satisfies
/// its projection.
#[derive(Debug, Clone)]
pub struct StormEstimator<T> {
    value: T,
    projection: Projection,
    last_update_t: u64,
}

impl<T: EstimateValue> StormEstimator<T> {
    pub fn new(initial: T, projection: Projection) -> Result<Self> {
        Ok(Self {
            value: initial.project(projection)?,
            projection,
            last_update_t: 0,
        })
    }

    pub fn value(&self) -> &T {
        &self.value
    }

    pub fn projection(&self) -> Projection {
        self.projection
    }

    pub fn last_update_t(&self) -> u64 {
        self.last_update_t
    }

    /// `ĥ ← Π[(1 − β)(ĥ − h_prev) + h_curr]`; `h_curr` and `h_prev` must come
    /// from the same random draw.
    pub fn update(&mut self, h_curr: &T, h_prev: &T, beta: f64) -> Result<()> {
        check_beta(beta)?;
        check_shapes(&self.value, h_curr, h_prev)?;
        self.value = self
            .value
            .storm_combine(h_curr, h_prev, beta, 1.0)
            .project(self.projection)?;
        self.last_update_t += 1;
        Ok(())
    }
}

/// Functional form of [`StormEstimator::update`].
pub fn storm_update<T: EstimateValue>(
    mut est: StormEstimator<T>,
    h_curr: &T,
    h_prev: &T,
    beta: f64,
) -> Result<StormEstimator<T>> {
    est.update(h_curr, h_prev, beta)?;
    Ok(est)
}

/// Cumulative `Σ log(1 − β_s)` with exact zeros (β = 1) counted separately.
#[derive(Debug, Clone, Copy, PartialEq)]
struct DecayPoint {
    step: u64,
    log_sum: f64,
    zeros: u64,
}

impl DecayPoint {
    fn after(self, beta: f64) -> Self {
        if beta >= 1.0 {
            Self {
                step: self.step + 1,
                log_sum: self.log_sum,
                zeros: self.zeros + 1,
            }
        } else {
            Self {
                step: self.step + 1,
                log_sum: self.log_sum + (-beta).ln_1p(),
                zeros: self.zeros,
            }
        }
    }

    /// `Π_{s ∈ [since, self)} (1 − β_s)`.
    fn factor_since(&self, since: &DecayPoint) -> f64 {
        if self.zeros > since.zeros {
            0.0
        } else {
            (self.log_sum - since.log_sum).exp()
        }
    }
}

#[derive(Debug, Clone)]
struct Slot<T> {
    value: T,
    sync: DecayPoint,
}

/// m-slot randomized-coordinate STORM bank. Only sampled slots are touched;
/// every other slot's `(1 − β)` decay is deferred and applied in one shot
/// when the slot is next read.
#[derive(Debug, Clone)]
pub struct RcStormBank<T> {
    slots: Vec<Slot<T>>,
    projections: Vec<Projection>,
    clock: DecayPoint,
    pending_beta: Option<f64>,
}

impl<T: EstimateValue> RcStormBank<T> {
    pub fn new(initial: Vec<T>, projection: Projection) -> Result<Self> {
        let projections = vec![projection; initial.len()];
        Self::with_projections(initial, projections)
    }

    /// Bank whose slot `i` is constrained by `projections[i]`.
    pub fn with_projections(initial: Vec<T>, projections: Vec<Projection>) -> Result<Self> {
        if initial.is_empty() {
            return Err(invalid("estimator bank needs at least one slot"));
        }
        if projections.len() != initial.len() {
            return Err(invalid("one projection per slot required"));
        }
        let clock = DecayPoint {
            step: 0,
            log_sum: 0.0,
            zeros: 0,
        };
        let slots = initial
            .into_iter()
            .zip(&projections)
            .map(|(v, &p)| {
                Ok(Slot {
                    value: v.project(p)?,
                    sync: clock,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            slots,
            projections,
            clock,
            pending_beta: None,
        })
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn step(&self) -> u64 {
        self.clock.step
    }

    pub fn projection(&self, i: usize) -> Projection {
        self.projections[i]
    }

    /// Step at which slot `i` was last brought up to date.
    pub fn sync_index(&self, i: usize) -> u64 {
        self.slots[i].sync.step
    }

    fn index(&self, i: usize) -> Result<()> {
        if i < self.slots.len() {
            Ok(())
        } else {
            Err(invalid(format!("slot {i} out of range for bank of {}", self.slots.len())))
        }
    }

    /// Brings slot `i` to the current step and returns its value.
    pub fn materialize(&mut self, i: usize) -> Result<&T> {
        self.index(i)?;
        let clock = self.clock;
        let projection = self.projections[i];
        let slot = &mut self.slots[i];
        if slot.sync.step < clock.step {
            let factor = clock.factor_since(&slot.sync);
            slot.value = slot.value.decay(factor, projection)?;
            slot.sync = clock;
        }
        Ok(&slot.value)
    }

    /// Materialized value of slot `i` without recording the sync.
    pub fn peek(&self, i: usize) -> Result<T> {
        self.index(i)?;
        let slot = &self.slots[i];
        if slot.sync.step < self.clock.step {
            slot.value.decay(self.clock.factor_since(&slot.sync), self.projections[i])
        } else {
            Ok(slot.value.clone())
        }
    }

    /// Updates slot `i` with samples multiplied by `scale` for the current
    /// step. Call [`RcStormBank::advance`] with the same `beta` once all
    /// slots sampled at this step have been updated.
    pub fn update(&mut self, i: usize, h_curr: &T, h_prev: &T, beta: f64, scale: f64) -> Result<()> {
        check_beta(beta)?;
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(invalid(format!("importance scale must be positive, got {scale}")));
        }
        if let Some(b) = self.pending_beta {
            if b != beta {
                return Err(invalid("all slot updates within one step must share beta"));
            }
        }
        self.materialize(i)?;
        check_shapes(&self.slots[i].value, h_curr, h_prev)?;
        let next = self.clock.after(beta);
        let projection = self.projections[i];
        let slot = &mut self.slots[i];
        slot.value = slot
            .value
            .storm_combine(h_curr, h_prev, beta, scale)
            .project(projection)?;
        slot.sync = next;
        self.pending_beta = Some(beta);
        Ok(())
    }

    /// Moves the clock forward one step, deferring the `(1 − β)` decay of
    /// every slot not updated at this step.
    pub fn advance(&mut self, beta: f64) -> Result<()> {
        check_beta(beta)?;
        if let Some(b) = self.pending_beta.take() {
            if b != beta {
                return Err(invalid("advance beta differs from the step's update beta"));
            }
        }
        self.clock = self.clock.after(beta);
        Ok(())
    }

    /// One RC-STORM step: slot `i` gets the STORM update with samples
    /// divided by `p_i`; all other slots decay lazily.
    pub fn rc_storm_update(&mut self, i: usize, h_curr: &T, h_prev: &T, beta: f64, p_i: f64) -> Result<()> {
        if !(p_i > 0.0) {
            return Err(invalid(format!("sampling probability must be positive, got {p_i}")));
        }
        self.update(i, h_curr, h_prev, beta, 1.0 / p_i)?;
        self.advance(beta)
    }
}

/// Outer estimator `d` of the averaged hypergradient.
#[derive(Debug, Clone, PartialEq)]
pub struct DEstimator {
    pub value: DenseVector,
}

impl DEstimator {
    pub fn new(value: DenseVector) -> Self {
        Self { value }
    }

    /// `d ← (1 − β)(d − z_t) + z_{t+1}`.
    pub fn update(&mut self, z_t: &DenseVector, z_t1: &DenseVector, beta: f64) -> Result<()> {
        self.value = d_update(&self.value, z_t, z_t1, beta)?;
        Ok(())
    }
}

pub fn d_update(d: &DenseVector, z_t: &DenseVector, z_t1: &DenseVector, beta: f64) -> Result<DenseVector> {
    check_beta(beta)?;
    if z_t.len() != d.len() || z_t1.len() != d.len() {
        return Err(invalid("d-update shape mismatch"));
    }
    Ok((d - z_t) * (1.0 - beta) + z_t1)
}

fn diagonal_of(h: &DenseMatrix) -> Option<DenseVector> {
    let n = h.nrows();
    for j in 0..n {
        for i in 0..n {
            if i != j && h[(i, j)] != 0.0 {
                return None;
            }
        }
    }
    Some(h.diagonal())
}

/// `z = u − V · H⁻¹ v`, with `H⁻¹v` from conjugate gradients (or a direct
/// solve when `H` is diagonal).
pub fn assemble_hypergradient(
    u: &DenseVector,
    v: &DenseVector,
    jac: &DenseMatrix,
    hess: &DenseMatrix,
) -> Result<DenseVector> {
    let dl = v.len();
    if jac.nrows() != u.len() || jac.ncols() != dl || hess.nrows() != dl || hess.ncols() != dl {
        return Err(invalid(format!(
            "hypergradient shapes: u {}, v {}, V {}x{}, H {}x{}",
            u.len(),
            dl,
            jac.nrows(),
            jac.ncols(),
            hess.nrows(),
            hess.ncols()
        )));
    }
    let solved = match diagonal_of(hess) {
        Some(diag) if diag.iter().all(|&h| h > 0.0) => v.component_div(&diag),
        _ => {
            let sol = cg_solve_matrix(hess, v, 1e-10, dl + 20)?;
            if !sol.converged {
                log::debug!("hypergradient CG stopped at residual {:e}", sol.residual_norm);
            }
            sol.x
        }
    };
    Ok(u - jac * solved)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn v(xs: &[f64]) -> DenseVector {
        DenseVector::from_vec(xs.to_vec())
    }

    #[test]
    fn storm_examples() {
        let est = StormEstimator::new(v(&[5.0, 5.0]), Projection::None).unwrap();
        let est = storm_update(est, &v(&[1.0, 2.0]), &v(&[9.0, 9.0]), 1.0).unwrap();
        assert_eq!(est.value(), &v(&[1.0, 2.0]));

        let est = StormEstimator::new(v(&[3.0]), Projection::None).unwrap();
        let est = storm_update(est, &v(&[7.0]), &v(&[3.0]), 0.3).unwrap();
        assert_relative_eq!(est.value()[0], 7.0, epsilon = 1e-15);

        let est = StormEstimator::new(v(&[0.0]), Projection::None).unwrap();
        let est = storm_update(est, &v(&[2.0]), &v(&[1.0]), 0.5).unwrap();
        assert_eq!(est.value(), &v(&[1.5]));
    }

    #[test]
    fn storm_projects_result() {
        let est = StormEstimator::new(v(&[0.0, 0.0]), Projection::Ball(1.0)).unwrap();
        let est = storm_update(est, &v(&[3.0, 4.0]), &v(&[0.0, 0.0]), 1.0).unwrap();
        assert_relative_eq!(est.value(), &v(&[0.6, 0.8]), epsilon = 1e-15);
    }

    #[test]
    fn storm_rejects_bad_inputs() {
        let mut est = StormEstimator::new(v(&[0.0]), Projection::None).unwrap();
        assert!(est.update(&v(&[1.0]), &v(&[1.0]), 0.0).is_err());
        assert!(est.update(&v(&[1.0]), &v(&[1.0]), 1.5).is_err());
        assert!(est.update(&v(&[1.0, 2.0]), &v(&[1.0]), 0.5).is_err());
        assert!(StormEstimator::new(v(&[1.0]), Projection::SpectralFloor(1.0)).is_err());
    }

    #[test]
    fn lazy_decay_examples() {
        let mut bank = RcStormBank::new(vec![v(&[2.0]), v(&[0.0])], Projection::None).unwrap();
        for _ in 0..3 {
            bank.rc_storm_update(1, &v(&[1.0]), &v(&[1.0]), 0.5, 0.5).unwrap();
        }
        assert_eq!(bank.sync_index(0), 0);
        assert_relative_eq!(bank.materialize(0).unwrap()[0], 0.25, epsilon = 1e-15);
        assert_eq!(bank.sync_index(0), 3);
        // zero skipped steps leaves the value unchanged
        let before = bank.materialize(0).unwrap().clone();
        assert_eq!(bank.materialize(0).unwrap(), &before);
    }

    #[test]
    fn lazy_decay_handles_beta_one() {
        let mut bank = RcStormBank::new(vec![v(&[2.0]), v(&[1.0])], Projection::None).unwrap();
        bank.rc_storm_update(1, &v(&[1.0]), &v(&[1.0]), 1.0, 0.5).unwrap();
        bank.rc_storm_update(1, &v(&[1.0]), &v(&[1.0]), 0.5, 0.5).unwrap();
        assert_eq!(bank.materialize(0).unwrap()[0], 0.0);
        // slot 1 synced after the β = 1 step must not be zeroed again
        bank.rc_storm_update(0, &v(&[1.0]), &v(&[1.0]), 0.5, 0.5).unwrap();
        assert!(bank.materialize(1).unwrap()[0] != 0.0);
    }

    #[test]
    fn floor_slot_decays_to_floor() {
        let lambda = 0.4;
        let h = DenseMatrix::from_diagonal(&v(&[3.0 * lambda, lambda]));
        let mut bank = RcStormBank::new(
            vec![h.clone(), h.clone()],
            Projection::SpectralFloor(lambda),
        )
        .unwrap();
        let other = DenseMatrix::identity(2, 2);
        // two skipped steps with β = 0.5: Π = 0.25
        bank.rc_storm_update(1, &other, &other, 0.5, 0.5).unwrap();
        bank.rc_storm_update(1, &other, &other, 0.5, 0.5).unwrap();
        let got = bank.materialize(0).unwrap().clone();
        // per-step clamp replay
        let mut eager = h;
        for _ in 0..2 {
            eager = project_spectral_floor(&(eager * 0.5), lambda).unwrap();
        }
        assert_relative_eq!(got, eager, epsilon = 1e-14);
        assert_relative_eq!(got, DenseMatrix::identity(2, 2) * lambda, epsilon = 1e-14);
    }

    #[test]
    fn rc_update_rejects_nonpositive_probability() {
        let mut bank = RcStormBank::new(vec![v(&[0.0])], Projection::None).unwrap();
        assert!(bank.rc_storm_update(0, &v(&[1.0]), &v(&[1.0]), 0.5, 0.0).is_err());
    }

    #[test]
    fn bank_rejects_mismatched_advance() {
        let mut bank = RcStormBank::new(vec![v(&[0.0]), v(&[0.0])], Projection::None).unwrap();
        bank.update(0, &v(&[1.0]), &v(&[1.0]), 0.5, 1.0).unwrap();
        assert!(bank.update(1, &v(&[1.0]), &v(&[1.0]), 0.25, 1.0).is_err());
        assert!(bank.advance(0.25).is_err());
    }

    #[test]
    fn d_update_examples() {
        let d = v(&[4.0, -1.0]);
        let z1 = v(&[0.5, 0.5]);
        assert_eq!(d_update(&d, &v(&[9.0, 9.0]), &z1, 1.0).unwrap(), z1);
        assert_eq!(d_update(&d, &d, &z1, 0.3).unwrap(), z1);
        assert_eq!(d_update(&v(&[1.0]), &v(&[0.0]), &v(&[2.0]), 0.25).unwrap(), v(&[2.75]));
        assert!(d_update(&d, &v(&[1.0]), &z1, 0.5).is_err());
    }

    #[test]
    fn assemble_examples() {
        let u = v(&[1.0, 1.0]);
        let z = assemble_hypergradient(
            &u,
            &v(&[0.0, 0.0]),
            &DenseMatrix::from_element(2, 2, 3.0),
            &DenseMatrix::identity(2, 2),
        )
        .unwrap();
        assert_eq!(z, u);
        let z = assemble_hypergradient(
            &v(&[0.0, 0.0]),
            &v(&[4.0, 6.0]),
            &DenseMatrix::identity(2, 2),
            &(DenseMatrix::identity(2, 2) * 2.0),
        )
        .unwrap();
        assert_eq!(z, v(&[-2.0, -3.0]));
    }

    #[test]
    fn assemble_rejects_shape_mismatch() {
        assert!(assemble_hypergradient(
            &v(&[0.0]),
            &v(&[1.0, 1.0]),
            &DenseMatrix::zeros(2, 2),
            &DenseMatrix::identity(2, 2)
        )
        .is_err());
    }
}
