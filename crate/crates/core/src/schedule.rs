//! Step-size and momentum schedules.
//!
//! The convergence theory fixes only the functional forms; the constants are
//! tunables. `η_t` scales the upper step (`x ← x − γ η_t z`), `τ_t` the lower
//! step (`y ← y − τ τ_t w`), and every estimator uses `β_t = k · η_t²`
//! clipped to `(0, 1]`.

use std::sync::Once;

use crate::error::{invalid, Result};

/// The six momentum streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EstimatorKind {
    Fx,
    Fy,
    Gxy,
    Gyy,
    Gy,
    D,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 6] = [
        EstimatorKind::Fx,
        EstimatorKind::Fy,
        EstimatorKind::Gxy,
        EstimatorKind::Gyy,
        EstimatorKind::Gy,
        EstimatorKind::D,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepMode {
    /// `η_t = τ_t = c / (c0 + t)^{1/3}` (single time-scale).
    PolynomialThird,
    /// `η_t = c / (c0 + t)^{1/2}`, `τ_t = η_t²` (two time-scale baseline).
    PolynomialHalf,
    /// Fixed `η_t = eta`, `τ_t = tau_t`.
    Constant { eta: f64, tau_t: f64 },
}

/// Multipliers `k` in `β = k · η²`, one per estimator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaMultipliers {
    pub fx: f64,
    pub fy: f64,
    pub gxy: f64,
    pub gyy: f64,
    pub gy: f64,
    pub d: f64,
}

impl BetaMultipliers {
    pub fn uniform(k: f64) -> Self {
        Self {
            fx: k,
            fy: k,
            gxy: k,
            gyy: k,
            gy: k,
            d: k,
        }
    }

    pub fn get(&self, kind: EstimatorKind) -> f64 {
        match kind {
            EstimatorKind::Fx => self.fx,
            EstimatorKind::Fy => self.fy,
            EstimatorKind::Gxy => self.gxy,
            EstimatorKind::Gyy => self.gyy,
            EstimatorKind::Gy => self.gy,
            EstimatorKind::D => self.d,
        }
    }

    pub fn set(&mut self, kind: EstimatorKind, value: f64) {
        match kind {
            EstimatorKind::Fx => self.fx = value,
            EstimatorKind::Fy => self.fy = value,
            EstimatorKind::Gxy => self.gxy = value,
            EstimatorKind::Gyy => self.gyy = value,
            EstimatorKind::Gy => self.gy = value,
            EstimatorKind::D => self.d = value,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleConfig {
    pub c: f64,
    pub c0: f64,
    /// Upper step multiplier γ.
    pub gamma: f64,
    /// Lower step multiplier τ.
    pub tau: f64,
    pub beta: BetaMultipliers,
    pub mode: StepMode,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            c: 1.0,
            c0: 8.0,
            gamma: 1.0,
            tau: 1.0,
            beta: BetaMultipliers::uniform(1.0),
            mode: StepMode::PolynomialThird,
        }
    }
}

static CLIP_WARNING: Once = Once::new();

impl ScheduleConfig {
    pub fn polynomial_third(c: f64, c0: f64) -> Self {
        Self {
            c,
            c0,
            ..Self::default()
        }
    }

    pub fn polynomial_half(c: f64, c0: f64, tau0: f64) -> Self {
        Self {
            c,
            c0,
            tau: tau0,
            mode: StepMode::PolynomialHalf,
            ..Self::default()
        }
    }

    pub fn constant(eta: f64, tau_t: f64) -> Self {
        Self {
            mode: StepMode::Constant { eta, tau_t },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(invalid(format!("schedule {name} must be positive and finite, got {v}")))
            }
        };
        if !(self.c0 >= 0.0) || !self.c0.is_finite() {
            return Err(invalid(format!("schedule c0 must be >= 0, got {}", self.c0)));
        }
        positive("c", self.c)?;
        if !(self.gamma >= 0.0) || !(self.tau >= 0.0) {
            return Err(invalid("gamma and tau must be >= 0"));
        }
        for kind in EstimatorKind::ALL {
            positive("beta multiplier", self.beta.get(kind))?;
        }
        if let StepMode::Constant { eta, tau_t } = self.mode {
            if !(eta >= 0.0) || !(tau_t >= 0.0) {
                return Err(invalid("constant step sizes must be >= 0"));
            }
        }
        if matches!(self.mode, StepMode::PolynomialThird | StepMode::PolynomialHalf) && self.c0 == 0.0 {
            // η_0 would be infinite
            return Err(invalid("polynomial schedules need c0 > 0"));
        }
        Ok(())
    }

    /// `η_t`.
    pub fn eta(&self, t: u64) -> f64 {
        schedule_eta(self, t)
    }

    /// `τ_t`.
    pub fn tau_t(&self, t: u64) -> f64 {
        match self.mode {
            StepMode::PolynomialThird => self.eta(t),
            StepMode::PolynomialHalf => self.eta(t).powi(2),
            StepMode::Constant { tau_t, .. } => tau_t,
        }
    }

    /// `β_t = k · η_t²` clipped to `(0, 1]`.
    pub fn beta(&self, kind: EstimatorKind, t: u64) -> f64 {
        let raw = self.beta.get(kind) * self.eta(t).powi(2);
        if raw > 1.0 {
            CLIP_WARNING.call_once(|| {
                log::warn!("momentum parameter {raw:.3} clipped to 1 (increase c0 or lower the multiplier)")
            });
            1.0
        } else if raw > 0.0 {
            raw
        } else {
            f64::MIN_POSITIVE
        }
    }
}

/// Upper step size at step `t`.
pub fn schedule_eta(cfg: &ScheduleConfig, t: u64) -> f64 {
    match cfg.mode {
        StepMode::PolynomialThird => cfg.c / (cfg.c0 + t as f64).cbrt(),
        StepMode::PolynomialHalf => cfg.c / (cfg.c0 + t as f64).sqrt(),
        StepMode::Constant { eta, .. } => eta,
    }
}
