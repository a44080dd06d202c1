//! Rayleigh (proportional) damping.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rayleigh damping `C = alpha M + beta K`, giving the modal damping ratio
/// `zeta(omega) = alpha / (2 omega) + beta * omega / 2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RayleighDamping {
    /// Mass-proportional coefficient, 1/s.
    pub alpha: f64,
    /// Stiffness-proportional coefficient, s.
    pub beta: f64,
}

impl RayleighDamping {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if alpha < 0.0 || beta < 0.0 {
            return Err(Error::Validation(format!(
                "Rayleigh coefficients must be nonnegative, got alpha={alpha}, beta={beta}"
            )));
        }
        Ok(Self { alpha, beta })
    }

    pub fn undamped() -> Self {
        Self {
            alpha: 0.0,
            beta: 0.0,
        }
    }

    /// Modal damping ratio at angular frequency `omega` (rad/s).
    pub fn zeta(&self, omega: f64) -> f64 {
        if omega == 0.0 {
            return if self.alpha == 0.0 { 0.0 } else { f64::INFINITY };
        }
        self.alpha / (2.0 * omega) + self.beta * omega / 2.0
    }
}

/// Solves for `(alpha, beta)` from two (frequency Hz, damping ratio) samples.
pub fn rayleigh_from_ratios(p1: (f64, f64), p2: (f64, f64)) -> Result<RayleighDamping> {
    let (f1, z1) = p1;
    let (f2, z2) = p2;
    if !(f1 > 0.0) || !(f2 > 0.0) {
        return Err(Error::Validation(format!(
            "frequencies must be positive, got {f1} Hz and {f2} Hz"
        )));
    }
    if z1 < 0.0 || z2 < 0.0 {
        return Err(Error::Validation(
            "damping ratios must be nonnegative".into(),
        ));
    }
    let w1 = 2.0 * std::f64::consts::PI * f1;
    let w2 = 2.0 * std::f64::consts::PI * f2;
    // zeta_j = alpha / (2 w_j) + beta w_j / 2  <=>  alpha + beta w_j^2 = 2 zeta_j w_j.
    let det = w2 * w2 - w1 * w1;
    if det.abs() < 1e-14 * (w1 * w1 + w2 * w2) {
        return Err(Error::Singular(format!(
            "equal frequencies {f1} Hz and {f2} Hz make the Rayleigh system singular"
        )));
    }
    let beta = (2.0 * z2 * w2 - 2.0 * z1 * w1) / det;
    let alpha = 2.0 * z1 * w1 - beta * w1 * w1;
    // Tolerate round-off at the undamped limit.
    let alpha = if alpha.abs() < 1e-14 { 0.0 } else { alpha };
    let beta = if beta.abs() < 1e-18 { 0.0 } else { beta };
    RayleighDamping::new(alpha, beta)
}
