use super::Vector;
use crate::error::{Error, Result};

/// Proper closed convex regularizer `R` with a closed-form prox.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Regularizer {
    Zero,
    /// `τ‖x‖₁`
    L1(f64),
    /// `(τ/2)‖x‖²`
    SquaredL2(f64),
    /// Indicator of the box `[lower, upper]^d`.
    BoxIndicator { lower: f64, upper: f64 },
}

impl Regularizer {
    pub(crate) fn validate(&self) -> Result<()> {
        match *self {
            Regularizer::Zero => Ok(()),
            Regularizer::L1(t) | Regularizer::SquaredL2(t) => {
                if t.is_finite() && t >= 0.0 {
                    Ok(())
                } else {
                    Err(Error::contract(format!("regularizer weight must be finite and >= 0, got {t}")))
                }
            }
            Regularizer::BoxIndicator { lower, upper } => {
                if lower <= upper && !lower.is_nan() && !upper.is_nan() {
                    Ok(())
                } else {
                    Err(Error::contract(format!("empty box [{lower}, {upper}]")))
                }
            }
        }
    }

    /// `R(x)`; `+∞` outside the box for the indicator.
    pub fn value(&self, x: &Vector) -> f64 {
        match *self {
            Regularizer::Zero => 0.0,
            Regularizer::L1(t) => t * x.iter().map(|v| v.abs()).sum::<f64>(),
            Regularizer::SquaredL2(t) => 0.5 * t * x.norm_squared(),
            Regularizer::BoxIndicator { lower, upper } => {
                if x.iter().all(|&v| v >= lower && v <= upper) {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
        }
    }
}

/// `prox_{γR}(w) = argmin_x γR(x) + ½‖x − w‖²`.
pub fn prox(reg: &Regularizer, gamma: f64, w: &Vector) -> Result<Vector> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::contract(format!("prox stepsize must be > 0, got {gamma}")));
    }
    Ok(match *reg {
        Regularizer::Zero => w.clone(),
        Regularizer::L1(t) => {
            let thr = gamma * t;
            w.map(|v| v.signum() * (v.abs() - thr).max(0.0))
        }
        Regularizer::SquaredL2(t) => w / (1.0 + gamma * t),
        Regularizer::BoxIndicator { lower, upper } => w.map(|v| v.clamp(lower, upper)),
    })
}
