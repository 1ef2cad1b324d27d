use crate::error::{Error, Result};
use crate::problem::{Objective, Vector};

/// Stepsize `γ`, control-variate rate `λ` and model-update rate `ρ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MuranaParams {
    pub gamma: f64,
    pub lambda: f64,
    pub rho: f64,
}

impl MuranaParams {
    pub fn new(gamma: f64, lambda: f64, rho: f64) -> Result<Self> {
        let params = Self { gamma, lambda, rho };
        params.validate()?;
        Ok(params)
    }

    /// Positivity and finiteness. Upper bounds on `λ` and `ρ` are a
    /// certificate concern, not an iteration one.
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("gamma", self.gamma), ("lambda", self.lambda), ("rho", self.rho)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::contract(format!("{name} must be finite and > 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Storage of the control variates `h_m`.
#[derive(Debug, Clone, PartialEq)]
pub enum ControlVariates {
    /// One explicit vector per component.
    Table(Vec<Vector>),
    /// `h_m = ∇F_m(y)` for the anchor point `y`; nothing else is stored.
    Anchor(Vector),
}

/// Which control variates changed in the most recent step.
#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Dirty {
    All,
    Indices(Vec<usize>),
    Clean,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MuranaState {
    pub x: Vector,
    pub h: ControlVariates,
    /// `(1/M) Σ_m h_m`, maintained incrementally.
    pub h_avg: Vector,
    pub round: usize,
    pub(crate) dirty: Dirty,
}

/// How the initial control variates are chosen.
#[derive(Debug, Clone, PartialEq)]
pub enum H0Policy {
    /// `h_m^0 = ∇F_m(x^0)`.
    GradAtX0,
    Zeros,
    Given(Vec<Vector>),
}

/// Which kind of control-variate store a variant runs on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StoreKind {
    Table,
    Anchor,
}

impl MuranaState {
    /// Builds the round-0 state. Returns the state and the number of
    /// gradient evaluations spent on initialization.
    pub fn initialize<P: Objective + ?Sized>(
        problem: &P,
        x0: Vector,
        h0: &H0Policy,
        store: StoreKind,
    ) -> Result<(Self, u64)> {
        let dim = problem.dim();
        let m_count = problem.num_components();
        if x0.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: x0.len() });
        }
        let mut calls = 0u64;
        let h = match (store, h0) {
            (StoreKind::Anchor, H0Policy::GradAtX0) => {
                calls += m_count as u64;
                let h_avg = problem.grad_full(&x0)?;
                let state = Self {
                    h: ControlVariates::Anchor(x0.clone()),
                    x: x0,
                    h_avg,
                    round: 0,
                    dirty: Dirty::All,
                };
                return Ok((state, calls));
            }
            (StoreKind::Anchor, _) => {
                return Err(Error::InvalidVariant(
                    "anchor-based control variates require h_m^0 = ∇F_m(x^0)".into(),
                ))
            }
            (StoreKind::Table, H0Policy::GradAtX0) => {
                calls += m_count as u64;
                (0..m_count).map(|m| problem.grad_component(m, &x0)).collect::<Result<Vec<_>>>()?
            }
            (StoreKind::Table, H0Policy::Zeros) => vec![Vector::zeros(dim); m_count],
            (StoreKind::Table, H0Policy::Given(hs)) => {
                if hs.len() != m_count {
                    return Err(Error::DimensionMismatch { expected: m_count, got: hs.len() });
                }
                if let Some(bad) = hs.iter().find(|h| h.len() != dim) {
                    return Err(Error::DimensionMismatch { expected: dim, got: bad.len() });
                }
                hs.clone()
            }
        };
        let h_avg = average(&h, dim);
        Ok((
            Self {
                x: x0,
                h: ControlVariates::Table(h),
                h_avg,
                round: 0,
                dirty: Dirty::All,
            },
            calls,
        ))
    }

    pub fn num_components(&self) -> Option<usize> {
        match &self.h {
            ControlVariates::Table(t) => Some(t.len()),
            ControlVariates::Anchor(_) => None,
        }
    }

    pub fn anchor(&self) -> Option<&Vector> {
        match &self.h {
            ControlVariates::Anchor(y) => Some(y),
            ControlVariates::Table(_) => None,
        }
    }

    pub fn store_kind(&self) -> StoreKind {
        match self.h {
            ControlVariates::Table(_) => StoreKind::Table,
            ControlVariates::Anchor(_) => StoreKind::Anchor,
        }
    }

    /// `h_m^k`; for an anchor store this evaluates `∇F_m(y)` (not counted as
    /// an algorithmic gradient call).
    pub fn h_component<P: Objective + ?Sized>(&self, problem: &P, m: usize) -> Result<Vector> {
        match &self.h {
            ControlVariates::Table(t) => Ok(t[m].clone()),
            ControlVariates::Anchor(y) => problem.grad_component(m, y),
        }
    }

    /// All `h_m^k`, materialized.
    pub fn h_components<P: Objective + ?Sized>(&self, problem: &P) -> Result<Vec<Vector>> {
        (0..problem.num_components()).map(|m| self.h_component(problem, m)).collect()
    }

    /// `‖h_avg − (1/M) Σ h_m‖`.
    pub fn h_avg_drift<P: Objective + ?Sized>(&self, problem: &P) -> Result<f64> {
        let hs = self.h_components(problem)?;
        Ok((&self.h_avg - average(&hs, problem.dim())).norm())
    }

    pub(crate) fn check_finite(&self) -> Result<()> {
        if self.x.iter().chain(self.h_avg.iter()).all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::Diverged { round: self.round })
        }
    }
}

pub(crate) fn average(vs: &[Vector], dim: usize) -> Vector {
    let mut sum = Vector::zeros(dim);
    for v in vs {
        sum += v;
    }
    sum / vs.len() as f64
}

/// `x − γ·direction`, shared by every step so identical inputs give
/// identical bits.
pub(crate) fn gradient_point(x: &Vector, direction: &Vector, gamma: f64) -> Vector {
    x - direction * gamma
}
