//! Composite objectives `R(x) + (1/M) Σ F_m(x)` with quadratic components.
//!
//! The algorithm layer only sees the [`Objective`] trait: per-component
//! gradients plus a regularizer with an exact prox. [`Problem`] is the
//! quadratic least-squares family used by the synthetic experiments.

mod prox;
mod solve;
mod spectral;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub use prox::{prox, Regularizer};
pub use solve::{
    normal_equation_residual, read_solution_cache, solve_exact, write_solution_cache,
    SolutionCacheHeader, Solution, SolveMode, SOLUTION_CACHE_MAGIC,
};
pub use spectral::{
    average_hessian, power_iteration_gram, smoothness_bound, strong_convexity, ProblemConstants,
};

/// Dense model-space vector.
pub type Vector = DVector<f64>;

/// Smooth finite-sum objective with a proximable regularizer.
///
/// Components are indexed `0..num_components()`.
pub trait Objective: Sync {
    fn dim(&self) -> usize;
    fn num_components(&self) -> usize;
    fn regularizer(&self) -> &Regularizer;
    fn grad_component(&self, m: usize, x: &Vector) -> Result<Vector>;

    /// `(1/M) Σ_m ∇F_m(x)`, summed in index order.
    fn grad_full(&self, x: &Vector) -> Result<Vector> {
        let mut sum = Vector::zeros(self.dim());
        for m in 0..self.num_components() {
            sum += self.grad_component(m, x)?;
        }
        Ok(sum / self.num_components() as f64)
    }
}

/// `F_m(x) = ½‖A x − b‖²`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticComponent {
    a: DMatrix<f64>,
    b: DVector<f64>,
}

impl QuadraticComponent {
    pub fn new(a: DMatrix<f64>, b: DVector<f64>) -> Result<Self> {
        if a.nrows() != b.len() {
            return Err(Error::DimensionMismatch {
                expected: a.nrows(),
                got: b.len(),
            });
        }
        if a.ncols() == 0 {
            return Err(Error::contract("component must act on a space of dimension >= 1"));
        }
        if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(Error::contract("component data must be finite"));
        }
        Ok(Self { a, b })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn offset(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn dim(&self) -> usize {
        self.a.ncols()
    }

    pub fn rows(&self) -> usize {
        self.a.nrows()
    }

    pub fn value(&self, x: &Vector) -> f64 {
        0.5 * (&self.a * x - &self.b).norm_squared()
    }

    pub fn gradient(&self, x: &Vector) -> Vector {
        self.a.tr_mul(&(&self.a * x - &self.b))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Problem {
    components: Vec<QuadraticComponent>,
    regularizer: Regularizer,
    dim: usize,
}

impl Problem {
    pub fn new(components: Vec<QuadraticComponent>, regularizer: Regularizer) -> Result<Self> {
        let first = components
            .first()
            .ok_or_else(|| Error::contract("a problem needs at least one component"))?;
        let dim = first.dim();
        for c in &components {
            if c.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: c.dim(),
                });
            }
        }
        regularizer.validate()?;
        Ok(Self {
            components,
            regularizer,
            dim,
        })
    }

    pub fn components(&self) -> &[QuadraticComponent] {
        &self.components
    }

    pub fn component(&self, m: usize) -> &QuadraticComponent {
        &self.components[m]
    }

    pub fn with_regularizer(mut self, regularizer: Regularizer) -> Result<Self> {
        regularizer.validate()?;
        self.regularizer = regularizer;
        Ok(self)
    }

    /// `F_m(x)`.
    pub fn value_component(&self, m: usize, x: &Vector) -> Result<f64> {
        self.check_index(m)?;
        self.check_dim(x)?;
        Ok(self.components[m].value(x))
    }

    /// `F(x) = (1/M) Σ F_m(x)` (smooth part only).
    pub fn value_smooth(&self, x: &Vector) -> Result<f64> {
        self.check_dim(x)?;
        let total: f64 = self.components.iter().map(|c| c.value(x)).sum();
        Ok(total / self.components.len() as f64)
    }

    fn check_dim(&self, x: &Vector) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        Ok(())
    }

    fn check_index(&self, m: usize) -> Result<()> {
        if m >= self.components.len() {
            return Err(Error::contract(format!(
                "component index {m} out of range for M = {}",
                self.components.len()
            )));
        }
        Ok(())
    }
}

impl Objective for Problem {
    fn dim(&self) -> usize {
        self.dim
    }

    fn num_components(&self) -> usize {
        self.components.len()
    }

    fn regularizer(&self) -> &Regularizer {
        &self.regularizer
    }

    fn grad_component(&self, m: usize, x: &Vector) -> Result<Vector> {
        self.check_index(m)?;
        self.check_dim(x)?;
        Ok(self.components[m].gradient(x))
    }
}
