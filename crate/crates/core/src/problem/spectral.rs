use log::warn;
use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::{Problem, Vector};
use crate::error::{Error, Result};

const POWER_TOL: f64 = 1e-8;
const POWER_MAX_ITERS: usize = 10_000;
/// Above this dimension the smallest eigenvalue is found by inverse iteration.
const DENSE_EIGEN_MAX_DIM: usize = 2000;

/// Smoothness and strong-convexity constants of a problem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProblemConstants {
    /// Largest per-component smoothness constant `max_m ‖A_mᵀA_m‖`.
    pub l: f64,
    /// Strong-convexity modulus of the average `F`.
    pub mu: f64,
    /// `L / μ`.
    pub kappa: f64,
}

impl ProblemConstants {
    pub fn new(l: f64, mu: f64) -> Result<Self> {
        if !(l > 0.0 && l.is_finite()) {
            return Err(Error::contract(format!("smoothness constant must be > 0, got {l}")));
        }
        if !(mu > 0.0 && mu.is_finite()) {
            return Err(Error::contract(format!(
                "strong convexity modulus must be > 0, got {mu}; the average is not strongly convex"
            )));
        }
        Ok(Self { l, mu, kappa: l / mu })
    }

    pub fn of(problem: &Problem) -> Result<Self> {
        Self::new(smoothness_bound(problem), strong_convexity(problem)?)
    }
}

fn rayleigh_power(a: &DMatrix<f64>, start: DVector<f64>) -> f64 {
    let mut v = start.normalize();
    let mut lambda = 0.0;
    for it in 0..POWER_MAX_ITERS {
        let w = a.tr_mul(&(a * &v));
        let next = v.dot(&w);
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        v = w / norm;
        if it > 0 && (next - lambda).abs() <= POWER_TOL * next.abs() {
            return next;
        }
        lambda = next;
    }
    warn!("power iteration hit {POWER_MAX_ITERS} iterations without reaching tolerance");
    lambda
}

/// `‖AᵀA‖` (spectral norm) by power iteration, never forming `AᵀA`.
///
/// The primary start is the normalized all-ones vector. A second fixed start
/// with alternating signs covers matrices whose top eigenvector is orthogonal
/// to the all-ones direction; the larger estimate is returned.
pub fn power_iteration_gram(a: &DMatrix<f64>) -> f64 {
    let d = a.ncols();
    let ones = DVector::from_element(d, 1.0);
    let primary = rayleigh_power(a, ones);
    if d == 1 {
        return primary;
    }
    let alt = DVector::from_fn(d, |i, _| if i % 2 == 0 { 1.0 } else { -0.5 } * (1.0 + i as f64 / d as f64));
    primary.max(rayleigh_power(a, alt))
}

/// `L = max_m ‖A_mᵀA_m‖`.
pub fn smoothness_bound(problem: &Problem) -> f64 {
    problem
        .components()
        .iter()
        .map(|c| power_iteration_gram(c.matrix()))
        .fold(0.0, f64::max)
}

/// `(1/M) Σ_m A_mᵀA_m`, the Hessian of the smooth part.
pub fn average_hessian(problem: &Problem) -> DMatrix<f64> {
    let d = super::Objective::dim(problem);
    let mut h = DMatrix::zeros(d, d);
    for c in problem.components() {
        h += c.matrix().tr_mul(c.matrix());
    }
    h / problem.components().len() as f64
}

/// Smallest eigenvalue of the average Hessian; `0` when it is singular.
pub fn strong_convexity(problem: &Problem) -> Result<f64> {
    let h = average_hessian(problem);
    let d = h.nrows();
    let scale = h.iter().map(|v| v.abs()).fold(0.0, f64::max);
    if scale == 0.0 {
        return Ok(0.0);
    }
    let lambda_min = if d <= DENSE_EIGEN_MAX_DIM {
        SymmetricEigen::new(h).eigenvalues.min()
    } else {
        inverse_iteration_min(h)?
    };
    // Eigenvalues at rounding level of the largest entry count as zero.
    if lambda_min <= 1e-12 * scale * d as f64 {
        Ok(0.0)
    } else {
        Ok(lambda_min)
    }
}

fn inverse_iteration_min(h: DMatrix<f64>) -> Result<f64> {
    let d = h.nrows();
    let Some(chol) = h.clone().cholesky() else {
        return Ok(0.0);
    };
    let mut v: Vector = DVector::from_element(d, 1.0).normalize();
    let mut lambda = f64::INFINITY;
    for _ in 0..POWER_MAX_ITERS {
        let w = chol.solve(&v);
        let norm = w.norm();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::Singular);
        }
        v = w / norm;
        let next = v.dot(&(&h * &v));
        if (next - lambda).abs() <= POWER_TOL * next.abs() {
            return Ok(next);
        }
        lambda = next;
    }
    Ok(lambda)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{QuadraticComponent, Regularizer};

    fn problem(mats: Vec<DMatrix<f64>>) -> Problem {
        let comps = mats
            .into_iter()
            .map(|a| {
                let r = a.nrows();
                QuadraticComponent::new(a, DVector::zeros(r)).unwrap()
            })
            .collect();
        Problem::new(comps, Regularizer::Zero).unwrap()
    }

    #[test]
    fn scaled_identity_norm() {
        let p = problem(vec![DMatrix::identity(3, 3) * 2.0]);
        assert!((smoothness_bound(&p) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn diagonal_norm() {
        let p = problem(vec![DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 1.0])]);
        assert!((smoothness_bound(&p) - 9.0).abs() <= 9.0 * 1e-8);
    }

    #[test]
    fn zero_component_contributes_nothing() {
        let p = problem(vec![DMatrix::zeros(2, 2), DMatrix::identity(2, 2)]);
        assert!((smoothness_bound(&p) - 1.0).abs() < 1e-12);
        assert_eq!(power_iteration_gram(&DMatrix::zeros(2, 3)), 0.0);
    }

    #[test]
    fn top_direction_orthogonal_to_ones() {
        // AᵀA = [[1,-1],[-1,1]] has top eigenvector (1,-1)/√2 ⟂ ones.
        let a = DMatrix::from_row_slice(1, 2, &[1.0, -1.0]);
        assert!((power_iteration_gram(&a) - 2.0).abs() < 1e-8);
    }

    #[test]
    fn strong_convexity_examples() {
        let p = problem(vec![DMatrix::identity(2, 2)]);
        assert!((strong_convexity(&p).unwrap() - 1.0).abs() < 1e-12);
        let p = problem(vec![
            DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]),
            DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0]),
        ]);
        assert!((strong_convexity(&p).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn singular_average_gives_zero() {
        let p = problem(vec![DMatrix::from_row_slice(1, 2, &[1.0, 1.0])]);
        assert_eq!(strong_convexity(&p).unwrap(), 0.0);
        assert!(ProblemConstants::of(&p).is_err());
    }

    #[test]
    fn inverse_iteration_agrees_with_dense() {
        let h = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.0, 1.0, 3.0, 0.5, 0.0, 0.5, 2.0]);
        let dense = SymmetricEigen::new(h.clone()).eigenvalues.min();
        let inv = inverse_iteration_min(h).unwrap();
        assert!((dense - inv).abs() <= 1e-7 * dense);
    }
}
