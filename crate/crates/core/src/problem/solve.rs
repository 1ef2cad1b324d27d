use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use super::{average_hessian, prox, smoothness_bound, Objective, Problem, Regularizer, Vector};
use crate::error::{Error, Result};

/// Header magic of the solution cache file ("MUR1").
pub const SOLUTION_CACHE_MAGIC: u32 = 0x4D55_5231;

const FALLBACK_TOL: f64 = 1e-13;
const FALLBACK_MAX_ITERS: usize = 10_000_000;

/// Minimizer `x^⋆` together with the optimal gradients `h_m^⋆ = ∇F_m(x^⋆)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub x_star: Vector,
    pub h_star_components: Vec<Vector>,
    pub h_star: Vector,
}

impl Solution {
    pub fn from_minimizer<P: Objective + ?Sized>(problem: &P, x_star: Vector) -> Result<Self> {
        let m_count = problem.num_components();
        let mut sum = Vector::zeros(problem.dim());
        let mut comps = Vec::with_capacity(m_count);
        for m in 0..m_count {
            let g = problem.grad_component(m, &x_star)?;
            sum += &g;
            comps.push(g);
        }
        Ok(Self {
            x_star,
            h_star_components: comps,
            h_star: sum / m_count as f64,
        })
    }

    /// `‖x^⋆ − prox_{γR}(x^⋆ − γ h^⋆)‖`.
    pub fn fixed_point_residual(&self, reg: &Regularizer, gamma: f64) -> Result<f64> {
        let w = &self.x_star - &self.h_star * gamma;
        Ok((prox(reg, gamma, &w)? - &self.x_star).norm())
    }
}

/// How [`solve_exact`] treats regularizers without a linear optimality system.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SolveMode {
    /// Only `Zero` and `SquaredL2` are accepted.
    #[default]
    Direct,
    /// Other regularizers fall back to proximal gradient descent with `γ = 1/L`.
    AllowIterative,
}

fn normal_system(problem: &Problem) -> (DMatrix<f64>, DVector<f64>) {
    let mut rhs = DVector::zeros(problem.dim());
    for c in problem.components() {
        rhs += c.matrix().tr_mul(c.offset());
    }
    let rhs = rhs / problem.num_components() as f64;
    let mut h = average_hessian(problem);
    if let Regularizer::SquaredL2(t) = problem.regularizer() {
        for i in 0..h.nrows() {
            h[(i, i)] += t;
        }
    }
    (h, rhs)
}

/// `‖(H + τI) x − (1/M) Σ A_mᵀ b_m‖` for the linear-optimality regularizers.
pub fn normal_equation_residual(problem: &Problem, x: &Vector) -> Result<f64> {
    match problem.regularizer() {
        Regularizer::Zero | Regularizer::SquaredL2(_) => {
            let (h, rhs) = normal_system(problem);
            Ok((h * x - rhs).norm())
        }
        other => Err(Error::contract(format!("no normal equations for regularizer {other:?}"))),
    }
}

/// Exact minimizer by a dense solve, or by prox-GD when allowed.
pub fn solve_exact(problem: &Problem, mode: SolveMode) -> Result<Solution> {
    let x_star = match (problem.regularizer(), mode) {
        (Regularizer::Zero | Regularizer::SquaredL2(_), _) => {
            let (h, rhs) = normal_system(problem);
            let chol = h.cholesky().ok_or(Error::Singular)?;
            let x = chol.solve(&rhs);
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::Singular);
            }
            x
        }
        (_, SolveMode::AllowIterative) => prox_gradient_fixed_point(problem)?,
        (reg, SolveMode::Direct) => {
            return Err(Error::contract(format!(
                "regularizer {reg:?} has no direct solve; use SolveMode::AllowIterative"
            )))
        }
    };
    Solution::from_minimizer(problem, x_star)
}

fn prox_gradient_fixed_point(problem: &Problem) -> Result<Vector> {
    if super::strong_convexity(problem)? <= 0.0 {
        return Err(Error::Singular);
    }
    let gamma = 1.0 / smoothness_bound(problem);
    let reg = *problem.regularizer();
    let mut x = Vector::zeros(problem.dim());
    for _ in 0..FALLBACK_MAX_ITERS {
        let g = problem.grad_full(&x)?;
        let next = prox(&reg, gamma, &(&x - g * gamma))?;
        let step = (&next - &x).norm();
        let scale = 1.0 + x.norm();
        x = next;
        if step <= FALLBACK_TOL * scale {
            return Ok(x);
        }
    }
    Err(Error::contract(format!(
        "prox-gradient fallback did not reach tolerance in {FALLBACK_MAX_ITERS} iterations"
    )))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SolutionCacheHeader {
    pub num_components: u32,
    pub dim: u32,
    pub rows: u32,
}

/// Layout: four little-endian `u32` (magic, M, d, d'), then `d` floats of
/// `x^⋆`, then `M·d` floats of `h_m^⋆`, all little-endian `f64`.
pub fn write_solution_cache(path: &Path, solution: &Solution, rows: usize) -> Result<()> {
    let m = solution.h_star_components.len();
    let d = solution.x_star.len();
    let mut buf = Vec::with_capacity(16 + 8 * d * (m + 1));
    for word in [SOLUTION_CACHE_MAGIC, m as u32, d as u32, rows as u32] {
        buf.extend_from_slice(&word.to_le_bytes());
    }
    for v in solution.x_star.iter().chain(solution.h_star_components.iter().flat_map(|h| h.iter())) {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_solution_cache(path: &Path) -> Result<(SolutionCacheHeader, Solution)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |msg: &str| Error::contract(format!("{}: {msg}", path.display()));
    if bytes.len() < 16 {
        return Err(bad("truncated header"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 * i..4 * i + 4].try_into().unwrap());
    if word(0) != SOLUTION_CACHE_MAGIC {
        return Err(bad("bad magic"));
    }
    let header = SolutionCacheHeader {
        num_components: word(1),
        dim: word(2),
        rows: word(3),
    };
    let (m, d) = (header.num_components as usize, header.dim as usize);
    if bytes.len() != 16 + 8 * d * (m + 1) {
        return Err(bad("payload length does not match header"));
    }
    let floats: Vec<f64> = bytes[16..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let x_star = Vector::from_column_slice(&floats[..d]);
    let comps: Vec<Vector> = floats[d..].chunks_exact(d).map(Vector::from_column_slice).collect();
    let mut sum = Vector::zeros(d);
    for h in &comps {
        sum += h;
    }
    let h_star = sum / m as f64;
    Ok((
        header,
        Solution {
            x_star,
            h_star_components: comps,
            h_star,
        },
    ))
}
