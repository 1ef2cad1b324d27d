use super::state::{gradient_point, ControlVariates, Dirty, MuranaParams, MuranaState};
use super::variant::{COperator, OperatorPlan, UOperator};
use crate::error::{Error, Result};
use crate::ops::{realize, realize_model, Action, EnsembleRealization, Uniformity};
use crate::problem::{prox, Objective, Vector};
use crate::rng::{RandomStream, Role};

/// Realized `C^k`, `U^k` and `R^k` of one round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundDraw {
    pub c: EnsembleRealization,
    pub u: EnsembleRealization,
    pub r: Action,
}

/// Work done by one step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StepInfo {
    pub grad_calls: u64,
}

/// Draws round `round` of `plan` from the canonical stream addresses.
pub fn draw_round(plan: &OperatorPlan, stream: &RandomStream, round: usize, num_components: usize, dim: usize) -> RoundDraw {
    let u_own = match &plan.u {
        UOperator::Independent(u) => Some(realize(u, stream, Role::U, round, num_components, dim)),
        UOperator::SharedWithC => None,
    };
    let c = match &plan.c {
        COperator::Fixed(c) => realize(c, stream, Role::C, round, num_components, dim),
        COperator::GatedByU { when_active, when_skipped } => {
            let skipped = u_own.as_ref().is_some_and(|u| u.uniformity() == Uniformity::AllSkip);
            let spec = if skipped { when_skipped } else { when_active };
            realize(spec, stream, Role::C, round, num_components, dim)
        }
    };
    let u = u_own.unwrap_or_else(|| c.clone());
    RoundDraw { c, u, r: realize_model(&plan.r, stream, round, dim) }
}

/// Per-round memo so `∇F_m(x^k)` is evaluated at most once.
struct GradMemo<'a, P: ?Sized> {
    problem: &'a P,
    x: &'a Vector,
    values: Vec<Option<Vector>>,
    calls: u64,
}

impl<'a, P: Objective + ?Sized> GradMemo<'a, P> {
    fn new(problem: &'a P, x: &'a Vector) -> Self {
        Self { problem, x, values: vec![None; problem.num_components()], calls: 0 }
    }

    fn get(&mut self, m: usize) -> Result<&Vector> {
        if self.values[m].is_none() {
            self.values[m] = Some(self.problem.grad_component(m, self.x)?);
            self.calls += 1;
        }
        Ok(self.values[m].as_ref().expect("filled above"))
    }

    /// `(1/M) Σ_m ∇F_m(x)`, summed in index order.
    fn average(&mut self) -> Result<Vector> {
        let mut sum = Vector::zeros(self.x.len());
        for m in 0..self.values.len() {
            sum += self.get(m)?;
        }
        Ok(sum / self.values.len() as f64)
    }
}

/// `λ·s == 1` (up to rounding): the update `h_m + λ s (g − h_m)` is exactly `g`.
fn resets(lambda: f64, action: &Action) -> bool {
    matches!(action, Action::Scale(s) if (lambda * s - 1.0).abs() <= 1e-12)
}

/// One round of the template iteration with freshly drawn operators.
pub fn murana_step<P: Objective + ?Sized>(
    state: &mut MuranaState,
    problem: &P,
    params: &MuranaParams,
    plan: &OperatorPlan,
    stream: &RandomStream,
) -> Result<StepInfo> {
    let draw = draw_round(plan, stream, state.round, problem.num_components(), problem.dim());
    murana_step_with(state, problem, params, &draw)
}

/// One round of the template iteration for an already realized draw.
///
/// When every `C^k_m` is the identity the search direction `h^k + d^{k+1}`
/// is formed directly as `(1/M) Σ ∇F_m(x^k)`, and when `R^k` is the identity
/// with `ρ = 1` the iterate is set to `x̃^{k+1}`.
pub fn murana_step_with<P: Objective + ?Sized>(
    state: &mut MuranaState,
    problem: &P,
    params: &MuranaParams,
    draw: &RoundDraw,
) -> Result<StepInfo> {
    let m_count = problem.num_components();
    let dim = problem.dim();
    if draw.c.len() != m_count || draw.u.len() != m_count {
        return Err(Error::DimensionMismatch { expected: m_count, got: draw.c.len() });
    }
    if state.x.len() != dim {
        return Err(Error::DimensionMismatch { expected: dim, got: state.x.len() });
    }
    let lambda = params.lambda;
    let c_identity = draw.c.is_identity();
    let x_old = state.x.clone();
    let mut memo = GradMemo::new(problem, &x_old);

    let (direction, h_avg_next, dirty) = match &mut state.h {
        ControlVariates::Table(table) => {
            if table.len() != m_count {
                return Err(Error::DimensionMismatch { expected: m_count, got: table.len() });
            }
            let mut d_sum = Vector::zeros(dim);
            let mut u_sum = Vector::zeros(dim);
            let mut all_reset = true;
            let mut touched = Vec::new();
            for m in 0..m_count {
                let (ca, ua) = (draw.c.action(m), draw.u.action(m));
                if ca.is_skip() && ua.is_skip() {
                    all_reset = false;
                    continue;
                }
                let g = memo.get(m)?.clone();
                let diff = &g - &table[m];
                if !c_identity && !ca.is_skip() {
                    d_sum += ca.apply_to(&diff);
                }
                if ua.is_skip() {
                    all_reset = false;
                    continue;
                }
                let u = ua.apply_to(&diff);
                if resets(lambda, ua) {
                    table[m] = g;
                } else {
                    all_reset = false;
                    table[m] += &u * lambda;
                }
                u_sum += u;
                touched.push(m);
            }
            let direction = if c_identity {
                memo.average()?
            } else {
                &state.h_avg + d_sum / m_count as f64
            };
            let h_next = if all_reset {
                memo.average()?
            } else {
                &state.h_avg + u_sum * (lambda / m_count as f64)
            };
            (direction, h_next, Dirty::Indices(touched))
        }
        ControlVariates::Anchor(y) => {
            let reset = match draw.u.uniformity() {
                Uniformity::AllSkip => false,
                Uniformity::AllScale(_) if resets(lambda, draw.u.action(0)) => true,
                _ => {
                    return Err(Error::InvalidVariant(
                        "anchor-based control variates need U to either skip every component or refresh all of them (λ·s = 1)".into(),
                    ))
                }
            };
            let direction = if c_identity {
                memo.average()?
            } else {
                let mut d_sum = Vector::zeros(dim);
                for m in 0..m_count {
                    let ca = draw.c.action(m);
                    if ca.is_skip() {
                        continue;
                    }
                    let h_m = problem.grad_component(m, y)?;
                    memo.calls += 1;
                    d_sum += ca.apply_to(&(memo.get(m)? - h_m));
                }
                &state.h_avg + d_sum / m_count as f64
            };
            if reset {
                *y = x_old.clone();
                (direction, memo.average()?, Dirty::All)
            } else {
                (direction, state.h_avg.clone(), Dirty::Clean)
            }
        }
    };
    let calls = memo.calls;

    let x_tilde = prox(problem.regularizer(), params.gamma, &gradient_point(&x_old, &direction, params.gamma))?;
    state.x = apply_model_update(&x_old, x_tilde, &draw.r, params.rho);
    state.h_avg = h_avg_next;
    state.round += 1;
    state.dirty = dirty;
    state.check_finite()?;
    Ok(StepInfo { grad_calls: calls })
}

/// `x + ρ R(x̃ − x)`, or `x̃` itself when `R` is the identity and `ρ = 1`.
pub(crate) fn apply_model_update(x: &Vector, x_tilde: Vector, r: &Action, rho: f64) -> Vector {
    if r.is_identity() && rho == 1.0 {
        x_tilde
    } else {
        x + r.apply_to(&(x_tilde - x)) * rho
    }
}
