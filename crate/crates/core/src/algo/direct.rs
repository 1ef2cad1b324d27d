//! Direct transcriptions of the specialized algorithms, independent of the
//! template machinery. They share the stream addresses used by
//! [`specialize`](super::specialize), so both sides see the same subsets,
//! coins and masks.

use super::state::{gradient_point, ControlVariates, Dirty, MuranaParams, MuranaState};
use super::step::{apply_model_update, StepInfo};
use crate::error::{Error, Result};
use crate::ops::{compose_tags, draw_coin, draw_subset, realize_model, realize_tagged, OperatorSpec};
use crate::problem::{prox, Objective, Vector};
use crate::rng::{Component, RandomStream, Role};

fn table_mut(state: &mut MuranaState) -> Result<&mut Vec<Vector>> {
    match &mut state.h {
        ControlVariates::Table(t) => Ok(t),
        ControlVariates::Anchor(_) => Err(Error::InvalidVariant("this algorithm needs an explicit control-variate table".into())),
    }
}

fn anchor_of(state: &MuranaState) -> Result<Vector> {
    state
        .anchor()
        .cloned()
        .ok_or_else(|| Error::InvalidVariant("this algorithm needs an anchor point".into()))
}

fn check_sampling(n: usize, m_count: usize) -> Result<()> {
    if n == 0 || n > m_count {
        return Err(Error::InvalidVariant(format!("sampling size must satisfy 1 <= N <= M = {m_count}, got N = {n}")));
    }
    Ok(())
}

fn finish(state: &mut MuranaState, x: Vector, h_avg: Vector, dirty: Dirty) -> Result<()> {
    state.x = x;
    state.h_avg = h_avg;
    state.round += 1;
    state.dirty = dirty;
    state.check_finite()
}

/// `x^{k+1} = prox_{γR}(x^k − γ ∇F(x^k))`. The table is refreshed to the
/// current gradients.
pub fn prox_gd_step<P: Objective + ?Sized>(state: &mut MuranaState, problem: &P, gamma: f64) -> Result<StepInfo> {
    let m_count = problem.num_components();
    let x = state.x.clone();
    let grads = (0..m_count).map(|m| problem.grad_component(m, &x)).collect::<Result<Vec<_>>>()?;
    let mut sum = Vector::zeros(problem.dim());
    for g in &grads {
        sum += g;
    }
    let grad = sum / m_count as f64;
    let x_next = prox(problem.regularizer(), gamma, &gradient_point(&x, &grad, gamma))?;
    *table_mut(state)? = grads;
    finish(state, x_next, grad, Dirty::All)?;
    Ok(StepInfo { grad_calls: m_count as u64 })
}

/// Minibatch-SAGA: refresh the sampled table entries and step along
/// `h^k + (1/N) Σ_{m∈Ω} (∇F_m(x^k) − h_m^k)`.
pub fn saga_step<P: Objective + ?Sized>(
    state: &mut MuranaState,
    problem: &P,
    n: usize,
    gamma: f64,
    stream: &RandomStream,
) -> Result<StepInfo> {
    let m_count = problem.num_components();
    check_sampling(n, m_count)?;
    let k = state.round;
    let x = state.x.clone();
    let omega = draw_subset(stream, Role::C, k, m_count, n, 0);
    let table = table_mut(state)?;
    let mut diff_sum = Vector::zeros(problem.dim());
    for &m in &omega {
        let g = problem.grad_component(m, &x)?;
        diff_sum += &g - &table[m];
        table[m] = g;
    }
    let d = diff_sum / n as f64;
    let x_next = prox(problem.regularizer(), gamma, &gradient_point(&x, &(&state.h_avg + &d), gamma))?;
    let h_next = &state.h_avg + d * (n as f64 / m_count as f64);
    finish(state, x_next, h_next, Dirty::Indices(omega))?;
    Ok(StepInfo { grad_calls: n as u64 })
}

fn sampled_difference<P: Objective + ?Sized>(problem: &P, omega: &[usize], x: &Vector, y: &Vector) -> Result<Vector> {
    let mut sum = Vector::zeros(problem.dim());
    for &m in omega {
        sum += problem.grad_component(m, x)? - problem.grad_component(m, y)?;
    }
    Ok(sum / omega.len() as f64)
}

/// Minibatch-L-SVRG with loopless anchor refresh of probability `p`.
pub fn lsvrg_step<P: Objective + ?Sized>(
    state: &mut MuranaState,
    problem: &P,
    n: usize,
    p: f64,
    gamma: f64,
    stream: &RandomStream,
) -> Result<StepInfo> {
    let m_count = problem.num_components();
    check_sampling(n, m_count)?;
    let k = state.round;
    let x = state.x.clone();
    let y = anchor_of(state)?;
    let omega = draw_subset(stream, Role::C, k, m_count, n, 0);
    let d = sampled_difference(problem, &omega, &x, &y)?;
    let mut calls = 2 * n as u64;
    let x_next = prox(problem.regularizer(), gamma, &gradient_point(&x, &(&state.h_avg + d), gamma))?;
    if draw_coin(stream, Role::U, k, Component::Joint, 0, p) {
        let h_next = problem.grad_full(&x)?;
        calls += m_count as u64;
        state.h = ControlVariates::Anchor(x);
        finish(state, x_next, h_next, Dirty::All)?;
    } else {
        let h = state.h_avg.clone();
        finish(state, x_next, h, Dirty::Clean)?;
    }
    Ok(StepInfo { grad_calls: calls })
}

/// ELVIRA: a full gradient pass is used in the very round it is computed.
pub fn elvira_step<P: Objective + ?Sized>(
    state: &mut MuranaState,
    problem: &P,
    n: usize,
    p: f64,
    gamma: f64,
    stream: &RandomStream,
) -> Result<StepInfo> {
    let m_count = problem.num_components();
    check_sampling(n, m_count)?;
    let k = state.round;
    let x = state.x.clone();
    let y = anchor_of(state)?;
    if draw_coin(stream, Role::U, k, Component::Joint, 0, p) {
        let h_next = problem.grad_full(&x)?;
        let x_next = prox(problem.regularizer(), gamma, &gradient_point(&x, &h_next, gamma))?;
        state.h = ControlVariates::Anchor(x);
        finish(state, x_next, h_next, Dirty::All)?;
        Ok(StepInfo { grad_calls: m_count as u64 })
    } else {
        let omega = draw_subset(stream, Role::C, k, m_count, n, 0);
        let d = sampled_difference(problem, &omega, &x, &y)?;
        let x_next = prox(problem.regularizer(), gamma, &gradient_point(&x, &(&state.h_avg + d), gamma))?;
        let h = state.h_avg.clone();
        finish(state, x_next, h, Dirty::Clean)?;
        Ok(StepInfo { grad_calls: 2 * n as u64 })
    }
}

/// DIANA with partial participation. Participating workers send
/// `d_m = (M/N)·C_m(∇F_m(x^k) − h_m^k)`, which keeps `d^{k+1}` unbiased;
/// the master compresses the model update with `r_spec`.
pub fn diana_pp_step<P: Objective + ?Sized>(
    state: &mut MuranaState,
    problem: &P,
    n: usize,
    compressor: &OperatorSpec,
    r_spec: &OperatorSpec,
    params: &MuranaParams,
    stream: &RandomStream,
) -> Result<StepInfo> {
    let m_count = problem.num_components();
    let dim = problem.dim();
    check_sampling(n, m_count)?;
    let k = state.round;
    let x = state.x.clone();
    let (inner_tag, outer_tag) = compose_tags(0);
    let omega = draw_subset(stream, Role::C, k, m_count, n, outer_tag);
    let compression = realize_tagged(compressor, stream, Role::C, k, m_count, dim, inner_tag);
    let scale = m_count as f64 / n as f64;
    let lambda = params.lambda;
    let table = table_mut(state)?;
    let mut d_sum = Vector::zeros(dim);
    let mut calls = 0u64;
    let mut touched = Vec::with_capacity(n);
    for &m in &omega {
        let action = compression.action(m);
        if action.is_skip() {
            continue;
        }
        let g = problem.grad_component(m, &x)?;
        calls += 1;
        let d_m = action.apply_to(&(g - &table[m])) * scale;
        table[m] += &d_m * lambda;
        d_sum += d_m;
        touched.push(m);
    }
    let d = d_sum / m_count as f64;
    let x_tilde = prox(problem.regularizer(), params.gamma, &gradient_point(&x, &(&state.h_avg + &d), params.gamma))?;
    let h_next = &state.h_avg + d * lambda;
    let r = realize_model(r_spec, stream, k, dim);
    let x_next = apply_model_update(&x, x_tilde, &r, params.rho);
    finish(state, x_next, h_next, Dirty::Indices(touched))?;
    Ok(StepInfo { grad_calls: calls })
}
