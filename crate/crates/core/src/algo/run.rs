use super::direct::{diana_pp_step, elvira_step, lsvrg_step, prox_gd_step, saga_step};
use super::state::{ControlVariates, Dirty, H0Policy, MuranaParams, MuranaState};
use super::step::{murana_step, StepInfo};
use super::variant::{specialize, Specialization, VariantSpec};
use crate::error::{Error, Result};
use crate::problem::{Objective, Solution, Vector};
use crate::rng::RandomStream;

/// Metrics of one recorded round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub round: usize,
    /// `‖x^k − x^⋆‖²`; NaN when the run has no monitor.
    pub x_error_sq: f64,
    /// `Ψ^k`; NaN when the run has no monitor.
    pub lyapunov: f64,
    /// Cumulative gradient evaluations, initialization included.
    pub gradient_calls: u64,
    pub comm_floats_up: u64,
    pub comm_floats_down: u64,
}

/// Whether named variants run through the template or their own listing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Engine {
    /// The generic template step under [`specialize`].
    Generic,
    /// The variant's direct implementation (generic for `GenericMurana`).
    /// Direct listings use their canonical `λ` and `ρ`; only `γ` is read
    /// from the parameters, except for DIANA-PP which reads all three.
    #[default]
    Direct,
}

/// Reference point and Lyapunov weight for the recorded metrics.
#[derive(Debug, Clone, Copy)]
pub struct Monitor<'a> {
    pub solution: &'a Solution,
    /// Factor in front of `Σ_m ‖h_m − h_m^⋆‖²` in `Ψ`.
    pub h_multiplier: f64,
}

/// Incremental evaluator of `Ψ^k = ‖x^k − x^⋆‖² + w·Σ_m ‖h_m^k − h_m^⋆‖²`.
///
/// Per-component distances are cached and only recomputed for control
/// variates the last step touched, so it must see consecutive rounds to
/// benefit; any gap triggers a full recomputation.
#[derive(Debug, Clone)]
pub struct LyapunovEvaluator<'a> {
    monitor: Monitor<'a>,
    per_component: Vec<f64>,
    last_round: Option<usize>,
}

impl<'a> LyapunovEvaluator<'a> {
    pub fn new(monitor: Monitor<'a>) -> Self {
        Self { monitor, per_component: Vec::new(), last_round: None }
    }

    pub fn x_error_sq(&self, state: &MuranaState) -> f64 {
        (&state.x - &self.monitor.solution.x_star).norm_squared()
    }

    /// `(‖x^k − x^⋆‖², Ψ^k)`.
    pub fn evaluate<P: Objective + ?Sized>(&mut self, problem: &P, state: &MuranaState) -> Result<(f64, f64)> {
        let x_err = self.x_error_sq(state);
        if self.monitor.h_multiplier == 0.0 {
            return Ok((x_err, x_err));
        }
        let star = &self.monitor.solution.h_star_components;
        if star.len() != problem.num_components() {
            return Err(Error::DimensionMismatch { expected: problem.num_components(), got: star.len() });
        }
        let consecutive = match self.last_round {
            Some(r) => state.round == r || state.round == r + 1,
            None => false,
        };
        let dirty = if !consecutive || self.per_component.len() != star.len() {
            &Dirty::All
        } else if Some(state.round) == self.last_round {
            &Dirty::Clean
        } else {
            &state.dirty
        };
        match dirty {
            Dirty::Clean => {}
            Dirty::All => {
                self.per_component = match &state.h {
                    ControlVariates::Table(t) => {
                        t.iter().zip(star).map(|(h, s)| (h - s).norm_squared()).collect()
                    }
                    ControlVariates::Anchor(y) => (0..star.len())
                        .map(|m| Ok((problem.grad_component(m, y)? - &star[m]).norm_squared()))
                        .collect::<Result<Vec<_>>>()?,
                };
            }
            Dirty::Indices(idx) => {
                for &m in idx {
                    let h = state.h_component(problem, m)?;
                    self.per_component[m] = (h - &star[m]).norm_squared();
                }
            }
        }
        self.last_round = Some(state.round);
        let h_dist: f64 = self.per_component.iter().sum();
        Ok((x_err, x_err + self.monitor.h_multiplier * h_dist))
    }
}

/// One-shot `Ψ` for an arbitrary state.
pub fn lyapunov_value<P: Objective + ?Sized>(problem: &P, state: &MuranaState, monitor: Monitor<'_>) -> Result<f64> {
    LyapunovEvaluator::new(monitor).evaluate(problem, state).map(|(_, psi)| psi)
}

/// Everything [`run`] needs besides the problem.
#[derive(Debug, Clone)]
pub struct RunSpec<'a> {
    pub variant: VariantSpec,
    pub params: MuranaParams,
    pub x0: Vector,
    pub h0: H0Policy,
    pub rounds: usize,
    pub seed: u64,
    pub engine: Engine,
    pub monitor: Option<Monitor<'a>>,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    /// Records for rounds `0..=K`.
    pub records: Vec<IterationRecord>,
    pub final_state: MuranaState,
    pub specialization: Specialization,
}

/// Advances `state` by one round of `variant`.
pub fn step_variant<P: Objective + ?Sized>(
    variant: &VariantSpec,
    spec: &Specialization,
    engine: Engine,
    state: &mut MuranaState,
    problem: &P,
    params: &MuranaParams,
    stream: &RandomStream,
) -> Result<StepInfo> {
    if engine == Engine::Generic {
        return murana_step(state, problem, params, &spec.plan, stream);
    }
    match variant {
        VariantSpec::GenericMurana { .. } => murana_step(state, problem, params, &spec.plan, stream),
        VariantSpec::ProxGD => prox_gd_step(state, problem, params.gamma),
        VariantSpec::MinibatchSaga { n } => saga_step(state, problem, *n, params.gamma, stream),
        VariantSpec::MinibatchLsvrg { n, p } => lsvrg_step(state, problem, *n, *p, params.gamma, stream),
        VariantSpec::Elvira { n, p } => elvira_step(state, problem, *n, *p, params.gamma, stream),
        VariantSpec::DianaPP { n, compressor, r } => diana_pp_step(state, problem, *n, compressor, r, params, stream),
    }
}

/// Runs `spec.rounds` rounds and records every round `0..=K`.
pub fn run<P: Objective + ?Sized>(problem: &P, spec: &RunSpec<'_>) -> Result<Trajectory> {
    spec.params.validate()?;
    let specialization = specialize(&spec.variant, problem.num_components(), problem.dim())?;
    let (mut state, mut calls) = MuranaState::initialize(problem, spec.x0.clone(), &spec.h0, specialization.store)?;
    state.check_finite()?;
    let stream = RandomStream::new(spec.seed);
    let mut evaluator = spec.monitor.map(LyapunovEvaluator::new);
    let mut records = Vec::with_capacity(spec.rounds + 1);
    let mut record = |state: &MuranaState, calls: u64| -> Result<()> {
        let (x_error_sq, lyapunov) = match evaluator.as_mut() {
            Some(e) => e.evaluate(problem, state)?,
            None => (f64::NAN, f64::NAN),
        };
        records.push(IterationRecord {
            round: state.round,
            x_error_sq,
            lyapunov,
            gradient_calls: calls,
            comm_floats_up: 0,
            comm_floats_down: 0,
        });
        Ok(())
    };
    record(&state, calls)?;
    for _ in 0..spec.rounds {
        let info = step_variant(&spec.variant, &specialization, spec.engine, &mut state, problem, &spec.params, &stream)?;
        calls += info.grad_calls;
        record(&state, calls)?;
    }
    Ok(Trajectory { records, final_state: state, specialization })
}
