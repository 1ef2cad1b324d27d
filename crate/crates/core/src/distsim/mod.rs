//! Synchronous in-process simulation of the client-server form of the
//! template: workers hold their control variates and a local model copy,
//! the master aggregates compressed messages and broadcasts compressed
//! model updates.

mod ledger;

use rayon::prelude::*;

pub use ledger::{write_ledger_csv, CommLedger, RoundComm};

use crate::algo::{
    draw_round, specialize, H0Policy, IterationRecord, LyapunovEvaluator, Monitor, MuranaParams, MuranaState,
    OperatorPlan, RunSpec, StoreKind, UOperator, VariantSpec,
};
use crate::error::{Error, Result};
use crate::ops::{compose_tags, draw_subset, realize_model, realize_tagged, Action, OperatorSpec};
use crate::problem::{prox, Objective, Vector};
use crate::rng::{RandomStream, Role};

/// `(floats, indices)` on the wire for a payload produced by `action` in
/// dimension `dim`.
pub fn comm_cost(action: &Action, dim: usize) -> (u64, u64) {
    match action {
        Action::Skip => (0, 0),
        Action::Scale(_) => (dim as u64, 0),
        Action::Masked { indices, .. } => (indices.len() as u64, indices.len() as u64),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorkerState {
    pub m: usize,
    /// Local copy of `x^k`.
    pub x_local: Vector,
    pub h_m: Vector,
    /// Last model update received.
    pub last_r: Vector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MasterState {
    pub x: Vector,
    pub h: Vector,
    /// Compressed model update `r^k` awaiting broadcast.
    pub r: Vector,
    pub round: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Direction {
    /// Worker to master. `u` is `None` when the payload is shared with `d`.
    Up { from: usize, d: Option<Vector>, u: Option<Vector> },
    Down { r: Vector },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub direction: Direction,
    pub floats: u64,
    pub indices: u64,
}

/// How the model update reaches the workers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Downlink {
    /// One payload on a shared channel.
    #[default]
    Broadcast,
    /// One payload per worker.
    Unicast,
}

/// Which listing the round follows.
#[derive(Debug, Clone, PartialEq)]
pub enum Protocol {
    /// Every worker evaluates its own `C_m`, `U_m`.
    Template(OperatorPlan),
    /// `N` sampled workers send compressed, rescaled differences; the rest
    /// only apply the broadcast.
    PartialParticipation { n: usize, compressor: OperatorSpec, r: OperatorSpec },
}

impl Protocol {
    pub fn for_variant(variant: &VariantSpec, num_components: usize, dim: usize) -> Result<Self> {
        match variant {
            VariantSpec::DianaPP { n, compressor, r } => {
                specialize(variant, num_components, dim)?;
                Ok(Protocol::PartialParticipation { n: *n, compressor: compressor.clone(), r: r.clone() })
            }
            _ => Ok(Protocol::Template(specialize(variant, num_components, dim)?.plan)),
        }
    }
}

/// Outcome of one simulated round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundOutcome {
    pub comm: RoundComm,
    pub grad_calls: u64,
    pub messages: Vec<Message>,
}

struct WorkerReply {
    message: Option<Message>,
    d: Option<Vector>,
    u: Option<Vector>,
    grad_calls: u64,
}

impl WorkerState {
    fn apply_broadcast(&mut self, r: &Vector, rho: f64) {
        self.x_local = &self.x_local + r * rho;
        self.last_r = r.clone();
    }

    fn template_update<P: Objective + ?Sized>(
        &mut self,
        problem: &P,
        c: &Action,
        u: &Action,
        shared: bool,
        lambda: f64,
        dim: usize,
    ) -> Result<WorkerReply> {
        if c.is_skip() && u.is_skip() {
            return Ok(WorkerReply { message: None, d: None, u: None, grad_calls: 0 });
        }
        let diff = problem.grad_component(self.m, &self.x_local)? - &self.h_m;
        let d = (!c.is_skip()).then(|| c.apply_to(&diff));
        let u_vec = (!u.is_skip()).then(|| u.apply_to(&diff));
        if let Some(u_vec) = &u_vec {
            self.h_m += u_vec * lambda;
        }
        let (mut floats, mut indices) = comm_cost(c, dim);
        if !shared {
            let (f, i) = comm_cost(u, dim);
            floats += f;
            indices += i;
        }
        let message = Message {
            direction: Direction::Up { from: self.m, d: d.clone(), u: if shared { None } else { u_vec.clone() } },
            floats,
            indices,
        };
        Ok(WorkerReply { message: Some(message), d, u: u_vec, grad_calls: 1 })
    }

    fn participation_update<P: Objective + ?Sized>(
        &mut self,
        problem: &P,
        action: &Action,
        scale: f64,
        lambda: f64,
        dim: usize,
    ) -> Result<WorkerReply> {
        if action.is_skip() {
            return Ok(WorkerReply { message: None, d: None, u: None, grad_calls: 0 });
        }
        let g = problem.grad_component(self.m, &self.x_local)?;
        let d_m = action.apply_to(&(g - &self.h_m)) * scale;
        self.h_m += &d_m * lambda;
        let (floats, indices) = comm_cost(action, dim);
        let message = Message { direction: Direction::Up { from: self.m, d: Some(d_m.clone()), u: None }, floats, indices };
        Ok(WorkerReply { message: Some(message), d: Some(d_m), u: None, grad_calls: 1 })
    }
}

/// Builds the master and worker states for round 0.
pub fn initialize<P: Objective + ?Sized>(
    problem: &P,
    x0: &Vector,
    h0: &H0Policy,
) -> Result<(MasterState, Vec<WorkerState>, u64)> {
    let (state, calls) = MuranaState::initialize(problem, x0.clone(), h0, StoreKind::Table)?;
    let hs = state.h_components(problem)?;
    let workers = hs
        .into_iter()
        .enumerate()
        .map(|(m, h_m)| WorkerState { m, x_local: x0.clone(), h_m, last_r: Vector::zeros(x0.len()) })
        .collect();
    let master = MasterState { x: x0.clone(), h: state.h_avg, r: Vector::zeros(x0.len()), round: 0 };
    Ok((master, workers, calls))
}

/// Executes round `master.round`: broadcast of `r^k`, worker updates,
/// conveyance, aggregation, prox and compression of the new model update.
pub fn simulate_round<P: Objective + ?Sized>(
    master: &mut MasterState,
    workers: &mut [WorkerState],
    problem: &P,
    params: &MuranaParams,
    protocol: &Protocol,
    stream: &RandomStream,
    downlink: Downlink,
) -> Result<RoundOutcome> {
    let m_count = problem.num_components();
    let dim = problem.dim();
    if workers.len() != m_count {
        return Err(Error::Protocol(format!("expected {m_count} workers, found {}", workers.len())));
    }
    let k = master.round;

    let r = master.r.clone();
    workers.par_iter_mut().for_each(|w| w.apply_broadcast(&r, params.rho));
    if let Some(w) = workers.iter().find(|w| w.x_local != master.x) {
        return Err(Error::Protocol(format!("worker {} holds a model copy that differs from the master's at round {k}", w.m)));
    }

    let (replies, r_action) = match protocol {
        Protocol::Template(plan) => {
            let draw = draw_round(plan, stream, k, m_count, dim);
            let shared = plan.u == UOperator::SharedWithC;
            let replies = workers
                .par_iter_mut()
                .map(|w| {
                    let m = w.m;
                    w.template_update(problem, draw.c.action(m), draw.u.action(m), shared, params.lambda, dim)
                })
                .collect::<Result<Vec<_>>>()?;
            (replies, draw.r)
        }
        Protocol::PartialParticipation { n, compressor, r } => {
            let (inner_tag, outer_tag) = compose_tags(0);
            let omega = draw_subset(stream, Role::C, k, m_count, *n, outer_tag);
            let compression = realize_tagged(compressor, stream, Role::C, k, m_count, dim, inner_tag);
            let scale = m_count as f64 / *n as f64;
            let replies = workers
                .par_iter_mut()
                .map(|w| {
                    if omega.binary_search(&w.m).is_ok() {
                        w.participation_update(problem, compression.action(w.m), scale, params.lambda, dim)
                    } else {
                        Ok(WorkerReply { message: None, d: None, u: None, grad_calls: 0 })
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            (replies, realize_model(r, stream, k, dim))
        }
    };

    let mut d_sum = Vector::zeros(dim);
    let mut u_sum = Vector::zeros(dim);
    let mut comm = RoundComm { round: k, ..RoundComm::default() };
    let mut grad_calls = 0;
    let mut messages = Vec::new();
    // Partial participation updates h with the sent difference itself.
    let partial = matches!(protocol, Protocol::PartialParticipation { .. });
    for reply in replies {
        grad_calls += reply.grad_calls;
        if let Some(d) = &reply.d {
            d_sum += d;
        }
        if let Some(u) = &reply.u {
            u_sum += u;
        }
        if let Some(msg) = reply.message {
            comm.up_floats += msg.floats;
            comm.up_indices += msg.indices;
            comm.participants += 1;
            messages.push(msg);
        }
    }
    let mf = m_count as f64;
    let d = d_sum / mf;
    let x_tilde = prox(problem.regularizer(), params.gamma, &(&master.x - (&master.h + &d) * params.gamma))?;
    master.h = if partial { &master.h + &d * params.lambda } else { &master.h + u_sum * (params.lambda / mf) };
    let r_next = r_action.apply_to(&(x_tilde - &master.x));
    master.x = &master.x + &r_next * params.rho;
    master.r = r_next;
    master.round += 1;

    let (floats, indices) = comm_cost(&r_action, dim);
    let copies = match downlink {
        Downlink::Broadcast => 1,
        Downlink::Unicast => m_count as u64,
    };
    comm.down_floats = floats * copies;
    comm.down_indices = indices * copies;
    messages.push(Message { direction: Direction::Down { r: master.r.clone() }, floats: comm.down_floats, indices: comm.down_indices });

    if !master.x.iter().chain(master.h.iter()).all(|v| v.is_finite()) {
        return Err(Error::Diverged { round: master.round });
    }
    Ok(RoundOutcome { comm, grad_calls, messages })
}

/// Result of [`run_distributed`].
#[derive(Debug, Clone)]
pub struct DistributedRun {
    pub records: Vec<IterationRecord>,
    pub ledger: CommLedger,
    pub master: MasterState,
    pub workers: Vec<WorkerState>,
    /// `true` when one payload carried both `d_m` and `u_m`.
    pub shared_payload: bool,
}

fn snapshot(master: &MasterState, workers: &[WorkerState]) -> MuranaState {
    MuranaState {
        x: master.x.clone(),
        h: crate::algo::ControlVariates::Table(workers.iter().map(|w| w.h_m.clone()).collect()),
        h_avg: master.h.clone(),
        round: master.round,
        dirty: crate::algo::Dirty::All,
    }
}

/// Distributed counterpart of [`run`](crate::algo::run). `spec.engine` is
/// ignored; named variants follow the template protocol except DIANA-PP,
/// which follows its partial-participation listing.
pub fn run_distributed<P: Objective + ?Sized>(problem: &P, spec: &RunSpec<'_>, downlink: Downlink) -> Result<DistributedRun> {
    spec.params.validate()?;
    let m_count = problem.num_components();
    let dim = problem.dim();
    let specialization = specialize(&spec.variant, m_count, dim)?;
    if specialization.store == StoreKind::Anchor && spec.h0 != H0Policy::GradAtX0 {
        return Err(Error::InvalidVariant("anchor-based control variates require h_m^0 = ∇F_m(x^0)".into()));
    }
    let protocol = Protocol::for_variant(&spec.variant, m_count, dim)?;
    let shared_payload = match &protocol {
        Protocol::Template(plan) => plan.u == UOperator::SharedWithC,
        Protocol::PartialParticipation { .. } => true,
    };
    let (mut master, mut workers, mut calls) = initialize(problem, &spec.x0, &spec.h0)?;
    let stream = RandomStream::new(spec.seed);
    let mut ledger = CommLedger::default();
    let mut records = Vec::with_capacity(spec.rounds + 1);
    let monitor: Option<Monitor<'_>> = spec.monitor;
    let mut push = |master: &MasterState, workers: &[WorkerState], calls: u64, ledger: &CommLedger| -> Result<()> {
        let (x_error_sq, lyapunov) = match monitor {
            Some(mon) => LyapunovEvaluator::new(mon).evaluate(problem, &snapshot(master, workers))?,
            None => (f64::NAN, f64::NAN),
        };
        records.push(IterationRecord {
            round: master.round,
            x_error_sq,
            lyapunov,
            gradient_calls: calls,
            comm_floats_up: ledger.totals.up_floats,
            comm_floats_down: ledger.totals.down_floats,
        });
        Ok(())
    };
    push(&master, &workers, calls, &ledger)?;
    for _ in 0..spec.rounds {
        let outcome = simulate_round(&mut master, &mut workers, problem, &spec.params, &protocol, &stream, downlink)?;
        calls += outcome.grad_calls;
        ledger.push(outcome.comm);
        push(&master, &workers, calls, &ledger)?;
    }
    Ok(DistributedRun { records, ledger, master, workers, shared_payload })
}

#[cfg(test)]
mod tests;
