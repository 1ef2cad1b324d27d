//! The template iteration, its specializations and the run driver.

mod direct;
mod run;
mod state;
mod step;
mod variant;

pub use direct::{diana_pp_step, elvira_step, lsvrg_step, prox_gd_step, saga_step};
pub use run::{
    lyapunov_value, run, step_variant, Engine, IterationRecord, LyapunovEvaluator, Monitor, RunSpec, Trajectory,
};
pub use state::{ControlVariates, H0Policy, MuranaParams, MuranaState, StoreKind};
pub(crate) use state::Dirty;
pub use step::{draw_round, murana_step, murana_step_with, RoundDraw, StepInfo};
pub use variant::{specialize, COperator, HWeight, OperatorPlan, Specialization, UOperator, VariantSpec};

#[cfg(test)]
mod tests;
