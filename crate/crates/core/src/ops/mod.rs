//! Unbiased stochastic operator ensembles and their gain algebra.
//!
//! An [`OperatorSpec`] describes a random operator family, a realization
//! ([`EnsembleRealization`]) is one joint draw across all components, made of
//! linear [`Action`]s. Actions never hold output vectors: a `Skip` action
//! guarantees its argument is never evaluated.

mod gains;
mod realize;
mod spec;
mod validate;

pub use gains::{
    gains_bernoulli, gains_compose_average, gains_compose_marginal, gains_nice, gains_rand_k,
    GainTriple, Independence,
};
pub use realize::{
    compose_tags, draw_coin, draw_mask, draw_subset, realize, realize_model, realize_tagged,
    Action, EnsembleRealization, Uniformity,
};
pub use spec::{OperatorKind, OperatorSpec, Scope};
pub use validate::{
    brute_force_gains, enumerate_outcomes, validate_unbiased, validate_variance_bounds,
    BruteForceReport, Outcome, UnbiasedReport, UnbiasedViolation, VarianceCheck, VarianceReport,
    ENUMERATION_LIMIT,
};
