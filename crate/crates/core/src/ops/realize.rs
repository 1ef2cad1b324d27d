use rand::seq::index::sample;
use rand::Rng;

use super::spec::{OperatorKind, OperatorSpec, Scope};
use crate::error::Result;
use crate::problem::Vector;
use crate::rng::{Component, RandomStream, Role};

/// One realized linear action `v ↦ C(v)`.
#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    /// Output is zero; the argument is never needed.
    Skip,
    Scale(f64),
    /// `scale · v` restricted to the (sorted) coordinates in `indices`.
    Masked { scale: f64, indices: Vec<usize> },
}

impl Action {
    pub fn is_skip(&self) -> bool {
        matches!(self, Action::Skip)
    }

    pub fn is_identity(&self) -> bool {
        matches!(self, Action::Scale(s) if *s == 1.0)
    }

    /// Applies the action to a concrete vector; `Skip` yields zeros.
    pub fn apply_to(&self, v: &Vector) -> Vector {
        match self {
            Action::Skip => Vector::zeros(v.len()),
            Action::Scale(s) => v * *s,
            Action::Masked { scale, indices } => {
                let mut out = Vector::zeros(v.len());
                for &i in indices {
                    out[i] = v[i] * scale;
                }
                out
            }
        }
    }

    /// Applies the action to a deferred argument. On `Skip` the producer is
    /// not called and `None` is returned.
    pub fn apply<F>(&self, producer: F) -> Result<Option<Vector>>
    where
        F: FnOnce() -> Result<Vector>,
    {
        if self.is_skip() {
            return Ok(None);
        }
        Ok(Some(self.apply_to(&producer()?)))
    }

    /// `outer ∘ self`.
    pub fn then(&self, outer: &Action) -> Action {
        match (self, outer) {
            (Action::Skip, _) | (_, Action::Skip) => Action::Skip,
            (Action::Scale(a), Action::Scale(b)) => Action::Scale(a * b),
            (Action::Scale(a), Action::Masked { scale, indices }) | (Action::Masked { scale, indices }, Action::Scale(a)) => {
                Action::Masked { scale: a * scale, indices: indices.clone() }
            }
            (Action::Masked { scale: a, indices: ia }, Action::Masked { scale: b, indices: ib }) => {
                let common: Vec<usize> = ia.iter().copied().filter(|i| ib.binary_search(i).is_ok()).collect();
                if common.is_empty() {
                    Action::Skip
                } else {
                    Action::Masked { scale: a * b, indices: common }
                }
            }
        }
    }
}

/// Shape of a realization across components.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Uniformity {
    AllSkip,
    /// Every component scaled by the same factor, no masks.
    AllScale(f64),
    Mixed,
}

/// One joint draw of an operator ensemble for round `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleRealization {
    pub round: usize,
    pub actions: Vec<Action>,
}

impl EnsembleRealization {
    pub fn action(&self, m: usize) -> &Action {
        &self.actions[m]
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn is_identity(&self) -> bool {
        self.actions.iter().all(Action::is_identity)
    }

    pub fn active_count(&self) -> usize {
        self.actions.iter().filter(|a| !a.is_skip()).count()
    }

    pub fn uniformity(&self) -> Uniformity {
        let Some(first) = self.actions.first() else {
            return Uniformity::AllSkip;
        };
        match first {
            Action::Skip if self.actions.iter().all(Action::is_skip) => Uniformity::AllSkip,
            Action::Scale(s) if self.actions.iter().all(|a| *a == Action::Scale(*s)) => Uniformity::AllScale(*s),
            _ => Uniformity::Mixed,
        }
    }
}

/// Tags used for the two halves of a composition realized under `tag`.
pub fn compose_tags(tag: u32) -> (u32, u32) {
    (2 * tag + 1, 2 * tag + 2)
}

/// Uniform size-`n` subset of `0..num_components`, sorted ascending.
pub fn draw_subset(stream: &RandomStream, role: Role, round: usize, num_components: usize, n: usize, tag: u32) -> Vec<usize> {
    let mut rng = stream.rng(round, Component::Joint, role, tag);
    let mut idx = sample(&mut rng, num_components, n).into_vec();
    idx.sort_unstable();
    idx
}

/// `true` with probability `p`.
pub fn draw_coin(stream: &RandomStream, role: Role, round: usize, component: Component, tag: u32, p: f64) -> bool {
    stream.rng(round, component, role, tag).gen::<f64>() < p
}

/// `k` of `dim` coordinates without replacement, sorted ascending.
pub fn draw_mask(stream: &RandomStream, role: Role, round: usize, component: Component, tag: u32, dim: usize, k: usize) -> Vec<usize> {
    let mut rng = stream.rng(round, component, role, tag);
    let mut idx = sample(&mut rng, dim, k).into_vec();
    idx.sort_unstable();
    idx
}

fn component_of(scope: Scope, m: usize) -> Component {
    match scope {
        Scope::PerComponent => Component::Index(m),
        Scope::JointAcrossM | Scope::ModelUpdate => Component::Joint,
    }
}

/// Realizes `spec` for round `round` with the canonical root tag `0`.
pub fn realize(spec: &OperatorSpec, stream: &RandomStream, role: Role, round: usize, num_components: usize, dim: usize) -> EnsembleRealization {
    realize_tagged(spec, stream, role, round, num_components, dim, 0)
}

/// Realizes `spec` under an explicit stream tag. A composition realizes its
/// inner part under `compose_tags(tag).0` and its outer part under
/// `compose_tags(tag).1`.
pub fn realize_tagged(
    spec: &OperatorSpec,
    stream: &RandomStream,
    role: Role,
    round: usize,
    num_components: usize,
    dim: usize,
    tag: u32,
) -> EnsembleRealization {
    let actions = match &spec.kind {
        OperatorKind::Identity => vec![Action::Scale(1.0); num_components],
        OperatorKind::BernoulliSkip(p) => {
            let coin = |m| {
                if draw_coin(stream, role, round, component_of(spec.scope, m), tag, *p) {
                    Action::Scale(1.0 / p)
                } else {
                    Action::Skip
                }
            };
            match spec.scope {
                Scope::PerComponent => (0..num_components).map(coin).collect(),
                _ => vec![coin(0); num_components],
            }
        }
        OperatorKind::RandK(k) => {
            let scale = dim as f64 / *k as f64;
            let mask = |m| Action::Masked {
                scale,
                indices: draw_mask(stream, role, round, component_of(spec.scope, m), tag, dim, *k),
            };
            match spec.scope {
                Scope::PerComponent => (0..num_components).map(mask).collect(),
                _ => vec![mask(0); num_components],
            }
        }
        OperatorKind::NiceSampling(n) => {
            let chosen = draw_subset(stream, role, round, num_components, *n, tag);
            let scale = num_components as f64 / *n as f64;
            let mut actions = vec![Action::Skip; num_components];
            for m in chosen {
                actions[m] = Action::Scale(scale);
            }
            actions
        }
        OperatorKind::Compose(inner, outer) => {
            let (ti, to) = compose_tags(tag);
            let a = realize_tagged(inner, stream, role, round, num_components, dim, ti);
            let b = realize_tagged(outer, stream, role, round, num_components, dim, to);
            a.actions.iter().zip(&b.actions).map(|(x, y)| x.then(y)).collect()
        }
    };
    EnsembleRealization { round, actions }
}

/// Realizes a model-update operator `R^k` as a single action. The operator spec is
/// re-scoped to [`Scope::ModelUpdate`] first, so callers may pass a plain
/// per-component spec.
pub fn realize_model(spec: &OperatorSpec, stream: &RandomStream, round: usize, dim: usize) -> Action {
    let spec = spec.clone().for_model_update();
    realize_tagged(&spec, stream, Role::R, round, 1, dim, 0).actions.pop().expect("one action")
}
