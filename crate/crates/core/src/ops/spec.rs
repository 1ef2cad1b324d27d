use std::fmt;
use std::str::FromStr;

use super::gains::{
    gains_bernoulli, gains_compose_average, gains_compose_marginal, gains_nice, gains_rand_k,
    GainTriple, Independence,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum OperatorKind {
    Identity,
    /// `v/p` with probability `p`, else skip.
    BernoulliSkip(f64),
    /// `k` of `d` coordinates uniformly without replacement, scaled by `d/k`.
    RandK(usize),
    /// Uniform size-`N` subset of components, scaled by `M/N`.
    NiceSampling(usize),
    /// `outer ∘ inner`, the two drawn independently.
    Compose(Box<OperatorSpec>, Box<OperatorSpec>),
}

/// How realizations relate across components.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scope {
    /// Independent draw for every component.
    PerComponent,
    /// One draw shared by, or jointly over, all components.
    JointAcrossM,
    /// A single operator on the model update.
    ModelUpdate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OperatorSpec {
    pub kind: OperatorKind,
    pub scope: Scope,
}

impl OperatorSpec {
    pub fn identity() -> Self {
        Self { kind: OperatorKind::Identity, scope: Scope::PerComponent }
    }

    /// Independent coin per component.
    pub fn bernoulli(p: f64) -> Self {
        Self { kind: OperatorKind::BernoulliSkip(p), scope: Scope::PerComponent }
    }

    /// One coin shared by every component.
    pub fn shared_bernoulli(p: f64) -> Self {
        Self { kind: OperatorKind::BernoulliSkip(p), scope: Scope::JointAcrossM }
    }

    /// Independent coordinate mask per component.
    pub fn rand_k(k: usize) -> Self {
        Self { kind: OperatorKind::RandK(k), scope: Scope::PerComponent }
    }

    pub fn nice(n: usize) -> Self {
        Self { kind: OperatorKind::NiceSampling(n), scope: Scope::JointAcrossM }
    }

    pub fn compose(inner: OperatorSpec, outer: OperatorSpec) -> Self {
        let scope = match (inner.scope, outer.scope) {
            (Scope::ModelUpdate, Scope::ModelUpdate) => Scope::ModelUpdate,
            (Scope::PerComponent, Scope::PerComponent) => Scope::PerComponent,
            _ => Scope::JointAcrossM,
        };
        Self { kind: OperatorKind::Compose(Box::new(inner), Box::new(outer)), scope }
    }

    /// Re-scope a spec (recursively) for use as the model-update operator `R`.
    pub fn for_model_update(mut self) -> Self {
        self.scope = Scope::ModelUpdate;
        if let OperatorKind::Compose(inner, outer) = self.kind {
            self.kind = OperatorKind::Compose(
                Box::new(inner.for_model_update()),
                Box::new(outer.for_model_update()),
            );
        }
        self
    }

    pub fn is_identity(&self) -> bool {
        match &self.kind {
            OperatorKind::Identity => true,
            OperatorKind::BernoulliSkip(p) => *p == 1.0,
            OperatorKind::Compose(i, o) => i.is_identity() && o.is_identity(),
            _ => false,
        }
    }

    /// Checks parameter ranges against `M` components in dimension `d`.
    pub fn validate(&self, num_components: usize, dim: usize) -> Result<()> {
        match &self.kind {
            OperatorKind::Identity => Ok(()),
            OperatorKind::BernoulliSkip(p) => {
                if *p > 0.0 && *p <= 1.0 {
                    Ok(())
                } else {
                    Err(Error::contract(format!("bernoulli probability must be in (0, 1], got {p}")))
                }
            }
            OperatorKind::RandK(k) => {
                if *k >= 1 && *k <= dim {
                    Ok(())
                } else {
                    Err(Error::contract(format!("rand_k needs 1 <= k <= d = {dim}, got k = {k}")))
                }
            }
            OperatorKind::NiceSampling(n) => {
                if self.scope != Scope::JointAcrossM {
                    return Err(Error::contract("nice sampling must be scoped jointly across components"));
                }
                if *n >= 1 && *n <= num_components {
                    Ok(())
                } else {
                    Err(Error::contract(format!(
                        "nice sampling needs 1 <= N <= M = {num_components}, got N = {n}"
                    )))
                }
            }
            OperatorKind::Compose(inner, outer) => {
                if self.scope == Scope::ModelUpdate
                    && (inner.scope != Scope::ModelUpdate || outer.scope != Scope::ModelUpdate)
                {
                    return Err(Error::contract("model-update composition needs model-update parts"));
                }
                inner.validate(num_components, dim)?;
                outer.validate(num_components, dim)
            }
        }
    }

    /// Gain triple of this spec for `M` components in dimension `d`.
    pub fn gains(&self, num_components: usize, dim: usize) -> Result<GainTriple> {
        self.validate(num_components, dim)?;
        let independence = match self.scope {
            Scope::PerComponent => Independence::Independent { num_components },
            Scope::JointAcrossM | Scope::ModelUpdate => Independence::Dependent,
        };
        match &self.kind {
            OperatorKind::Identity => Ok(GainTriple::zero()),
            OperatorKind::BernoulliSkip(p) => gains_bernoulli(*p, independence),
            OperatorKind::RandK(k) => gains_rand_k(*k, dim, independence),
            OperatorKind::NiceSampling(n) => gains_nice(num_components, *n),
            OperatorKind::Compose(inner, outer) => {
                let gi = inner.gains(num_components, dim)?;
                let go = outer.gains(num_components, dim)?;
                if inner.scope == Scope::PerComponent && self.scope != Scope::ModelUpdate {
                    gains_compose_average(gi.marginal, go, num_components)
                } else {
                    GainTriple::convexity_fallback(gains_compose_marginal(gi.marginal, go.marginal))
                }
            }
        }
    }
}

impl fmt::Display for OperatorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            OperatorKind::Identity => write!(f, "identity")?,
            OperatorKind::BernoulliSkip(p) => write!(f, "bernoulli:{p}")?,
            OperatorKind::RandK(k) => write!(f, "rand_k:{k}")?,
            OperatorKind::NiceSampling(n) => return write!(f, "nice:{n}"),
            OperatorKind::Compose(i, o) => return write!(f, "compose({i},{o})"),
        }
        if self.scope == Scope::JointAcrossM {
            write!(f, "@shared")?;
        }
        Ok(())
    }
}

fn parse_number(s: &str) -> Result<f64> {
    let bad = || Error::Config(format!("not a number: {s:?}"));
    match s.split_once('/') {
        Some((a, b)) => {
            let a: f64 = a.trim().parse().map_err(|_| bad())?;
            let b: f64 = b.trim().parse().map_err(|_| bad())?;
            Ok(a / b)
        }
        None => s.trim().parse().map_err(|_| bad()),
    }
}

fn split_top_level_comma(s: &str) -> Option<(&str, &str)> {
    let mut depth = 0i32;
    for (i, c) in s.char_indices() {
        match c {
            '(' => depth += 1,
            ')' => depth -= 1,
            ',' if depth == 0 => return Some((&s[..i], &s[i + 1..])),
            _ => {}
        }
    }
    None
}

/// Parses `identity`, `bernoulli:p`, `rand_k:k`, `nice:N` and
/// `compose(inner,outer)`. A trailing `@shared` on `bernoulli`/`rand_k`
/// selects one draw shared by all components.
impl FromStr for OperatorSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Some(body) = s.strip_prefix("compose(").and_then(|r| r.strip_suffix(')')) {
            let (inner, outer) = split_top_level_comma(body)
                .ok_or_else(|| Error::Config(format!("compose needs two arguments: {s:?}")))?;
            return Ok(OperatorSpec::compose(inner.parse()?, outer.parse()?));
        }
        let (body, shared) = match s.strip_suffix("@shared") {
            Some(b) => (b, true),
            None => (s, false),
        };
        let (name, arg) = match body.split_once(':') {
            Some((n, a)) => (n.trim(), Some(a.trim())),
            None => (body.trim(), None),
        };
        let need_arg = || arg.ok_or_else(|| Error::Config(format!("{name} needs a parameter: {s:?}")));
        let need_int = |a: &str| {
            a.parse::<usize>()
                .map_err(|_| Error::Config(format!("{name} needs an integer parameter, got {a:?}")))
        };
        let mut spec = match name {
            "identity" => OperatorSpec::identity(),
            "bernoulli" => OperatorSpec::bernoulli(parse_number(need_arg()?)?),
            "rand_k" => OperatorSpec::rand_k(need_int(need_arg()?)?),
            "nice" => {
                if shared {
                    return Err(Error::Config("nice sampling is always joint; drop @shared".into()));
                }
                OperatorSpec::nice(need_int(need_arg()?)?)
            }
            other => return Err(Error::Config(format!("unknown operator kind {other:?}"))),
        };
        if shared {
            spec.scope = Scope::JointAcrossM;
        }
        Ok(spec)
    }
}
