use itertools::Itertools;

use super::realize::{realize, Action};
use super::spec::{OperatorKind, OperatorSpec, Scope};
use crate::error::{Error, Result};
use crate::problem::Vector;
use crate::rng::{RandomStream, Role};

/// Largest outcome space [`enumerate_outcomes`] will build.
pub const ENUMERATION_LIMIT: u128 = 100_000;

/// One point of a finite outcome space with its probability.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub probability: f64,
    pub actions: Vec<Action>,
}

fn binomial(n: usize, k: usize) -> u128 {
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc.saturating_mul((n - i) as u128) / (i as u128 + 1))
}

fn outcome_count(spec: &OperatorSpec, m: usize, d: usize) -> u128 {
    let per_component = |single: u128| match spec.scope {
        Scope::PerComponent => (0..m).fold(1u128, |acc, _| acc.saturating_mul(single)),
        _ => single,
    };
    match &spec.kind {
        OperatorKind::Identity => 1,
        OperatorKind::BernoulliSkip(p) => per_component(if *p == 1.0 { 1 } else { 2 }),
        OperatorKind::RandK(k) => per_component(binomial(d, *k)),
        OperatorKind::NiceSampling(n) => binomial(m, *n),
        OperatorKind::Compose(i, o) => outcome_count(i, m, d).saturating_mul(outcome_count(o, m, d)),
    }
}

/// Single-component choices `(probability, action)` for the leaf kinds.
fn leaf_choices(kind: &OperatorKind, d: usize) -> Vec<(f64, Action)> {
    match kind {
        OperatorKind::Identity => vec![(1.0, Action::Scale(1.0))],
        OperatorKind::BernoulliSkip(p) if *p == 1.0 => vec![(1.0, Action::Scale(1.0))],
        OperatorKind::BernoulliSkip(p) => vec![(*p, Action::Scale(1.0 / p)), (1.0 - p, Action::Skip)],
        OperatorKind::RandK(k) => {
            let prob = 1.0 / binomial(d, *k) as f64;
            let scale = d as f64 / *k as f64;
            (0..d)
                .combinations(*k)
                .map(|indices| (prob, Action::Masked { scale, indices }))
                .collect()
        }
        _ => unreachable!("not a per-component leaf"),
    }
}

/// Every joint realization of `spec` over `M` components with its
/// probability. Refuses spaces larger than [`ENUMERATION_LIMIT`].
pub fn enumerate_outcomes(spec: &OperatorSpec, num_components: usize, dim: usize) -> Result<Vec<Outcome>> {
    spec.validate(num_components, dim)?;
    let outcomes = outcome_count(spec, num_components, dim);
    if outcomes > ENUMERATION_LIMIT {
        return Err(Error::OutcomeSpaceTooLarge { outcomes, limit: ENUMERATION_LIMIT });
    }
    Ok(enumerate_unchecked(spec, num_components, dim))
}

fn enumerate_unchecked(spec: &OperatorSpec, m: usize, d: usize) -> Vec<Outcome> {
    match &spec.kind {
        OperatorKind::NiceSampling(n) => {
            let prob = 1.0 / binomial(m, *n) as f64;
            let scale = m as f64 / *n as f64;
            (0..m)
                .combinations(*n)
                .map(|chosen| {
                    let mut actions = vec![Action::Skip; m];
                    for i in chosen {
                        actions[i] = Action::Scale(scale);
                    }
                    Outcome { probability: prob, actions }
                })
                .collect()
        }
        OperatorKind::Compose(inner, outer) => {
            let a = enumerate_unchecked(inner, m, d);
            let b = enumerate_unchecked(outer, m, d);
            a.iter()
                .cartesian_product(b.iter())
                .map(|(x, y)| Outcome {
                    probability: x.probability * y.probability,
                    actions: x.actions.iter().zip(&y.actions).map(|(p, q)| p.then(q)).collect(),
                })
                .collect()
        }
        kind => {
            let choices = leaf_choices(kind, d);
            match spec.scope {
                Scope::PerComponent if m > 0 => (0..m)
                    .map(|_| choices.iter())
                    .multi_cartesian_product()
                    .map(|picks| Outcome {
                        probability: picks.iter().map(|(p, _)| p).product(),
                        actions: picks.into_iter().map(|(_, a)| a.clone()).collect(),
                    })
                    .collect(),
                _ => choices
                    .into_iter()
                    .map(|(p, a)| Outcome { probability: p, actions: vec![a; m] })
                    .collect(),
            }
        }
    }
}

/// Exact second moments of an ensemble on fixed vectors, against its gains.
#[derive(Debug, Clone, PartialEq)]
pub struct BruteForceReport {
    /// `E‖(1/M) Σ (C_m(v_m) − v_m)‖²`.
    pub lhs: f64,
    /// `(ω_av/M) Σ ‖v_m‖² − ζ‖(1/M) Σ v_m‖²`.
    pub bound: f64,
    /// `E‖C_m(v_m) − v_m‖²` per component.
    pub marginal_lhs: Vec<f64>,
    /// `ω‖v_m‖²` per component.
    pub marginal_bound: Vec<f64>,
    /// Largest coordinate of `|E[C_m(v_m)] − v_m|`.
    pub bias: f64,
}

fn mean_of(vectors: &[Vector]) -> Vector {
    let mut s = Vector::zeros(vectors[0].len());
    for v in vectors {
        s += v;
    }
    s / vectors.len() as f64
}

fn check_vectors(vectors: &[Vector]) -> Result<(usize, usize)> {
    let first = vectors.first().ok_or_else(|| Error::contract("need at least one vector"))?;
    let d = first.len();
    if let Some(v) = vectors.iter().find(|v| v.len() != d) {
        return Err(Error::DimensionMismatch { expected: d, got: v.len() });
    }
    Ok((vectors.len(), d))
}

/// Exhaustive evaluation of the average-gain inequality for `spec` at `vectors`.
pub fn brute_force_gains(spec: &OperatorSpec, vectors: &[Vector]) -> Result<BruteForceReport> {
    let (m, d) = check_vectors(vectors)?;
    let gains = spec.gains(m, d)?;
    let outcomes = enumerate_outcomes(spec, m, d)?;
    let mut lhs = 0.0;
    let mut marginal_lhs = vec![0.0; m];
    let mut expectation = vec![Vector::zeros(d); m];
    for o in &outcomes {
        let mut dev = Vector::zeros(d);
        for (i, (a, v)) in o.actions.iter().zip(vectors).enumerate() {
            let out = a.apply_to(v);
            expectation[i] += &out * o.probability;
            let e = out - v;
            marginal_lhs[i] += o.probability * e.norm_squared();
            dev += e;
        }
        lhs += o.probability * (dev / m as f64).norm_squared();
    }
    let sq_sum: f64 = vectors.iter().map(|v| v.norm_squared()).sum();
    let bound = gains.average / m as f64 * sq_sum - gains.offset * mean_of(vectors).norm_squared();
    let bias = expectation
        .iter()
        .zip(vectors)
        .map(|(e, v)| (e - v).amax())
        .fold(0.0, f64::max);
    Ok(BruteForceReport {
        lhs,
        bound,
        marginal_lhs,
        marginal_bound: vectors.iter().map(|v| gains.marginal * v.norm_squared()).collect(),
        bias,
    })
}

/// Running mean and variance (Welford).
#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    n: f64,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.n += 1.0;
        let delta = x - self.mean;
        self.mean += delta / self.n;
        self.m2 += delta * (x - self.mean);
    }

    fn std_err(&self) -> f64 {
        if self.n < 2.0 {
            return 0.0;
        }
        (self.m2 / (self.n - 1.0) / self.n).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnbiasedViolation {
    pub component: usize,
    pub coordinate: usize,
    pub mean: f64,
    pub target: f64,
    pub std_err: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnbiasedReport {
    pub trials: usize,
    /// Largest `|mean − v| / SE` over all coordinates (0 where SE is 0 and the mean is exact).
    pub max_z: f64,
    pub violations: Vec<UnbiasedViolation>,
}

impl UnbiasedReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

const UNBIASED_BAND: f64 = 4.0;
const VARIANCE_SLACK_SE: f64 = 5.0;
const MIN_TRIALS: usize = 10_000;

/// Monte-Carlo check that `E[C_m(v_m)] = v_m` within a 4σ band per coordinate.
pub fn validate_unbiased(spec: &OperatorSpec, vectors: &[Vector], trials: usize, seed: u64) -> Result<UnbiasedReport> {
    let (m, d) = check_vectors(vectors)?;
    spec.validate(m, d)?;
    if trials < MIN_TRIALS {
        return Err(Error::contract(format!("need at least {MIN_TRIALS} trials, got {trials}")));
    }
    let stream = RandomStream::new(seed);
    let mut stats = vec![Moments::default(); m * d];
    for t in 0..trials {
        let r = realize(spec, &stream, Role::Probe, t, m, d);
        for (i, (a, v)) in r.actions.iter().zip(vectors).enumerate() {
            let out = a.apply_to(v);
            for j in 0..d {
                stats[i * d + j].push(out[j]);
            }
        }
    }
    let mut max_z: f64 = 0.0;
    let mut violations = Vec::new();
    for i in 0..m {
        for j in 0..d {
            let s = stats[i * d + j];
            let target = vectors[i][j];
            let gap = (s.mean - target).abs();
            let se = s.std_err();
            let bad = if se > 0.0 {
                max_z = max_z.max(gap / se);
                gap > UNBIASED_BAND * se
            } else {
                gap > 1e-12 * (1.0 + target.abs())
            };
            if bad {
                violations.push(UnbiasedViolation { component: i, coordinate: j, mean: s.mean, target, std_err: se });
            }
        }
    }
    Ok(UnbiasedReport { trials, max_z, violations })
}

/// Empirical second moment against its claimed bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VarianceCheck {
    pub empirical: f64,
    pub std_err: f64,
    pub bound: f64,
}

impl VarianceCheck {
    /// `empirical ≤ bound + 5·SE` (plus rounding slack).
    pub fn holds(&self) -> bool {
        self.empirical <= self.bound + VARIANCE_SLACK_SE * self.std_err + 1e-12 * (1.0 + self.bound.abs())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarianceReport {
    pub trials: usize,
    pub per_component: Vec<VarianceCheck>,
    pub averaged: VarianceCheck,
    /// Averaged bound with `ω_av = ω`, `ζ = 0`.
    pub convexity_fallback: VarianceCheck,
}

impl VarianceReport {
    pub fn passed(&self) -> bool {
        self.per_component.iter().all(VarianceCheck::holds) && self.averaged.holds() && self.convexity_fallback.holds()
    }
}

/// Monte-Carlo check of the marginal and averaged variance bounds.
pub fn validate_variance_bounds(spec: &OperatorSpec, vectors: &[Vector], trials: usize, seed: u64) -> Result<VarianceReport> {
    let (m, d) = check_vectors(vectors)?;
    let gains = spec.gains(m, d)?;
    if trials < MIN_TRIALS {
        return Err(Error::contract(format!("need at least {MIN_TRIALS} trials, got {trials}")));
    }
    let stream = RandomStream::new(seed);
    let mut per = vec![Moments::default(); m];
    let mut avg = Moments::default();
    for t in 0..trials {
        let r = realize(spec, &stream, Role::Probe, t, m, d);
        let mut dev = Vector::zeros(d);
        for (i, (a, v)) in r.actions.iter().zip(vectors).enumerate() {
            let e = a.apply_to(v) - v;
            per[i].push(e.norm_squared());
            dev += e;
        }
        avg.push((dev / m as f64).norm_squared());
    }
    let sq_sum: f64 = vectors.iter().map(|v| v.norm_squared()).sum();
    let mean_sq = mean_of(vectors).norm_squared();
    let averaged = VarianceCheck {
        empirical: avg.mean,
        std_err: avg.std_err(),
        bound: gains.average / m as f64 * sq_sum - gains.offset * mean_sq,
    };
    Ok(VarianceReport {
        trials,
        per_component: per
            .iter()
            .zip(vectors)
            .map(|(s, v)| VarianceCheck { empirical: s.mean, std_err: s.std_err(), bound: gains.marginal * v.norm_squared() })
            .collect(),
        averaged,
        convexity_fallback: VarianceCheck { bound: gains.marginal / m as f64 * sq_sum, ..averaged },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_vectors(rng: &mut ChaCha8Rng, m: usize, d: usize) -> Vec<Vector> {
        (0..m).map(|_| Vector::from_fn(d, |_, _| rng.gen_range(-2.0..2.0))).collect()
    }

    #[test]
    fn full_participation_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let v = random_vectors(&mut rng, 4, 3);
        let r = brute_force_gains(&OperatorSpec::nice(4), &v).unwrap();
        assert_eq!(r.lhs, 0.0);
        assert_eq!(r.bound, 0.0);
    }

    #[test]
    fn nice_one_of_three_on_basis() {
        let v: Vec<Vector> = (0..3).map(|i| Vector::from_fn(3, |j, _| if i == j { 1.0 } else { 0.0 })).collect();
        let r = brute_force_gains(&OperatorSpec::nice(1), &v).unwrap();
        assert!((r.lhs - r.bound).abs() <= 1e-12);
        // Direct: outcome i gives (1/3)(3e_i − Σe) so ‖·‖² = (4+1+1)/9.
        assert!((r.lhs - 6.0 / 9.0).abs() <= 1e-12);
        assert!(r.bias <= 1e-15);
    }

    #[test]
    fn nice_two_of_four_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let v = random_vectors(&mut rng, 4, 5);
        let r = brute_force_gains(&OperatorSpec::nice(2), &v).unwrap();
        assert!((r.lhs - r.bound).abs() <= 1e-12);
        for (a, b) in r.marginal_lhs.iter().zip(&r.marginal_bound) {
            assert!((a - b).abs() <= 1e-12 * (1.0 + b));
        }
    }

    #[test]
    fn rand_k_exact_variance() {
        let v = vec![Vector::from_vec(vec![1.0, 1.0])];
        let r = brute_force_gains(&OperatorSpec::rand_k(1), &v).unwrap();
        assert!((r.marginal_lhs[0] - 2.0).abs() < 1e-15);
        assert!((r.marginal_bound[0] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn refuses_huge_spaces() {
        let v = vec![Vector::zeros(30); 2];
        let err = brute_force_gains(&OperatorSpec::rand_k(15), &v).unwrap_err();
        assert!(matches!(err, Error::OutcomeSpaceTooLarge { .. }));
    }

    #[test]
    fn outcome_probabilities_sum_to_one() {
        let spec = OperatorSpec::compose(OperatorSpec::compose(OperatorSpec::bernoulli(0.3), OperatorSpec::rand_k(2)), OperatorSpec::nice(2));
        let o = enumerate_outcomes(&spec, 3, 3).unwrap();
        assert_eq!(o.len(), 8 * 27 * 3);
        let total: f64 = o.iter().map(|x| x.probability).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn identity_validators() {
        let v = vec![Vector::from_vec(vec![1.0, -2.0]), Vector::from_vec(vec![0.5, 0.0])];
        let u = validate_unbiased(&OperatorSpec::identity(), &v, 10_000, 1).unwrap();
        assert!(u.passed() && u.max_z == 0.0);
        let r = validate_variance_bounds(&OperatorSpec::identity(), &v, 10_000, 1).unwrap();
        assert_eq!(r.averaged.empirical, 0.0);
        assert_eq!(r.averaged.bound, 0.0);
        assert!(r.passed());
    }

    #[test]
    fn too_few_trials_rejected() {
        let v = vec![Vector::zeros(2)];
        assert!(validate_unbiased(&OperatorSpec::identity(), &v, 10, 1).is_err());
        assert!(validate_variance_bounds(&OperatorSpec::identity(), &v, 10, 1).is_err());
    }
}
