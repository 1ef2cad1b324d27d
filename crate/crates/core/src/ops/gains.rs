use crate::error::{Error, Result};

/// Marginal gain `ω`, average gain `ω_av` and offset `ζ` of an operator
/// ensemble, with `0 ≤ ζ ≤ ω_av ≤ ω`.
///
/// The same type carries `χ` (for `U`) and `ω_R` (for `R`), where only the
/// marginal field matters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GainTriple {
    pub marginal: f64,
    pub average: f64,
    pub offset: f64,
}

/// Whether the per-component operators are mutually independent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Independence {
    Independent { num_components: usize },
    Dependent,
}

impl GainTriple {
    pub fn new(marginal: f64, average: f64, offset: f64) -> Result<Self> {
        let ok = offset >= 0.0 && offset <= average && average <= marginal && marginal.is_finite();
        if !ok {
            return Err(Error::contract(format!(
                "gain triple must satisfy 0 <= offset <= average <= marginal, got ({marginal}, {average}, {offset})"
            )));
        }
        Ok(Self { marginal, average, offset })
    }

    pub fn zero() -> Self {
        Self { marginal: 0.0, average: 0.0, offset: 0.0 }
    }

    /// `ω_av = ω`, `ζ = 0`: valid for any ensemble by convexity.
    pub fn convexity_fallback(marginal: f64) -> Result<Self> {
        Self::new(marginal, marginal, 0.0)
    }

    fn with_independence(marginal: f64, independence: Independence) -> Result<Self> {
        match independence {
            Independence::Independent { num_components } if num_components >= 1 => {
                Self::new(marginal, marginal / num_components as f64, 0.0)
            }
            Independence::Independent { .. } => Err(Error::contract("independence needs M >= 1")),
            Independence::Dependent => Self::convexity_fallback(marginal),
        }
    }
}

/// Gains of `N`-nice sampling over `M` components.
pub fn gains_nice(num_components: usize, n: usize) -> Result<GainTriple> {
    let (m, nf) = (num_components as f64, n as f64);
    if n == 0 || n > num_components {
        return Err(Error::contract(format!("nice sampling needs 1 <= N <= M, got N = {n}, M = {num_components}")));
    }
    if n == num_components {
        return Ok(GainTriple::zero());
    }
    let avg = (m - nf) / (nf * (m - 1.0));
    GainTriple::new((m - nf) / nf, avg, avg)
}

/// Marginal gain of a composition: `ω + ω' + ωω'`.
pub fn gains_compose_marginal(omega: f64, omega_prime: f64) -> f64 {
    omega + omega_prime + omega * omega_prime
}

/// Gains of `outer ∘ inner` when the inner operators are mutually
/// independent: average `(ω/M)(1 − ζ') + ω_av'(1 + ω)`, offset `ζ'`.
pub fn gains_compose_average(omega_inner: f64, outer: GainTriple, num_components: usize) -> Result<GainTriple> {
    if num_components == 0 {
        return Err(Error::contract("composition needs M >= 1"));
    }
    let m = num_components as f64;
    let marginal = gains_compose_marginal(omega_inner, outer.marginal);
    // Never above the marginal gain in exact arithmetic; rounding can push it over.
    let average = (omega_inner / m * (1.0 - outer.offset) + outer.average * (1.0 + omega_inner)).min(marginal);
    GainTriple::new(marginal, average, outer.offset)
}

/// Gains of the skip-or-rescale operator `v/p` w.p. `p`: `ω = (1 − p)/p`.
pub fn gains_bernoulli(p: f64, independence: Independence) -> Result<GainTriple> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::contract(format!("bernoulli probability must be in (0, 1], got {p}")));
    }
    GainTriple::with_independence((1.0 - p) / p, independence)
}

/// Gains of rand-k in dimension `d`: `ω = d/k − 1`.
pub fn gains_rand_k(k: usize, dim: usize, independence: Independence) -> Result<GainTriple> {
    if k == 0 || k > dim {
        return Err(Error::contract(format!("rand_k needs 1 <= k <= d, got k = {k}, d = {dim}")));
    }
    GainTriple::with_independence(dim as f64 / k as f64 - 1.0, independence)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn nice_examples() {
        assert_eq!(gains_nice(5, 5).unwrap(), GainTriple::zero());
        assert_eq!(gains_nice(1, 1).unwrap(), GainTriple::zero());
        let g = gains_nice(1000, 1).unwrap();
        assert_eq!(g.marginal, 999.0);
        assert_eq!((g.average, g.offset), (1.0, 1.0));
        let g = gains_nice(4, 2).unwrap();
        assert_eq!(g.marginal, 1.0);
        assert!((g.average - 1.0 / 3.0).abs() < 1e-15 && g.offset == g.average);
        assert!(gains_nice(3, 0).is_err() && gains_nice(3, 4).is_err());
    }

    #[test]
    fn compose_examples() {
        assert_eq!(gains_compose_marginal(0.0, 2.5), 2.5);
        assert_eq!(gains_compose_marginal(1.0, 2.0), 5.0);
        let outer = gains_nice(4, 2).unwrap();
        let g = gains_compose_average(0.0, outer, 4).unwrap();
        assert_eq!(g, GainTriple { marginal: outer.marginal, average: outer.average, offset: outer.offset });
        let g = gains_compose_average(1.0, gains_nice(2, 1).unwrap(), 2).unwrap();
        assert!((g.average - 2.0).abs() < 1e-15);
    }

    #[test]
    fn bernoulli_and_rand_k() {
        let g = gains_bernoulli(1.0, Independence::Dependent).unwrap();
        assert_eq!((g.marginal, g.offset), (0.0, 0.0));
        assert_eq!(gains_bernoulli(0.5, Independence::Dependent).unwrap().marginal, 1.0);
        let g = gains_bernoulli(0.25, Independence::Independent { num_components: 4 }).unwrap();
        assert_eq!((g.marginal, g.average, g.offset), (3.0, 0.75, 0.0));
        assert!(gains_bernoulli(0.0, Independence::Dependent).is_err());
        assert_eq!(gains_rand_k(7, 7, Independence::Dependent).unwrap().marginal, 0.0);
        assert_eq!(gains_rand_k(5, 100, Independence::Dependent).unwrap().marginal, 19.0);
        assert!(gains_rand_k(0, 3, Independence::Dependent).is_err());
    }

    #[test]
    fn triple_ordering_enforced() {
        assert!(GainTriple::new(1.0, 2.0, 0.0).is_err());
        assert!(GainTriple::new(1.0, 0.5, 0.6).is_err());
        assert!(GainTriple::new(1.0, 0.5, -0.1).is_err());
    }

    proptest! {
        #[test]
        fn compose_marginal_identity(w in 0.0..100.0f64, w2 in 0.0..100.0f64) {
            let lhs = gains_compose_marginal(w, w2);
            let rhs = (1.0 + w) * (1.0 + w2) - 1.0;
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + rhs));
        }

        #[test]
        fn constructors_are_ordered(m in 1usize..50, n_frac in 0.0..1.0f64, w in 0.0..20.0f64) {
            let n = 1 + ((m - 1) as f64 * n_frac) as usize;
            let nice = gains_nice(m, n).unwrap();
            prop_assert!(nice.offset <= nice.average && nice.average <= nice.marginal);
            let comp = gains_compose_average(w, nice, m).unwrap();
            prop_assert!(comp.offset <= comp.average && comp.average <= comp.marginal);
        }
    }
}
