use std::fmt;

use super::state::StoreKind;
use crate::error::{Error, Result};
use crate::ops::{gains_nice, GainTriple, OperatorKind, OperatorSpec, Scope};

/// An algorithm in the template family.
#[derive(Debug, Clone, PartialEq)]
pub enum VariantSpec {
    /// Arbitrary operators. `u = None` means `U` reuses `C`'s realization.
    GenericMurana {
        c: OperatorSpec,
        u: Option<OperatorSpec>,
        r: OperatorSpec,
    },
    ProxGD,
    /// Partial participation of `n` workers with per-worker `compressor`
    /// and model-update compression `r`.
    DianaPP {
        n: usize,
        compressor: OperatorSpec,
        r: OperatorSpec,
    },
    MinibatchSaga { n: usize },
    MinibatchLsvrg { n: usize, p: f64 },
    Elvira { n: usize, p: f64 },
}

impl VariantSpec {
    pub fn name(&self) -> &'static str {
        match self {
            VariantSpec::GenericMurana { .. } => "murana",
            VariantSpec::ProxGD => "prox_gd",
            VariantSpec::DianaPP { .. } => "diana_pp",
            VariantSpec::MinibatchSaga { .. } => "saga",
            VariantSpec::MinibatchLsvrg { .. } => "lsvrg",
            VariantSpec::Elvira { .. } => "elvira",
        }
    }
}

impl fmt::Display for VariantSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VariantSpec::GenericMurana { c, u, r } => match u {
                Some(u) => write!(f, "murana(C={c}, U={u}, R={r})"),
                None => write!(f, "murana(C={c}, U=C, R={r})"),
            },
            VariantSpec::ProxGD => write!(f, "prox_gd"),
            VariantSpec::DianaPP { n, compressor, r } => write!(f, "diana_pp(N={n}, C={compressor}, R={r})"),
            VariantSpec::MinibatchSaga { n } => write!(f, "saga(N={n})"),
            VariantSpec::MinibatchLsvrg { n, p } => write!(f, "lsvrg(N={n}, p={p})"),
            VariantSpec::Elvira { n, p } => write!(f, "elvira(N={n}, p={p})"),
        }
    }
}

/// How `C^k` is realized.
#[derive(Debug, Clone, PartialEq)]
pub enum COperator {
    Fixed(OperatorSpec),
    /// `when_active` if `U^k` is not all-skip this round, else `when_skipped`.
    GatedByU {
        when_active: OperatorSpec,
        when_skipped: OperatorSpec,
    },
}

/// How `U^k` is realized.
#[derive(Debug, Clone, PartialEq)]
pub enum UOperator {
    /// `U^k_m = C^k_m`, one realization.
    SharedWithC,
    Independent(OperatorSpec),
}

/// Operators of one template instance, with their coupling.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorPlan {
    pub c: COperator,
    pub u: UOperator,
    /// Model-update operator `R`.
    pub r: OperatorSpec,
}

impl OperatorPlan {
    /// `C`, `U`, `R` drawn independently.
    pub fn independent(c: OperatorSpec, u: OperatorSpec, r: OperatorSpec) -> Self {
        Self { c: COperator::Fixed(c), u: UOperator::Independent(u), r: r.for_model_update() }
    }

    pub fn shared(c: OperatorSpec, r: OperatorSpec) -> Self {
        Self { c: COperator::Fixed(c), u: UOperator::SharedWithC, r: r.for_model_update() }
    }

    pub fn identity() -> Self {
        Self::shared(OperatorSpec::identity(), OperatorSpec::identity())
    }

    pub fn validate(&self, num_components: usize, dim: usize) -> Result<()> {
        match &self.c {
            COperator::Fixed(c) => c.validate(num_components, dim)?,
            COperator::GatedByU { when_active, when_skipped } => {
                when_active.validate(num_components, dim)?;
                when_skipped.validate(num_components, dim)?;
                if self.u == UOperator::SharedWithC {
                    return Err(Error::InvalidVariant("a C gated by U needs an independent U".into()));
                }
            }
        }
        if let UOperator::Independent(u) = &self.u {
            u.validate(num_components, dim)?;
        }
        self.r.validate(1, dim)
    }
}

/// Normalization of the control-variate distance in the Lyapunov function.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HWeight {
    /// `1/M`.
    PerM,
    /// `1/N`.
    PerN(usize),
    /// `1/(pM)`.
    PerPM(f64),
}

impl HWeight {
    pub fn value(&self, num_components: usize) -> f64 {
        match *self {
            HWeight::PerM => 1.0 / num_components as f64,
            HWeight::PerN(n) => 1.0 / n as f64,
            HWeight::PerPM(p) => 1.0 / (p * num_components as f64),
        }
    }
}

/// A variant lowered onto the template: operators, canonical rates and the
/// constants the theory needs.
#[derive(Debug, Clone, PartialEq)]
pub struct Specialization {
    pub plan: OperatorPlan,
    pub store: StoreKind,
    /// Canonical `λ`.
    pub lambda: f64,
    /// Canonical `ρ`.
    pub rho: f64,
    /// `(ω, ω_av, ζ)` of `C`.
    pub gains: GainTriple,
    /// Marginal gain `χ` of `U`.
    pub chi: f64,
    /// Marginal gain `ω_R` of `R`.
    pub omega_r: f64,
    pub h_weight: HWeight,
}

fn check_n(n: usize, num_components: usize) -> Result<()> {
    if n == 0 || n > num_components {
        return Err(Error::InvalidVariant(format!("sampling size must satisfy 1 <= N <= M = {num_components}, got N = {n}")));
    }
    Ok(())
}

fn check_p(p: f64) -> Result<()> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::InvalidVariant(format!("probability must be in (0, 1], got p = {p}")));
    }
    Ok(())
}

/// Lowers `variant` onto the template for `M` components in dimension `d`.
pub fn specialize(variant: &VariantSpec, num_components: usize, dim: usize) -> Result<Specialization> {
    let m = num_components as f64;
    match variant {
        VariantSpec::GenericMurana { c, u, r } => {
            let plan = match u {
                Some(u) => OperatorPlan::independent(c.clone(), u.clone(), r.clone()),
                None => OperatorPlan::shared(c.clone(), r.clone()),
            };
            plan.validate(num_components, dim)?;
            let gains = c.gains(num_components, dim)?;
            let chi = match u {
                Some(u) => u.gains(num_components, dim)?.marginal,
                None => gains.marginal,
            };
            let omega_r = plan.r.gains(1, dim)?.marginal;
            Ok(Specialization {
                plan,
                store: StoreKind::Table,
                lambda: 1.0 / (1.0 + chi),
                rho: 1.0 / (1.0 + omega_r),
                gains,
                chi,
                omega_r,
                h_weight: HWeight::PerM,
            })
        }
        VariantSpec::ProxGD => Ok(Specialization {
            plan: OperatorPlan::identity(),
            store: StoreKind::Table,
            lambda: 1.0,
            rho: 1.0,
            gains: GainTriple::zero(),
            chi: 0.0,
            omega_r: 0.0,
            h_weight: HWeight::PerM,
        }),
        VariantSpec::MinibatchSaga { n } => {
            check_n(*n, num_components)?;
            let gains = gains_nice(num_components, *n)?;
            Ok(Specialization {
                plan: OperatorPlan::shared(OperatorSpec::nice(*n), OperatorSpec::identity()),
                store: StoreKind::Table,
                lambda: *n as f64 / m,
                rho: 1.0,
                gains,
                chi: gains.marginal,
                omega_r: 0.0,
                h_weight: HWeight::PerN(*n),
            })
        }
        VariantSpec::MinibatchLsvrg { n, p } => {
            check_n(*n, num_components)?;
            check_p(*p)?;
            Ok(Specialization {
                plan: OperatorPlan::independent(
                    OperatorSpec::nice(*n),
                    OperatorSpec::shared_bernoulli(*p),
                    OperatorSpec::identity(),
                ),
                store: StoreKind::Anchor,
                lambda: *p,
                rho: 1.0,
                gains: gains_nice(num_components, *n)?,
                chi: (1.0 - p) / p,
                omega_r: 0.0,
                h_weight: HWeight::PerPM(*p),
            })
        }
        VariantSpec::Elvira { n, p } => {
            check_n(*n, num_components)?;
            check_p(*p)?;
            let nice = gains_nice(num_components, *n)?;
            let gains = GainTriple::new(nice.marginal * (1.0 - p), nice.average * (1.0 - p), nice.offset * (1.0 - p))?;
            Ok(Specialization {
                plan: OperatorPlan {
                    c: COperator::GatedByU {
                        when_active: OperatorSpec::identity(),
                        when_skipped: OperatorSpec::nice(*n),
                    },
                    u: UOperator::Independent(OperatorSpec::shared_bernoulli(*p)),
                    r: OperatorSpec::identity().for_model_update(),
                },
                store: StoreKind::Anchor,
                lambda: *p,
                rho: 1.0,
                gains,
                chi: (1.0 - p) / p,
                omega_r: 0.0,
                h_weight: HWeight::PerPM(*p),
            })
        }
        VariantSpec::DianaPP { n, compressor, r } => {
            check_n(*n, num_components)?;
            if compressor.scope != Scope::PerComponent {
                return Err(Error::InvalidVariant(
                    "partial-participation compressors must be drawn independently per component".into(),
                ));
            }
            if matches!(compressor.kind, OperatorKind::NiceSampling(_)) {
                return Err(Error::InvalidVariant("the compressor cannot itself be a sampling".into()));
            }
            compressor.validate(num_components, dim)?;
            let omega = compressor.gains(num_components, dim)?.marginal;
            let sampling = gains_nice(num_components, *n)?;
            let nf = *n as f64;
            let zeta = sampling.offset;
            let average = omega / m + zeta * (1.0 + omega);
            let marginal = omega + (m - nf) / nf * (1.0 + omega);
            let plan = OperatorPlan::shared(
                OperatorSpec::compose(compressor.clone(), OperatorSpec::nice(*n)),
                r.clone(),
            );
            plan.validate(num_components, dim)?;
            let omega_r = plan.r.gains(1, dim)?.marginal;
            Ok(Specialization {
                plan,
                store: StoreKind::Table,
                lambda: nf / (m * (1.0 + omega)),
                rho: 1.0 / (1.0 + omega_r),
                gains: GainTriple::new(marginal, average, zeta)?,
                chi: m * (1.0 + omega) / nf - 1.0,
                omega_r,
                h_weight: HWeight::PerN(*n),
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn saga_rates() {
        let s = specialize(&VariantSpec::MinibatchSaga { n: 4 }, 20, 3).unwrap();
        assert_eq!(s.lambda, 0.2);
        assert_eq!(1.0 + s.gains.marginal, 5.0);
        assert_eq!(s.lambda, 1.0 / (1.0 + s.chi));
    }

    #[test]
    fn elvira_gains() {
        let m = 50;
        let s = specialize(&VariantSpec::Elvira { n: 1, p: 1.0 / m as f64 }, m, 3).unwrap();
        let expect = (m as f64 - 1.0) / m as f64;
        assert!((s.gains.average - expect).abs() < 1e-15);
        assert!((s.gains.offset - expect).abs() < 1e-15);
        let l = specialize(&VariantSpec::MinibatchLsvrg { n: 1, p: 1.0 / m as f64 }, m, 3).unwrap();
        assert_eq!((l.gains.average, l.gains.offset), (1.0, 1.0));
    }

    #[test]
    fn prox_gd_is_trivial() {
        let s = specialize(&VariantSpec::ProxGD, 7, 3).unwrap();
        assert_eq!((s.lambda, s.rho), (1.0, 1.0));
        assert_eq!(s.gains, GainTriple::zero());
        assert_eq!((s.chi, s.omega_r), (0.0, 0.0));
    }

    #[test]
    fn diana_pp_full_participation_is_diana() {
        let s = specialize(
            &VariantSpec::DianaPP { n: 5, compressor: OperatorSpec::rand_k(1), r: OperatorSpec::identity() },
            5,
            4,
        )
        .unwrap();
        // rand-1 of 4: ω = 3, independent: ω_av = 3/5, ζ = 0.
        assert_eq!(s.gains.marginal, 3.0);
        assert!((s.gains.average - 0.6).abs() < 1e-15);
        assert_eq!(s.gains.offset, 0.0);
        assert_eq!(s.chi, 3.0);
        assert_eq!(s.lambda, 0.25);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(specialize(&VariantSpec::MinibatchSaga { n: 0 }, 4, 2).is_err());
        assert!(specialize(&VariantSpec::MinibatchSaga { n: 5 }, 4, 2).is_err());
        assert!(specialize(&VariantSpec::MinibatchLsvrg { n: 1, p: 0.0 }, 4, 2).is_err());
        assert!(specialize(&VariantSpec::Elvira { n: 1, p: 1.5 }, 4, 2).is_err());
        let bad = VariantSpec::DianaPP { n: 2, compressor: OperatorSpec::rand_k(3), r: OperatorSpec::identity() };
        assert!(specialize(&bad, 4, 2).is_err());
        let shared = VariantSpec::DianaPP { n: 2, compressor: OperatorSpec::shared_bernoulli(0.5), r: OperatorSpec::identity() };
        assert!(specialize(&shared, 4, 2).is_err());
    }
}
