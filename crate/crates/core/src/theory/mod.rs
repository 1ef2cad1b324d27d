//! Stepsize rules, linear rates and Lyapunov functions as checkable
//! certificates.
//!
//! Every certificate carries the multiplier of the control-variate term of
//! its Lyapunov function as `lyap_coeff · h_weight`, where `lyap_coeff` is the
//! coefficient written in front of the weighted sum by the generating result
//! and `h_weight` is its `1/M`, `1/N` or `1/(pM)` normalization.

use std::fmt;

use crate::algo::{lyapunov_value, HWeight, Monitor, MuranaParams, MuranaState, Specialization, VariantSpec};
use crate::error::{Error, Result};
use crate::ops::GainTriple;
use crate::problem::{Objective, ProblemConstants, Solution};


/// Relative slack when comparing parameters against closed-form limits.
const PARAM_TOL: f64 = 1e-12;

/// Which convergence result a certificate instantiates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RateSource {
    /// General result with arbitrary admissible `λ`, `ρ`.
    General,
    /// Canonical `λ = 1/(1+χ)`, `ρ = 1/(1+ω_R)`.
    Canonical,
    GradientDescent,
    PartialParticipation,
    Saga,
    Lsvrg,
    Elvira,
}

impl fmt::Display for RateSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            RateSource::General => "general",
            RateSource::Canonical => "canonical",
            RateSource::GradientDescent => "gradient_descent",
            RateSource::PartialParticipation => "partial_participation",
            RateSource::Saga => "saga",
            RateSource::Lsvrg => "lsvrg",
            RateSource::Elvira => "elvira",
        };
        f.write_str(s)
    }
}

/// A linear-rate guarantee `E[Ψ^k] ≤ c^k Ψ^0` with everything needed to
/// evaluate `Ψ`.
#[derive(Debug, Clone, PartialEq)]
pub struct RateCertificate {
    pub source: RateSource,
    pub b: f64,
    pub a: f64,
    pub eta: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub rho: f64,
    /// `1/λ − 1`.
    pub chi_prime: f64,
    /// `1/ρ − 1`.
    pub omega_r_prime: f64,
    pub c: f64,
    pub lyap_coeff: f64,
    pub h_weight: HWeight,
    pub num_components: usize,
    pub gains: GainTriple,
    pub constants: ProblemConstants,
}

impl RateCertificate {
    /// Factor in front of `Σ_m ‖h_m − h_m^⋆‖²` in `Ψ`.
    pub fn h_multiplier(&self) -> f64 {
        self.lyap_coeff * self.h_weight.value(self.num_components)
    }

    /// `Ψ^0 ≤ factor · ‖x^0 − x^⋆‖²` when `h_m^0 = ∇F_m(x^0)`.
    pub fn psi0_factor(&self) -> f64 {
        1.0 + self.h_multiplier() * self.num_components as f64 * self.constants.l.powi(2)
    }

    /// `c^k Ψ^0`.
    pub fn bound(&self, round: usize, psi0: f64) -> f64 {
        self.c.powf(round as f64) * psi0
    }

    /// Rounds after which `c^k ≤ ε`.
    pub fn iterations_to(&self, eps: f64) -> usize {
        ((1.0 / eps).ln() / -self.c.ln()).ceil() as usize
    }

    pub fn monitor<'a>(&self, solution: &'a Solution) -> Monitor<'a> {
        Monitor { solution, h_multiplier: self.h_multiplier() }
    }

    /// Named scalar fields, in a fixed order, for reports.
    pub fn fields(&self) -> Vec<(&'static str, String)> {
        let weight = match self.h_weight {
            HWeight::PerM => "1/M".to_string(),
            HWeight::PerN(n) => format!("1/N (N={n})"),
            HWeight::PerPM(p) => format!("1/(pM) (p={p})"),
        };
        vec![
            ("source", self.source.to_string()),
            ("L", fmt_real(self.constants.l)),
            ("mu", fmt_real(self.constants.mu)),
            ("kappa", fmt_real(self.constants.kappa)),
            ("omega", fmt_real(self.gains.marginal)),
            ("omega_av", fmt_real(self.gains.average)),
            ("zeta", fmt_real(self.gains.offset)),
            ("b", fmt_real(self.b)),
            ("a", fmt_real(self.a)),
            ("eta", fmt_real(self.eta)),
            ("gamma", fmt_real(self.gamma)),
            ("lambda", fmt_real(self.lambda)),
            ("rho", fmt_real(self.rho)),
            ("chi_prime", fmt_real(self.chi_prime)),
            ("omega_r_prime", fmt_real(self.omega_r_prime)),
            ("c", fmt_real(self.c)),
            ("lyap_coeff", fmt_real(self.lyap_coeff)),
            ("h_weight", weight),
            ("h_multiplier", fmt_real(self.h_multiplier())),
        ]
    }
}

fn fmt_real(v: f64) -> String {
    format!("{v:.16e}")
}

fn refuse(msg: impl Into<String>) -> Error {
    Error::CertificateRefused(msg.into())
}

fn check_b(b: f64) -> Result<()> {
    if !(b > 1.0 && b.is_finite()) {
        return Err(refuse(format!("b must be > 1, got {b}")));
    }
    Ok(())
}

fn le_tol(value: f64, limit: f64) -> bool {
    value <= limit * (1.0 + PARAM_TOL)
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= PARAM_TOL * a.abs().max(b.abs())
}

/// `max(1 − (1+b)ζ, 0)`.
pub fn compute_a(b: f64, zeta: f64) -> Result<f64> {
    check_b(b)?;
    if !(zeta >= 0.0) {
        return Err(Error::contract(format!("offset must be >= 0, got {zeta}")));
    }
    Ok((1.0 - (1.0 + b) * zeta).max(0.0))
}

/// `a + (1+b)² ω_av`.
fn stepsize_denominator(a: f64, b: f64, omega_av: f64) -> f64 {
    a + (1.0 + b).powi(2) * omega_av
}

/// `1 / (L (a + (1+b)² ω_av))`; `+∞` when the denominator vanishes.
pub fn gamma_max_corollary1(l: f64, a: f64, b: f64, omega_av: f64) -> Result<f64> {
    if !(l > 0.0 && l.is_finite()) {
        return Err(Error::contract(format!("smoothness constant must be > 0, got {l}")));
    }
    let den = stepsize_denominator(a, b, omega_av);
    Ok(if den == 0.0 { f64::INFINITY } else { 1.0 / (l * den) })
}

/// `(κ(1+ω_av)(1+ω_R) + χ)·ln(1/ε)`: the order of the iteration count.
pub fn complexity_estimate(constants: &ProblemConstants, gains: &GainTriple, chi: f64, omega_r: f64, eps: f64) -> f64 {
    (constants.kappa * (1.0 + gains.average) * (1.0 + omega_r) + chi) * (1.0 / eps).ln()
}

/// The general rate for any `0 < λ ≤ 1/(1+χ)`, `0 < ρ ≤ 1/(1+ω_R)` and
/// `0 < γ < (2/L)/(a + (1+b)² ω_av)`.
pub fn rate_theorem1(
    params: &MuranaParams,
    constants: &ProblemConstants,
    gains: &GainTriple,
    chi: f64,
    omega_r: f64,
    b: f64,
    num_components: usize,
) -> Result<RateCertificate> {
    params.validate().map_err(|e| refuse(e.to_string()))?;
    check_b(b)?;
    let MuranaParams { gamma, lambda, rho } = *params;
    if !le_tol(lambda, 1.0 / (1.0 + chi)) {
        return Err(refuse(format!("lambda = {lambda} exceeds 1/(1+chi) = {}", 1.0 / (1.0 + chi))));
    }
    if !le_tol(rho, 1.0 / (1.0 + omega_r)) {
        return Err(refuse(format!("rho = {rho} exceeds 1/(1+omega_R) = {}", 1.0 / (1.0 + omega_r))));
    }
    let a = compute_a(b, gains.offset)?;
    let den = stepsize_denominator(a, b, gains.average);
    let limit = 2.0 / (constants.l * den);
    if gamma >= limit {
        return Err(refuse(format!("gamma = {gamma} must be < (2/L)/(a+(1+b)^2 omega_av) = {limit}")));
    }
    let eta = 1.0 - gamma / limit;
    let chi_prime = 1.0 / lambda - 1.0;
    let omega_r_prime = 1.0 / rho - 1.0;
    let contraction = 1.0 - b.powi(-2);
    let c = 1.0 - (2.0 * gamma * eta * constants.mu / (1.0 + omega_r_prime)).min(contraction / (1.0 + chi_prime));
    Ok(RateCertificate {
        source: RateSource::General,
        b,
        a,
        eta,
        gamma,
        lambda,
        rho,
        chi_prime,
        omega_r_prime,
        c,
        lyap_coeff: (b * b + b) * gamma * gamma * gains.average * (1.0 + chi_prime) / (1.0 + omega_r_prime),
        h_weight: HWeight::PerM,
        num_components,
        gains: *gains,
        constants: *constants,
    })
}

/// The simplified rate at canonical `λ = 1/(1+χ)`, `ρ = 1/(1+ω_R)` and
/// `γ ≤ 1/(L(a + (1+b)² ω_av))`:
/// `c = 1 − min(γμ/(1+ω_R), (1−b^{-2})/(1+χ))`.
pub fn rate_corollary1(
    constants: &ProblemConstants,
    gains: &GainTriple,
    chi: f64,
    omega_r: f64,
    b: f64,
    gamma: f64,
    num_components: usize,
) -> Result<RateCertificate> {
    check_b(b)?;
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(refuse(format!("gamma must be finite and > 0, got {gamma}")));
    }
    let a = compute_a(b, gains.offset)?;
    let gamma_max = gamma_max_corollary1(constants.l, a, b, gains.average)?;
    if !le_tol(gamma, gamma_max) {
        return Err(refuse(format!("gamma = {gamma} exceeds 1/(L(a+(1+b)^2 omega_av)) = {gamma_max}")));
    }
    let lambda = 1.0 / (1.0 + chi);
    let rho = 1.0 / (1.0 + omega_r);
    let eta = 1.0 - gamma * constants.l * stepsize_denominator(a, b, gains.average) / 2.0;
    let c = 1.0 - (gamma * constants.mu / (1.0 + omega_r)).min((1.0 - b.powi(-2)) / (1.0 + chi));
    Ok(RateCertificate {
        source: RateSource::Canonical,
        b,
        a,
        eta,
        gamma,
        lambda,
        rho,
        chi_prime: chi,
        omega_r_prime: omega_r,
        c,
        lyap_coeff: (b * b + b) * gamma * gamma * gains.average * (1.0 + chi) / (1.0 + omega_r),
        h_weight: HWeight::PerM,
        num_components,
        gains: *gains,
        constants: *constants,
    })
}

/// Certificate of a named variant under its own convergence result.
///
/// Named variants require their canonical `λ` and `ρ`; the generic template
/// is certified by the general result with the supplied parameters.
pub fn rate_variant(
    variant: &VariantSpec,
    spec: &Specialization,
    constants: &ProblemConstants,
    params: &MuranaParams,
    b: f64,
    num_components: usize,
) -> Result<RateCertificate> {
    if let VariantSpec::GenericMurana { .. } = variant {
        return rate_theorem1(params, constants, &spec.gains, spec.chi, spec.omega_r, b, num_components);
    }
    if !close(params.lambda, spec.lambda) || !close(params.rho, spec.rho) {
        return Err(refuse(format!(
            "{} requires lambda = {} and rho = {}, got lambda = {} and rho = {}",
            variant.name(),
            spec.lambda,
            spec.rho,
            params.lambda,
            params.rho
        )));
    }
    if let VariantSpec::ProxGD = variant {
        check_b(b)?;
        let gamma = params.gamma;
        if !(gamma > 0.0) || !le_tol(gamma, 1.0 / constants.l) {
            return Err(refuse(format!("gradient descent needs 0 < gamma <= 1/L = {}, got {gamma}", 1.0 / constants.l)));
        }
        return Ok(RateCertificate {
            source: RateSource::GradientDescent,
            b,
            a: 1.0,
            eta: 1.0 - gamma * constants.l / 2.0,
            gamma,
            lambda: 1.0,
            rho: 1.0,
            chi_prime: 0.0,
            omega_r_prime: 0.0,
            c: 1.0 - gamma * constants.mu,
            lyap_coeff: 0.0,
            h_weight: HWeight::PerM,
            num_components,
            gains: GainTriple::zero(),
            constants: *constants,
        });
    }
    let mut cert = rate_corollary1(constants, &spec.gains, spec.chi, spec.omega_r, b, params.gamma, num_components)?;
    let base = (b * b + b) * params.gamma.powi(2) * spec.gains.average;
    let (source, lyap_coeff) = match variant {
        VariantSpec::DianaPP { n, .. } => {
            // χ = M(1+ω)/N − 1
            let one_plus_omega = (1.0 + spec.chi) * *n as f64 / num_components as f64;
            (RateSource::PartialParticipation, base * one_plus_omega / (1.0 + spec.omega_r))
        }
        VariantSpec::MinibatchSaga { .. } => (RateSource::Saga, base),
        VariantSpec::MinibatchLsvrg { .. } => (RateSource::Lsvrg, base),
        VariantSpec::Elvira { .. } => (RateSource::Elvira, base),
        VariantSpec::ProxGD | VariantSpec::GenericMurana { .. } => unreachable!("handled above"),
    };
    cert.source = source;
    cert.lyap_coeff = lyap_coeff;
    cert.h_weight = spec.h_weight;
    Ok(cert)
}

/// `b = 1/√(γL) − 1`, defined for `0 < γ < 1/(4L)`.
pub fn b_from_gamma(gamma: f64, l: f64) -> Result<f64> {
    if !(l > 0.0) {
        return Err(Error::contract(format!("smoothness constant must be > 0, got {l}")));
    }
    if !(gamma > 0.0 && gamma < 1.0 / (4.0 * l)) {
        return Err(refuse(format!("gamma = {gamma} must lie in (0, 1/(4L)) = (0, {}) for b > 1", 1.0 / (4.0 * l))));
    }
    Ok(1.0 / (gamma * l).sqrt() - 1.0)
}

const BALANCE_LOW: f64 = 1.0;
const BALANCE_HIGH: f64 = 100.0;
const BALANCE_TOL: f64 = 1e-10;

/// The `b ∈ (1, 100]` at which the two terms of the canonical rate
/// coincide, with `γ` at its largest admissible value for that `b`.
pub fn balance_b(constants: &ProblemConstants, gains: &GainTriple, chi: f64, omega_r: f64) -> Result<f64> {
    let gap = |b: f64| -> Result<f64> {
        let a = compute_a(b, gains.offset)?;
        let gamma = gamma_max_corollary1(constants.l, a, b, gains.average)?.min(1.0 / constants.l);
        Ok(gamma * constants.mu / (1.0 + omega_r) - (1.0 - b.powi(-2)) / (1.0 + chi))
    };
    if gap(BALANCE_HIGH)? > 0.0 {
        return Err(refuse(format!(
            "the stepsize term dominates for every b <= {BALANCE_HIGH}; no balancing b exists"
        )));
    }
    let (mut lo, mut hi) = (BALANCE_LOW, BALANCE_HIGH);
    while hi - lo > BALANCE_TOL {
        let mid = 0.5 * (lo + hi);
        if gap(mid)? > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// `Ψ^k` of `state` under `cert`. Anchor-based stores synthesize
/// `h_m = ∇F_m(y)`.
pub fn lyapunov<P: Objective + ?Sized>(
    problem: &P,
    state: &MuranaState,
    solution: &Solution,
    cert: &RateCertificate,
) -> Result<f64> {
    if solution.x_star.len() != state.x.len() {
        return Err(Error::DimensionMismatch { expected: state.x.len(), got: solution.x_star.len() });
    }
    lyapunov_value(problem, state, cert.monitor(solution))
}
