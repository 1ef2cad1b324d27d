use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::ops::{realize, Action, EnsembleRealization, OperatorSpec};
use crate::problem::{
    smoothness_bound, solve_exact, strong_convexity, Objective, Problem, QuadraticComponent, Regularizer, SolveMode,
    Vector,
};
use crate::rng::{RandomStream, Role};

fn random_problem(seed: u64, m: usize, d: usize, rows: usize, reg: Regularizer) -> Problem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let comps = (0..m)
        .map(|_| {
            let a = DMatrix::from_fn(rows, d, |_, _| rng.gen::<f64>());
            let b = DVector::from_fn(rows, |_, _| rng.gen::<f64>());
            QuadraticComponent::new(a, b).unwrap()
        })
        .collect();
    Problem::new(comps, reg).unwrap()
}

fn variants(m: usize) -> Vec<VariantSpec> {
    vec![
        VariantSpec::ProxGD,
        VariantSpec::MinibatchSaga { n: 3 },
        VariantSpec::MinibatchLsvrg { n: 2, p: 0.3 },
        VariantSpec::Elvira { n: 2, p: 0.3 },
        VariantSpec::DianaPP { n: 3, compressor: OperatorSpec::rand_k(2), r: OperatorSpec::identity() },
        VariantSpec::DianaPP { n: m, compressor: OperatorSpec::bernoulli(0.5), r: OperatorSpec::rand_k(3) },
    ]
}

fn params_for(problem: &Problem, spec: &Specialization) -> MuranaParams {
    let l = smoothness_bound(problem);
    MuranaParams::new(0.1 / l, spec.lambda, spec.rho).unwrap()
}

fn one_dim() -> Problem {
    let c = QuadraticComponent::new(DMatrix::from_element(1, 1, 1.0), DVector::from_element(1, 0.0)).unwrap();
    Problem::new(vec![c], Regularizer::Zero).unwrap()
}

#[test]
fn hand_trace_one_dimension() {
    let p = one_dim();
    let (mut s, _) =
        MuranaState::initialize(&p, Vector::from_element(1, 1.0), &H0Policy::Given(vec![Vector::from_element(1, 1.0)]), StoreKind::Table)
            .unwrap();
    let params = MuranaParams::new(1.0, 1.0, 1.0).unwrap();
    let stream = RandomStream::new(0);
    let plan = OperatorPlan::identity();
    murana_step(&mut s, &p, &params, &plan, &stream).unwrap();
    assert_eq!(s.x[0], 0.0);
    assert_eq!(s.h_component(&p, 0).unwrap()[0], 1.0);
    murana_step(&mut s, &p, &params, &plan, &stream).unwrap();
    assert_eq!(s.x[0], 0.0);
    assert_eq!(s.h_component(&p, 0).unwrap()[0], 0.0);
}

#[test]
fn identity_template_is_gradient_step() {
    let p = random_problem(1, 5, 3, 4, Regularizer::Zero);
    let x0 = Vector::from_vec(vec![0.3, -0.2, 1.0]);
    let (mut s, _) = MuranaState::initialize(&p, x0.clone(), &H0Policy::Zeros, StoreKind::Table).unwrap();
    let params = MuranaParams::new(0.01, 1.0, 1.0).unwrap();
    murana_step(&mut s, &p, &params, &OperatorPlan::identity(), &RandomStream::new(3)).unwrap();
    let expect = &x0 - p.grad_full(&x0).unwrap() * 0.01;
    assert!((&s.x - expect).amax() < 1e-15);
}

#[test]
fn all_skip_round_uses_control_variates_only() {
    let p = random_problem(2, 4, 3, 2, Regularizer::L1(0.05));
    let x0 = Vector::from_vec(vec![0.5, 0.1, -0.4]);
    let hs: Vec<Vector> = (0..4).map(|m| Vector::from_element(3, m as f64 * 0.1)).collect();
    let (mut s, _) = MuranaState::initialize(&p, x0.clone(), &H0Policy::Given(hs.clone()), StoreKind::Table).unwrap();
    let h_avg = s.h_avg.clone();
    let skip = EnsembleRealization { round: 0, actions: vec![Action::Skip; 4] };
    let draw = RoundDraw { c: skip.clone(), u: skip, r: Action::Scale(1.0) };
    let params = MuranaParams::new(0.7, 0.5, 1.0).unwrap();
    let info = murana_step_with(&mut s, &p, &params, &draw).unwrap();
    assert_eq!(info.grad_calls, 0);
    let expect = crate::problem::prox(p.regularizer(), 0.7, &(&x0 - &h_avg * 0.7)).unwrap();
    assert!((&s.x - expect).amax() < 1e-15);
    assert_eq!(s.h_avg, h_avg);
    assert_eq!(s.h_components(&p).unwrap(), hs);
}

#[test]
fn direct_matches_template() {
    for seed in 0..3 {
        let p = random_problem(10 + seed, 8, 4, 3, Regularizer::L1(0.01));
        for variant in variants(8) {
            let spec = specialize(&variant, 8, 4).unwrap();
            let params = params_for(&p, &spec);
            let x0 = Vector::from_element(4, 0.5);
            let (mut a, _) = MuranaState::initialize(&p, x0.clone(), &H0Policy::GradAtX0, spec.store).unwrap();
            let mut b = a.clone();
            let stream = RandomStream::new(seed);
            for _ in 0..100 {
                step_variant(&variant, &spec, Engine::Direct, &mut a, &p, &params, &stream).unwrap();
                step_variant(&variant, &spec, Engine::Generic, &mut b, &p, &params, &stream).unwrap();
                assert!((&a.x - &b.x).amax() <= 1e-12, "{variant}: {}", (&a.x - &b.x).amax());
                assert!((&a.h_avg - &b.h_avg).amax() <= 1e-12, "{variant}");
            }
        }
    }
}

#[test]
fn h_avg_stays_consistent() {
    let p = random_problem(4, 8, 4, 3, Regularizer::Zero);
    for variant in variants(8) {
        for engine in [Engine::Direct, Engine::Generic] {
            let spec = specialize(&variant, 8, 4).unwrap();
            let params = params_for(&p, &spec);
            let (mut s, _) = MuranaState::initialize(&p, Vector::zeros(4), &H0Policy::GradAtX0, spec.store).unwrap();
            let stream = RandomStream::new(8);
            for _ in 0..60 {
                step_variant(&variant, &spec, engine, &mut s, &p, &params, &stream).unwrap();
                let drift = s.h_avg_drift(&p).unwrap();
                assert!(drift <= 1e-12 * (1.0 + s.h_avg.norm()), "{variant} {engine:?}: {drift}");
            }
        }
    }
}

#[test]
fn direct_gradient_counts() {
    let p = random_problem(5, 8, 4, 3, Regularizer::Zero);
    let params = MuranaParams::new(0.01, 1.0, 1.0).unwrap();
    let stream = RandomStream::new(21);
    let (mut s, _) = MuranaState::initialize(&p, Vector::zeros(4), &H0Policy::GradAtX0, StoreKind::Table).unwrap();
    for _ in 0..20 {
        assert_eq!(saga_step(&mut s, &p, 3, params.gamma, &stream).unwrap().grad_calls, 3);
    }
    let (mut s, _) = MuranaState::initialize(&p, Vector::zeros(4), &H0Policy::GradAtX0, StoreKind::Anchor).unwrap();
    let mut refreshes = 0;
    for _ in 0..200 {
        let y = s.anchor().unwrap().clone();
        let calls = lsvrg_step(&mut s, &p, 2, 0.25, params.gamma, &stream).unwrap().grad_calls;
        let refreshed = s.anchor().unwrap() != &y;
        refreshes += refreshed as usize;
        assert_eq!(calls, 4 + if refreshed { 8 } else { 0 });
    }
    assert!(refreshes > 0 && refreshes < 200);
    let (mut s, _) = MuranaState::initialize(&p, Vector::zeros(4), &H0Policy::GradAtX0, StoreKind::Anchor).unwrap();
    for _ in 0..200 {
        let y = s.anchor().unwrap().clone();
        let x = s.x.clone();
        let calls = elvira_step(&mut s, &p, 2, 0.25, params.gamma, &stream).unwrap().grad_calls;
        if s.anchor().unwrap() != &y {
            assert_eq!(calls, 8);
            let expect = &x - p.grad_full(&x).unwrap() * params.gamma;
            assert_eq!(s.x, expect);
        } else {
            assert_eq!(calls, 4);
        }
    }
}

#[test]
fn template_is_lazy() {
    // One coin shared by C and U: a skipped round costs nothing.
    let p = random_problem(6, 6, 3, 2, Regularizer::Zero);
    let plan = OperatorPlan::shared(OperatorSpec::shared_bernoulli(0.5), OperatorSpec::identity());
    let params = MuranaParams::new(0.01, 0.5, 1.0).unwrap();
    let stream = RandomStream::new(4);
    let (mut s, _) = MuranaState::initialize(&p, Vector::zeros(3), &H0Policy::Zeros, StoreKind::Table).unwrap();
    for k in 0..100 {
        let active = realize(&OperatorSpec::shared_bernoulli(0.5), &stream, Role::C, k, 6, 3).active_count();
        let info = murana_step(&mut s, &p, &params, &plan, &stream).unwrap();
        assert_eq!(info.grad_calls, active as u64);
    }
}

#[test]
fn fixed_point_is_preserved() {
    let p = random_problem(7, 8, 4, 3, Regularizer::Zero);
    let sol = solve_exact(&p, SolveMode::Direct).unwrap();
    for variant in variants(8) {
        for engine in [Engine::Direct, Engine::Generic] {
            let spec = specialize(&variant, 8, 4).unwrap();
            let params = params_for(&p, &spec);
            let (mut s, _) = MuranaState::initialize(&p, sol.x_star.clone(), &H0Policy::GradAtX0, spec.store).unwrap();
            let stream = RandomStream::new(99);
            for _ in 0..30 {
                step_variant(&variant, &spec, engine, &mut s, &p, &params, &stream).unwrap();
            }
            assert!((&s.x - &sol.x_star).amax() <= 1e-10, "{variant}");
            for (h, hs) in s.h_components(&p).unwrap().iter().zip(&sol.h_star_components) {
                assert!((h - hs).amax() <= 1e-10, "{variant}");
            }
        }
    }
}

#[test]
fn saga_full_sampling_is_prox_gd() {
    let p = random_problem(8, 5, 3, 2, Regularizer::L1(0.02));
    let gamma = 0.5 / smoothness_bound(&p);
    let stream = RandomStream::new(0);
    let (mut a, _) = MuranaState::initialize(&p, Vector::zeros(3), &H0Policy::GradAtX0, StoreKind::Table).unwrap();
    let mut b = a.clone();
    for _ in 0..50 {
        saga_step(&mut a, &p, 5, gamma, &stream).unwrap();
        prox_gd_step(&mut b, &p, gamma).unwrap();
        assert!((&a.x - &b.x).amax() <= 1e-12);
    }
}

#[test]
fn lsvrg_certain_refresh_tracks_full_gradient() {
    let p = random_problem(9, 5, 3, 2, Regularizer::Zero);
    let gamma = 0.2 / smoothness_bound(&p);
    let stream = RandomStream::new(0);
    let (mut s, _) = MuranaState::initialize(&p, Vector::zeros(3), &H0Policy::GradAtX0, StoreKind::Anchor).unwrap();
    for _ in 0..10 {
        let x = s.x.clone();
        lsvrg_step(&mut s, &p, 1, 1.0, gamma, &stream).unwrap();
        assert_eq!(s.anchor().unwrap(), &x);
        assert_eq!(s.h_avg, p.grad_full(&x).unwrap());
    }
}

#[test]
fn never_refreshing_keeps_anchor() {
    let p = random_problem(9, 5, 3, 2, Regularizer::Zero);
    let gamma = 0.2 / smoothness_bound(&p);
    let stream = RandomStream::new(0);
    let (mut s, _) = MuranaState::initialize(&p, Vector::zeros(3), &H0Policy::GradAtX0, StoreKind::Anchor).unwrap();
    let (y, h) = (s.anchor().unwrap().clone(), s.h_avg.clone());
    for _ in 0..50 {
        lsvrg_step(&mut s, &p, 2, 1e-300, gamma, &stream).unwrap();
    }
    assert_eq!(s.anchor().unwrap(), &y);
    assert_eq!(s.h_avg, h);
}

#[test]
fn run_records_and_contracts() {
    let p = random_problem(12, 6, 3, 2, Regularizer::Zero);
    let sol = solve_exact(&p, SolveMode::Direct).unwrap();
    let l = smoothness_bound(&p);
    let mu = strong_convexity(&p).unwrap();
    let monitor = Monitor { solution: &sol, h_multiplier: 0.0 };
    let mut spec = RunSpec {
        variant: VariantSpec::ProxGD,
        params: MuranaParams::new(1.0 / l, 1.0, 1.0).unwrap(),
        x0: Vector::zeros(3),
        h0: H0Policy::GradAtX0,
        rounds: 0,
        seed: 0,
        engine: Engine::Direct,
        monitor: Some(monitor),
    };
    let t = run(&p, &spec).unwrap();
    assert_eq!(t.records.len(), 1);
    assert_eq!(t.records[0].gradient_calls, 6);
    spec.rounds = 10_000;
    let t = run(&p, &spec).unwrap();
    assert_eq!(t.records.len(), 10_001);
    let e0 = t.records[0].x_error_sq.sqrt();
    for r in &t.records {
        let bound = (1.0 - mu / l).powi(r.round as i32) * e0 * (1.0 + 1e-9);
        assert!(r.x_error_sq.sqrt() <= bound.max(1e-12), "round {}", r.round);
    }
}

#[test]
fn divergence_is_reported() {
    let p = random_problem(13, 4, 3, 2, Regularizer::Zero);
    let spec = RunSpec {
        variant: VariantSpec::ProxGD,
        params: MuranaParams::new(1e6, 1.0, 1.0).unwrap(),
        x0: Vector::from_element(3, 1.0),
        h0: H0Policy::GradAtX0,
        rounds: 1000,
        seed: 0,
        engine: Engine::Generic,
        monitor: None,
    };
    match run(&p, &spec) {
        Err(crate::Error::Diverged { round }) => assert!(round > 1 && round <= 1000),
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn lyapunov_evaluator_matches_fresh_evaluation() {
    let p = random_problem(14, 8, 4, 3, Regularizer::Zero);
    let sol = solve_exact(&p, SolveMode::Direct).unwrap();
    for variant in variants(8) {
        let spec = specialize(&variant, 8, 4).unwrap();
        let params = params_for(&p, &spec);
        let monitor = Monitor { solution: &sol, h_multiplier: 0.37 };
        let mut eval = LyapunovEvaluator::new(monitor);
        let (mut s, _) = MuranaState::initialize(&p, Vector::zeros(4), &H0Policy::GradAtX0, spec.store).unwrap();
        let stream = RandomStream::new(5);
        for _ in 0..40 {
            step_variant(&variant, &spec, Engine::Direct, &mut s, &p, &params, &stream).unwrap();
            let (_, psi) = eval.evaluate(&p, &s).unwrap();
            let fresh = lyapunov_value(&p, &s, monitor).unwrap();
            assert!((psi - fresh).abs() <= 1e-12 * fresh.max(1.0), "{variant}");
        }
    }
}

#[test]
fn anchor_store_rejects_other_initializations() {
    let p = random_problem(15, 3, 2, 2, Regularizer::Zero);
    assert!(MuranaState::initialize(&p, Vector::zeros(2), &H0Policy::Zeros, StoreKind::Anchor).is_err());
    assert!(MuranaState::initialize(&p, Vector::zeros(3), &H0Policy::Zeros, StoreKind::Table).is_err());
}
