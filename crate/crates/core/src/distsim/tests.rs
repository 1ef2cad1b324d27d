use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::algo::{run, step_variant, Engine, MuranaState};
use crate::problem::{smoothness_bound, Problem, QuadraticComponent, Regularizer};

fn random_problem(seed: u64, m: usize, d: usize, reg: Regularizer) -> Problem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let comps = (0..m)
        .map(|_| {
            QuadraticComponent::new(
                DMatrix::from_fn(3, d, |_, _| rng.gen::<f64>()),
                DVector::from_fn(3, |_, _| rng.gen::<f64>()),
            )
            .unwrap()
        })
        .collect();
    Problem::new(comps, reg).unwrap()
}

fn variants() -> Vec<VariantSpec> {
    vec![
        VariantSpec::ProxGD,
        VariantSpec::MinibatchSaga { n: 2 },
        VariantSpec::MinibatchLsvrg { n: 2, p: 0.2 },
        VariantSpec::Elvira { n: 3, p: 0.2 },
        VariantSpec::DianaPP { n: 3, compressor: OperatorSpec::rand_k(2), r: OperatorSpec::rand_k(3) },
        VariantSpec::GenericMurana {
            c: OperatorSpec::bernoulli(0.6),
            u: Some(OperatorSpec::rand_k(1)),
            r: OperatorSpec::bernoulli(0.7),
        },
    ]
}

fn base_spec(problem: &Problem, variant: VariantSpec, rounds: usize, seed: u64) -> RunSpec<'static> {
    let s = specialize(&variant, problem.num_components(), problem.dim()).unwrap();
    RunSpec {
        variant,
        params: MuranaParams::new(0.05 / smoothness_bound(problem), s.lambda, s.rho).unwrap(),
        x0: Vector::from_element(problem.dim(), 0.5),
        h0: H0Policy::GradAtX0,
        rounds,
        seed,
        engine: Engine::Generic,
        monitor: None,
    }
}

#[test]
fn cost_model() {
    assert_eq!(comm_cost(&Action::Skip, 100), (0, 0));
    assert_eq!(comm_cost(&Action::Scale(2.0), 100), (100, 0));
    assert_eq!(comm_cost(&Action::Masked { scale: 20.0, indices: vec![1, 4, 9, 50, 70] }, 100), (5, 5));
}

#[test]
fn rounds_match_sequential_template() {
    for seed in 0..3 {
        let p = random_problem(seed, 8, 4, Regularizer::L1(0.01));
        for variant in variants() {
            let spec = base_spec(&p, variant.clone(), 0, seed);
            let s = specialize(&variant, 8, 4).unwrap();
            let protocol = Protocol::for_variant(&variant, 8, 4).unwrap();
            let (mut state, _) = MuranaState::initialize(&p, spec.x0.clone(), &spec.h0, s.store).unwrap();
            let (mut master, mut workers, _) = initialize(&p, &spec.x0, &spec.h0).unwrap();
            let stream = RandomStream::new(seed);
            for _ in 0..200 {
                step_variant(&variant, &s, Engine::Direct, &mut state, &p, &spec.params, &stream).unwrap();
                simulate_round(&mut master, &mut workers, &p, &spec.params, &protocol, &stream, Downlink::Broadcast)
                    .unwrap();
                assert!((&state.x - &master.x).amax() <= 1e-12, "{variant}");
                assert!((&state.h_avg - &master.h).amax() <= 1e-12, "{variant}");
            }
        }
    }
}

#[test]
fn workers_track_master_exactly() {
    let p = random_problem(1, 6, 3, Regularizer::Zero);
    let spec = base_spec(
        &p,
        VariantSpec::DianaPP { n: 2, compressor: OperatorSpec::rand_k(1), r: OperatorSpec::rand_k(2) },
        0,
        4,
    );
    let protocol = Protocol::for_variant(&spec.variant, 6, 3).unwrap();
    let (mut master, mut workers, _) = initialize(&p, &spec.x0, &spec.h0).unwrap();
    let stream = RandomStream::new(4);
    for _ in 0..100 {
        let before = master.x.clone();
        simulate_round(&mut master, &mut workers, &p, &spec.params, &protocol, &stream, Downlink::Broadcast).unwrap();
        for w in &workers {
            assert_eq!(w.x_local, before);
        }
    }
    workers[2].x_local[0] += 1e-9;
    let err = simulate_round(&mut master, &mut workers, &p, &spec.params, &protocol, &stream, Downlink::Broadcast);
    assert!(matches!(err, Err(Error::Protocol(_))));
}

#[test]
fn identity_traffic_and_trajectory() {
    let (m, d) = (5, 3);
    let p = random_problem(2, m, d, Regularizer::Zero);
    let spec = base_spec(&p, VariantSpec::ProxGD, 30, 0);
    let dist = run_distributed(&p, &spec, Downlink::Broadcast).unwrap();
    for r in &dist.ledger.rounds {
        assert_eq!((r.up_floats, r.down_floats, r.participants), ((m * d) as u64, d as u64, m as u64));
        assert_eq!((r.up_indices, r.down_indices), (0, 0));
    }
    let seq = run(&p, &spec).unwrap();
    assert!((&seq.final_state.x - &dist.master.x).amax() <= 1e-12);
    let unicast = run_distributed(&p, &spec, Downlink::Unicast).unwrap();
    assert_eq!(unicast.ledger.totals.down_floats, dist.ledger.totals.down_floats * m as u64);
}

#[test]
fn sparse_traffic_is_exact() {
    let (m, d, n, k) = (8, 6, 3, 2);
    let p = random_problem(3, m, d, Regularizer::Zero);
    let variant = VariantSpec::DianaPP { n, compressor: OperatorSpec::rand_k(k), r: OperatorSpec::rand_k(4) };
    let spec = base_spec(&p, variant, 50, 1);
    let dist = run_distributed(&p, &spec, Downlink::Broadcast).unwrap();
    assert!(dist.shared_payload);
    for r in &dist.ledger.rounds {
        assert_eq!((r.up_floats, r.up_indices), ((n * k) as u64, (n * k) as u64));
        assert_eq!((r.down_floats, r.down_indices), (4, 4));
        assert_eq!(r.participants, n as u64);
    }
    assert!(dist.ledger.totals.up_floats < 50 * (m * d) as u64);
    assert_eq!(dist.ledger.totals, dist.ledger.recomputed_totals());
    let last = dist.records.last().unwrap();
    assert_eq!(last.comm_floats_up, dist.ledger.totals.up_floats);
}

#[test]
fn probabilistic_traffic_matches_expectation() {
    // Independent coins per worker, shared payload: up floats ~ d·Binomial(M, q).
    let (m, d, q) = (6, 3, 0.3);
    let p = random_problem(4, m, d, Regularizer::Zero);
    let variant = VariantSpec::GenericMurana {
        c: OperatorSpec::bernoulli(q),
        u: None,
        r: OperatorSpec::identity(),
    };
    let rounds = 10_000;
    let spec = base_spec(&p, variant, rounds, 9);
    let dist = run_distributed(&p, &spec, Downlink::Broadcast).unwrap();
    let mean = dist.ledger.totals.up_floats as f64 / rounds as f64;
    let expect = (m * d) as f64 * q;
    let sd = d as f64 * (m as f64 * q * (1.0 - q)).sqrt() / (rounds as f64).sqrt();
    assert!((mean - expect).abs() <= 3.0 * sd, "{mean} vs {expect} ± {sd}");
}

#[test]
fn anchor_variants_need_gradient_initialization() {
    let p = random_problem(5, 4, 2, Regularizer::Zero);
    let mut spec = base_spec(&p, VariantSpec::MinibatchLsvrg { n: 1, p: 0.5 }, 5, 0);
    spec.h0 = H0Policy::Zeros;
    assert!(run_distributed(&p, &spec, Downlink::Broadcast).is_err());
}
