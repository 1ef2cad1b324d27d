//! Experiment configuration, synthetic problems, multi-seed orchestration
//! and CSV/report output.

mod config;
mod output;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;

pub use config::{
    BChoice, ExperimentConfig, OutputsConfig, ParamsConfig, Probability, ProblemConfig, RunMode, RunsConfig, Setting,
    VariantConfig, VariantKind, DEFAULT_ROUNDS,
};
pub use output::{emit_csv, ledger_path, read_csv, write_ledgers, write_report, CsvRow, CSV_HEADER};

use crate::algo::{run, specialize, Engine, H0Policy, MuranaParams, RunSpec, Specialization, VariantSpec};
use crate::distsim::{run_distributed, CommLedger, Downlink};
use crate::error::{Error, Result};
use crate::ops::OperatorSpec;
use crate::problem::{solve_exact, Objective, Problem, ProblemConstants, QuadraticComponent, Regularizer, Solution, SolveMode, Vector};
use crate::rng::{Component, RandomStream, Role};
use crate::theory::{balance_b, compute_a, gamma_max_corollary1, rate_variant, RateCertificate};

/// Environment variable capping the worker pool.
pub const THREADS_ENV: &str = "MURANA_THREADS";

/// Rounds `k ≤ 1000` are all kept, later ones every tenth.
pub fn is_recorded(round: usize) -> bool {
    round <= 1000 || round.is_multiple_of(10)
}

/// `M` quadratics `½‖A_m x − b_m‖²` with `A_m ∈ R^{d'×d}`, `b_m ∈ R^{d'}`,
/// entries i.i.d. uniform on `[0, 1)`, and `R = 0`.
pub fn generate_problem(num_components: usize, dim: usize, rows: usize, seed: u64) -> Result<Problem> {
    if num_components == 0 || dim == 0 || rows == 0 {
        return Err(Error::Config("problem sizes must be >= 1".into()));
    }
    let stream = RandomStream::new(seed);
    let components = (0..num_components)
        .map(|m| {
            let mut rng = stream.rng(0, Component::Index(m), Role::Problem, 0);
            let a = DMatrix::from_row_iterator(rows, dim, (0..rows * dim).map(|_| rng.gen::<f64>()));
            let b = DVector::from_iterator(rows, (0..rows).map(|_| rng.gen::<f64>()));
            QuadraticComponent::new(a, b)
        })
        .collect::<Result<Vec<_>>>()?;
    Problem::new(components, Regularizer::Zero)
}

/// A configuration with every `auto` resolved against a concrete problem.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub constants: ProblemConstants,
    pub variant: VariantSpec,
    pub specialization: Specialization,
    pub params: MuranaParams,
    pub b: f64,
    pub certificate: RateCertificate,
}

/// Resolves `config` against the problem it generates.
pub fn resolve_config(config: &ExperimentConfig) -> Result<(Problem, Resolved)> {
    let problem = generate_problem(
        config.problem.num_components,
        config.problem.dim,
        config.problem.rows,
        config.problem.seed,
    )?;
    let resolved = resolve_for_problem(config, &problem)?;
    Ok((problem, resolved))
}

/// Resolves `config` against `problem`: constants, `b`, `γ`, `λ`, `ρ` and
/// the certificate of the variant's convergence result.
pub fn resolve_for_problem(config: &ExperimentConfig, problem: &Problem) -> Result<Resolved> {
    config.validate()?;
    let m = config.problem.num_components;
    let d = config.problem.dim;
    let constants = ProblemConstants::of(problem)?;
    let variant = config.variant_spec()?;
    let specialization = specialize(&variant, m, d)?;
    let gains = specialization.gains;
    let b = match config.params.b {
        BChoice::Value(b) => b,
        BChoice::Balance => balance_b(&constants, &gains, specialization.chi, specialization.omega_r)?,
    };
    let gamma = match config.params.gamma {
        Setting::Value(g) => g,
        Setting::Auto if variant == VariantSpec::ProxGD => 1.0 / constants.l,
        Setting::Auto => {
            let a = compute_a(b, gains.offset)?;
            gamma_max_corollary1(constants.l, a, b, gains.average)?
        }
    };
    let pick = |s: Setting, canonical: f64| match s {
        Setting::Auto => canonical,
        Setting::Value(v) => v,
    };
    let params = MuranaParams::new(
        gamma,
        pick(config.params.lambda, specialization.lambda),
        pick(config.params.rho, specialization.rho),
    )?;
    let certificate = rate_variant(&variant, &specialization, &constants, &params, b, m)?;
    Ok(Resolved { constants, variant, specialization, params, b, certificate })
}

/// Averages over seeds at one recorded round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SummaryRow {
    pub k: usize,
    pub mean_lyapunov: f64,
    /// `c^k · mean Ψ^0`.
    pub bound: f64,
    pub mean_x_err_sq: f64,
    pub mean_grad_calls: f64,
    pub mean_up_floats: f64,
    pub mean_down_floats: f64,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub config: ExperimentConfig,
    pub resolved: Resolved,
    /// Seeds in run order.
    pub seeds: Vec<u64>,
    /// Recorded rows, seed-major then round.
    pub rows: Vec<CsvRow>,
    pub summary: Vec<SummaryRow>,
    /// Per-seed communication ledgers (distributed mode only).
    pub ledgers: Vec<(u64, CommLedger)>,
    pub notes: Vec<String>,
}

impl RunReport {
    pub fn rows_for_seed(&self, seed: u64) -> impl Iterator<Item = &CsvRow> {
        self.rows.iter().filter(move |r| r.run_seed == seed)
    }
}

/// A pool of at most `MURANA_THREADS` workers (all cores when unset).
pub fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .parse()
            .map_err(|_| Error::Config(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?;
        builder = builder.num_threads(n.max(1));
    }
    builder.build().map_err(|e| Error::Config(format!("cannot build thread pool: {e}")))
}

fn seed_rows(
    problem: &Problem,
    resolved: &Resolved,
    solution: &Solution,
    config: &ExperimentConfig,
    seed: u64,
) -> Result<(Vec<CsvRow>, Option<CommLedger>)> {
    let spec = RunSpec {
        variant: resolved.variant.clone(),
        params: resolved.params,
        x0: Vector::zeros(problem.dim()),
        h0: H0Policy::GradAtX0,
        rounds: config.runs.rounds,
        seed,
        engine: config.runs.engine,
        monitor: Some(resolved.certificate.monitor(solution)),
    };
    let (records, ledger) = match config.runs.mode {
        RunMode::Sequential => (run(problem, &spec)?.records, None),
        RunMode::Distributed => {
            let d = run_distributed(problem, &spec, Downlink::Broadcast)?;
            (d.records, Some(d.ledger))
        }
    };
    let psi0 = records[0].lyapunov;
    let rows = records
        .iter()
        .filter(|r| is_recorded(r.round))
        .map(|r| CsvRow {
            run_seed: seed,
            k: r.round,
            x_err_sq: r.x_error_sq,
            lyapunov: r.lyapunov,
            bound: resolved.certificate.bound(r.round, psi0),
            grad_calls: r.gradient_calls,
            up_floats: r.comm_floats_up,
            down_floats: r.comm_floats_down,
        })
        .collect();
    Ok((rows, ledger))
}

fn summarize(rows: &[CsvRow], num_seeds: usize, c: f64) -> Vec<SummaryRow> {
    let per_seed = rows.len() / num_seeds.max(1);
    let psi0 = (0..num_seeds).map(|s| rows[s * per_seed].lyapunov).sum::<f64>() / num_seeds as f64;
    (0..per_seed)
        .map(|i| {
            let at = |f: &dyn Fn(&CsvRow) -> f64| (0..num_seeds).map(|s| f(&rows[s * per_seed + i])).sum::<f64>() / num_seeds as f64;
            let k = rows[i].k;
            SummaryRow {
                k,
                mean_lyapunov: at(&|r| r.lyapunov),
                bound: c.powf(k as f64) * psi0,
                mean_x_err_sq: at(&|r| r.x_err_sq),
                mean_grad_calls: at(&|r| r.grad_calls as f64),
                mean_up_floats: at(&|r| r.up_floats as f64),
                mean_down_floats: at(&|r| r.down_floats as f64),
            }
        })
        .collect()
}

/// Runs every seed of an already resolved configuration.
pub fn run_resolved(config: &ExperimentConfig, problem: &Problem, solution: &Solution, resolved: Resolved) -> Result<RunReport> {
    run_resolved_in(&thread_pool()?, config, problem, solution, resolved)
}

/// [`run_resolved`] on a caller-supplied pool.
pub fn run_resolved_in(
    pool: &rayon::ThreadPool,
    config: &ExperimentConfig,
    problem: &Problem,
    solution: &Solution,
    resolved: Resolved,
) -> Result<RunReport> {
    let seeds: Vec<u64> = (0..config.runs.num_seeds as u64).map(|i| config.runs.base_seed + i).collect();
    let results = pool.install(|| {
        seeds
            .par_iter()
            .map(|&seed| seed_rows(problem, &resolved, solution, config, seed))
            .collect::<Vec<_>>()
    });
    let mut rows = Vec::new();
    let mut ledgers = Vec::new();
    for (seed, result) in seeds.iter().zip(results) {
        let (r, ledger) = result.map_err(|e| match e {
            Error::Diverged { round } => {
                log::error!("seed {seed} diverged at round {round} with gamma = {}", resolved.params.gamma);
                Error::Diverged { round }
            }
            other => other,
        })?;
        rows.extend(r);
        if let Some(l) = ledger {
            ledgers.push((*seed, l));
        }
    }
    let summary = summarize(&rows, seeds.len(), resolved.certificate.c);
    let mut notes = Vec::new();
    if config.runs.rounds == DEFAULT_ROUNDS {
        notes.push(format!("runs.K defaults to {DEFAULT_ROUNDS} rounds"));
    }
    notes.push("rounds k <= 1000 are all recorded, later rounds every 10th".into());
    if let VariantSpec::DianaPP { .. } = resolved.variant {
        notes.push("partial-participation chi taken as M(1+omega)/N - 1".into());
    }
    if config.runs.mode == RunMode::Distributed {
        notes.push("workers send one payload when U shares C's realization, two otherwise; the model update is costed once per broadcast".into());
    }
    Ok(RunReport { config: config.clone(), resolved, seeds, rows, summary, ledgers, notes })
}

/// Generates, solves, resolves and runs `config`, then writes the outputs
/// it names.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunReport> {
    let (problem, resolved) = resolve_config(config)?;
    let solution = solve_exact(&problem, SolveMode::Direct)?;
    let report = run_resolved(config, &problem, &solution, resolved)?;
    write_outputs(&report)?;
    Ok(report)
}

/// Writes the CSV, ledger and report files named in the configuration.
pub fn write_outputs(report: &RunReport) -> Result<()> {
    if let Some(path) = &report.config.outputs.csv_path {
        emit_csv(report, path)?;
        if !report.ledgers.is_empty() {
            write_ledgers(&ledger_path(path), &report.ledgers)?;
        }
    }
    if let Some(path) = &report.config.outputs.report_path {
        write_report(report, path)?;
    }
    Ok(())
}

/// Options for the canned synthetic benchmark.
#[derive(Debug, Clone)]
pub struct BenchmarkOptions {
    pub rounds: usize,
    pub num_seeds: usize,
    pub problem_seed: u64,
    pub out_dir: Option<std::path::PathBuf>,
}

impl Default for BenchmarkOptions {
    fn default() -> Self {
        Self { rounds: DEFAULT_ROUNDS, num_seeds: 15, problem_seed: 1, out_dir: None }
    }
}

pub const BENCHMARK_M: usize = 1000;
pub const BENCHMARK_D: usize = 100;
pub const BENCHMARK_D_PRIME: usize = 5;
pub const BENCHMARK_B: f64 = 1.4;

#[derive(Debug, Clone)]
pub struct BenchmarkReport {
    pub constants: ProblemConstants,
    /// The single certificate shared by the three algorithms.
    pub certificate: RateCertificate,
    /// `(algorithm name, report)` for saga, lsvrg, elvira.
    pub runs: Vec<(String, RunReport)>,
}

/// The base configuration of the synthetic benchmark for one algorithm.
pub fn benchmark_config(kind: VariantKind, options: &BenchmarkOptions) -> ExperimentConfig {
    let name = match kind {
        VariantKind::Saga => "saga",
        VariantKind::Lsvrg => "lsvrg",
        VariantKind::Elvira => "elvira",
        _ => "other",
    };
    let out = |ext: &str| options.out_dir.as_ref().map(|d| d.join(format!("benchmark_{name}.{ext}")));
    ExperimentConfig {
        problem: ProblemConfig {
            num_components: BENCHMARK_M,
            dim: BENCHMARK_D,
            rows: BENCHMARK_D_PRIME,
            seed: options.problem_seed,
        },
        variant: VariantConfig {
            kind,
            n: Some(1),
            p: (kind != VariantKind::Saga).then_some(Probability::PerComponent(1.0)),
            compressor: None,
            c: None,
            u: None,
            r: None,
        },
        params: ParamsConfig {
            gamma: Setting::Auto,
            b: BChoice::Value(BENCHMARK_B),
            lambda: Setting::Auto,
            rho: Setting::Auto,
        },
        runs: RunsConfig {
            rounds: options.rounds,
            num_seeds: options.num_seeds,
            base_seed: 0,
            engine: Engine::Direct,
            mode: RunMode::Sequential,
        },
        outputs: OutputsConfig { csv_path: out("csv"), report_path: out("report.txt") },
    }
}

/// Single-sample SAGA, L-SVRG and ELVIRA with `p = 1/M` on one synthetic
/// instance, all with `b = 1.4` and `γ = 1/(L(1+b)²)`.
///
/// The three runs share the SAGA certificate: it is valid for L-SVRG (same
/// constants) and for ELVIRA (whose averaged deviation is a `(1−p)` fraction
/// of the sampling one), so `Ψ` and `c` coincide across algorithms.
pub fn reproduce_benchmark(options: &BenchmarkOptions) -> Result<BenchmarkReport> {
    let saga_config = benchmark_config(VariantKind::Saga, options);
    let (problem, saga) = resolve_config(&saga_config)?;
    let solution = solve_exact(&problem, SolveMode::Direct)?;
    let certificate = saga.certificate.clone();
    let constants = saga.constants;
    let mut runs = Vec::new();
    for kind in [VariantKind::Saga, VariantKind::Lsvrg, VariantKind::Elvira] {
        let mut config = benchmark_config(kind, options);
        config.params.gamma = Setting::Value(saga.params.gamma);
        let mut resolved = resolve_for_problem(&config, &problem)?;
        resolved.certificate = certificate.clone();
        let mut report = run_resolved(&config, &problem, &solution, resolved)?;
        if kind != VariantKind::Saga {
            report
                .notes
                .push("certificate shared with single-sample saga on the same instance (same b, gamma, c and Lyapunov weight)".into());
        }
        write_outputs(&report)?;
        runs.push((report.resolved.variant.name().to_string(), report));
    }
    Ok(BenchmarkReport { constants, certificate, runs })
}

/// Operator specs a configuration would exercise, for validation.
pub fn config_operators(config: &ExperimentConfig) -> Result<Vec<(String, OperatorSpec)>> {
    let m = config.problem.num_components;
    let d = config.problem.dim;
    let variant = config.variant_spec()?;
    let spec = specialize(&variant, m, d)?;
    let mut ops = Vec::new();
    match &spec.plan.c {
        crate::algo::COperator::Fixed(c) => ops.push(("C".to_string(), c.clone())),
        crate::algo::COperator::GatedByU { when_active, when_skipped } => {
            ops.push(("C (U active)".to_string(), when_active.clone()));
            ops.push(("C (U skipped)".to_string(), when_skipped.clone()));
        }
    }
    if let crate::algo::UOperator::Independent(u) = &spec.plan.u {
        ops.push(("U".to_string(), u.clone()));
    }
    ops.push(("R".to_string(), spec.plan.r.clone()));
    Ok(ops)
}
