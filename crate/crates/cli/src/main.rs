use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use murana::harness::{
    config_operators, generate_problem, reproduce_benchmark, resolve_config, run_experiment, BenchmarkOptions,
    ExperimentConfig, DEFAULT_ROUNDS,
};
use murana::ops::{validate_unbiased, validate_variance_bounds};
use murana::problem::{Objective, Vector};
use murana::{Error, Result};

#[derive(Parser)]
#[command(name = "murana", version, about = "Randomized proximal optimization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config file.
    Run {
        config: PathBuf,
        /// Override outputs.csv_path.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Override outputs.report_path.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Check unbiasedness and variance bounds of the configured operators.
    ValidateOps {
        config: PathBuf,
        #[arg(long, default_value_t = 20_000)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print the resolved parameters and rate certificate.
    Certify { config: PathBuf },
    /// Run single-sample SAGA, L-SVRG and ELVIRA on the synthetic quadratic benchmark.
    #[command(name = "reproduce-appendix-d")]
    ReproduceBenchmark {
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
        #[arg(long, default_value_t = DEFAULT_ROUNDS)]
        rounds: usize,
        #[arg(long, default_value_t = 15)]
        seeds: usize,
        #[arg(long, default_value_t = 1)]
        problem_seed: u64,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::CertificateRefused(_) => 2,
        Error::Diverged { .. } => 3,
        _ => 1,
    }
}

fn run(config: PathBuf, csv: Option<PathBuf>, report: Option<PathBuf>) -> Result<()> {
    let mut cfg = ExperimentConfig::from_file(&config)?;
    if csv.is_some() {
        cfg.outputs.csv_path = csv;
    }
    if report.is_some() {
        cfg.outputs.report_path = report;
    }
    let report = run_experiment(&cfg)?;
    let r = &report.resolved;
    println!("variant {}", r.variant);
    println!("L {:.6e} mu {:.6e} gamma {:.6e} c {:.8}", r.constants.l, r.constants.mu, r.params.gamma, r.certificate.c);
    if let Some(last) = report.summary.last() {
        println!(
            "k {} mean lyapunov {:.6e} bound {:.6e} mean grad calls {:.1}",
            last.k, last.mean_lyapunov, last.bound, last.mean_grad_calls
        );
    }
    for note in &report.notes {
        println!("note: {note}");
    }
    Ok(())
}

fn validate_ops(config: PathBuf, trials: usize, seed: u64) -> Result<bool> {
    let cfg = ExperimentConfig::from_file(&config)?;
    let p = &cfg.problem;
    let problem = generate_problem(p.num_components, p.dim, p.rows, p.seed)?;
    let x0 = Vector::zeros(problem.dim());
    let vectors = (0..problem.num_components())
        .map(|m| problem.grad_component(m, &x0))
        .collect::<Result<Vec<_>>>()?;
    let mut all = true;
    for (role, spec) in config_operators(&cfg)? {
        let unbiased = validate_unbiased(&spec, &vectors, trials, seed)?;
        let variance = validate_variance_bounds(&spec, &vectors, trials, seed)?;
        let ok = unbiased.passed() && variance.passed();
        all &= ok;
        println!(
            "{role} = {spec}: unbiased max_z {:.2}, averaged variance {:.4e} <= {:.4e}: {}",
            unbiased.max_z,
            variance.averaged.empirical,
            variance.averaged.bound,
            if ok { "PASS" } else { "FAIL" }
        );
    }
    Ok(all)
}

fn certify(config: PathBuf) -> Result<()> {
    let cfg = ExperimentConfig::from_file(&config)?;
    let (_, r) = resolve_config(&cfg)?;
    println!("variant = {}", r.variant);
    for (k, v) in r.certificate.fields() {
        println!("{k} = {v}");
    }
    Ok(())
}

fn benchmark(out_dir: PathBuf, rounds: usize, seeds: usize, problem_seed: u64) -> Result<()> {
    std::fs::create_dir_all(&out_dir).map_err(|e| Error::Config(format!("{}: {e}", out_dir.display())))?;
    let options = BenchmarkOptions { rounds, num_seeds: seeds, problem_seed, out_dir: Some(out_dir) };
    let report = reproduce_benchmark(&options)?;
    println!("L {:.4} mu {:.4} c {:.6}", report.constants.l, report.constants.mu, report.certificate.c);
    for (name, run) in &report.runs {
        let Some(last) = run.summary.last() else { continue };
        println!(
            "{name}: k {} mean lyapunov {:.4e} bound {:.4e} mean grad calls {:.0}",
            last.k, last.mean_lyapunov, last.bound, last.mean_grad_calls
        );
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, csv, report } => run(config, csv, report),
        Command::ValidateOps { config, trials, seed } => match validate_ops(config, trials, seed) {
            Ok(true) => Ok(()),
            Ok(false) => return ExitCode::from(1),
            Err(e) => Err(e),
        },
        Command::Certify { config } => certify(config),
        Command::ReproduceBenchmark { out_dir, rounds, seeds, problem_seed } => {
            benchmark(out_dir, rounds, seeds, problem_seed)
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
