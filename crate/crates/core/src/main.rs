use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use adfl::harness::{check_experiment, plot_panels, run_experiment, worker_threads, ExperimentConfig};

/// Decentralized federated learning simulator.
#[derive(Debug, Parser)]
#[command(name = "adfl", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the configured experiment matrix.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (overrides `output_dir` in the config).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Master seed (overrides the config).
        #[arg(long)]
        seed: Option<u64>,
        /// Replications per cell (overrides the config).
        #[arg(long)]
        reps: Option<usize>,
        /// Worker threads; `ADFL_THREADS` takes precedence.
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Draw one SVG panel per corruption and topology from a runs file.
    Plot {
        #[arg(long)]
        runs: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Report topology and data conditions without running the algorithms.
    Check {
        #[arg(long)]
        config: PathBuf,
    },
}

/// Configuration, schema and I/O problems all exit with status 1.
fn fail(e: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(1)
}

fn run(
    config: PathBuf,
    out: Option<PathBuf>,
    seed: Option<u64>,
    reps: Option<usize>,
    threads: Option<usize>,
) -> ExitCode {
    let mut cfg = match ExperimentConfig::load(&config) {
        Ok(c) => c,
        Err(e) => return fail(e),
    };
    if let Some(seed) = seed {
        cfg.master_seed = seed;
    }
    if let Some(reps) = reps {
        if reps == 0 {
            return fail("--reps must be at least 1");
        }
        cfg.replications = reps;
    }
    let out_dir = match out.or_else(|| cfg.output_dir.clone()) {
        Some(dir) => dir,
        None => PathBuf::from("out"),
    };
    let threads = match worker_threads(threads.or(cfg.threads)) {
        Ok(n) => n,
        Err(e) => return fail(e),
    };
    match run_experiment(&cfg, &out_dir, threads) {
        Ok(report) => {
            println!("wrote {}", report.runs_csv.display());
            println!("wrote {}", report.summary_csv.display());
            println!("wrote {}", report.meta_json.display());
            if report.fully_diverged.is_empty() {
                ExitCode::SUCCESS
            } else {
                for key in &report.fully_diverged {
                    eprintln!("every replicate diverged: {key}");
                }
                ExitCode::from(2)
            }
        }
        Err(e) => fail(e),
    }
}

fn plot(runs: PathBuf, out: Option<PathBuf>) -> ExitCode {
    let out_dir = out.unwrap_or_else(|| {
        runs.parent()
            .map(|p| p.join("plots"))
            .unwrap_or_else(|| PathBuf::from("plots"))
    });
    match plot_panels(&runs, &out_dir) {
        Ok(paths) => {
            for p in paths {
                println!("wrote {}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => fail(e),
    }
}

fn check(config: PathBuf) -> ExitCode {
    let cfg = match ExperimentConfig::load(&config) {
        Ok(c) => c,
        Err(e) => return fail(e),
    };
    let lines = match check_experiment(&cfg) {
        Ok(l) => l,
        Err(e) => return fail(e),
    };
    let mut seen = Vec::new();
    for line in &lines {
        if seen.contains(&line.topology) {
            continue;
        }
        seen.push(line.topology);
        let r = &line.report;
        println!(
            "topology {} {}: SE(W) = {:.3e}, spectral condition = {:.6} ({}), strongly connected = {}",
            line.topology.name(),
            line.topology.param(),
            r.network_balance,
            r.spectral_condition,
            if r.spectral_pass { "pass" } else { "FAIL" },
            r.strongly_connected
        );
    }
    for line in &lines {
        let r = &line.report;
        let fmt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
        let min_local = r
            .local_lambda_min
            .iter()
            .map(|v| v.unwrap_or(0.0))
            .fold(f64::INFINITY, f64::min);
        println!(
            "{} rho={} {} {}: lambda_n = {:.3}, consensus statistic = {:.3e}, min abnormal bias = {}, max normal bias = {}, separated = {}, min local lambda_min = {:.4}",
            line.corruption.name(),
            line.rho,
            line.topology.name(),
            line.topology.param(),
            line.lambda_n,
            r.consensus_statistic,
            fmt(r.min_abnormal_bias),
            fmt(r.max_normal_bias),
            r.bias_separated.map_or("-".to_string(), |b| b.to_string()),
            min_local
        );
    }
    ExitCode::SUCCESS
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match cli.command {
        Command::Run {
            config,
            out,
            seed,
            reps,
            threads,
        } => run(config, out, seed, reps, threads),
        Command::Plot { runs, out } => plot(runs, out),
        Command::Check { config } => check(config),
    }
}
