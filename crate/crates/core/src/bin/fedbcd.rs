use std::io;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fedbcd::config::RunConfig;
use fedbcd::experiment::{run_experiment, run_latency_study, write_study_csv, StudyAxis};
use fedbcd::latency::LatencyDistribution;
use fedbcd::Error;

/// Simulator for federated learning of global and personalized models.
#[derive(Parser)]
#[command(name = "fedbcd", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write metrics, event traces and a summary.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Run only this seed instead of the configured list.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory.
        #[arg(long, env = "FEDBCD_OUT", default_value = "out")]
        out: PathBuf,
    },
    /// Tabulate empirical and approximate latency ratios.
    Latency(LatencyArgs),
    /// Show how the training data is split across devices.
    PartitionCheck {
        #[arg(long)]
        config: PathBuf,
    },
    /// Check a configuration against the structural and stepsize requirements.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Args)]
struct LatencyArgs {
    /// Distribution: exp:MEAN, weibull:SHAPE:SCALE, uniform:LO:HI or det:VALUE.
    #[arg(long)]
    dist: LatencyDistribution,
    /// Number of servers.
    #[arg(long)]
    n: usize,
    /// Numbers of aggregated servers.
    #[arg(
        long,
        value_delimiter = ',',
        required_unless_present = "beta",
        conflicts_with = "beta"
    )]
    b: Option<Vec<usize>>,
    /// Fractions of aggregated servers.
    #[arg(long, value_delimiter = ',')]
    beta: Option<Vec<f64>>,
    #[arg(long, default_value_t = 100_000)]
    trials: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

enum Failure {
    Validation(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::InvalidHyper(_) | Error::InvalidDistribution(_) => {
                Failure::Validation(e.to_string())
            }
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

fn load(path: &Path) -> Result<RunConfig, Failure> {
    RunConfig::load(path).map_err(|e| match e {
        Error::Io(m) => Failure::Runtime(m),
        other => Failure::Validation(other.to_string()),
    })
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Run { config, seed, out } => {
            let mut cfg = load(&config)?;
            if let Some(s) = seed {
                cfg.seeds = vec![s];
            }
            let report = cfg.validate();
            eprint!("{report}");
            if report.has_errors() {
                return Err(Failure::Validation("configuration is invalid".into()));
            }
            let summary = run_experiment(&cfg, &out)?;
            for s in &summary.per_seed {
                println!(
                    "seed {}: {} rounds, sim_time {:.3} s, objective {:.6e} -> {}",
                    s.seed,
                    s.final_metrics.round,
                    s.total_sim_time,
                    s.final_metrics.objective_value,
                    out.join(&s.metrics_file).display()
                );
            }
        }
        Command::Latency(a) => {
            let axis = match (a.b, a.beta) {
                (Some(b), _) => StudyAxis::Servers(b),
                (None, Some(beta)) => StudyAxis::Fractions(beta),
                (None, None) => unreachable!("clap requires one axis"),
            };
            let rows = run_latency_study(&a.dist, a.n, &axis, a.trials, a.seed)?;
            write_study_csv(&rows, io::stdout().lock())?;
        }
        Command::PartitionCheck { config } => {
            let cfg = load(&config)?;
            let seed = cfg.seeds.first().copied().unwrap_or(0);
            let (problem, tests) = cfg.build_problem(seed)?;
            println!("device,server,samples,classes,test_samples");
            for (i, d) in problem.devices().iter().enumerate() {
                let classes: Vec<String> = d
                    .dataset
                    .classes_present()
                    .iter()
                    .map(|c| c.to_string())
                    .collect();
                let test = tests.personal.get(i).map_or(0, |t| t.len());
                println!(
                    "{i},{},{},{},{test}",
                    problem.server_of(i),
                    d.dataset.len(),
                    classes.join(" ")
                );
            }
        }
        Command::Validate { config } => {
            let cfg = load(&config)?;
            let report = cfg.validate();
            let report = if report.has_errors() {
                report
            } else {
                let seed = cfg.seeds.first().copied().unwrap_or(0);
                let (problem, _) = cfg.build_problem(seed)?;
                cfg.validate_with_problem(&problem)
            };
            print!("{report}");
            if report.has_errors() {
                return Err(Failure::Validation("configuration is invalid".into()));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}
