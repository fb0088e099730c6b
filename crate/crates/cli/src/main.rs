use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;
use fairsched_cli::{parse_config, run_experiment, Case, Method, Overrides};

/// Runs rate- or activation-constrained scheduling experiments from a JSON config.
///
/// Command-line values take precedence over the config file. Exit status is
/// 0 on success, 1 on a configuration or I/O error and 2 when a solver did
/// not converge (artifacts are still written).
#[derive(Debug, Parser)]
#[command(name = "fairsched", version, about, long_about = None)]
struct Cli {
    /// Experiment configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// rate or activation.
    #[arg(long)]
    case: Option<Case>,
    /// subgradient, mdp, greedy or all.
    #[arg(long)]
    method: Option<Method>,
    /// Fairness value; repeat to sweep. Replaces the config's q_values.
    #[arg(long = "q", allow_negative_numbers = true)]
    q: Vec<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Holding-time truncation of the MDP.
    #[arg(long)]
    tau_max: Option<usize>,
    /// Iteration cap for the rate solver and value iteration.
    #[arg(long)]
    max_iter: Option<usize>,
    /// Output root; artifacts go to DIR/{name}/{method}/q={q}/.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let overrides = Overrides {
        case: cli.case,
        method: cli.method,
        q: cli.q,
        seed: cli.seed,
        tau_max: cli.tau_max,
        max_iter: cli.max_iter,
        out: cli.out,
    };
    let mut cfg = match parse_config(&cli.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    if let Err(e) = overrides.apply(&mut cfg) {
        eprintln!("error: {e}");
        return ExitCode::from(1);
    }
    match run_experiment(&cfg) {
        Ok(outcome) => {
            print!("{}", outcome.summary);
            println!("artifacts: {}", outcome.root.display());
            if !outcome.all_converged() {
                eprintln!("warning: some solvers did not converge");
            }
            ExitCode::from(outcome.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
