//! `multikge`: train embedding models, audit predictive multiplicity and
//! aggregate candidate rankings from the command line.
//!
//! Exit codes: 0 success, 1 invalid spec or arguments, 2 runtime failure.

use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use multikge::experiment::{self, ExperimentSpec};
use multikge::voting::{aggregate, read_profiles, write_aggregated};
use multikge::{Error, VotingRule};

#[derive(Parser)]
#[command(name = "multikge", version, about)]
struct Cli {
    /// Worker threads for training and evaluation (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the spec's model and write its checkpoint and Hits@K.
    Train(SpecArg),
    /// Build an ε-level set and report multiplicity with and without voting.
    Audit(SpecArg),
    /// Threshold one retrained pool at every ε of the sweep.
    SweepEps(SpecArg),
    /// Report multiplicity against the number of aggregated models.
    SweepAgg(SpecArg),
    /// Aggregate external ranking profiles from a CSV file.
    Aggregate {
        /// CSV with columns query_id,voter_id,entity_id,raw_score,position.
        #[arg(long)]
        profiles: PathBuf,
        #[arg(long, default_value = "borda")]
        rule: VotingRule,
        /// Output CSV (stdout when omitted).
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Correlate training frequency with per-group multiplicity of an audit.
    Correlate(SpecArg),
    /// Rebuild the audit summary table from its metrics CSV.
    Report(SpecArg),
}

#[derive(clap::Args)]
struct SpecArg {
    /// Experiment spec (TOML).
    #[arg(long)]
    spec: PathBuf,
}

fn is_spec_error(e: &Error) -> bool {
    matches!(e, Error::Config(_) | Error::Parameter(_))
}

fn load_spec(path: &Path) -> Result<ExperimentSpec, ExitCode> {
    ExperimentSpec::load(path).map_err(|e| {
        eprintln!("error: {e}");
        ExitCode::from(1)
    })
}

fn run_spec_command(name: &str, path: &Path, f: impl Fn(&ExperimentSpec, &mut experiment::Outputs) -> multikge::Result<()>) -> ExitCode {
    let spec = match load_spec(path) {
        Ok(s) => s,
        Err(code) => return code,
    };
    let root = spec.output_dir();
    match experiment::run_command(&root, name, |out| f(&spec, out)) {
        Ok(()) => {
            log::info!("{name} outputs written to {}", root.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if is_spec_error(&e) { 1 } else { 2 })
        }
    }
}

fn run_aggregate(profiles: &Path, rule: VotingRule, output: Option<&Path>) -> multikge::Result<()> {
    let file = File::open(profiles).map_err(|e| Error::io(profiles, e))?;
    let parsed = read_profiles(BufReader::new(file))?;
    let rankings = parsed
        .iter()
        .map(|(id, p)| Ok((id.clone(), aggregate(p, rule)?)))
        .collect::<multikge::Result<Vec<_>>>()?;
    match output {
        Some(path) => {
            let f = File::create(path).map_err(|e| Error::io(path, e))?;
            write_aggregated(f, &rankings)
        }
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            write_aggregated(&mut lock, &rankings)?;
            lock.flush().map_err(|e| Error::io("stdout", e))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot size worker pool: {e}");
            return ExitCode::from(1);
        }
    }

    match cli.command {
        Command::Train(a) => run_spec_command("train", &a.spec, |s, o| experiment::run_train(s, o).map(drop)),
        Command::Audit(a) => run_spec_command("audit", &a.spec, |s, o| {
            let outcome = experiment::run_audit(s, o)?;
            if let Some(text) = o.get(Path::new("audit/summary.txt")) {
                print!("{}", String::from_utf8_lossy(text));
            }
            log::info!("level set: {} competitors", outcome.level_set.competitors.len());
            Ok(())
        }),
        Command::SweepEps(a) => {
            run_spec_command("sweep_eps", &a.spec, |s, o| experiment::run_sweep_epsilon(s, o).map(drop))
        }
        Command::SweepAgg(a) => {
            run_spec_command("sweep_agg", &a.spec, |s, o| experiment::run_sweep_aggregation(s, o).map(drop))
        }
        Command::Correlate(a) => {
            run_spec_command("correlate", &a.spec, |s, o| experiment::run_correlate(s, o).map(drop))
        }
        Command::Report(a) => run_spec_command("report", &a.spec, |s, o| {
            let text = experiment::run_report(&s.output_dir(), o)?;
            print!("{text}");
            Ok(())
        }),
        Command::Aggregate {
            profiles,
            rule,
            output,
        } => match run_aggregate(&profiles, rule, output.as_deref()) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(if matches!(e, Error::Data(_) | Error::Csv(_) | Error::Io { .. }) { 1 } else { 2 })
            }
        },
    }
}
