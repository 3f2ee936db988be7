//! `pqlearn`: fit penalized Q-learning models to CSV data, run the
//! simulation and bootstrap studies, and render their summaries.

mod config;
mod data;
mod error;
mod fit;
mod output;
mod report;
mod study;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::RunConfig;
use error::{CliError, CliResult};
use study::{parse_list, StudyArgs};

#[derive(Parser)]
#[command(name = "pqlearn", version, about = "Penalized Q-learning for dynamic treatment regimes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit every stage of a CSV dataset and write a JSON result.
    Fit {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Monte Carlo study of the stage-one estimates in a standard setting.
    Simulate {
        #[command(flatten)]
        study: StudyFlags,
        #[arg(long, default_value = "pq,oracle,hardmax")]
        estimators: String,
        #[arg(long, default_value_t = 1000)]
        reps: usize,
    },
    /// Monte Carlo study of bootstrap intervals.
    Bootstrap {
        #[command(flatten)]
        study: StudyFlags,
        #[arg(long, default_value = "hardmax,ht0.08,ht0.2,soft")]
        estimators: String,
        #[arg(long, default_value_t = 500)]
        reps: usize,
        #[arg(long = "boot-B", default_value_t = 500)]
        boot_b: usize,
        #[arg(long = "ci-methods", default_value = "pb,hb")]
        ci_methods: String,
    },
    /// Render a study CSV as an aligned table.
    Report {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write one simulated cohort as CSV.
    Generate {
        #[arg(long)]
        setting: usize,
        #[arg(long, default_value_t = 300)]
        n: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct StudyFlags {
    #[arg(long)]
    setting: usize,
    #[arg(long, default_value_t = 300)]
    n: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

fn study_args(flags: &StudyFlags, estimators: &str, reps: usize) -> CliResult<StudyArgs> {
    Ok(StudyArgs {
        setting: flags.setting,
        n: flags.n,
        reps,
        seed: flags.seed,
        estimators: parse_list(estimators, "estimators")?,
    })
}

fn write_csv_report(path: &PathBuf, write: impl FnOnce(&mut dyn std::io::Write) -> pqlearn::Result<()>) -> CliResult<()> {
    output::write_atomic(path, |w| Ok(write(w)?))
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Fit { data, config, out } => {
            let config = RunConfig::load(Some(&config))?;
            let dataset = data::load(&data, &config)?;
            let doc = fit::run(&dataset, &config)?;
            output::write_atomic(&out, |w| {
                serde_json::to_writer_pretty(&mut *w, &doc).map_err(|e| CliError::Io(e.into()))?;
                Ok(w.write_all(b"\n")?)
            })?;
            print!("{}", fit::summary(&doc));
        }
        Command::Simulate { study, estimators, reps } => {
            let config = RunConfig::load(study.config.as_deref())?;
            let report = study::simulate(&study_args(&study, &estimators, reps)?, &config)?;
            write_csv_report(&study.out, |w| report.write_csv(w))?;
            print!("{}", report::render(&report::Rows::Study(report.rows.clone())));
            if report.redraws > 0 {
                eprintln!("{} replications were redrawn after a fit failed", report.redraws);
            }
        }
        Command::Bootstrap {
            study,
            estimators,
            reps,
            boot_b,
            ci_methods,
        } => {
            let config = RunConfig::load(study.config.as_deref())?;
            let methods = parse_list(&ci_methods, "ci-methods")?;
            let report = study::bootstrap(&study_args(&study, &estimators, reps)?, boot_b, methods, &config)?;
            write_csv_report(&study.out, |w| report.write_csv(w))?;
            print!("{}", report::render(&report::Rows::Bootstrap(report.rows.clone())));
        }
        Command::Report { data, out } => {
            let text = std::fs::read_to_string(&data)
                .map_err(|e| CliError::Data(format!("cannot read {}: {e}", data.display())))?;
            let table = report::render(&report::parse(&text)?);
            match out {
                Some(path) => output::write_atomic(&path, |w| Ok(w.write_all(table.as_bytes())?))?,
                None => print!("{table}"),
            }
        }
        Command::Generate { setting, n, seed, out } => {
            output::write_atomic(&out, |w| study::write_cohort(setting, n, seed, w))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("pqlearn: {e}");
            e.exit_code()
        }
    }
}
