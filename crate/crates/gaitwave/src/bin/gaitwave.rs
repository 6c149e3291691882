use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gaitwave::config::ExperimentConfig;
use gaitwave::error::Result;
use gaitwave::report::{load_results, render, summary_markdown, write_reports, write_scoped_summary};
use gaitwave::runner::{run_experiment, RunOptions};
use gaitwave::synth_io::{load_specs, write_synth};
use gaitwave_core::experiments::Scope;

#[derive(Parser)]
#[command(name = "gaitwave", version, about = "Wi-Fi CSI gait identification benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset (recordings + manifest).
    Synth {
        /// JSON file with one spec or a list of specs, one per band.
        spec: PathBuf,
        /// Output directory.
        #[arg(short, long, default_value = "data")]
        out: PathBuf,
        /// Window length used for the printed summary.
        #[arg(long, default_value_t = 5.0)]
        window_seconds: f64,
        /// Overwrite an existing manifest.
        #[arg(long)]
        force: bool,
    },
    /// Run the comparison and/or learning curve of an experiment config.
    Run {
        config: PathBuf,
        /// Worker threads.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Overrides the split and training seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Skip jobs whose results already exist.
        #[arg(long, conflicts_with = "force")]
        resume: bool,
        /// Discard earlier job results in the output directory.
        #[arg(long)]
        force: bool,
    },
    /// Regenerate tables and summaries from a results directory.
    Report {
        results_dir: PathBuf,
        /// Summarise non-LSTM rows only.
        #[arg(long, conflicts_with = "exclude_lstm_humanfi")]
        exclude_lstm: bool,
        /// Summarise rows other than LSTM-HumanFi.
        #[arg(long)]
        exclude_lstm_humanfi: bool,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth {
            spec,
            out,
            window_seconds,
            force,
        } => {
            let specs = load_specs(&spec)?;
            let (_, summary) = write_synth(&specs, &out, window_seconds, force)?;
            println!("wrote {}", out.display());
            print!("{summary}");
            Ok(())
        }
        Command::Run {
            config,
            jobs,
            seed,
            resume,
            force,
        } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(s) = seed {
                cfg = cfg.with_seed(s);
            }
            let out = run_experiment(&cfg, RunOptions { jobs, resume, force })?;
            print!("{}", render(&out.results));
            println!(
                "\n{} jobs run, {} reused; results in {}",
                out.executed,
                out.reused,
                cfg.output_dir.display()
            );
            match out.failure {
                Some(e) => Err(e),
                None => Ok(()),
            }
        }
        Command::Report {
            results_dir,
            exclude_lstm,
            exclude_lstm_humanfi,
        } => {
            let r = load_results(&results_dir)?;
            write_reports(&results_dir, &r)?;
            let scope = if exclude_lstm {
                Some(Scope::ExclAllLstm)
            } else if exclude_lstm_humanfi {
                Some(Scope::ExclLstmHumanfi)
            } else {
                None
            };
            match scope {
                Some(s) => {
                    let a = write_scoped_summary(&results_dir, &r, s)?;
                    print!("{}", summary_markdown(&[a]));
                }
                None => print!("{}", render(&r)),
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
