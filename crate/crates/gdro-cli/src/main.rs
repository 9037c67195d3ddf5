use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use gdro_cli::config::ExperimentConfig;
use gdro_cli::{cmd_compare, cmd_gen_data, cmd_run, exit_code, write_summary};

#[derive(Parser)]
#[command(name = "gdro", about = "Group distributionally robust optimization experiment runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override a config key, e.g. --override run.t=5000 (repeatable).
    #[arg(long = "override", value_parser = parse_override)]
    overrides: Vec<(String, String)>,
    /// Output directory; defaults to run.out_dir from the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Materialize the configured dataset into the cache format.
    GenData(ConfigArgs),
    /// Run the configured solver suite, one trace CSV per (algorithm, seed).
    Run {
        #[command(flatten)]
        config: ConfigArgs,
        /// Added to every seed in run.seeds.
        #[arg(long, default_value_t = 0)]
        seed_offset: u64,
    },
    /// Aggregate trace CSVs: seed medians, orderings, slope estimates.
    Compare {
        /// Directory holding trace CSVs from `gdro run`.
        traces: PathBuf,
        /// Where to write summary.csv; defaults to the trace directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_override(raw: &str) -> Result<(String, String), String> {
    raw.split_once('=')
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .ok_or_else(|| format!("override '{raw}' is not of the form key=value"))
}

fn run() -> Result<(), gdro::Error> {
    let cli = Cli::parse();
    match cli.command {
        Command::GenData(args) => {
            let config = ExperimentConfig::load(&args.config, &args.overrides)?;
            let out = args
                .out
                .unwrap_or_else(|| config.run.out_dir.join("dataset"));
            cmd_gen_data(&config, &out)
        }
        Command::Run { config: args, seed_offset } => {
            let config = ExperimentConfig::load(&args.config, &args.overrides)?;
            let out = args.out.unwrap_or_else(|| config.run.out_dir.clone());
            let written = cmd_run(&config, &out, seed_offset)?;
            println!("wrote {} trace files to {}", written.len(), out.display());
            Ok(())
        }
        Command::Compare { traces, out } => {
            let summaries = cmd_compare(&traces)?;
            let out = out.unwrap_or_else(|| traces.clone());
            std::fs::create_dir_all(&out)?;
            write_summary(&summaries, &out.join("summary.csv"))?;
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err) as u8)
        }
    }
}
