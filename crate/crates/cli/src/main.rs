use std::fs::File;
use std::io::BufReader;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use mvc::hypotheses::HypothesisSpec;
use mvc::testing::Modification;
use mvc_cli::commands::{
    cmd_generate, cmd_moments, cmd_simulate, cmd_test, parse_scenario, render_moments_text,
    render_test_json, render_test_text, Improvement,
};
use mvc_cli::dataset::{read_csv, DataSet};
use mvc_cli::CliError;

/// Hypothesis tests on component moments of mixtures with varying
/// concentrations.
#[derive(Parser)]
#[command(name = "mvctest", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModArg {
    Ss,
    Si,
    Ii,
    All,
}

impl ModArg {
    fn modifications(self) -> Vec<Modification> {
        match self {
            ModArg::Ss => vec![Modification::Ss],
            ModArg::Si => vec![Modification::Si],
            ModArg::Ii => vec![Modification::Ii],
            ModArg::All => Modification::ALL.to_vec(),
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ImprovementArg {
    Plus,
    Minus,
    Pm,
}

#[derive(Subcommand)]
enum Command {
    /// Test a hypothesis on the data in a CSV file.
    Test {
        data: PathBuf,
        /// `means-all`, `means i k`, `mean i v`, `vars-all`, `vars i k` or
        /// `dist i k cells=c0,c1,...` (components are numbered from 1).
        #[arg(long = "hyp")]
        hypothesis: String,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long = "mod", value_enum, default_value = "si")]
        modification: ModArg,
        /// Divide each concentration row by its sum.
        #[arg(long)]
        renormalize: bool,
        #[arg(long)]
        json: bool,
    },
    /// Simple and improved means and variances of every component.
    Moments {
        data: PathBuf,
        #[arg(long, value_enum, default_value = "pm")]
        improvement: ImprovementArg,
        #[arg(long)]
        renormalize: bool,
        #[arg(long)]
        json: bool,
    },
    /// Run a Monte-Carlo scenario and write its error frequencies as CSV.
    Simulate {
        config: PathBuf,
        /// Overrides the seed in the scenario file.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads (1 runs sequentially).
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Write one synthetic data set drawn from a scenario's component laws.
    Generate {
        config: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
}

fn load(path: &PathBuf, renormalize: bool) -> Result<DataSet, CliError> {
    read_csv(BufReader::new(File::open(path)?), renormalize)
}

fn emit(text: &str, out: Option<&PathBuf>) -> Result<(), CliError> {
    match out {
        Some(path) => std::fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Test {
            data,
            hypothesis,
            alpha,
            modification,
            renormalize,
            json,
        } => {
            let spec: HypothesisSpec = hypothesis.parse()?;
            let data = load(&data, renormalize)?;
            let reports = cmd_test(&data, &spec, alpha, &modification.modifications())?;
            if json {
                println!("{}", render_test_json(&reports));
            } else {
                print!("{}", render_test_text(&data, &reports));
            }
        }
        Command::Moments {
            data,
            improvement,
            renormalize,
            json,
        } => {
            let data = load(&data, renormalize)?;
            let improvement = match improvement {
                ImprovementArg::Plus => Improvement::Plus,
                ImprovementArg::Minus => Improvement::Minus,
                ImprovementArg::Pm => Improvement::Pm,
            };
            let moments = cmd_moments(&data, improvement)?;
            if json {
                println!(
                    "{}",
                    serde_json::to_string_pretty(&moments)
                        .map_err(|e| CliError::Other(e.to_string()))?
                );
            } else {
                print!("{}", render_moments_text(&moments));
            }
        }
        Command::Simulate {
            config,
            seed,
            threads,
            out,
        } => {
            let mut cfg = parse_scenario(&std::fs::read_to_string(&config)?)?;
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            emit(&cmd_simulate(&cfg, threads)?, out.as_ref())?;
        }
        Command::Generate {
            config,
            n,
            seed,
            out,
        } => {
            let cfg = parse_scenario(&std::fs::read_to_string(&config)?)?;
            emit(&cmd_generate(&cfg, n, seed)?, out.as_ref())?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
