use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use eblp::ShrinkMode;
use eblp_cli::commands::{self, BenchmarkArgs, DenoiseArgs, OosArgs, SimulateArgs};
use eblp_cli::io::DEFAULT_NA;

#[derive(Parser)]
#[command(name = "eblp", version, about = "Empirical best linear prediction for spiked models")]
struct Cli {
    /// Log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    White,
    Plugin,
}

#[derive(Subcommand)]
enum Command {
    /// Denoise a data matrix (rows are samples).
    Denoise {
        input: PathBuf,
        /// 0/1 matrix of observed entries, combined with NA entries.
        #[arg(long)]
        mask: Option<PathBuf>,
        #[arg(long, default_value = DEFAULT_NA)]
        na_token: String,
        /// Number of components; chosen from the spectrum when omitted.
        #[arg(long)]
        rank: Option<usize>,
        #[arg(long, overrides_with = "no_whiten")]
        whiten: bool,
        #[arg(long)]
        no_whiten: bool,
        /// Shrinkage estimates (default: white when whitening, plugin otherwise).
        #[arg(long, value_enum)]
        mode: Option<Mode>,
        /// Skip mean removal.
        #[arg(long)]
        no_center: bool,
        /// Known noise variance; estimated when omitted.
        #[arg(long)]
        noise_variance: Option<f64>,
        /// Write the fitted model as JSON.
        #[arg(long)]
        save_model: Option<PathBuf>,
        /// Output matrix (stdout when omitted); a report is written to
        /// `<output>.report.json`.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Predict new samples with a saved model.
    Oos {
        #[arg(long)]
        model: PathBuf,
        input: PathBuf,
        #[arg(long)]
        mask: Option<PathBuf>,
        #[arg(long, default_value = DEFAULT_NA)]
        na_token: String,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Run a simulation benchmark described by a TOML file.
    Benchmark {
        config: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        /// Worker threads (default: all cores).
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Draw one simulated dataset.
    Simulate {
        #[arg(long, default_value_t = 300)]
        p: usize,
        #[arg(long, default_value_t = 0.8)]
        gamma: f64,
        /// Spike strengths, comma separated.
        #[arg(long, value_delimiter = ',', default_values_t = [10.0, 9.0, 8.0, 7.0, 6.0, 5.0, 4.0, 3.0, 2.0, 1.0])]
        spikes: Vec<f64>,
        /// Nonzero coordinates per PC (dense when omitted).
        #[arg(long)]
        sparsity: Option<usize>,
        /// Column observation probabilities ramp from delta to 1 - delta.
        #[arg(long)]
        linear: bool,
        /// Observation probability (or ramp start with --linear).
        #[arg(long, default_value_t = 1.0)]
        delta: f64,
        #[arg(long, default_value_t = 1.0)]
        sigma: f64,
        /// Noise variance condition number (white noise when omitted).
        #[arg(long)]
        kappa: Option<f64>,
        #[arg(long)]
        random_mean: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0)]
        replicate: usize,
        #[arg(short, long)]
        output: PathBuf,
        /// Also write the clean signals.
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long, default_value = DEFAULT_NA)]
        na_token: String,
    },
}

fn run(cli: Cli) -> eblp_cli::Result<()> {
    match cli.command {
        Command::Denoise {
            input,
            mask,
            na_token,
            rank,
            whiten: _,
            no_whiten,
            mode,
            no_center,
            noise_variance,
            save_model,
            output,
        } => commands::denoise(&DenoiseArgs {
            input,
            mask,
            na_token,
            rank,
            whiten: !no_whiten,
            mode: mode.map(|m| match m {
                Mode::White => ShrinkMode::White,
                Mode::Plugin => ShrinkMode::Plugin,
            }),
            center: !no_center,
            noise_variance,
            save_model,
            output,
        }),
        Command::Oos {
            model,
            input,
            mask,
            na_token,
            output,
        } => commands::oos(&OosArgs {
            model,
            input,
            mask,
            na_token,
            output,
        }),
        Command::Benchmark { config, output, jobs } => commands::benchmark(&BenchmarkArgs {
            config,
            output,
            jobs: jobs.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get())),
        }),
        Command::Simulate {
            p,
            gamma,
            spikes,
            sparsity,
            linear,
            delta,
            sigma,
            kappa,
            random_mean,
            seed,
            replicate,
            output,
            truth,
            na_token,
        } => commands::simulate_cmd(&SimulateArgs {
            p,
            gamma,
            spikes,
            sparsity,
            linear,
            delta,
            sigma,
            kappa,
            random_mean,
            seed,
            replicate,
            output,
            truth,
            na_token,
        }),
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
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
