//! Subcommand implementations.

use std::fs;
use std::path::{Path, PathBuf};

use eblp::pipeline::suggest_rank;
use eblp::simulate::{simulate, ExperimentConfig, NoiseLaw, PcSparsity, Sampling};
use eblp::{fit_in_sample, EblpModel, FitOptions, ShrinkMode};
use ndarray::Array2;
use serde::Serialize;

use crate::bench::{run_benchmark, timing_path, write_output};
use crate::config::BenchmarkConfig;
use crate::error::{CliError, Result};
use crate::io::{format_matrix, load_dataset, write_matrix, Delimiter};

#[derive(Debug, Clone)]
pub struct DenoiseArgs {
    pub input: PathBuf,
    pub mask: Option<PathBuf>,
    pub na_token: String,
    /// `None` picks a rank from the spectrum.
    pub rank: Option<usize>,
    pub whiten: bool,
    pub mode: Option<ShrinkMode>,
    pub center: bool,
    pub noise_variance: Option<f64>,
    pub save_model: Option<PathBuf>,
    /// `None` writes to stdout.
    pub output: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct ComponentReport {
    index: usize,
    ell_hat: f64,
    c2_hat: f64,
    ct2_hat: f64,
    lambda_star: f64,
    sigma_obs: f64,
    supercritical: bool,
    clamped: bool,
}

#[derive(Debug, Serialize)]
struct Report {
    n: usize,
    p: usize,
    rank: usize,
    whitened: bool,
    mode: ShrinkMode,
    noise_variance: f64,
    amse: f64,
    components: Vec<ComponentReport>,
}

/// `<output>.report.json`.
pub fn report_path(output: &Path) -> PathBuf {
    let mut s = output.as_os_str().to_owned();
    s.push(".report.json");
    PathBuf::from(s)
}

fn emit(output: Option<&Path>, m: &Array2<f64>, delimiter: Delimiter) -> Result<()> {
    match output {
        Some(path) => write_matrix(path, m, delimiter),
        None => {
            print!("{}", format_matrix(m, delimiter));
            Ok(())
        }
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn denoise(args: &DenoiseArgs) -> Result<()> {
    let (data, delimiter) = load_dataset(&args.input, args.mask.as_deref(), &args.na_token)?;
    if data.n() == 0 || data.p() == 0 {
        return Err(CliError::Invalid(format!("{} contains no data", args.input.display())));
    }
    let mut opts = FitOptions::new(1).whiten(args.whiten).center(args.center);
    if let Some(mode) = args.mode {
        opts = opts.mode(mode);
    }
    if let Some(v) = args.noise_variance {
        opts = opts.noise_variance(v);
    }
    opts.rank = match args.rank {
        Some(r) => r,
        None => {
            let r = suggest_rank(&data, &opts, 0.05)?.max(1);
            log::info!("selected rank {r}");
            r
        }
    };
    let (model, x_hat) = fit_in_sample(&data, &opts)?;
    emit(args.output.as_deref(), &x_hat, delimiter)?;
    if let Some(out) = &args.output {
        let report = Report {
            n: data.n(),
            p: data.p(),
            rank: model.rank,
            whitened: model.whitened,
            mode: model.mode,
            noise_variance: model.noise_variance,
            amse: model.amse_unwhitened(),
            components: model
                .estimates
                .iter()
                .enumerate()
                .map(|(index, e)| ComponentReport {
                    index,
                    ell_hat: e.ell_hat,
                    c2_hat: e.c2_hat,
                    ct2_hat: e.ct2_hat,
                    lambda_star: e.lambda_star,
                    sigma_obs: e.sigma_obs,
                    supercritical: e.supercritical,
                    clamped: e.clamped,
                })
                .collect(),
        };
        write_json(&report_path(out), &report)?;
    }
    if let Some(path) = &args.save_model {
        write_json(path, &model)?;
    }
    Ok(())
}

pub fn load_model(path: &Path) -> Result<EblpModel> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let model: EblpModel = serde_json::from_str(&text).map_err(|e| CliError::Model {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })?;
    model.validate().map_err(|e| CliError::Model {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })?;
    Ok(model)
}

#[derive(Debug, Clone)]
pub struct OosArgs {
    pub model: PathBuf,
    pub input: PathBuf,
    pub mask: Option<PathBuf>,
    pub na_token: String,
    pub output: Option<PathBuf>,
}

pub fn oos(args: &OosArgs) -> Result<()> {
    let model = load_model(&args.model)?;
    let (data, delimiter) = load_dataset(&args.input, args.mask.as_deref(), &args.na_token)?;
    let pred = if data.n() == 0 {
        Array2::zeros((0, model.dim()))
    } else {
        model.predict_dataset(&data)?
    };
    emit(args.output.as_deref(), &pred, delimiter)
}

#[derive(Debug, Clone)]
pub struct BenchmarkArgs {
    pub config: PathBuf,
    pub output: PathBuf,
    pub jobs: usize,
}

pub fn benchmark(args: &BenchmarkArgs) -> Result<()> {
    let config = BenchmarkConfig::load(&args.config)?;
    let out = run_benchmark(&config, args.jobs)?;
    write_output(&out, &args.output)?;
    log::info!(
        "wrote {} rows to {} (timings in {})",
        out.rows.len(),
        args.output.display(),
        timing_path(&args.output).display()
    );
    Ok(())
}

#[derive(Debug, Clone)]
pub struct SimulateArgs {
    pub p: usize,
    pub gamma: f64,
    pub spikes: Vec<f64>,
    pub sparsity: Option<usize>,
    pub linear: bool,
    pub delta: f64,
    pub sigma: f64,
    pub kappa: Option<f64>,
    pub random_mean: bool,
    pub seed: u64,
    pub replicate: usize,
    pub output: PathBuf,
    pub truth: Option<PathBuf>,
    pub na_token: String,
}

pub fn simulate_cmd(args: &SimulateArgs) -> Result<()> {
    let mut cfg = ExperimentConfig::new(args.p, args.gamma, args.spikes.clone());
    cfg.sparsity = args.sparsity.map_or(PcSparsity::Dense, PcSparsity::Sparse);
    cfg.sampling = if args.linear {
        Sampling::Linear(args.delta)
    } else {
        Sampling::Uniform(args.delta)
    };
    cfg.noise = match args.kappa {
        Some(kappa) => NoiseLaw::Colored { sigma: args.sigma, kappa },
        None => NoiseLaw::White { sigma: args.sigma },
    };
    cfg.random_mean = args.random_mean;
    cfg.seed = args.seed;
    let sim = simulate(&cfg, args.replicate)?;

    let mut text = String::new();
    for (row, mask) in sim.observed.rows().into_iter().zip(sim.mask.rows()) {
        let fields: Vec<String> = row
            .iter()
            .zip(mask)
            .map(|(v, &m)| if m > 0.0 { v.to_string() } else { args.na_token.clone() })
            .collect();
        text.push_str(&fields.join(","));
        text.push('\n');
    }
    fs::write(&args.output, text).map_err(|e| CliError::io(&args.output, e))?;
    if let Some(truth) = &args.truth {
        write_matrix(truth, &sim.x, Delimiter::Comma)?;
    }
    Ok(())
}
