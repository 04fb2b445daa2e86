//! Simulation benchmark: EBLP against nuclear-norm regularized least squares
//! and unwhitened shrinkage.

use std::path::Path;
use std::time::Instant;

use eblp::baselines::{nnrls, nnrls_weight_simulated, nnrls_weight_white, NnrlsConfig};
use eblp::simulate::{generate_masks, generate_noise, replicate_rng, rmse, simulate, ExperimentConfig, PcSparsity};
use eblp::{fit_in_sample, Dataset, FitOptions, ShrinkMode};
use ndarray::{Array2, Axis};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{BenchmarkConfig, Experiment, Method, NnrlsSettings, NoiseKind, SamplingKind, Variant};
use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRow {
    pub experiment: String,
    pub method: &'static str,
    pub sigma: f64,
    pub sampling: &'static str,
    pub delta: f64,
    pub noise: &'static str,
    pub kappa: f64,
    pub sparsity: String,
    pub replicate: usize,
    pub rmse: f64,
    /// Estimated per-sample AMSE; empty for methods without one.
    pub amse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimingRow {
    pub experiment: String,
    pub method: &'static str,
    pub sigma: f64,
    pub delta: f64,
    pub kappa: f64,
    pub sparsity: String,
    pub replicate: usize,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default)]
pub struct BenchmarkOutput {
    pub rows: Vec<ResultRow>,
    pub timings: Vec<TimingRow>,
}

impl BenchmarkOutput {
    /// Mean RMSE of `method` at `sigma` within one experiment.
    pub fn mean_rmse(&self, experiment: &str, method: Method, sigma: f64) -> Option<f64> {
        let vals: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.experiment == experiment && r.method == method.name() && r.sigma == sigma)
            .map(|r| r.rmse)
            .collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }
}

fn sparsity_label(s: PcSparsity) -> String {
    match s {
        PcSparsity::Dense => "dense".into(),
        PcSparsity::Sparse(m) => m.to_string(),
    }
}

fn variant_seed(seed: u64, experiment: usize, variant: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ ((experiment as u64) << 40) ^ ((variant as u64) << 20)
}

struct Task<'a> {
    exp: &'a Experiment,
    variant: Variant,
    seed: u64,
    replicate: usize,
    /// NNRLS penalty at unit noise level (scales linearly with sigma); `None`
    /// means the closed form for white noise under uniform sampling.
    unit_weight: Option<f64>,
}

/// Runs every experiment; rows come out in a fixed order regardless of
/// `jobs`.
pub fn run_benchmark(config: &BenchmarkConfig, jobs: usize) -> Result<BenchmarkOutput> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::Invalid(format!("cannot start {jobs} worker threads: {e}")))?;
    pool.install(|| run_in_pool(config))
}

fn run_in_pool(config: &BenchmarkConfig) -> Result<BenchmarkOutput> {
    let mut tasks = Vec::new();
    for (ei, exp) in config.experiments.iter().enumerate() {
        for (vi, variant) in exp.variants().into_iter().enumerate() {
            let seed = variant_seed(config.seed, ei, vi);
            let unit_weight = if config.methods.contains(&Method::Nnrls) && config.replicates > 0 {
                unit_nnrls_weight(exp, &variant, seed, &config.nnrls)?
            } else {
                None
            };
            for replicate in 0..config.replicates {
                tasks.push(Task {
                    exp,
                    variant,
                    seed,
                    replicate,
                    unit_weight,
                });
            }
        }
    }
    log::info!("benchmark: {} tasks", tasks.len());
    let parts: Vec<BenchmarkOutput> = tasks
        .par_iter()
        .map(|t| run_task(t, config))
        .collect::<Result<_>>()?;
    let mut out = BenchmarkOutput::default();
    for p in parts {
        out.rows.extend(p.rows);
        out.timings.extend(p.timings);
    }
    Ok(out)
}

fn weighted(exp: &Experiment) -> bool {
    exp.sampling == SamplingKind::Linear
}

fn unit_nnrls_weight(exp: &Experiment, v: &Variant, seed: u64, s: &NnrlsSettings) -> Result<Option<f64>> {
    if exp.noise == NoiseKind::White && !weighted(exp) {
        return Ok(None);
    }
    let sim = exp.simulation(v, 1.0, seed ^ 0xA5A5_5A5A);
    let n = sim.n();
    let mut noise_rng = replicate_rng(sim.seed, u64::MAX);
    let mut mask_rng = replicate_rng(sim.seed, u64::MAX - 1);
    let c = weighted(exp).then(|| sim.column_probabilities().mapv(f64::sqrt));
    let w = nnrls_weight_simulated(
        || generate_noise(&sim, n, &mut noise_rng),
        || generate_masks(&sim, n, &mut mask_rng),
        c.as_ref().map(|c| c.view()),
        s.weight_replicates,
    )?;
    Ok(Some(w))
}

fn run_task(t: &Task<'_>, config: &BenchmarkConfig) -> Result<BenchmarkOutput> {
    let mut out = BenchmarkOutput::default();
    let exp = t.exp;
    for &sigma in &exp.sigma {
        let sim_cfg = exp.simulation(&t.variant, sigma, t.seed);
        let sim = simulate(&sim_cfg, t.replicate)?;
        let data = sim.dataset()?;
        for &method in &config.methods {
            let start = Instant::now();
            let (x_hat, amse) = run_method(method, &data, &sim_cfg, t, sigma, &config.nnrls)?;
            let seconds = start.elapsed().as_secs_f64();
            log::debug!(
                "{} {} sigma={sigma} rep={} took {seconds:.3}s",
                exp.id,
                method.name(),
                t.replicate
            );
            let sparsity = sparsity_label(t.variant.sparsity);
            out.rows.push(ResultRow {
                experiment: exp.id.clone(),
                method: method.name(),
                sigma,
                sampling: match exp.sampling {
                    SamplingKind::Uniform => "uniform",
                    SamplingKind::Linear => "linear",
                },
                delta: t.variant.delta,
                noise: match exp.noise {
                    NoiseKind::White => "white",
                    NoiseKind::Colored => "colored",
                },
                kappa: t.variant.kappa,
                sparsity: sparsity.clone(),
                replicate: t.replicate,
                rmse: rmse(&x_hat, &sim.x)?,
                amse,
            });
            out.timings.push(TimingRow {
                experiment: exp.id.clone(),
                method: method.name(),
                sigma,
                delta: t.variant.delta,
                kappa: t.variant.kappa,
                sparsity,
                replicate: t.replicate,
                seconds,
            });
        }
    }
    Ok(out)
}

fn run_method(
    method: Method,
    data: &Dataset,
    sim: &ExperimentConfig,
    t: &Task<'_>,
    sigma: f64,
    settings: &NnrlsSettings,
) -> Result<(Array2<f64>, Option<f64>)> {
    let rank = t.exp.rank;
    match method {
        Method::Eblp => {
            let mut opts = FitOptions::new(rank);
            if t.exp.noise == NoiseKind::Colored {
                opts = opts.noise_profile(sim.noise_variances());
            }
            let (model, x_hat) = fit_in_sample(data, &opts)?;
            Ok((x_hat, Some(model.amse_unwhitened())))
        }
        Method::Unwhitened => {
            let opts = FitOptions::new(rank).whiten(false).mode(ShrinkMode::Plugin);
            let (model, x_hat) = fit_in_sample(data, &opts)?;
            Ok((x_hat, Some(model.amse())))
        }
        Method::Nnrls => {
            let mask = data.weights();
            let mu = data.available_case_mean();
            let centered = (&data.values() - &mu.view().insert_axis(Axis(0))) * &mask;
            let w = match t.unit_weight {
                Some(unit) => sigma * unit,
                None => {
                    let n_obs = mask.iter().filter(|&&d| d > 0.0).count();
                    nnrls_weight_white(sigma, data.p(), data.n(), n_obs)
                }
            };
            let mut cfg = if weighted(t.exp) {
                NnrlsConfig::weighted(w, sim.column_probabilities().mapv(f64::sqrt))
            } else {
                NnrlsConfig::new(w)
            };
            cfg.max_iters = settings.max_iters;
            cfg.tol = settings.tol;
            let res = nnrls(centered.view(), mask, &cfg)?;
            Ok((res.x + &mu.insert_axis(Axis(0)), None))
        }
    }
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T], header: &[&str]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
    let io_err = |e: csv::Error| CliError::Invalid(format!("writing {}: {e}", path.display()));
    w.write_record(header).map_err(io_err)?;
    for r in rows {
        w.serialize(r).map_err(io_err)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub const RESULT_COLUMNS: &[&str] = &[
    "experiment",
    "method",
    "sigma",
    "sampling",
    "delta",
    "noise",
    "kappa",
    "sparsity",
    "replicate",
    "rmse",
    "amse",
];

pub const TIMING_COLUMNS: &[&str] = &[
    "experiment",
    "method",
    "sigma",
    "delta",
    "kappa",
    "sparsity",
    "replicate",
    "seconds",
];

/// Sidecar path for timings: `<stem>.timing.csv` next to `output`.
pub fn timing_path(output: &Path) -> std::path::PathBuf {
    let stem = output.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    output.with_file_name(format!("{stem}.timing.csv"))
}

/// Writes results to `output` and timings to the sidecar. Results contain no
/// wall-clock data, so identical configs give byte-identical files.
pub fn write_output(out: &BenchmarkOutput, output: &Path) -> Result<()> {
    write_csv(output, &out.rows, RESULT_COLUMNS)?;
    write_csv(&timing_path(output), &out.timings, TIMING_COLUMNS)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(methods: &str, replicates: usize) -> BenchmarkConfig {
        BenchmarkConfig::parse(&format!(
            r#"
            seed = 11
            replicates = {replicates}
            methods = {methods}
            [[experiment]]
            id = "t"
            p = 40
            gamma = 0.8
            spikes = [20.0, 10.0]
            sampling = "linear"
            delta = [0.5]
            sigma = [0.5, 1.0]
            "#
        ))
        .unwrap()
    }

    #[test]
    fn deterministic_across_thread_counts() {
        let cfg = small(r#"["eblp", "nnrls", "unwhitened"]"#, 3);
        let a = run_benchmark(&cfg, 1).unwrap();
        let b = run_benchmark(&cfg, 3).unwrap();
        assert_eq!(a.rows, b.rows);
        assert_eq!(a.rows.len(), 3 * 2 * 3);
        assert!(a.rows.iter().all(|r| r.rmse.is_finite() && r.rmse > 0.0));
        assert!(a.rows.iter().filter(|r| r.method == "nnrls").all(|r| r.amse.is_none()));
    }

    #[test]
    fn zero_replicates_is_empty() {
        let out = run_benchmark(&small(r#"["eblp"]"#, 0), 1).unwrap();
        assert!(out.rows.is_empty());
    }

    #[test]
    fn timing_sidecar_name() {
        assert_eq!(timing_path(Path::new("/tmp/res.csv")), Path::new("/tmp/res.timing.csv"));
    }
}
