//! Benchmark configuration (TOML).
//!
//! ```toml
//! seed = 7
//! replicates = 40
//! methods = ["eblp", "nnrls", "unwhitened"]
//!
//! [nnrls]
//! max_iters = 500
//! tol = 1e-7
//! weight_replicates = 5
//!
//! [[experiment]]
//! id = "uneven"
//! p = 300
//! gamma = 0.8
//! spikes = [10, 9, 8, 7, 6, 5, 4, 3, 2, 1]
//! sparsity = ["dense"]
//! sampling = "linear"
//! delta = [0.1]
//! noise = "white"
//! sigma = [0.1, 0.2, 0.4, 0.8, 1.6]
//! random_mean = true
//! ```
//!
//! Every list-valued experiment key (`sparsity`, `delta`, `kappa`, `sigma`)
//! is expanded as a grid.

use std::path::Path;

use eblp::simulate::{ExperimentConfig, NoiseLaw, PcSparsity, Sampling};
use toml::{Table, Value};

use crate::error::{CliError, Result};

const TOP_KEYS: &[&str] = &["seed", "replicates", "methods", "rank", "nnrls", "experiment"];
const NNRLS_KEYS: &[&str] = &["max_iters", "tol", "weight_replicates"];
const EXPERIMENT_KEYS: &[&str] = &[
    "id",
    "p",
    "gamma",
    "spikes",
    "sparsity",
    "sampling",
    "delta",
    "noise",
    "kappa",
    "sigma",
    "random_mean",
    "rank",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Eblp,
    Nnrls,
    Unwhitened,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Eblp => "eblp",
            Method::Nnrls => "nnrls",
            Method::Unwhitened => "unwhitened",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "eblp" => Ok(Method::Eblp),
            "nnrls" => Ok(Method::Nnrls),
            "unwhitened" => Ok(Method::Unwhitened),
            other => Err(CliError::Config(format!(
                "unknown method {other:?} (expected eblp, nnrls or unwhitened)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplingKind {
    Uniform,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseKind {
    White,
    Colored,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NnrlsSettings {
    pub max_iters: usize,
    pub tol: f64,
    /// Monte Carlo draws for the penalty weight when no formula applies.
    pub weight_replicates: usize,
}

impl Default for NnrlsSettings {
    fn default() -> Self {
        Self {
            max_iters: 500,
            tol: 1e-7,
            weight_replicates: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Experiment {
    pub id: String,
    pub p: usize,
    pub gamma: f64,
    pub spikes: Vec<f64>,
    pub sparsity: Vec<PcSparsity>,
    pub sampling: SamplingKind,
    pub delta: Vec<f64>,
    pub noise: NoiseKind,
    pub kappa: Vec<f64>,
    pub sigma: Vec<f64>,
    pub random_mean: bool,
    pub rank: usize,
}

/// One point of an experiment's `sparsity x delta x kappa` grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Variant {
    pub sparsity: PcSparsity,
    pub delta: f64,
    pub kappa: f64,
}

impl Experiment {
    pub fn variants(&self) -> Vec<Variant> {
        let mut out = Vec::new();
        for &sparsity in &self.sparsity {
            for &delta in &self.delta {
                for &kappa in &self.kappa {
                    out.push(Variant { sparsity, delta, kappa });
                }
            }
        }
        out
    }

    /// Simulation settings for one variant at noise level `sigma`.
    pub fn simulation(&self, v: &Variant, sigma: f64, seed: u64) -> ExperimentConfig {
        let mut c = ExperimentConfig::new(self.p, self.gamma, self.spikes.clone());
        c.sparsity = v.sparsity;
        c.sampling = match self.sampling {
            SamplingKind::Uniform => Sampling::Uniform(v.delta),
            SamplingKind::Linear => Sampling::Linear(v.delta),
        };
        c.noise = match self.noise {
            NoiseKind::White => NoiseLaw::White { sigma },
            NoiseKind::Colored => NoiseLaw::Colored { sigma, kappa: v.kappa },
        };
        c.random_mean = self.random_mean;
        c.seed = seed;
        c
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkConfig {
    pub seed: u64,
    pub replicates: usize,
    pub methods: Vec<Method>,
    pub nnrls: NnrlsSettings,
    pub experiments: Vec<Experiment>,
}

impl BenchmarkConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let table: Table = text
            .parse()
            .map_err(|e: toml::de::Error| CliError::Config(format!("invalid TOML: {e}")))?;
        check_keys(&table)?;

        let seed = opt_int(&table, "seed", "")?.unwrap_or(0);
        let replicates = opt_int(&table, "replicates", "")?.unwrap_or(1) as usize;
        let methods = match table.get("methods") {
            None => vec![Method::Eblp, Method::Nnrls, Method::Unwhitened],
            Some(v) => str_list(v, "methods")?
                .iter()
                .map(|s| Method::parse(s))
                .collect::<Result<_>>()?,
        };
        let default_rank = opt_int(&table, "rank", "")?;
        let nnrls = match table.get("nnrls") {
            None => NnrlsSettings::default(),
            Some(Value::Table(t)) => {
                let d = NnrlsSettings::default();
                NnrlsSettings {
                    max_iters: opt_int(t, "max_iters", "nnrls.")?.map_or(d.max_iters, |v| v as usize),
                    tol: opt_float(t, "tol", "nnrls.")?.unwrap_or(d.tol),
                    weight_replicates: opt_int(t, "weight_replicates", "nnrls.")?
                        .map_or(d.weight_replicates, |v| v as usize),
                }
            }
            Some(_) => return Err(CliError::Config("nnrls must be a table".into())),
        };
        if nnrls.weight_replicates == 0 || !(nnrls.tol > 0.0) {
            return Err(CliError::Config("nnrls.weight_replicates and nnrls.tol must be positive".into()));
        }
        let experiments = match table.get("experiment") {
            None => Vec::new(),
            Some(Value::Array(items)) => items
                .iter()
                .enumerate()
                .map(|(i, v)| match v {
                    Value::Table(t) => parse_experiment(t, i, default_rank),
                    _ => Err(CliError::Config("each [[experiment]] must be a table".into())),
                })
                .collect::<Result<_>>()?,
            Some(_) => return Err(CliError::Config("use [[experiment]] sections".into())),
        };
        Ok(Self {
            seed,
            replicates,
            methods,
            nnrls,
            experiments,
        })
    }
}

fn check_keys(table: &Table) -> Result<()> {
    let mut unknown = Vec::new();
    for (k, v) in table {
        if !TOP_KEYS.contains(&k.as_str()) {
            unknown.push(k.clone());
            continue;
        }
        match (k.as_str(), v) {
            ("nnrls", Value::Table(t)) => {
                unknown.extend(t.keys().filter(|k| !NNRLS_KEYS.contains(&k.as_str())).map(|k| format!("nnrls.{k}")))
            }
            ("experiment", Value::Array(items)) => {
                for (i, item) in items.iter().enumerate() {
                    if let Value::Table(t) = item {
                        unknown.extend(
                            t.keys()
                                .filter(|k| !EXPERIMENT_KEYS.contains(&k.as_str()))
                                .map(|k| format!("experiment[{i}].{k}")),
                        );
                    }
                }
            }
            _ => {}
        }
    }
    if unknown.is_empty() {
        Ok(())
    } else {
        Err(CliError::UnknownKeys(unknown))
    }
}

fn bad(key: &str, want: &str) -> CliError {
    CliError::Config(format!("{key} must be {want}"))
}

fn opt_int(t: &Table, key: &str, prefix: &str) -> Result<Option<u64>> {
    match t.get(key) {
        None => Ok(None),
        Some(Value::Integer(i)) if *i >= 0 => Ok(Some(*i as u64)),
        Some(_) => Err(bad(&format!("{prefix}{key}"), "a nonnegative integer")),
    }
}

fn as_float(v: &Value) -> Option<f64> {
    match v {
        Value::Float(f) => Some(*f),
        Value::Integer(i) => Some(*i as f64),
        _ => None,
    }
}

fn opt_float(t: &Table, key: &str, prefix: &str) -> Result<Option<f64>> {
    match t.get(key) {
        None => Ok(None),
        Some(v) => as_float(v)
            .map(Some)
            .ok_or_else(|| bad(&format!("{prefix}{key}"), "a number")),
    }
}

fn float_list(v: &Value, key: &str) -> Result<Vec<f64>> {
    match v {
        Value::Array(items) => items
            .iter()
            .map(|x| as_float(x).ok_or_else(|| bad(key, "a list of numbers")))
            .collect(),
        other => as_float(other)
            .map(|x| vec![x])
            .ok_or_else(|| bad(key, "a number or a list of numbers")),
    }
}

fn str_list(v: &Value, key: &str) -> Result<Vec<String>> {
    match v {
        Value::Array(items) => items
            .iter()
            .map(|x| x.as_str().map(String::from).ok_or_else(|| bad(key, "a list of strings")))
            .collect(),
        Value::String(s) => Ok(vec![s.clone()]),
        _ => Err(bad(key, "a list of strings")),
    }
}

fn sparsity_list(v: &Value, key: &str) -> Result<Vec<PcSparsity>> {
    let one = |x: &Value| match x {
        Value::String(s) if s == "dense" => Ok(PcSparsity::Dense),
        Value::Integer(m) if *m > 0 => Ok(PcSparsity::Sparse(*m as usize)),
        _ => Err(bad(key, "\"dense\" or a positive integer (or a list of them)")),
    };
    match v {
        Value::Array(items) => items.iter().map(one).collect(),
        other => Ok(vec![one(other)?]),
    }
}

fn parse_experiment(t: &Table, index: usize, default_rank: Option<u64>) -> Result<Experiment> {
    let pre = format!("experiment[{index}].");
    let key = |k: &str| format!("{pre}{k}");
    let id = match t.get("id") {
        Some(Value::String(s)) => s.clone(),
        None => format!("exp{index}"),
        Some(_) => return Err(bad(&key("id"), "a string")),
    };
    let p = opt_int(t, "p", &pre)?.unwrap_or(300) as usize;
    let gamma = opt_float(t, "gamma", &pre)?.unwrap_or(0.8);
    let spikes = match t.get("spikes") {
        Some(v) => float_list(v, &key("spikes"))?,
        None => ExperimentConfig::ladder(10),
    };
    let sparsity = match t.get("sparsity") {
        Some(v) => sparsity_list(v, &key("sparsity"))?,
        None => vec![PcSparsity::Dense],
    };
    let sampling = match t.get("sampling").map(|v| v.as_str()) {
        None | Some(Some("uniform")) => SamplingKind::Uniform,
        Some(Some("linear")) => SamplingKind::Linear,
        _ => return Err(bad(&key("sampling"), "\"uniform\" or \"linear\"")),
    };
    let noise = match t.get("noise").map(|v| v.as_str()) {
        None | Some(Some("white")) => NoiseKind::White,
        Some(Some("colored")) => NoiseKind::Colored,
        _ => return Err(bad(&key("noise"), "\"white\" or \"colored\"")),
    };
    let delta = match t.get("delta") {
        Some(v) => float_list(v, &key("delta"))?,
        None => vec![1.0],
    };
    let kappa = match (t.get("kappa"), noise) {
        (Some(v), NoiseKind::Colored) => float_list(v, &key("kappa"))?,
        (None, NoiseKind::Colored) => return Err(CliError::Config(format!("{} is required for colored noise", key("kappa")))),
        (Some(_), NoiseKind::White) => {
            return Err(CliError::Config(format!("{} only applies to colored noise", key("kappa"))))
        }
        (None, NoiseKind::White) => vec![1.0],
    };
    let sigma = match t.get("sigma") {
        Some(v) => float_list(v, &key("sigma"))?,
        None => return Err(CliError::Config(format!("{} is required", key("sigma")))),
    };
    let random_mean = match t.get("random_mean") {
        None => true,
        Some(Value::Boolean(b)) => *b,
        Some(_) => return Err(bad(&key("random_mean"), "a boolean")),
    };
    let rank = opt_int(t, "rank", &pre)?.or(default_rank).map_or(spikes.len(), |r| r as usize);
    if rank == 0 {
        return Err(bad(&key("rank"), "at least 1"));
    }
    let exp = Experiment {
        id,
        p,
        gamma,
        spikes,
        sparsity,
        sampling,
        delta,
        noise,
        kappa,
        sigma,
        random_mean,
        rank,
    };
    // surface invalid grids before any work starts
    for v in exp.variants() {
        for &s in &exp.sigma {
            exp.simulation(&v, s, 0)
                .validate()
                .map_err(|e| CliError::Config(format!("experiment {:?}: {e}", exp.id)))?;
        }
    }
    if rank >= exp.p.min(exp.simulation(&exp.variants()[0], 1.0, 0).n()) {
        return Err(CliError::Config(format!("experiment {:?}: rank {rank} too large", exp.id)));
    }
    Ok(exp)
}
