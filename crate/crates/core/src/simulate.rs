//! Synthetic linearly transformed spiked data for benchmarks.
//!
//! Signals `X_i = mean + sum_k sqrt(ell_k) z_ik u_k` with Gaussian `z`,
//! random coordinate-selection masks and white or colored Gaussian noise.
//! Every replicate draws from its own ChaCha stream so replicates can be
//! generated independently and in any order.

use ndarray::{Array1, Array2, Axis, Zip};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Bernoulli, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{EblpError, Result};
use crate::pipeline::{Dataset, SignalModel};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PcSparsity {
    Dense,
    /// Every PC supported on the same `m` random coordinates.
    Sparse(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sampling {
    /// Every entry observed with probability `delta`.
    Uniform(f64),
    /// Column probabilities ramp linearly from `delta` to `1 - delta`.
    Linear(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseLaw {
    White { sigma: f64 },
    /// Variances increase linearly across coordinates with condition number
    /// `kappa` and mean `sigma^2`.
    Colored { sigma: f64, kappa: f64 },
}

impl NoiseLaw {
    pub fn sigma(&self) -> f64 {
        match *self {
            NoiseLaw::White { sigma } | NoiseLaw::Colored { sigma, .. } => sigma,
        }
    }

    pub fn with_sigma(&self, sigma: f64) -> Self {
        match *self {
            NoiseLaw::White { .. } => NoiseLaw::White { sigma },
            NoiseLaw::Colored { kappa, .. } => NoiseLaw::Colored { sigma, kappa },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub p: usize,
    /// Aspect ratio `p / n`.
    pub gamma: f64,
    /// Spike strengths, strictly decreasing.
    pub ell: Vec<f64>,
    pub sparsity: PcSparsity,
    pub sampling: Sampling,
    pub noise: NoiseLaw,
    /// Draw an `N(0, 1)` mean per coordinate.
    pub random_mean: bool,
    pub replicates: usize,
    pub seed: u64,
}

impl ExperimentConfig {
    /// Dense rank-`ell.len()` model, full observation, unit white noise.
    pub fn new(p: usize, gamma: f64, ell: Vec<f64>) -> Self {
        Self {
            p,
            gamma,
            ell,
            sparsity: PcSparsity::Dense,
            sampling: Sampling::Uniform(1.0),
            noise: NoiseLaw::White { sigma: 1.0 },
            random_mean: false,
            replicates: 1,
            seed: 0,
        }
    }

    /// Spikes `1, 2, ..., r` in decreasing order.
    pub fn ladder(r: usize) -> Vec<f64> {
        (1..=r).rev().map(|k| k as f64).collect()
    }

    pub fn n(&self) -> usize {
        (self.p as f64 / self.gamma).round() as usize
    }

    pub fn rank(&self) -> usize {
        self.ell.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(EblpError::InvalidArgument(m));
        if self.p == 0 || !(self.gamma > 0.0) || self.n() == 0 {
            return bad(format!("invalid dimensions p={} gamma={}", self.p, self.gamma));
        }
        if self.ell.iter().any(|&l| !(l > 0.0)) || self.ell.windows(2).any(|w| !(w[0] > w[1])) {
            return bad("spike strengths must be positive and strictly decreasing".into());
        }
        if self.rank() > self.p {
            return bad("rank exceeds dimension".into());
        }
        if let PcSparsity::Sparse(m) = self.sparsity {
            if m < self.rank() || m > self.p {
                return bad(format!(
                    "{m}-sparse PCs cannot hold {} orthonormal vectors in dimension {}",
                    self.rank(),
                    self.p
                ));
            }
        }
        match self.sampling {
            Sampling::Uniform(d) | Sampling::Linear(d) if !(d > 0.0 && d <= 1.0) => {
                return bad(format!("sampling rate {d} outside (0, 1]"))
            }
            _ => {}
        }
        match self.noise {
            NoiseLaw::White { sigma } | NoiseLaw::Colored { sigma, .. } if !(sigma >= 0.0) => {
                return bad(format!("noise level {sigma} must be nonnegative"))
            }
            NoiseLaw::Colored { kappa, .. } if !(kappa >= 1.0) => {
                return bad(format!("condition number {kappa} must be at least 1"))
            }
            _ => {}
        }
        Ok(())
    }

    /// Observation probability of each column.
    pub fn column_probabilities(&self) -> Array1<f64> {
        let p = self.p;
        match self.sampling {
            Sampling::Uniform(delta) => Array1::from_elem(p, delta),
            Sampling::Linear(delta) => Array1::from_shape_fn(p, |j| {
                delta + ramp(j, p) * (1.0 - 2.0 * delta)
            }),
        }
    }

    /// Per-coordinate noise variances.
    pub fn noise_variances(&self) -> Array1<f64> {
        let p = self.p;
        match self.noise {
            NoiseLaw::White { sigma } => Array1::from_elem(p, sigma * sigma),
            NoiseLaw::Colored { sigma, kappa } => {
                let a = 2.0 / (1.0 + kappa);
                Array1::from_shape_fn(p, |j| sigma * sigma * a * (1.0 + (kappa - 1.0) * ramp(j, p)))
            }
        }
    }

    /// Random stream for replicate `index`.
    pub fn replicate_rng(&self, index: usize) -> ChaCha8Rng {
        replicate_rng(self.seed, index as u64)
    }
}

/// `(j - 1) / (p - 1)` in zero-based form; zero for a single coordinate.
fn ramp(j: usize, p: usize) -> f64 {
    if p <= 1 {
        0.0
    } else {
        j as f64 / (p - 1) as f64
    }
}

/// Independent stream per `(seed, index)`.
pub fn replicate_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn standard_normal_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || StandardNormal.sample(rng))
}

/// Orthonormal PCs: a uniformly random subspace, or one confined to a random
/// set of `m` coordinates.
pub fn random_pcs<R: Rng + ?Sized>(config: &ExperimentConfig, rng: &mut R) -> Result<Array2<f64>> {
    config.validate()?;
    let (p, r) = (config.p, config.rank());
    if r == 0 {
        return Ok(Array2::zeros((p, 0)));
    }
    let support: Vec<usize> = match config.sparsity {
        PcSparsity::Dense => (0..p).collect(),
        PcSparsity::Sparse(m) => {
            let mut idx = sample(rng, p, m).into_vec();
            idx.sort_unstable();
            idx
        }
    };
    let g = standard_normal_matrix(support.len(), r, rng);
    let q = crate::linalg::orthonormalize(g.view());
    let mut u = Array2::zeros((p, r));
    for (row, &j) in support.iter().enumerate() {
        u.row_mut(j).assign(&q.row(row));
    }
    Ok(u)
}

/// Draws `n` signals with standard normal latent factors.
pub fn generate_signals<R: Rng + ?Sized>(
    config: &ExperimentConfig,
    n: usize,
    rng: &mut R,
) -> Result<(Array2<f64>, SignalModel)> {
    generate_signals_with(config, n, rng, |rng| StandardNormal.sample(rng))
}

/// As [`generate_signals`] with a caller-supplied latent sampler (must have
/// mean zero and unit variance to match the model).
pub fn generate_signals_with<R, F>(
    config: &ExperimentConfig,
    n: usize,
    rng: &mut R,
    mut latent: F,
) -> Result<(Array2<f64>, SignalModel)>
where
    R: Rng + ?Sized,
    F: FnMut(&mut R) -> f64,
{
    let u = random_pcs(config, rng)?;
    let r = config.rank();
    let z = Array2::from_shape_simple_fn((n, r), || latent(rng));
    let root = Array1::from_iter(config.ell.iter().map(|l| l.sqrt()));
    let mut x = (&z * &root.view().insert_axis(Axis(0))).dot(&u.t());
    let mean = if config.random_mean {
        let mu: Array1<f64> = Array1::from_shape_simple_fn(config.p, || StandardNormal.sample(rng));
        x += &mu.view().insert_axis(Axis(0));
        Some(mu)
    } else {
        None
    };
    let signal = SignalModel::new(config.ell.clone(), u, mean)?;
    Ok((x, signal))
}

/// 0/1 masks with independent entries.
pub fn generate_masks<R: Rng + ?Sized>(config: &ExperimentConfig, n: usize, rng: &mut R) -> Array2<f64> {
    let probs = config.column_probabilities();
    let coins: Vec<Bernoulli> = probs
        .iter()
        .map(|&q| Bernoulli::new(q.clamp(0.0, 1.0)).expect("probability in range"))
        .collect();
    let mut mask = Array2::zeros((n, config.p));
    for mut row in mask.rows_mut() {
        for (m, coin) in row.iter_mut().zip(&coins) {
            *m = if coin.sample(rng) { 1.0 } else { 0.0 };
        }
    }
    mask
}

/// Independent Gaussian noise with the configured per-coordinate variances.
pub fn generate_noise<R: Rng + ?Sized>(config: &ExperimentConfig, n: usize, rng: &mut R) -> Array2<f64> {
    let sd = config.noise_variances().mapv(f64::sqrt);
    let mut noise = standard_normal_matrix(n, config.p, rng);
    noise *= &sd.view().insert_axis(Axis(0));
    noise
}

/// `||x_hat - x||_F / ||x||_F`.
pub fn rmse(x_hat: &Array2<f64>, x: &Array2<f64>) -> Result<f64> {
    if x_hat.dim() != x.dim() {
        return Err(EblpError::Shape(format!(
            "prediction {:?} vs truth {:?}",
            x_hat.dim(),
            x.dim()
        )));
    }
    let den = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(den > 0.0) {
        return Err(EblpError::InvalidArgument("reference matrix has zero norm".into()));
    }
    let num = Zip::from(x_hat)
        .and(x)
        .fold(0.0, |acc, &a, &b| acc + (a - b) * (a - b))
        .sqrt();
    Ok(num / den)
}

/// One simulated replicate.
#[derive(Debug, Clone)]
pub struct SimulatedData {
    /// Clean signals, `n x p`.
    pub x: Array2<f64>,
    pub signal: SignalModel,
    pub mask: Array2<f64>,
    pub noise: Array2<f64>,
    /// `mask * (x + noise)`.
    pub observed: Array2<f64>,
}

impl SimulatedData {
    pub fn dataset(&self) -> Result<Dataset> {
        Dataset::from_masked(self.observed.clone(), self.mask.clone())
    }
}

/// Generates replicate `index` of `config` with `n` rows (defaults to
/// `config.n()`).
pub fn simulate_with_n(config: &ExperimentConfig, n: usize, index: usize) -> Result<SimulatedData> {
    config.validate()?;
    let mut rng = config.replicate_rng(index);
    let (x, signal) = generate_signals(config, n, &mut rng)?;
    let mask = generate_masks(config, n, &mut rng);
    let noise = generate_noise(config, n, &mut rng);
    let observed = &mask * &(&x + &noise);
    Ok(SimulatedData {
        x,
        signal,
        mask,
        noise,
        observed,
    })
}

pub fn simulate(config: &ExperimentConfig, index: usize) -> Result<SimulatedData> {
    simulate_with_n(config, config.n(), index)
}
