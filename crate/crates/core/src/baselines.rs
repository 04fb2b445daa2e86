//! Comparison methods: nuclear-norm regularized least squares and
//! shrinkage without whitening.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};

use crate::error::{EblpError, Result};
use crate::pipeline::{fit_in_sample, Dataset, FitOptions};
use crate::shrinkage::ShrinkMode;
use crate::svd::{singular_values, thin_svd};

#[derive(Debug, Clone, PartialEq)]
pub struct NnrlsConfig {
    /// Weight of the nuclear-norm penalty.
    pub w: f64,
    pub max_iters: usize,
    /// Stop once the relative objective decrease falls below this.
    pub tol: f64,
    /// Column weights `C_jj` of the weighted penalty `w ||X C||_*`.
    pub column_weights: Option<Array1<f64>>,
}

impl NnrlsConfig {
    pub fn new(w: f64) -> Self {
        Self {
            w,
            max_iters: 500,
            tol: 1e-7,
            column_weights: None,
        }
    }

    pub fn weighted(w: f64, column_weights: Array1<f64>) -> Self {
        Self {
            column_weights: Some(column_weights),
            ..Self::new(w)
        }
    }
}

#[derive(Debug, Clone)]
pub struct NnrlsResult {
    pub x: Array2<f64>,
    pub iterations: usize,
    /// False when `max_iters` was reached first; `x` is then the best iterate.
    pub converged: bool,
    pub objective: f64,
    /// Objective after every accepted iterate.
    pub history: Vec<f64>,
}

/// Singular value soft-thresholding. Returns the thresholded matrix and its
/// nuclear norm.
pub fn svt(a: ArrayView2<f64>, tau: f64) -> Result<(Array2<f64>, f64)> {
    let svd = thin_svd(a)?;
    let kept = svd.s.iter().take_while(|&&s| s > tau).count();
    if kept == 0 {
        return Ok((Array2::zeros(a.dim()), 0.0));
    }
    let svd = svd.truncate(kept);
    let shrunk = svd.s.mapv(|s| s - tau);
    let nuclear = shrunk.sum();
    let x = (&svd.u * &shrunk.view().insert_axis(Axis(0))).dot(&svd.v.t());
    Ok((x, nuclear))
}

fn nuclear_norm(a: ArrayView2<f64>) -> Result<f64> {
    Ok(singular_values(a)?.sum())
}

/// Minimizes `0.5 ||P(X - Y)||^2 + w ||X C||_*` over the observed entries
/// `P` by accelerated proximal gradient on `Z = X C`, restarting the
/// momentum whenever the objective would increase.
pub fn nnrls(y_masked: ArrayView2<f64>, mask: ArrayView2<f64>, config: &NnrlsConfig) -> Result<NnrlsResult> {
    let (n, p) = y_masked.dim();
    if mask.dim() != (n, p) {
        return Err(EblpError::Shape("data and mask differ in shape".into()));
    }
    if !(config.w >= 0.0) || !(config.tol > 0.0) {
        return Err(EblpError::InvalidArgument("need w >= 0 and tol > 0".into()));
    }
    let c = match &config.column_weights {
        Some(c) if c.len() != p => {
            return Err(EblpError::Shape(format!(
                "{} column weights for {p} columns",
                c.len()
            )))
        }
        Some(c) if c.iter().any(|&v| !(v > 0.0)) => {
            return Err(EblpError::InvalidArgument("column weights must be positive".into()))
        }
        Some(c) => c.clone(),
        None => Array1::ones(p),
    };
    let inv_c = c.mapv(|v| 1.0 / v);
    let inv_c_row = inv_c.view().insert_axis(Axis(0));
    // masked data, zero where unobserved
    let y = Zip::from(&y_masked)
        .and(&mask)
        .map_collect(|&y, &m| if m != 0.0 { y } else { 0.0 });
    // gradient Lipschitz constant max_j 1/c_j^2
    let step = c.iter().fold(f64::INFINITY, |a, &v| a.min(v * v));

    let residual = |z: &Array2<f64>| -> Array2<f64> {
        let mut r = z * &inv_c_row;
        Zip::from(&mut r)
            .and(&y)
            .and(&mask)
            .for_each(|r, &y, &m| *r = if m != 0.0 { *r - y } else { 0.0 });
        r
    };
    let smooth = |z: &Array2<f64>| 0.5 * residual(z).iter().map(|v| v * v).sum::<f64>();

    let mut x_prev = Array2::<f64>::zeros((n, p));
    let mut obj_prev = smooth(&x_prev);
    let mut point = x_prev.clone();
    let mut t = 1.0_f64;
    let mut history = vec![obj_prev];
    let mut converged = false;
    let mut iterations = 0;
    let mut momentum = false;

    while iterations < config.max_iters {
        iterations += 1;
        let grad = residual(&point) * &inv_c_row;
        let target = &point - &(grad * step);
        let (cand, nuc) = svt(target.view(), step * config.w)?;
        let obj = smooth(&cand) + config.w * nuc;
        if obj > obj_prev && momentum {
            // restart from the last accepted iterate
            point = x_prev.clone();
            t = 1.0;
            momentum = false;
            continue;
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let beta = (t - 1.0) / t_next;
        point = &cand + &((&cand - &x_prev) * beta);
        momentum = beta > 0.0;
        t = t_next;
        let decrease = (obj_prev - obj) / obj_prev.abs().max(f64::MIN_POSITIVE);
        x_prev = cand;
        obj_prev = obj.min(obj_prev);
        history.push(obj);
        if decrease.abs() < config.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("nnrls stopped after {iterations} iterations without converging");
    }
    let x = &x_prev * &inv_c_row;
    Ok(NnrlsResult {
        objective: obj_prev,
        x,
        iterations,
        converged,
        history,
    })
}

/// Objective value `0.5 ||P(X - Y)||^2 + w ||X C||_*`.
pub fn nnrls_objective(
    x: ArrayView2<f64>,
    y_masked: ArrayView2<f64>,
    mask: ArrayView2<f64>,
    w: f64,
    column_weights: Option<ArrayView1<f64>>,
) -> Result<f64> {
    let fit = Zip::from(&x)
        .and(&y_masked)
        .and(&mask)
        .fold(0.0, |acc, &x, &y, &m| if m != 0.0 { acc + (x - y) * (x - y) } else { acc });
    let nuc = match column_weights {
        Some(c) => nuclear_norm((&x * &c.insert_axis(Axis(0))).view())?,
        None => nuclear_norm(x)?,
    };
    Ok(0.5 * fit + w * nuc)
}

/// Expected operator norm of white masked noise:
/// `sigma (sqrt(p) + sqrt(n)) sqrt(|Omega| / (p n))`.
pub fn nnrls_weight_white(sigma: f64, p: usize, n: usize, n_obs: usize) -> f64 {
    let (p, n) = (p as f64, n as f64);
    sigma * (p.sqrt() + n.sqrt()) * (n_obs as f64 / (p * n)).sqrt()
}

/// Monte Carlo mean of the operator norm of masked pure noise.
pub fn nnrls_weight_colored<F, G>(noise_sampler: F, mask_sampler: G, replicates: usize) -> Result<f64>
where
    F: FnMut() -> Array2<f64>,
    G: FnMut() -> Array2<f64>,
{
    nnrls_weight_simulated(noise_sampler, mask_sampler, None, replicates)
}

/// Monte Carlo mean of `||P(E) C^-1||_op`, the smallest penalty weight that
/// returns zero on pure noise for the weighted problem.
pub fn nnrls_weight_simulated<F, G>(
    mut noise_sampler: F,
    mut mask_sampler: G,
    column_weights: Option<ArrayView1<f64>>,
    replicates: usize,
) -> Result<f64>
where
    F: FnMut() -> Array2<f64>,
    G: FnMut() -> Array2<f64>,
{
    if replicates == 0 {
        return Err(EblpError::InvalidArgument("need at least one replicate".into()));
    }
    let mut total = 0.0;
    for _ in 0..replicates {
        let noise = noise_sampler();
        let mask = mask_sampler();
        if noise.dim() != mask.dim() {
            return Err(EblpError::Shape("noise and mask samplers disagree".into()));
        }
        let mut masked = &noise * &mask;
        if let Some(c) = column_weights {
            masked /= &c.insert_axis(Axis(0));
        }
        total += singular_values(masked.view())?.first().copied().unwrap_or(0.0);
    }
    Ok(total / replicates as f64)
}

/// Plug-in shrinkage of the normalized backprojected matrix without
/// whitening.
pub fn unwhitened_shrinkage(dataset: &Dataset, r: usize) -> Result<Array2<f64>> {
    let opts = FitOptions::new(r).whiten(false).mode(ShrinkMode::Plugin);
    Ok(fit_in_sample(dataset, &opts)?.1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn weight_formula() {
        assert_abs_diff_eq!(nnrls_weight_white(1.0, 100, 100, 10_000), 20.0, epsilon = 1e-12);
        assert_abs_diff_eq!(nnrls_weight_white(1.0, 100, 100, 2_500), 10.0, epsilon = 1e-12);
        assert_eq!(nnrls_weight_white(0.0, 100, 100, 10_000), 0.0);
    }

    #[test]
    fn zero_weight_full_mask_reproduces_data() {
        let y = Array2::from_shape_fn((6, 4), |(i, j)| ((i * 5 + j * 3) % 7) as f64 - 3.0);
        let mask = Array2::ones((6, 4));
        let out = nnrls(y.view(), mask.view(), &NnrlsConfig::new(0.0)).unwrap();
        assert_abs_diff_eq!(out.x, y, epsilon = 1e-8);
    }

    #[test]
    fn rank_one_soft_threshold() {
        let u = array![0.6, 0.8, 0.0];
        let v = array![0.5, 0.5, 0.5, 0.5];
        let s = 7.0;
        let y: Array2<f64> = s * &u.view().insert_axis(Axis(1)).dot(&v.view().insert_axis(Axis(0)));
        let out = nnrls(y.view(), Array2::ones((3, 4)).view(), &NnrlsConfig::new(2.5)).unwrap();
        assert!(out.converged);
        let expect = &y * ((s - 2.5) / s);
        assert_abs_diff_eq!(out.x, expect, epsilon = 1e-10);
    }

    #[test]
    fn prox_matches_brute_force_2x2() {
        // minimize 0.5 ||X - A||^2 + tau ||X||_* over a grid of 2x2 matrices
        let a = array![[1.3, -0.4], [0.7, 0.9]];
        let tau = 0.5;
        let (x, _) = svt(a.view(), tau).unwrap();
        let obj = |m: &Array2<f64>| {
            0.5 * (m - &a).mapv(|v| v * v).sum() + tau * nuclear_norm(m.view()).unwrap()
        };
        let best_svt = obj(&x);
        let mut best_grid = f64::INFINITY;
        let steps = 40;
        let h = 0.05;
        for i in 0..steps {
            for j in 0..steps {
                for k in 0..steps {
                    for l in 0..steps {
                        let m = array![
                            [x[[0, 0]] + (i as f64 - 20.0) * h * 0.1, x[[0, 1]] + (j as f64 - 20.0) * h * 0.1],
                            [x[[1, 0]] + (k as f64 - 20.0) * h * 0.1, x[[1, 1]] + (l as f64 - 20.0) * h * 0.1]
                        ];
                        best_grid = best_grid.min(obj(&m));
                    }
                }
            }
        }
        assert!(best_svt <= best_grid + 1e-12);
        // also the full-observation nnrls step equals svt
        let out = nnrls(a.view(), Array2::ones((2, 2)).view(), &NnrlsConfig::new(tau)).unwrap();
        assert_abs_diff_eq!(out.x, x, epsilon = 1e-10);
    }

    #[test]
    fn equal_weights_scale_penalty() {
        let y = Array2::from_shape_fn((8, 6), |(i, j)| ((i * 3 + j * 5) % 11) as f64 / 3.0 - 1.5);
        let mask = Array2::from_shape_fn((8, 6), |(i, j)| if (i + 2 * j) % 3 == 0 { 0.0 } else { 1.0 });
        let c = 1.7;
        let mut weighted = NnrlsConfig::weighted(0.8, Array1::from_elem(6, c));
        weighted.tol = 1e-14;
        weighted.max_iters = 5000;
        let mut plain = NnrlsConfig::new(0.8 * c);
        plain.tol = 1e-14;
        plain.max_iters = 5000;
        let a = nnrls(y.view(), mask.view(), &weighted).unwrap();
        let b = nnrls(y.view(), mask.view(), &plain).unwrap();
        assert_abs_diff_eq!(a.x, b.x, epsilon = 1e-6);
    }

    #[test]
    fn objective_nonincreasing() {
        let y = Array2::from_shape_fn((20, 15), |(i, j)| ((i * 7 + j * 13) % 17) as f64 / 4.0 - 2.0);
        let mask = Array2::from_shape_fn((20, 15), |(i, j)| if (i * j) % 4 == 1 { 0.0 } else { 1.0 });
        let out = nnrls(y.view(), mask.view(), &NnrlsConfig::new(1.0)).unwrap();
        assert!(out.history.windows(2).all(|w| w[1] <= w[0] + 1e-12));
        let direct = nnrls_objective(out.x.view(), y.view(), mask.view(), 1.0, None).unwrap();
        assert_abs_diff_eq!(direct, out.objective, epsilon = 1e-8 * direct.abs().max(1.0));
    }

    #[test]
    fn simulated_weight_zero_noise() {
        let w = nnrls_weight_colored(|| Array2::zeros((10, 8)), || Array2::ones((10, 8)), 3).unwrap();
        assert_eq!(w, 0.0);
        assert!(nnrls_weight_colored(|| Array2::zeros((10, 8)), || Array2::ones((10, 8)), 0).is_err());
    }
}
