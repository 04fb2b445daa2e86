//! Optimal singular value shrinkage under Frobenius loss.
//!
//! Observed top singular values of `B / sqrt(n)` are mapped back to spike
//! strengths and singular-vector cosines, either through plug-in estimates of
//! the spectral functionals of the residual bulk or, for whitened data,
//! through the closed-form white-noise formulas. The shrunken singular value
//! of component `k` is `sqrt(ell_k) c_k ct_k`.

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{EblpError, Result};
use crate::spectral::{EigenSpectrum, SpectralEstimates};
use crate::svd::{thin_svd, top_svd};

/// How spike strengths and cosines are estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ShrinkMode {
    /// Plug-in estimates from the full residual spectrum.
    #[default]
    Plugin,
    /// Closed-form formulas for white noise; only the top `r` triplets are
    /// computed.
    White,
}

impl std::str::FromStr for ShrinkMode {
    type Err = EblpError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plugin" => Ok(Self::Plugin),
            "white" => Ok(Self::White),
            other => Err(EblpError::InvalidArgument(format!(
                "unknown shrinkage mode '{other}' (expected plugin or white)"
            ))),
        }
    }
}

/// Per-component estimates for one observed spike.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpikeEstimate {
    /// Estimated spike strength.
    pub ell_hat: f64,
    /// Squared cosine between empirical and population right vectors.
    pub c2_hat: f64,
    /// Squared cosine between empirical and population left vectors.
    pub ct2_hat: f64,
    /// Optimal shrunken singular value.
    pub lambda_star: f64,
    /// Observed singular value of `B / sqrt(n)`.
    pub sigma_obs: f64,
    pub supercritical: bool,
    /// Set when a raw cosine estimate fell outside `[0, 1]` and was clipped.
    #[serde(default)]
    pub clamped: bool,
}

impl SpikeEstimate {
    /// A component that did not separate from the bulk; dropped from the
    /// predictor.
    pub fn subcritical(sigma_obs: f64) -> Self {
        Self {
            ell_hat: 0.0,
            c2_hat: 0.0,
            ct2_hat: 0.0,
            lambda_star: 0.0,
            sigma_obs,
            supercritical: false,
            clamped: false,
        }
    }

    fn from_parts(ell_hat: f64, c2: f64, ct2: f64, sigma_obs: f64) -> Self {
        let clamped = !(0.0..=1.0).contains(&c2) || !(0.0..=1.0).contains(&ct2);
        let mut est = Self {
            ell_hat,
            c2_hat: c2.clamp(0.0, 1.0),
            ct2_hat: ct2.clamp(0.0, 1.0),
            lambda_star: 0.0,
            sigma_obs,
            supercritical: true,
            clamped,
        };
        est.lambda_star = optimal_lambda(&est);
        est
    }
}

/// Plug-in estimate for spike `k` (zero-based, `k < r`) from the spectrum of
/// `n^-1 B^T B`.
pub fn estimate_spike(spectrum: &EigenSpectrum, r: usize, k: usize) -> Result<SpikeEstimate> {
    if k >= r {
        return Err(EblpError::Index { index: k, rank: r });
    }
    let x = spectrum.values()[k];
    let sigma_obs = x.sqrt();
    if !spectrum.above_bulk(r, x)? {
        return Ok(SpikeEstimate::subcritical(sigma_obs));
    }
    let est = SpectralEstimates::evaluate(spectrum, r, x)?;
    if !(est.d_hat > 0.0) || !(est.d_prime_hat < 0.0) || !est.d_hat.is_finite() {
        return Ok(SpikeEstimate::subcritical(sigma_obs));
    }
    let ell = 1.0 / est.d_hat;
    let c2 = est.m_hat / (est.d_prime_hat * ell);
    let ct2 = est.m_comp_hat / (est.d_prime_hat * ell);
    Ok(SpikeEstimate::from_parts(ell, c2, ct2, sigma_obs))
}

/// Closed-form estimate for an observed singular value of whitened data
/// with noise variance `noise_variance`.
pub fn estimate_spike_white(sigma_obs: f64, gamma: f64, noise_variance: f64) -> SpikeEstimate {
    if !(noise_variance > 0.0) {
        return SpikeEstimate::subcritical(sigma_obs);
    }
    let lambda = sigma_obs * sigma_obs / noise_variance;
    let ell = white_spike_inverse(lambda, gamma);
    if ell == 0.0 {
        return SpikeEstimate::subcritical(sigma_obs);
    }
    let fwd = white_spike_forward(ell, gamma);
    SpikeEstimate::from_parts(ell * noise_variance, fwd.c2, fwd.ct2, sigma_obs)
}

/// `sqrt(ell) c ct` with positive cosines.
pub fn optimal_lambda(est: &SpikeEstimate) -> f64 {
    est.ell_hat.max(0.0).sqrt() * est.c2_hat.max(0.0).sqrt() * est.ct2_hat.max(0.0).sqrt()
}

/// Estimated asymptotic MSE per sample, `sum_k ell_k (1 - c_k^2 ct_k^2)`.
pub fn amse(estimates: &[SpikeEstimate]) -> f64 {
    estimates
        .iter()
        .map(|e| e.ell_hat * (1.0 - e.c2_hat * e.ct2_hat))
        .sum()
}

/// Limits of the top eigenvalue and squared cosines for a spike of
/// strength `ell` in unit white noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WhiteSpike {
    pub lambda_emp: f64,
    pub c2: f64,
    pub ct2: f64,
}

pub fn white_spike_forward(ell: f64, gamma: f64) -> WhiteSpike {
    if ell <= gamma.sqrt() {
        return WhiteSpike {
            lambda_emp: (1.0 + gamma.sqrt()).powi(2),
            c2: 0.0,
            ct2: 0.0,
        };
    }
    let num = 1.0 - gamma / (ell * ell);
    WhiteSpike {
        lambda_emp: (ell + 1.0) * (1.0 + gamma / ell),
        c2: num / (1.0 + gamma / ell),
        ct2: num / (1.0 + 1.0 / ell),
    }
}

/// Inverse of the eigenvalue map of [`white_spike_forward`]; zero at or
/// below the bulk edge.
pub fn white_spike_inverse(lambda_emp: f64, gamma: f64) -> f64 {
    if !(lambda_emp > (1.0 + gamma.sqrt()).powi(2)) {
        return 0.0;
    }
    let b = lambda_emp - 1.0 - gamma;
    let disc = (b * b - 4.0 * gamma).max(0.0);
    (b + disc.sqrt()) / 2.0
}

/// Noise variance of an `n x p` matrix (scaled by `1/sqrt(n)`) from its total
/// energy `trace` and its top `r` eigenvalues `top`.
///
/// Solves `p s2 = trace - sum_k s2 * ell(top_k / s2)` by fixed-point
/// iteration, where `ell` is the white-noise inverse map; components still
/// inside the bulk contribute no signal energy.
pub fn estimate_noise_variance(trace: f64, top: &[f64], n: usize, p: usize) -> f64 {
    if p == 0 || n == 0 || !(trace > 0.0) {
        return 0.0;
    }
    let gamma = p as f64 / n as f64;
    let r = top.len().min(p.saturating_sub(1));
    let mut s2 = (trace - top[..r].iter().sum::<f64>()).max(0.0) / (p - r) as f64;
    if s2 == 0.0 {
        return trace / p as f64;
    }
    for _ in 0..100 {
        let signal: f64 = top
            .iter()
            .map(|&lam| s2 * white_spike_inverse(lam / s2, gamma))
            .sum();
        let next = ((trace - signal) / p as f64).max(f64::MIN_POSITIVE);
        if (next - s2).abs() <= 1e-14 * s2 {
            s2 = next;
            break;
        }
        s2 = next;
    }
    s2
}

/// Options for [`shrink_matrix_with`].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ShrinkOptions {
    pub mode: ShrinkMode,
    /// Known noise variance of the scaled matrix. Estimated from the
    /// spectrum when absent. Only the white mode depends on it.
    pub noise_variance: Option<f64>,
}

/// Result of shrinking one matrix.
#[derive(Debug, Clone)]
pub struct Shrinkage {
    /// `n x p` denoised matrix.
    pub denoised: Array2<f64>,
    pub estimates: Vec<SpikeEstimate>,
    /// Right singular vectors (`p x r`).
    pub u_hat: Array2<f64>,
    /// Left singular vectors (`n x r`).
    pub v_hat: Array2<f64>,
    /// Noise variance used (white mode) or estimated (plugin mode).
    pub noise_variance: f64,
    /// Full spectrum of `n^-1 B^T B`, plugin mode only.
    pub spectrum: Option<EigenSpectrum>,
}

/// Shrinks the top `r` singular values of an `n x p` matrix with rows as
/// samples.
pub fn shrink_matrix(matrix: ArrayView2<f64>, r: usize, mode: ShrinkMode) -> Result<Shrinkage> {
    shrink_matrix_with(
        matrix,
        r,
        &ShrinkOptions {
            mode,
            noise_variance: None,
        },
    )
}

pub fn shrink_matrix_with(
    matrix: ArrayView2<f64>,
    r: usize,
    opts: &ShrinkOptions,
) -> Result<Shrinkage> {
    let (n, p) = matrix.dim();
    let full = n.min(p);
    let plugin = opts.mode == ShrinkMode::Plugin;
    if n == 0 || p == 0 || r > full || (plugin && r >= full) {
        return Err(EblpError::InvalidRank { rank: r, n, p });
    }
    if matrix.iter().any(|v| !v.is_finite()) {
        return Err(EblpError::InvalidArgument("matrix has non-finite entries".into()));
    }
    let root_n = (n as f64).sqrt();
    let scaled = matrix.mapv(|v| v / root_n);
    let trace = scaled.iter().map(|v| v * v).sum::<f64>();

    let (svd, spectrum) = match opts.mode {
        ShrinkMode::Plugin => {
            let svd = thin_svd(scaled.view())?;
            let spectrum = EigenSpectrum::from_singular_values(svd.s.as_slice().unwrap(), n, p)?;
            (svd.truncate(r), Some(spectrum))
        }
        ShrinkMode::White => (top_svd(scaled.view(), r)?, None),
    };

    let top: Vec<f64> = svd.s.iter().map(|s| s * s).collect();
    let noise_variance = opts
        .noise_variance
        .unwrap_or_else(|| estimate_noise_variance(trace, &top, n, p));

    let estimates = match &spectrum {
        Some(spec) => (0..r)
            .map(|k| estimate_spike(spec, r, k))
            .collect::<Result<Vec<_>>>()?,
        None => {
            let gamma = p as f64 / n as f64;
            svd.s
                .iter()
                .map(|&s| estimate_spike_white(s, gamma, noise_variance))
                .collect()
        }
    };

    let lambdas = ndarray::Array1::from_iter(estimates.iter().map(|e| e.lambda_star * root_n));
    let weighted = &svd.u * &lambdas.view().insert_axis(Axis(0));
    let denoised = weighted.dot(&svd.v.t());

    Ok(Shrinkage {
        denoised,
        estimates,
        u_hat: svd.v,
        v_hat: svd.u,
        noise_variance,
        spectrum,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    /// Quantiles of the unit MP law (gamma <= 1) by bisection on a
    /// midpoint-rule CDF.
    fn mp_quantiles(gamma: f64, count: usize) -> Vec<f64> {
        let (a, b) = ((1.0 - gamma.sqrt()).powi(2), (1.0 + gamma.sqrt()).powi(2));
        let grid = 20_000;
        let h = (b - a) / grid as f64;
        let mut cdf = vec![0.0; grid + 1];
        for i in 0..grid {
            let l = a + (i as f64 + 0.5) * h;
            let dens = ((b - l) * (l - a)).sqrt() / (2.0 * std::f64::consts::PI * gamma * l);
            cdf[i + 1] = cdf[i] + dens * h;
        }
        let total = cdf[grid];
        (0..count)
            .map(|j| {
                let q = (j as f64 + 0.5) / count as f64 * total;
                let idx = cdf.partition_point(|&c| c < q).clamp(1, grid);
                let frac = (q - cdf[idx - 1]) / (cdf[idx] - cdf[idx - 1]);
                a + (idx as f64 - 1.0 + frac) * h
            })
            .collect()
    }

    #[test]
    fn forward_examples() {
        let g: f64 = 0.64;
        let at = white_spike_forward(g.sqrt(), g);
        assert_relative_eq!(at.lambda_emp, (1.0 + g.sqrt()).powi(2));
        assert_eq!((at.c2, at.ct2), (0.0, 0.0));

        let w = white_spike_forward(2.0, 1.0);
        assert_relative_eq!(w.lambda_emp, 4.5);
        assert_relative_eq!(w.c2, 0.5);
        assert_relative_eq!(w.ct2, 0.5);

        let w = white_spike_forward(1.0, 0.5);
        assert_relative_eq!(w.lambda_emp, 3.0);
        assert_relative_eq!(w.c2, 1.0 / 3.0);
        assert_relative_eq!(w.ct2, 0.25);
    }

    #[test]
    fn inverse_examples() {
        assert_relative_eq!(white_spike_inverse(4.5, 1.0), 2.0, epsilon = 1e-12);
        for g in [0.1, 0.8, 1.0, 3.0_f64] {
            assert_eq!(white_spike_inverse((1.0 + g.sqrt()).powi(2), g), 0.0);
        }
    }

    #[test]
    fn lambda_examples() {
        let mk = |ell, c2, ct2| SpikeEstimate {
            ell_hat: ell,
            c2_hat: c2,
            ct2_hat: ct2,
            lambda_star: 0.0,
            sigma_obs: 0.0,
            supercritical: true,
            clamped: false,
        };
        assert_relative_eq!(optimal_lambda(&mk(2.0, 0.5, 0.5)), 2f64.sqrt() * 0.5);
        assert_eq!(optimal_lambda(&mk(2.0, 0.0, 0.0)), 0.0);
        assert_relative_eq!(optimal_lambda(&mk(1.0, 1.0, 1.0)), 1.0);

        assert_relative_eq!(amse(&[mk(2.0, 0.5, 0.5)]), 1.5);
        assert_eq!(amse(&[mk(3.0, 1.0, 1.0)]), 0.0);
        assert_eq!(amse(&[SpikeEstimate::subcritical(1.0)]), 0.0);
        assert_relative_eq!(amse(&[mk(2.0, 0.5, 0.5), mk(4.0, 0.0, 0.0)]), 5.5);
    }

    #[test]
    fn plugin_on_ideal_white_bulk() {
        // gamma = 1, p = n = 2000: bulk at MP quantiles, one spike at 4.5
        let p = 2000;
        let mut values = mp_quantiles(1.0, p - 1);
        values.push(4.5);
        let spec = EigenSpectrum::new(values, p, p).unwrap();
        let est = estimate_spike(&spec, 1, 0).unwrap();
        assert!(est.supercritical);
        assert_relative_eq!(est.ell_hat, 2.0, max_relative = 0.05);
        assert_relative_eq!(est.c2_hat, 0.5, max_relative = 0.05);
        assert_relative_eq!(est.ct2_hat, 0.5, max_relative = 0.05);
        assert!(est.sigma_obs >= est.lambda_star);
    }

    #[test]
    fn plugin_on_ideal_bulk_with_gamma_above_one() {
        // p = 1200, n = 600: bulk of 600 quantiles for the n x n companion
        // plus 600 structural zeros; the n x n law has ratio 1/gamma and
        // scale gamma
        let (n, p) = (600, 1200);
        let gamma = 2.0;
        let ell = 4.0;
        let fwd = white_spike_forward(ell, gamma);
        let mut values: Vec<f64> = mp_quantiles(1.0 / gamma, n - 1)
            .into_iter()
            .map(|v| v * gamma)
            .collect();
        values.push(fwd.lambda_emp);
        let spec = EigenSpectrum::new(values, n, p).unwrap();
        let est = estimate_spike(&spec, 1, 0).unwrap();
        assert_relative_eq!(est.ell_hat, ell, max_relative = 0.05);
        assert_relative_eq!(est.c2_hat, fwd.c2, max_relative = 0.05);
        assert_relative_eq!(est.ct2_hat, fwd.ct2, max_relative = 0.05);
    }

    #[test]
    fn spike_at_guard_is_subcritical() {
        let spec = EigenSpectrum::new(vec![2.0, 2.0, 1.0, 0.5], 8, 4).unwrap();
        let est = estimate_spike(&spec, 1, 0).unwrap();
        assert!(!est.supercritical);
        assert_eq!(est.lambda_star, 0.0);
        assert_eq!(est.ell_hat, 0.0);
        assert!(matches!(estimate_spike(&spec, 1, 1), Err(EblpError::Index { .. })));
    }

    #[test]
    fn zero_matrix_shrinks_to_zero() {
        let z = Array2::<f64>::zeros((30, 20));
        for mode in [ShrinkMode::Plugin, ShrinkMode::White] {
            let out = shrink_matrix(z.view(), 2, mode).unwrap();
            assert!(out.denoised.iter().all(|&v| v == 0.0));
            assert!(out.estimates.iter().all(|e| !e.supercritical));
        }
    }

    #[test]
    fn rank_errors() {
        let z = Array2::<f64>::zeros((5, 4));
        assert!(matches!(
            shrink_matrix(z.view(), 5, ShrinkMode::White),
            Err(EblpError::InvalidRank { .. })
        ));
        assert!(matches!(
            shrink_matrix(z.view(), 4, ShrinkMode::Plugin),
            Err(EblpError::InvalidRank { .. })
        ));
        assert!(shrink_matrix(z.view(), 4, ShrinkMode::White).is_ok());
    }

    #[test]
    fn noise_variance_fixed_point_on_exact_limits() {
        // trace = signal + p s2 with spikes at their white limits
        let (n, p) = (375, 300);
        let gamma = p as f64 / n as f64;
        let s2 = 2.5;
        let ells = [10.0, 4.0, 0.3];
        let mut top: Vec<f64> = ells
            .iter()
            .map(|&l: &f64| s2 * white_spike_forward(l / s2, gamma).lambda_emp)
            .collect();
        // a bulk eigenvalue strictly inside the edge
        top[2] = s2 * 3.0;
        let supercrit: f64 = ells
            .iter()
            .filter(|&&l| l / s2 > gamma.sqrt())
            .sum();
        let trace = supercrit + p as f64 * s2;
        let est = estimate_noise_variance(trace, &top, n, p);
        assert_relative_eq!(est, s2, max_relative = 1e-10);
    }

    proptest! {
        #[test]
        fn forward_inverse_roundtrip(gamma in 0.05f64..5.0, excess in 1e-3f64..50.0) {
            let ell = gamma.sqrt() + excess;
            let fwd = white_spike_forward(ell, gamma);
            let back = white_spike_inverse(fwd.lambda_emp, gamma);
            prop_assert!(((back - ell) / ell).abs() < 1e-10);
        }

        #[test]
        fn whitened_identity(gamma in 0.05f64..5.0, excess in 1e-3f64..50.0, s2 in 0.1f64..10.0) {
            let ell = gamma.sqrt() + excess;
            let fwd = white_spike_forward(ell, gamma);
            let est = estimate_spike_white((s2 * fwd.lambda_emp).sqrt(), gamma, s2);
            let ell_unit = est.ell_hat / s2;
            let lhs = 1.0 / est.ct2_hat;
            let rhs = 1.0 + 1.0 / (ell_unit * est.c2_hat);
            prop_assert!(((lhs - rhs) / lhs).abs() < 1e-10);
            prop_assert!(est.lambda_star <= est.sigma_obs);
        }
    }
}
