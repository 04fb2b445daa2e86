//! In-sample and out-of-sample EBLP.
//!
//! Each observation carries the diagonal `d_i` of `A_i^T A_i`. The transform
//! itself is taken to be `A_i = diag(sqrt(d_i))`, so an observation vector
//! lives in sample space and backprojection is `A_i^T y_i = sqrt(d_i) * y_i`.
//! For 0/1 coordinate masks this is plain selection.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{EblpError, Result};
use crate::shrinkage::{
    amse, estimate_noise_variance, shrink_matrix_with, ShrinkMode, ShrinkOptions, SpikeEstimate,
};
use crate::svd::singular_values;

/// Default floor on the entries of the normalization matrix.
pub const DEFAULT_M_FLOOR: f64 = 1e-6;

/// One sample: the observation and the diagonal of `A^T A`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformedObservation {
    /// Either length `p` (zeros where `d = 0`) or one value per coordinate
    /// with `d > 0`, in coordinate order.
    pub y: Array1<f64>,
    pub d: Array1<f64>,
}

impl TransformedObservation {
    pub fn new(y: Array1<f64>, d: Array1<f64>) -> Result<Self> {
        if d.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(EblpError::InvalidArgument(
                "transform weights must be finite and nonnegative".into(),
            ));
        }
        let support = d.iter().filter(|&&v| v > 0.0).count();
        if y.len() != d.len() && y.len() != support {
            return Err(EblpError::Shape(format!(
                "observation has {} values; expected {} (full) or {} (observed)",
                y.len(),
                d.len(),
                support
            )));
        }
        Ok(Self { y, d })
    }

    /// A fully observed sample (`A = I`).
    pub fn full(y: Array1<f64>) -> Self {
        let d = Array1::ones(y.len());
        Self { y, d }
    }

    pub fn dim(&self) -> usize {
        self.d.len()
    }

    /// Observation as a length-`p` vector, zero where `d = 0`.
    pub fn sample_space(&self) -> Result<Array1<f64>> {
        let p = self.d.len();
        if self.y.len() == p {
            return Ok(Zip::from(&self.y)
                .and(&self.d)
                .map_collect(|&y, &d| if d > 0.0 { y } else { 0.0 }));
        }
        let mut out = Array1::zeros(p);
        let mut vals = self.y.iter();
        for (o, &d) in out.iter_mut().zip(self.d.iter()) {
            if d > 0.0 {
                *o = *vals
                    .next()
                    .ok_or_else(|| EblpError::Shape("too few observed values".into()))?;
            }
        }
        if vals.next().is_some() {
            return Err(EblpError::Shape("too many observed values".into()));
        }
        Ok(out)
    }
}

/// `A^T y` for `A = diag(sqrt(d))`.
pub fn backproject(obs: &TransformedObservation) -> Result<Array1<f64>> {
    let y = obs.sample_space()?;
    Ok(Zip::from(&y).and(&obs.d).map_collect(|&y, &d| d.sqrt() * y))
}

/// `n` observations stacked as rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    y: Array2<f64>,
    d: Array2<f64>,
}

impl Dataset {
    /// `y` in sample space (entries at `d = 0` are ignored), `d` the
    /// per-sample diagonals of `A_i^T A_i`.
    pub fn new(y: Array2<f64>, d: Array2<f64>) -> Result<Self> {
        if y.dim() != d.dim() {
            return Err(EblpError::Shape(format!(
                "values {:?} and weights {:?} differ in shape",
                y.dim(),
                d.dim()
            )));
        }
        if d.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(EblpError::InvalidArgument(
                "transform weights must be finite and nonnegative".into(),
            ));
        }
        let mut y = y;
        Zip::from(&mut y).and(&d).for_each(|y, &d| {
            if d == 0.0 {
                *y = 0.0;
            }
        });
        if y.iter().any(|v| !v.is_finite()) {
            return Err(EblpError::InvalidArgument("observed values must be finite".into()));
        }
        Ok(Self { y, d })
    }

    /// Missing-data constructor: `mask` holds 0/1 entries; unobserved
    /// values (possibly NaN) are discarded.
    pub fn from_masked(values: Array2<f64>, mask: Array2<f64>) -> Result<Self> {
        if mask.iter().any(|&m| m != 0.0 && m != 1.0) {
            return Err(EblpError::InvalidArgument("mask entries must be 0 or 1".into()));
        }
        Self::new(values, mask)
    }

    pub fn fully_observed(values: Array2<f64>) -> Result<Self> {
        let d = Array2::ones(values.dim());
        Self::new(values, d)
    }

    pub fn from_observations(obs: &[TransformedObservation]) -> Result<Self> {
        let p = obs.first().map(|o| o.dim()).unwrap_or(0);
        let mut y = Array2::zeros((obs.len(), p));
        let mut d = Array2::zeros((obs.len(), p));
        for (i, o) in obs.iter().enumerate() {
            if o.dim() != p {
                return Err(EblpError::Shape(format!(
                    "observation {i} has dimension {}, expected {p}",
                    o.dim()
                )));
            }
            y.row_mut(i).assign(&o.sample_space()?);
            d.row_mut(i).assign(&o.d);
        }
        Self::new(y, d)
    }

    pub fn n(&self) -> usize {
        self.y.nrows()
    }

    pub fn p(&self) -> usize {
        self.y.ncols()
    }

    pub fn values(&self) -> ArrayView2<'_, f64> {
        self.y.view()
    }

    pub fn weights(&self) -> ArrayView2<'_, f64> {
        self.d.view()
    }

    pub fn observation(&self, i: usize) -> TransformedObservation {
        TransformedObservation {
            y: self.y.row(i).to_owned(),
            d: self.d.row(i).to_owned(),
        }
    }

    /// Backprojected matrix `B` with rows `A_i^T y_i`.
    pub fn backprojected(&self) -> Array2<f64> {
        Zip::from(&self.y)
            .and(&self.d)
            .map_collect(|&y, &d| d.sqrt() * y)
    }

    pub fn select_rows(&self, rows: &[usize]) -> Dataset {
        Dataset {
            y: self.y.select(Axis(0), rows),
            d: self.d.select(Axis(0), rows),
        }
    }

    /// Available-case column means: `sum_i sqrt(d_ij) y_ij / sum_i d_ij`.
    /// Columns with no weight get a zero mean.
    pub fn available_case_mean(&self) -> Array1<f64> {
        let num = self.backprojected().sum_axis(Axis(0));
        let den = self.d.sum_axis(Axis(0));
        Zip::from(&num)
            .and(&den)
            .map_collect(|&a, &b| if b > 0.0 { a / b } else { 0.0 })
    }
}

/// Sample mean of the `A_i^T A_i` diagonals. Coordinates below `floor` are
/// reported as degenerate.
pub fn estimate_m(dataset: &Dataset, floor: f64) -> Result<Array1<f64>> {
    if dataset.n() == 0 {
        return Err(EblpError::InvalidArgument("empty dataset".into()));
    }
    let m = dataset.d.mean_axis(Axis(0)).expect("nonempty");
    check_m_floor(&m, floor)?;
    Ok(m)
}

fn check_m_floor(m: &Array1<f64>, floor: f64) -> Result<()> {
    let coords: Vec<usize> = m
        .iter()
        .enumerate()
        .filter(|(_, &v)| !(v >= floor))
        .map(|(j, _)| j)
        .collect();
    if coords.is_empty() {
        Ok(())
    } else {
        Err(EblpError::DegenerateCoordinates { floor, coords })
    }
}

/// Options for [`fit_in_sample`].
#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    pub rank: usize,
    /// Whiten the effective noise with `W = (M / v)^{1/2}` before shrinking.
    pub whiten: bool,
    pub mode: ShrinkMode,
    /// Subtract (and restore) available-case column means.
    pub center: bool,
    pub m_floor: f64,
    /// Variance of the original noise. Estimated when absent.
    pub noise_variance: Option<f64>,
    /// Relative per-coordinate variances of the original noise; white when
    /// absent. Only the shape matters, the scale is absorbed by
    /// `noise_variance`.
    pub noise_profile: Option<Array1<f64>>,
    /// Use this normalization diagonal instead of the sample mean of the
    /// transforms.
    pub m_override: Option<Array1<f64>>,
}

impl FitOptions {
    pub fn new(rank: usize) -> Self {
        Self {
            rank,
            whiten: true,
            mode: ShrinkMode::White,
            center: true,
            m_floor: DEFAULT_M_FLOOR,
            noise_variance: None,
            noise_profile: None,
            m_override: None,
        }
    }

    /// Also selects the matching default shrinkage: closed form for whitened
    /// data, plug-in otherwise. Call [`FitOptions::mode`] afterwards to
    /// override.
    pub fn whiten(mut self, whiten: bool) -> Self {
        self.whiten = whiten;
        self.mode = if whiten { ShrinkMode::White } else { ShrinkMode::Plugin };
        self
    }

    pub fn mode(mut self, mode: ShrinkMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn center(mut self, center: bool) -> Self {
        self.center = center;
        self
    }

    pub fn noise_variance(mut self, v: f64) -> Self {
        self.noise_variance = Some(v);
        self
    }

    pub fn noise_profile(mut self, profile: Array1<f64>) -> Self {
        self.noise_profile = Some(profile);
        self
    }

    pub fn m_override(mut self, m: Array1<f64>) -> Self {
        self.m_override = Some(m);
        self
    }
}

/// A fitted predictor. Everything out-of-sample prediction needs; the
/// training data is not retained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EblpModel {
    /// Empirical PCs in working (whitened, if enabled) coordinates, `p x r`.
    pub u_hat: Array2<f64>,
    /// Left singular vectors of the training matrix, `n x r`.
    pub v_hat: Array2<f64>,
    pub estimates: Vec<SpikeEstimate>,
    /// Diagonal of the normalization matrix.
    pub m_hat: Array1<f64>,
    /// Diagonal of the whitening matrix (ones when not whitened).
    pub w: Array1<f64>,
    pub rank: usize,
    pub whitened: bool,
    pub mode: ShrinkMode,
    /// Column means removed before fitting (zeros when not centered).
    pub mean: Array1<f64>,
    /// Scale of the original noise variance.
    pub noise_variance: f64,
    /// Per-coordinate variance of the effective noise in working coordinates,
    /// relative to `noise_variance`.
    pub noise_shape: Array1<f64>,
}

impl EblpModel {
    pub fn dim(&self) -> usize {
        self.m_hat.len()
    }

    /// Checks internal consistency (shapes, positivity, orthonormality).
    pub fn validate(&self) -> Result<()> {
        let p = self.dim();
        let r = self.rank;
        let bad = |msg: String| Err(EblpError::ModelState(msg));
        if self.u_hat.dim() != (p, r) {
            return bad(format!("u_hat is {:?}, expected ({p}, {r})", self.u_hat.dim()));
        }
        if self.v_hat.ncols() != r || self.estimates.len() != r {
            return bad("rank disagrees with stored factors".into());
        }
        if self.w.len() != p || self.mean.len() != p || self.noise_shape.len() != p {
            return bad("coordinate vectors disagree in length".into());
        }
        if self.m_hat.iter().chain(self.w.iter()).any(|&v| !(v > 0.0)) {
            return bad("normalization and whitening entries must be positive".into());
        }
        let gram = self.u_hat.t().dot(&self.u_hat);
        for i in 0..r {
            for j in 0..r {
                let target = if i == j { 1.0 } else { 0.0 };
                if (gram[[i, j]] - target).abs() > 1e-8 {
                    return bad("u_hat columns are not orthonormal".into());
                }
            }
        }
        Ok(())
    }

    /// `d_k = u_k^T Sigma u_k` for the effective noise in working coordinates.
    pub fn noise_projection(&self, k: usize) -> f64 {
        let u = self.u_hat.column(k);
        self.noise_variance * u.iter().zip(&self.noise_shape).map(|(u, s)| u * u * s).sum::<f64>()
    }

    /// Out-of-sample coefficients `ell c^2 / (ell c^2 + d)`.
    pub fn oos_coefficients(&self) -> Vec<f64> {
        (0..self.rank)
            .map(|k| {
                let e = &self.estimates[k];
                oos_coefficient(e.ell_hat * e.c2_hat, self.noise_projection(k))
            })
            .collect()
    }

    /// Estimated in-sample AMSE per sample, in working coordinates.
    pub fn amse(&self) -> f64 {
        amse(&self.estimates)
    }

    /// In-sample AMSE per sample mapped back through `W^-1`, treating the
    /// error as spread evenly over coordinates.
    pub fn amse_unwhitened(&self) -> f64 {
        self.amse() * self.w.iter().map(|w| 1.0 / (w * w)).sum::<f64>() / self.dim().max(1) as f64
    }

    /// Estimated out-of-sample AMSE per sample, in working coordinates.
    pub fn oos_amse(&self) -> f64 {
        (0..self.rank)
            .map(|k| {
                let e = &self.estimates[k];
                let lc = e.ell_hat * e.c2_hat;
                let d = self.noise_projection(k);
                if lc + d > 0.0 {
                    e.ell_hat - lc * lc / (lc + d)
                } else {
                    e.ell_hat
                }
            })
            .sum()
    }

    /// Normalized (and whitened) backprojection of a new observation.
    fn working_vector(&self, obs: &TransformedObservation) -> Result<Array1<f64>> {
        if obs.dim() != self.dim() {
            return Err(EblpError::Shape(format!(
                "observation has dimension {}, model expects {}",
                obs.dim(),
                self.dim()
            )));
        }
        let b = backproject(obs)?;
        let mut z = Array1::zeros(self.dim());
        Zip::from(&mut z)
            .and(&b)
            .and(&obs.d)
            .and(&self.mean)
            .and(&self.m_hat)
            .and(&self.w)
            .for_each(|z, &b, &d, &mu, &m, &w| *z = (b - d * mu) / m * w);
        Ok(z)
    }

    /// Out-of-sample EBLP for one fresh observation.
    pub fn predict_out_of_sample(&self, obs: &TransformedObservation) -> Result<Array1<f64>> {
        self.validate()?;
        let z = self.working_vector(obs)?;
        let etas = self.oos_coefficients();
        let mut out = Array1::zeros(self.dim());
        for (k, eta) in etas.iter().enumerate() {
            if *eta == 0.0 {
                continue;
            }
            let u = self.u_hat.column(k);
            out.scaled_add(eta * u.dot(&z), &u);
        }
        Ok(&out / &self.w + &self.mean)
    }

    /// Row-wise out-of-sample prediction.
    pub fn predict_dataset(&self, data: &Dataset) -> Result<Array2<f64>> {
        let mut out = Array2::zeros((data.n(), data.p()));
        for i in 0..data.n() {
            out.row_mut(i).assign(&self.predict_out_of_sample(&data.observation(i))?);
        }
        Ok(out)
    }

    /// Unwhitened PCs `W^-1 u_k` (not normalized); predictions lie in
    /// their span.
    pub fn unwhitened_basis(&self) -> Array2<f64> {
        &self.u_hat / &self.w.view().insert_axis(Axis(1))
    }
}

/// `a / (a + d)`, zero for a vanishing signal term.
pub fn oos_coefficient(ell_c2: f64, d: f64) -> f64 {
    if ell_c2 <= 0.0 {
        0.0
    } else {
        ell_c2 / (ell_c2 + d.max(0.0))
    }
}

struct Prepared {
    m: Array1<f64>,
    mean: Array1<f64>,
    w: Array1<f64>,
    /// `v / m`: variance shape of the normalized effective noise.
    noise_shape: Array1<f64>,
    working: Array2<f64>,
}

fn prepare(dataset: &Dataset, opts: &FitOptions) -> Result<Prepared> {
    let p = dataset.p();
    let m = match &opts.m_override {
        Some(m) => {
            if m.len() != p {
                return Err(EblpError::Shape(format!(
                    "normalization override has length {}, expected {p}",
                    m.len()
                )));
            }
            check_m_floor(m, opts.m_floor)?;
            m.clone()
        }
        None => estimate_m(dataset, opts.m_floor)?,
    };
    let profile = match &opts.noise_profile {
        Some(v) if v.len() != p => {
            return Err(EblpError::Shape(format!(
                "noise profile has length {}, expected {p}",
                v.len()
            )))
        }
        Some(v) if v.iter().any(|&x| !(x > 0.0)) => {
            return Err(EblpError::InvalidArgument("noise profile must be positive".into()))
        }
        Some(v) => v.clone(),
        None => Array1::ones(p),
    };
    let mean = if opts.center {
        dataset.available_case_mean()
    } else {
        Array1::zeros(p)
    };
    let w = if opts.whiten {
        Zip::from(&m).and(&profile).map_collect(|&m, &v| (m / v).sqrt())
    } else {
        Array1::ones(p)
    };
    let noise_shape = Zip::from(&profile).and(&m).and(&w).map_collect(|&v, &m, &w| v / m * w * w);

    let mut working = dataset.backprojected();
    let scale = Zip::from(&w).and(&m).map_collect(|&w, &m| w / m);
    Zip::from(working.rows_mut())
        .and(dataset.d.rows())
        .for_each(|mut row, d| {
            Zip::from(&mut row)
                .and(&d)
                .and(&mean)
                .and(&scale)
                .for_each(|b, &d, &mu, &s| *b = (*b - d * mu) * s);
        });
    Ok(Prepared {
        m,
        mean,
        w,
        noise_shape,
        working,
    })
}

/// In-sample EBLP: normalize, optionally whiten, shrink, unwhiten.
///
/// Returns the fitted model and the `n x p` predictions.
pub fn fit_in_sample(dataset: &Dataset, opts: &FitOptions) -> Result<(EblpModel, Array2<f64>)> {
    let (n, p) = (dataset.n(), dataset.p());
    if opts.rank > n.min(p) {
        return Err(EblpError::InvalidRank {
            rank: opts.rank,
            n,
            p,
        });
    }
    let prep = prepare(dataset, opts)?;
    let mean_shape = prep.noise_shape.mean().unwrap_or(1.0);
    let shrink = shrink_matrix_with(
        prep.working.view(),
        opts.rank,
        &ShrinkOptions {
            mode: opts.mode,
            noise_variance: opts.noise_variance.map(|v| v * mean_shape),
        },
    )?;
    let noise_variance = opts
        .noise_variance
        .unwrap_or(shrink.noise_variance / mean_shape);

    let mut x_hat = shrink.denoised;
    Zip::from(x_hat.rows_mut()).for_each(|mut row| {
        Zip::from(&mut row)
            .and(&prep.w)
            .and(&prep.mean)
            .for_each(|x, &w, &mu| *x = *x / w + mu);
    });

    let model = EblpModel {
        u_hat: shrink.u_hat,
        v_hat: shrink.v_hat,
        estimates: shrink.estimates,
        m_hat: prep.m,
        w: prep.w,
        rank: opts.rank,
        whitened: opts.whiten,
        mode: opts.mode,
        mean: prep.mean,
        noise_variance,
        noise_shape: prep.noise_shape,
    };
    Ok((model, x_hat))
}

/// Heuristic rank: number of working-coordinate eigenvalues above
/// `s2 (1 + sqrt(gamma))^2 (1 + eps)`, with `s2` the estimated noise level.
/// Not a consistent rank selector; intended for quick command-line use.
pub fn suggest_rank(dataset: &Dataset, opts: &FitOptions, eps: f64) -> Result<usize> {
    let prep = prepare(dataset, opts)?;
    let (n, p) = (dataset.n(), dataset.p());
    let scaled = prep.working.mapv(|v| v / (n as f64).sqrt());
    let eig: Vec<f64> = singular_values(scaled.view())?.iter().map(|s| s * s).collect();
    let trace: f64 = eig.iter().sum();
    let gamma = p as f64 / n as f64;
    let edge = (1.0 + gamma.sqrt()).powi(2) * (1.0 + eps);
    let max_rank = n.min(p) - 1;
    let mut r = 0;
    for _ in 0..10 {
        let s2 = estimate_noise_variance(trace, &eig[..r], n, p);
        let next = eig.iter().take_while(|&&l| l > s2 * edge).count().min(max_rank);
        if next == r {
            break;
        }
        r = next;
    }
    Ok(r)
}

/// Low-rank signal model `X = mean + sum_k sqrt(ell_k) z_k u_k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalModel {
    pub ell: Vec<f64>,
    /// Orthonormal PCs as columns, `p x r`.
    pub u: Array2<f64>,
    pub mean: Option<Array1<f64>>,
}

impl SignalModel {
    pub fn new(ell: Vec<f64>, u: Array2<f64>, mean: Option<Array1<f64>>) -> Result<Self> {
        if ell.len() != u.ncols() {
            return Err(EblpError::Shape(format!(
                "{} spike strengths for {} PCs",
                ell.len(),
                u.ncols()
            )));
        }
        if ell.iter().any(|&l| !(l > 0.0)) || ell.windows(2).any(|w| !(w[0] > w[1])) {
            return Err(EblpError::InvalidArgument(
                "spike strengths must be positive and strictly decreasing".into(),
            ));
        }
        let r = ell.len();
        let gram = u.t().dot(&u);
        let off = (&gram - &Array2::<f64>::eye(r)).mapv(f64::abs).fold(0.0_f64, |a, &b| a.max(b));
        if off > 1e-8 {
            return Err(EblpError::InvalidArgument("PCs must be orthonormal".into()));
        }
        if let Some(m) = &mean {
            if m.len() != u.nrows() {
                return Err(EblpError::Shape("mean has wrong length".into()));
            }
        }
        Ok(Self { ell, u, mean })
    }

    pub fn dim(&self) -> usize {
        self.u.nrows()
    }

    pub fn rank(&self) -> usize {
        self.ell.len()
    }

    fn mean_or_zero(&self) -> Array1<f64> {
        self.mean.clone().unwrap_or_else(|| Array1::zeros(self.dim()))
    }
}

/// Exact best linear predictor `Sigma_X A^T (A Sigma_X A^T + Sigma_eps)^-1 y`
/// with known signal parameters and diagonal noise covariance.
///
/// Evaluated through the `r x r` system `(I + G^T A^T S^-1 A G) c = G^T A^T S^-1 y`
/// with `G = U L^{1/2}`; no `q x q` inverse is formed.
pub fn blp_oracle(
    obs: &TransformedObservation,
    signal: &SignalModel,
    noise_cov_diag: ArrayView1<f64>,
) -> Result<Array1<f64>> {
    let p = signal.dim();
    if obs.dim() != p || noise_cov_diag.len() != p {
        return Err(EblpError::Shape("observation, signal and noise dimensions differ".into()));
    }
    if noise_cov_diag.iter().any(|&s| !(s > 0.0)) {
        return Err(EblpError::Linalg(
            "noise covariance must be positive definite".into(),
        ));
    }
    let mean = signal.mean_or_zero();
    let a = obs.d.mapv(f64::sqrt);
    let y = &obs.sample_space()? - &(&a * &mean);

    let root_ell = Array1::from_iter(signal.ell.iter().map(|l| l.sqrt()));
    let g = &signal.u * &root_ell.view().insert_axis(Axis(0));
    // S^-1 A G and S^-1 A y
    let inv_s = noise_cov_diag.mapv(|s| 1.0 / s);
    let av = &g * &a.view().insert_axis(Axis(1));
    let weighted = &av * &inv_s.view().insert_axis(Axis(1));
    let mut k = av.t().dot(&weighted);
    for i in 0..signal.rank() {
        k[[i, i]] += 1.0;
    }
    let rhs = weighted.t().dot(&y);
    let coef = if signal.rank() == 0 {
        Array1::zeros(0)
    } else {
        crate::linalg::solve_spd(k.view(), &rhs)?
    };
    Ok(g.dot(&coef) + mean)
}

/// `sum_k ell_k / (1 + m ell_k) u_k u_k^T A^T y`, the uniform-model reduction
/// of the exact BLP.
pub fn simple_blp_uniform(
    obs: &TransformedObservation,
    signal: &SignalModel,
    m: f64,
) -> Result<Array1<f64>> {
    if obs.dim() != signal.dim() {
        return Err(EblpError::Shape("observation and signal dimensions differ".into()));
    }
    let mean = signal.mean_or_zero();
    let centered = TransformedObservation {
        y: &obs.sample_space()? - &(&obs.d.mapv(f64::sqrt) * &mean),
        d: obs.d.clone(),
    };
    let b = backproject(&centered)?;
    let mut out = mean;
    for (k, &ell) in signal.ell.iter().enumerate() {
        let u = signal.u.column(k);
        out.scaled_add(ell / (1.0 + m * ell) * u.dot(&b), &u);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn backproject_selection() {
        let obs = TransformedObservation::new(array![3.0, 5.0], array![1.0, 0.0, 1.0]).unwrap();
        assert_eq!(backproject(&obs).unwrap(), array![3.0, 0.0, 5.0]);

        let y = array![1.5, -2.0, 0.25];
        assert_eq!(backproject(&TransformedObservation::full(y.clone())).unwrap(), y);

        let obs = TransformedObservation::new(array![3.0, 9.0, 5.0], array![1.0, 0.0, 1.0]).unwrap();
        assert_eq!(backproject(&obs).unwrap(), array![3.0, 0.0, 5.0]);

        assert!(TransformedObservation::new(array![1.0], array![1.0, 0.0, 1.0]).is_err());
        assert!(TransformedObservation::new(array![1.0], array![-1.0]).is_err());
    }

    #[test]
    fn backproject_filter_convention() {
        // A = diag(sqrt(d)): A^T A x = d * x
        let d = array![2.0, 0.0, 0.5];
        let x = array![4.0, 7.0, -2.0];
        let ax = &d.mapv(f64::sqrt) * &x;
        let obs = TransformedObservation::new(ax, d.clone()).unwrap();
        assert_abs_diff_eq!(backproject(&obs).unwrap(), &d * &x, epsilon = 1e-12);

        let obs = TransformedObservation::new(array![4.0, 0.0], array![2.0, 0.0]).unwrap();
        assert_abs_diff_eq!(
            backproject(&obs).unwrap(),
            array![4.0 * 2f64.sqrt(), 0.0],
            epsilon = 1e-12
        );
    }

    #[test]
    fn estimate_m_examples() {
        let ds = Dataset::from_masked(
            array![[1.0, 9.0], [2.0, 3.0]],
            array![[1.0, 0.0], [1.0, 1.0]],
        )
        .unwrap();
        assert_eq!(estimate_m(&ds, 1e-6).unwrap(), array![1.0, 0.5]);

        let ds = Dataset::fully_observed(Array2::zeros((3, 4))).unwrap();
        assert_eq!(estimate_m(&ds, 1e-6).unwrap(), Array1::<f64>::ones(4));

        let ds = Dataset::from_masked(
            array![[1.0, 9.0, 1.0], [2.0, 3.0, 1.0]],
            array![[1.0, 0.0, 1.0], [1.0, 0.0, 0.0]],
        )
        .unwrap();
        match estimate_m(&ds, 1e-6) {
            Err(EblpError::DegenerateCoordinates { coords, .. }) => assert_eq!(coords, vec![1]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn available_case_mean_ignores_missing() {
        let ds = Dataset::from_masked(
            array![[1.0, f64::NAN], [3.0, 4.0]],
            array![[1.0, 0.0], [1.0, 1.0]],
        )
        .unwrap();
        assert_eq!(ds.available_case_mean(), array![2.0, 4.0]);
    }

    #[test]
    fn oos_coefficient_examples() {
        assert_abs_diff_eq!(oos_coefficient(1.0, 1.0), 0.5);
        assert_eq!(oos_coefficient(0.0, 1.0), 0.0);
        assert_eq!(oos_coefficient(2.0, 0.0), 1.0);
        assert_eq!(oos_coefficient(0.0, 0.0), 0.0);
    }

    fn two_pcs(p: usize) -> Array2<f64> {
        let mut u = Array2::zeros((p, 2));
        let s = (1.0 / p as f64).sqrt();
        for j in 0..p {
            u[[j, 0]] = s;
            u[[j, 1]] = if j % 2 == 0 { s } else { -s };
        }
        u
    }

    fn dense_blp(obs: &TransformedObservation, signal: &SignalModel, noise: &Array1<f64>) -> Array1<f64> {
        // select observed coordinates: A is q x p
        let idx: Vec<usize> = (0..obs.dim()).filter(|&j| obs.d[j] > 0.0).collect();
        let p = obs.dim();
        let q = idx.len();
        let mut a = Array2::zeros((q, p));
        for (r, &j) in idx.iter().enumerate() {
            a[[r, j]] = obs.d[j].sqrt();
        }
        let l = Array2::from_diag(&Array1::from(signal.ell.clone()));
        let sigma_x = signal.u.dot(&l).dot(&signal.u.t());
        let s = Array2::from_diag(&Array1::from_iter(idx.iter().map(|&j| noise[j])));
        let inner = a.dot(&sigma_x).dot(&a.t()) + s;
        let y = Array1::from_iter(idx.iter().map(|&j| obs.sample_space().unwrap()[j]));
        sigma_x.dot(&a.t()).dot(&crate::linalg::inverse(inner.view()).unwrap()).dot(&y)
    }

    #[test]
    fn blp_matches_dense_solve() {
        let u = {
            let raw = array![[1.0, 0.5], [0.2, -1.0], [0.0, 0.3], [-0.7, 0.1], [0.4, 0.9]];
            crate::linalg::orthonormalize(raw.view())
        };
        let signal = SignalModel::new(vec![3.0, 0.7], u, None).unwrap();
        let obs = TransformedObservation::new(
            array![0.3, -1.2, 2.0],
            array![1.0, 0.0, 1.0, 0.0, 1.0],
        )
        .unwrap();
        let noise = array![0.5, 1.0, 2.0, 1.0, 0.8];
        let fast = blp_oracle(&obs, &signal, noise.view()).unwrap();
        let slow = dense_blp(&obs, &signal, &noise);
        assert_abs_diff_eq!(fast, slow, epsilon = 1e-10);
    }

    #[test]
    fn blp_identity_transform_rank_one() {
        let p = 6;
        let u = two_pcs(p).column(0).to_owned().insert_axis(Axis(1));
        let ell = 2.5;
        let signal = SignalModel::new(vec![ell], u.clone(), None).unwrap();
        let y = array![0.1, 2.0, -1.0, 0.5, 0.0, 3.0];
        let obs = TransformedObservation::full(y.clone());
        let got = blp_oracle(&obs, &signal, Array1::ones(p).view()).unwrap();
        let uc = u.column(0);
        let expect = &uc * (ell / (ell + 1.0) * uc.dot(&y));
        assert_abs_diff_eq!(got, expect, epsilon = 1e-12);
        let simple = simple_blp_uniform(&obs, &signal, 1.0).unwrap();
        assert_abs_diff_eq!(got, simple, epsilon = 1e-12);
    }

    #[test]
    fn blp_zero_signal_and_singular_noise() {
        let p = 4;
        let signal = SignalModel::new(vec![], Array2::zeros((p, 0)), None).unwrap();
        let obs = TransformedObservation::full(array![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(blp_oracle(&obs, &signal, Array1::ones(p).view()).unwrap(), Array1::<f64>::zeros(p));
        let signal = SignalModel::new(vec![1.0], two_pcs(p).slice(ndarray::s![.., ..1]).to_owned(), None).unwrap();
        assert!(matches!(
            blp_oracle(&obs, &signal, array![1.0, 0.0, 1.0, 1.0].view()),
            Err(EblpError::Linalg(_))
        ));
        let tiny = simple_blp_uniform(
            &obs,
            &SignalModel::new(vec![1e-14], signal.u.clone(), None).unwrap(),
            1.0,
        )
        .unwrap();
        assert!(tiny.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn signal_model_validation() {
        let u = two_pcs(4);
        assert!(SignalModel::new(vec![2.0, 1.0], u.clone(), None).is_ok());
        assert!(SignalModel::new(vec![1.0, 2.0], u.clone(), None).is_err());
        assert!(SignalModel::new(vec![1.0], u.clone(), None).is_err());
        assert!(SignalModel::new(vec![2.0, 1.0], u * 2.0, None).is_err());
    }

    #[test]
    fn model_rejects_wrong_dimension() {
        let ds = Dataset::fully_observed(Array2::from_shape_fn((12, 5), |(i, j)| {
            ((i * 7 + j * 3) % 5) as f64 - 2.0
        }))
        .unwrap();
        let (model, _) = fit_in_sample(&ds, &FitOptions::new(1)).unwrap();
        let obs = TransformedObservation::full(Array1::zeros(4));
        assert!(matches!(model.predict_out_of_sample(&obs), Err(EblpError::Shape(_))));

        let mut broken = model.clone();
        broken.u_hat = Array2::zeros((5, 1));
        assert!(matches!(
            broken.predict_out_of_sample(&TransformedObservation::full(Array1::zeros(5))),
            Err(EblpError::ModelState(_))
        ));
    }

    #[test]
    fn fit_rank_errors_propagate() {
        let ds = Dataset::fully_observed(Array2::zeros((4, 3))).unwrap();
        assert!(matches!(
            fit_in_sample(&ds, &FitOptions::new(4)),
            Err(EblpError::InvalidRank { .. })
        ));
        let ds = Dataset::from_masked(Array2::zeros((4, 3)), array![
            [1.0, 0.0, 1.0],
            [1.0, 0.0, 1.0],
            [1.0, 0.0, 1.0],
            [1.0, 0.0, 1.0]
        ])
        .unwrap();
        assert!(matches!(
            fit_in_sample(&ds, &FitOptions::new(1)),
            Err(EblpError::DegenerateCoordinates { .. })
        ));
    }
}
