//! Plug-in estimates of Marchenko-Pastur spectral functionals.
//!
//! Everything here works on the eigenvalues of the `p x p` matrix
//! `n^-1 B^T B`, where `B` is the (normalized, optionally whitened) `n x p`
//! data matrix. The top `r` eigenvalues are treated as spikes and excluded;
//! the remaining `p - r` values (including the `p - n` structural zeros when
//! `p > n`) form the residual bulk.

use serde::{Deserialize, Serialize};

use crate::error::{EblpError, Result};

/// Relative width of the guard band above the top residual eigenvalue.
pub const EDGE_GUARD: f64 = 1e-8;

/// Eigenvalues of `n^-1 B^T B`, sorted in decreasing order and zero-padded
/// to length `p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenSpectrum {
    values: Vec<f64>,
    n: usize,
    p: usize,
}

impl EigenSpectrum {
    /// Builds a spectrum from at most `p` eigenvalues. Missing values are
    /// filled with zeros. Round-off negatives down to `-1e-10 * max` are
    /// clamped to zero; anything more negative is rejected.
    pub fn new(mut values: Vec<f64>, n: usize, p: usize) -> Result<Self> {
        if n == 0 || p == 0 {
            return Err(EblpError::InvalidArgument(format!(
                "spectrum dimensions must be positive (n={n}, p={p})"
            )));
        }
        if values.len() > p {
            return Err(EblpError::Shape(format!(
                "{} eigenvalues supplied for dimension p={p}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EblpError::InvalidArgument(
                "eigenvalues must be finite".into(),
            ));
        }
        let top = values.iter().cloned().fold(0.0_f64, f64::max);
        let tol = 1e-10 * top.max(1.0);
        for v in values.iter_mut() {
            if *v < -tol {
                return Err(EblpError::InvalidArgument(format!(
                    "negative eigenvalue {v}"
                )));
            }
            *v = v.max(0.0);
        }
        values.resize(p, 0.0);
        values.sort_by(|a, b| b.total_cmp(a));
        Ok(Self { values, n, p })
    }

    /// Spectrum of `n^-1 B^T B` from the singular values of `B / sqrt(n)`.
    pub fn from_singular_values(singular: &[f64], n: usize, p: usize) -> Result<Self> {
        Self::new(singular.iter().map(|s| s * s).collect(), n, p)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    /// Aspect ratio `p / n`.
    pub fn gamma(&self) -> f64 {
        self.p as f64 / self.n as f64
    }

    fn check_rank(&self, r: usize) -> Result<()> {
        if r >= self.n.min(self.p) {
            return Err(EblpError::InvalidRank {
                rank: r,
                n: self.n,
                p: self.p,
            });
        }
        Ok(())
    }

    /// Largest residual eigenvalue once the top `r` are removed.
    pub fn residual_edge(&self, r: usize) -> Result<f64> {
        self.check_rank(r)?;
        Ok(self.values[r])
    }

    /// The bulk-separation guard: `x` must clear the top residual eigenvalue
    /// by `EDGE_GUARD * max(1, edge)`.
    pub fn above_bulk(&self, r: usize, x: f64) -> Result<bool> {
        let edge = self.residual_edge(r)?;
        Ok(x >= edge + EDGE_GUARD * edge.max(1.0))
    }

    fn guard(&self, r: usize, x: f64) -> Result<()> {
        if !self.above_bulk(r, x)? {
            return Err(EblpError::Domain {
                x,
                edge: self.values[r],
            });
        }
        Ok(())
    }

    /// Unguarded residual sum `(p-r)^-1 sum_{k>r} (lambda_k - x)^-power`.
    ///
    /// Valid anywhere off the residual eigenvalues, including below the bulk.
    pub fn resolvent_moment(&self, r: usize, x: f64, power: i32) -> Result<f64> {
        self.check_rank(r)?;
        let resid = &self.values[r..];
        if resid.iter().any(|&l| l == x) {
            return Err(EblpError::Domain { x, edge: resid[0] });
        }
        let sum: f64 = resid.iter().map(|&l| (l - x).powi(-power)).sum();
        Ok(sum / resid.len() as f64)
    }
}

/// Sample Stieltjes transform `m(x) = (p-r)^-1 sum_{k>r} 1/(lambda_k - x)`.
pub fn empirical_stieltjes(spectrum: &EigenSpectrum, r: usize, x: f64) -> Result<f64> {
    spectrum.guard(r, x)?;
    spectrum.resolvent_moment(r, x, 1)
}

/// Derivative `m'(x) = (p-r)^-1 sum_{k>r} 1/(lambda_k - x)^2`.
pub fn empirical_stieltjes_derivative(spectrum: &EigenSpectrum, r: usize, x: f64) -> Result<f64> {
    spectrum.guard(r, x)?;
    spectrum.resolvent_moment(r, x, 2)
}

/// Stieltjes transform of the companion law `gamma F + (1 - gamma) delta_0`.
pub fn companion_stieltjes(m_val: f64, x: f64, gamma: f64) -> Result<f64> {
    if x == 0.0 {
        return Err(EblpError::Domain { x, edge: 0.0 });
    }
    Ok(gamma * m_val - (1.0 - gamma) / x)
}

pub fn companion_stieltjes_derivative(m_prime: f64, x: f64, gamma: f64) -> Result<f64> {
    if x == 0.0 {
        return Err(EblpError::Domain { x, edge: 0.0 });
    }
    Ok(gamma * m_prime + (1.0 - gamma) / (x * x))
}

/// `D(x) = x m(x) m_comp(x)`.
pub fn d_transform(x: f64, m_val: f64, m_comp_val: f64) -> f64 {
    x * m_val * m_comp_val
}

/// Product rule for `D(x) = x m(x) m_comp(x)`.
pub fn d_transform_derivative(x: f64, m: f64, m_comp: f64, m_prime: f64, m_comp_prime: f64) -> f64 {
    m * m_comp + x * m_prime * m_comp + x * m * m_comp_prime
}

/// Closed-form Stieltjes transform of the unit-variance Marchenko-Pastur law
/// with ratio `gamma`, evaluated to the right of the bulk edge `(1+sqrt(gamma))^2`.
///
/// The law is that of the `p x p` covariance, so it carries an atom of mass
/// `1 - 1/gamma` at zero when `gamma > 1`.
pub fn mp_white_stieltjes(x: f64, gamma: f64) -> Result<f64> {
    if !(gamma > 0.0) {
        return Err(EblpError::InvalidArgument(format!("gamma must be positive, got {gamma}")));
    }
    let edge = (1.0 + gamma.sqrt()).powi(2);
    if !(x >= edge) {
        return Err(EblpError::Domain { x, edge });
    }
    let a = x - 1.0 - gamma;
    let disc = (a * a - 4.0 * gamma).max(0.0);
    Ok((1.0 - gamma - x + disc.sqrt()) / (2.0 * gamma * x))
}

/// All plug-in functionals at one evaluation point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralEstimates {
    pub m_hat: f64,
    pub m_comp_hat: f64,
    pub d_hat: f64,
    pub d_prime_hat: f64,
    pub eval_point: f64,
}

impl SpectralEstimates {
    /// Evaluates `m`, `m_comp`, `D` and `D'` at `x` from the residual bulk.
    pub fn evaluate(spectrum: &EigenSpectrum, r: usize, x: f64) -> Result<Self> {
        let gamma = spectrum.gamma();
        let m = empirical_stieltjes(spectrum, r, x)?;
        let m_prime = empirical_stieltjes_derivative(spectrum, r, x)?;
        let m_comp = companion_stieltjes(m, x, gamma)?;
        let m_comp_prime = companion_stieltjes_derivative(m_prime, x, gamma)?;
        Ok(Self {
            m_hat: m,
            m_comp_hat: m_comp,
            d_hat: d_transform(x, m, m_comp),
            d_prime_hat: d_transform_derivative(x, m, m_comp, m_prime, m_comp_prime),
            eval_point: x,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn spec(values: &[f64]) -> EigenSpectrum {
        let p = values.len();
        EigenSpectrum::new(values.to_vec(), p, p).unwrap()
    }

    #[test]
    fn stieltjes_single_eigenvalue_below() {
        // x = 0 sits below the single eigenvalue: unguarded sum only.
        let s = spec(&[1.0]);
        assert_relative_eq!(s.resolvent_moment(0, 0.0, 1).unwrap(), 1.0);
        assert_relative_eq!(s.resolvent_moment(0, 0.0, 2).unwrap(), 1.0);
        assert!(matches!(
            empirical_stieltjes(&s, 0, 0.0),
            Err(EblpError::Domain { .. })
        ));
    }

    #[test]
    fn stieltjes_examples() {
        let s = spec(&[2.0, 4.0]);
        assert_eq!(s.values(), &[4.0, 2.0]);
        assert_relative_eq!(empirical_stieltjes(&s, 0, 6.0).unwrap(), -0.375);
        assert_relative_eq!(empirical_stieltjes_derivative(&s, 0, 6.0).unwrap(), 0.15625);

        let s = spec(&[10.0, 4.0, 2.0]);
        assert_relative_eq!(empirical_stieltjes(&s, 1, 6.0).unwrap(), -0.375);
        assert_relative_eq!(empirical_stieltjes_derivative(&s, 1, 6.0).unwrap(), 0.15625);
    }

    #[test]
    fn stieltjes_errors() {
        let s = spec(&[10.0, 4.0, 2.0]);
        assert!(matches!(empirical_stieltjes(&s, 1, 3.0), Err(EblpError::Domain { .. })));
        assert!(matches!(empirical_stieltjes(&s, 1, 4.0), Err(EblpError::Domain { .. })));
        assert!(matches!(empirical_stieltjes(&s, 3, 20.0), Err(EblpError::InvalidRank { .. })));
        // guard band: just above the edge but inside epsilon
        assert!(empirical_stieltjes(&s, 1, 4.0 + 1e-9).is_err());
        assert!(empirical_stieltjes(&s, 1, 4.0 + 1e-6).is_ok());
    }

    #[test]
    fn zero_padding_when_p_exceeds_n() {
        let s = EigenSpectrum::new(vec![3.0, 1.0], 2, 4).unwrap();
        assert_eq!(s.values(), &[3.0, 1.0, 0.0, 0.0]);
        assert_relative_eq!(s.gamma(), 2.0);
        // sum over 1, 0, 0 at x = 2: (1/(1-2) + 2/(0-2)) / 3
        assert_relative_eq!(empirical_stieltjes(&s, 1, 2.0).unwrap(), -2.0 / 3.0);
        assert!(EigenSpectrum::new(vec![1.0; 5], 2, 4).is_err());
        assert!(EigenSpectrum::new(vec![-1.0], 2, 4).is_err());
    }

    #[test]
    fn companion_examples() {
        assert_relative_eq!(companion_stieltjes(-0.375, 6.0, 1.0).unwrap(), -0.375);
        assert_relative_eq!(
            companion_stieltjes(-0.375, 6.0, 0.5).unwrap(),
            0.5 * -0.375 - 0.5 / 6.0
        );
        assert_relative_eq!(companion_stieltjes(-1.0, 1.0, 2.0).unwrap(), -1.0);
        assert!(companion_stieltjes(-1.0, 0.0, 2.0).is_err());
    }

    #[test]
    fn d_transform_examples() {
        assert_relative_eq!(d_transform(4.0, -0.5, -0.5), 1.0);
        assert_eq!(d_transform(1.0, 0.0, -1.0), 0.0);
        let mc = 0.5 * -0.375 - 0.5 / 6.0;
        assert_relative_eq!(d_transform(6.0, -0.375, mc), 0.609375, epsilon = 1e-12);
    }

    #[test]
    fn d_derivative_examples() {
        assert_relative_eq!(d_transform_derivative(0.0, -1.0, -1.0, 1.0, 1.0), 1.0);
        assert_relative_eq!(d_transform_derivative(4.0, -0.5, -0.5, 0.25, 0.25), -0.75);
        let a = d_transform_derivative(2.5, -0.3, -0.7, 0.11, 0.42);
        let b = d_transform_derivative(2.5, -0.7, -0.3, 0.42, 0.11);
        assert_relative_eq!(a, b, epsilon = 1e-15);
    }

    /// Quadrature oracle: midpoint rule on the MP density
    /// after the substitution x = a + (b-a) sin^2(t), which removes the
    /// square-root endpoint singularities.
    fn mp_quadrature(x: f64, gamma: f64) -> f64 {
        let (a, b) = ((1.0 - gamma.sqrt()).powi(2), (1.0 + gamma.sqrt()).powi(2));
        let steps = 200_000;
        let h = std::f64::consts::FRAC_PI_2 / steps as f64;
        let mut acc = 0.0;
        for i in 0..steps {
            let t = (i as f64 + 0.5) * h;
            let s = t.sin();
            let lam = a + (b - a) * s * s;
            // density sqrt((b-l)(l-a)) / (2 pi gamma l); dl = 2(b-a) sin cos dt
            // and sqrt((b-l)(l-a)) = (b-a) sin cos
            let dens_dl = (b - a).powi(2) * 2.0 * (s * t.cos()).powi(2)
                / (2.0 * std::f64::consts::PI * gamma * lam);
            acc += dens_dl / (lam - x) * h;
        }
        if gamma > 1.0 {
            acc += (1.0 - 1.0 / gamma) / (0.0 - x);
        }
        acc
    }

    #[test]
    fn mp_closed_form_matches_quadrature() {
        for &(x, g) in &[(4.0, 1.0), (10.0, 0.8), (5.0, 0.25), (12.0, 2.0)] {
            let closed = mp_white_stieltjes(x, g).unwrap();
            let quad = mp_quadrature(x, g);
            assert_relative_eq!(closed, quad, max_relative = 1e-4);
            assert!(closed < 0.0);
        }
        // the edge value at gamma = 1 is -1/2
        assert_relative_eq!(mp_white_stieltjes(4.0, 1.0).unwrap(), -0.5);
        assert!(mp_white_stieltjes(3.9, 1.0).is_err());
    }

    proptest! {
        #[test]
        fn exclusion_invariance(
            resid in prop::collection::vec(0.0f64..5.0, 3..20),
            top in prop::collection::vec(5.0f64..50.0, 1..4),
            bump in 0.0f64..100.0,
        ) {
            let r = top.len();
            let mut a = top.clone();
            a.extend(&resid);
            let mut b: Vec<f64> = top.iter().map(|t| t + bump).collect();
            b.extend(&resid);
            let p = a.len();
            let sa = EigenSpectrum::new(a, p, p).unwrap();
            let sb = EigenSpectrum::new(b, p, p).unwrap();
            let x = 5.5;
            prop_assert_eq!(
                empirical_stieltjes(&sa, r, x).unwrap(),
                empirical_stieltjes(&sb, r, x).unwrap()
            );
        }

        #[test]
        fn monotone_and_finite_difference(
            resid in prop::collection::vec(0.0f64..4.0, 5..30),
            gamma in 0.2f64..3.0,
            offset in 0.05f64..20.0,
        ) {
            let p = resid.len();
            let n = ((p as f64 / gamma).round() as usize).max(1);
            if n <= 1 { return Ok(()); }
            let s = EigenSpectrum::new(resid, n, p).unwrap();
            let x = s.values()[0] + offset;
            let m1 = empirical_stieltjes(&s, 0, x).unwrap();
            let m2 = empirical_stieltjes(&s, 0, x * 1.01).unwrap();
            prop_assert!(m1 < 0.0 && m1 < m2);

            let h = 1e-4 * offset;
            let fd = (empirical_stieltjes(&s, 0, x + h).unwrap()
                - empirical_stieltjes(&s, 0, x - h).unwrap()) / (2.0 * h);
            let d = empirical_stieltjes_derivative(&s, 0, x).unwrap();
            prop_assert!(d > 0.0);
            prop_assert!(((fd - d) / d).abs() < 1e-6);

            let e1 = SpectralEstimates::evaluate(&s, 0, x).unwrap();
            let e2 = SpectralEstimates::evaluate(&s, 0, x * 1.01).unwrap();
            prop_assert!(e1.d_hat > 0.0 && e1.d_hat > e2.d_hat);
            prop_assert!(e1.d_prime_hat < 0.0);
            prop_assert!(e1.m_comp_hat < 0.0);
        }
    }

    #[test]
    fn large_x_tends_to_zero() {
        let s = spec(&[3.0, 2.0, 1.0]);
        let m = empirical_stieltjes(&s, 0, 1e9).unwrap();
        assert!(m < 0.0 && m > -1e-8);
    }
}
