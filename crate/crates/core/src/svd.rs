//! Thin and truncated singular value decompositions.
//!
//! The plug-in shrinkage path needs every singular value, the whitened
//! closed-form path only the top `k` triplets. Both return singular values in
//! decreasing order with `a = u diag(s) v^T`.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{EblpError, Result};
use crate::linalg;

/// Singular triplets: `u` is `n x k`, `v` is `p x k`.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: Array2<f64>,
    pub s: Array1<f64>,
    pub v: Array2<f64>,
}

impl Svd {
    pub fn rank(&self) -> usize {
        self.s.len()
    }

    /// Keeps the leading `k` triplets.
    pub fn truncate(mut self, k: usize) -> Self {
        let k = k.min(self.s.len());
        self.u = self.u.slice(s![.., ..k]).to_owned();
        self.v = self.v.slice(s![.., ..k]).to_owned();
        self.s = self.s.slice(s![..k]).to_owned();
        self
    }

    pub fn reconstruct(&self) -> Array2<f64> {
        let scaled = &self.u * &self.s.view().insert_axis(Axis(0));
        scaled.dot(&self.v.t())
    }
}

/// Full thin decomposition, `k = min(n, p)` triplets.
pub fn thin_svd(a: ArrayView2<f64>) -> Result<Svd> {
    let (n, p) = a.dim();
    if n == 0 || p == 0 {
        return Ok(Svd {
            u: Array2::zeros((n, 0)),
            s: Array1::zeros(0),
            v: Array2::zeros((p, 0)),
        });
    }
    let (u, s, v) = linalg::svd_parts(a)?;
    Ok(Svd { u, s, v })
}

/// All singular values, decreasing.
pub fn singular_values(a: ArrayView2<f64>) -> Result<Array1<f64>> {
    if a.is_empty() {
        return Ok(Array1::zeros(0));
    }
    linalg::singular_values(a)
}

const OVERSAMPLE: usize = 8;
const MAX_SUBSPACE_ITERS: usize = 30;
const RESIDUAL_TOL: f64 = 1e-11;

/// Top-`k` triplets by block subspace iteration with Rayleigh-Ritz
/// extraction. Falls back to the thin decomposition when the block does not
/// converge (no usable gap below the `k`-th singular value) or when the
/// matrix is too small for iteration to pay off.
pub fn top_svd(a: ArrayView2<f64>, k: usize) -> Result<Svd> {
    let (n, p) = a.dim();
    let full = n.min(p);
    if k > full {
        return Err(EblpError::InvalidRank { rank: k, n, p });
    }
    let block = (k + OVERSAMPLE).min(full);
    if k == 0 {
        return Ok(Svd {
            u: Array2::zeros((n, 0)),
            s: Array1::zeros(0),
            v: Array2::zeros((p, 0)),
        });
    }
    if 2 * block >= full {
        return Ok(thin_svd(a)?.truncate(k));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_5eed);
    let omega = Array2::from_shape_simple_fn((p, block), || StandardNormal.sample(&mut rng));
    let mut q = linalg::orthonormalize(a.dot(&omega).view());

    let scale = a.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return Ok(thin_svd(a)?.truncate(k));
    }

    for _ in 0..MAX_SUBSPACE_ITERS {
        // one power step: q <- orth(A A^T q)
        let z = linalg::orthonormalize(a.t().dot(&q).view());
        let q_next = linalg::orthonormalize(a.dot(&z).view());
        q = q_next;

        // Rayleigh-Ritz on span(q)
        let small = q.t().dot(&a);
        let inner = thin_svd(small.view())?.truncate(k);
        let u = q.dot(&inner.u);
        let v = inner.v;
        let s = inner.s;
        if s[0] == 0.0 {
            break;
        }
        // residual ||A v_j - s_j u_j|| relative to s_1
        let av = a.dot(&v);
        let resid = (&av - &(&u * &s.view().insert_axis(Axis(0))))
            .mapv(|x| x * x)
            .sum_axis(Axis(0))
            .mapv(f64::sqrt);
        if resid.iter().all(|&r| r <= RESIDUAL_TOL * s[0]) {
            return Ok(Svd { u, s, v });
        }
    }
    log::debug!("subspace iteration did not converge for k={k}; using full svd");
    Ok(thin_svd(a)?.truncate(k))
}
