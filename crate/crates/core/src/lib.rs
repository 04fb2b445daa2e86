//! Empirical best linear prediction (EBLP) for linearly transformed spiked
//! models.
//!
//! Observations `Y_i = A_i X_i + eps_i` carry a low-rank signal `X_i` through
//! known diagonal transforms `A_i` (coordinate masks for missing data, or
//! general nonnegative filters). The signal is recovered by backprojecting,
//! normalizing by the mean transform, optionally whitening, and shrinking the
//! singular values of the resulting matrix with plug-in random matrix
//! estimates.

pub mod baselines;
pub mod error;
pub mod linalg;
pub mod pipeline;
pub mod shrinkage;
pub mod simulate;
pub mod spectral;
pub mod svd;

pub use error::{EblpError, Result};
pub use pipeline::{
    backproject, blp_oracle, estimate_m, fit_in_sample, simple_blp_uniform, Dataset, EblpModel,
    FitOptions, SignalModel, TransformedObservation,
};
pub use shrinkage::{amse, shrink_matrix, ShrinkMode, SpikeEstimate};
pub use spectral::{EigenSpectrum, SpectralEstimates};
