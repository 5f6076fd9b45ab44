//! Fourier-feature kernel entropy approximation.
//!
//! Computes VENDI and RKE diversity scores of an embedding set under a
//! Gaussian kernel, either exactly (small `n`) or by streaming random
//! Fourier features into a fixed-size proxy covariance matrix.

pub mod embedding;
pub mod entropy;
pub mod error;
pub mod io;
pub mod kernel;
pub mod modes;
pub mod pipeline;
pub mod rff;

pub use embedding::EmbeddingSet;
pub use entropy::{
    fkea_rke, fkea_vendi, theorem_bound, vendi_from_spectrum, EigenSpectrum, Order,
};
pub use error::{FkeaError, Result};
pub use kernel::{exact_gram, exact_rke, exact_vendi, gaussian_kernel, GaussianKernelSpec};
pub use modes::{mode_score, rank_modes, top_eigenvectors, ModeBasis, Ranking};
pub use rff::{
    feature_map, merge, sample_fourier_basis, FeatureMatrix, FourierBasis, FourierFeature,
    ProxyCovariance,
};
