//! Exact Gaussian-kernel evaluation and the dense `n × n` baselines.
//!
//! Everything here is quadratic (or cubic) in `n` and exists to verify the
//! Fourier approximation on small inputs. Sample counts above the configured
//! cap are refused with [`FkeaError::Capacity`].

use faer::Mat;
use rayon::prelude::*;

use crate::embedding::{sq_dist, EmbeddingSet};
use crate::entropy::{self, EigenSpectrum, Order};
use crate::error::{FkeaError, Result};

/// Default ceiling on `n` for the dense exact paths.
pub const DEFAULT_EXACT_CAP: usize = 20_000;

/// Bandwidth of the Gaussian kernel `exp(-|x - y|^2 / (2 sigma^2))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianKernelSpec {
    sigma: f64,
}

impl GaussianKernelSpec {
    pub fn new(sigma: f64) -> Result<Self> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(FkeaError::input(format!(
                "kernel bandwidth must be positive and finite, got {sigma}"
            )));
        }
        Ok(Self { sigma })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    #[inline]
    pub(crate) fn eval_sq_dist(&self, sq: f64) -> f64 {
        (-sq / (2.0 * self.sigma * self.sigma)).exp()
    }
}

pub fn gaussian_kernel(x: &[f64], y: &[f64], spec: &GaussianKernelSpec) -> Result<f64> {
    if x.len() != y.len() {
        return Err(FkeaError::input(format!(
            "dimension mismatch: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(FkeaError::input("kernel inputs must be finite"));
    }
    Ok(spec.eval_sq_dist(sq_dist(x, y)))
}

/// The normalized kernel matrix `(1/n) [k(x_i, x_j)]`.
#[derive(Debug, Clone)]
pub struct GramMatrix {
    entries: Mat<f64>,
}

impl GramMatrix {
    pub fn n(&self) -> usize {
        self.entries.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[(i, j)]
    }

    pub fn as_mat(&self) -> faer::MatRef<'_, f64> {
        self.entries.as_ref()
    }

    pub fn trace(&self) -> f64 {
        (0..self.n()).map(|i| self.entries[(i, i)]).sum()
    }
}

fn check_cap(what: &'static str, e: &EmbeddingSet, cap: usize) -> Result<()> {
    if e.n() > cap {
        return Err(FkeaError::Capacity {
            what,
            n: e.n(),
            cap,
        });
    }
    Ok(())
}

/// Upper-triangle kernel rows: row `i` holds `k(x_i, x_j)` for `j >= i`.
/// Each entry is computed independently, so the output does not depend on
/// the rayon thread count.
fn kernel_upper_rows(e: &EmbeddingSet, spec: &GaussianKernelSpec) -> Vec<Vec<f64>> {
    (0..e.n())
        .into_par_iter()
        .map(|i| {
            let xi = e.row(i);
            (i..e.n())
                .map(|j| spec.eval_sq_dist(sq_dist(xi, e.row(j))))
                .collect()
        })
        .collect()
}

pub fn exact_gram(e: &EmbeddingSet, spec: &GaussianKernelSpec, cap: usize) -> Result<GramMatrix> {
    check_cap("exact Gram matrix", e, cap)?;
    let n = e.n();
    let inv_n = 1.0 / n as f64;
    let upper = kernel_upper_rows(e, spec);
    let entries = Mat::from_fn(n, n, |i, j| {
        let (a, b) = if i <= j { (i, j) } else { (j, i) };
        upper[a][b - a] * inv_n
    });
    Ok(GramMatrix { entries })
}

/// `RKE = ((1/n^2) sum_ij k(x_i, x_j)^2)^-1`, computed from the Frobenius
/// norm without any eigendecomposition and without materializing the matrix.
pub fn exact_rke(e: &EmbeddingSet, spec: &GaussianKernelSpec, cap: usize) -> Result<f64> {
    check_cap("exact RKE", e, cap)?;
    let n = e.n();
    let off_diag: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let xi = e.row(i);
            ((i + 1)..n)
                .map(|j| {
                    let k = spec.eval_sq_dist(sq_dist(xi, e.row(j)));
                    k * k
                })
                .sum::<f64>()
        })
        .collect();
    // Fixed-order reduction over per-row partial sums.
    let total = n as f64 + 2.0 * off_diag.iter().sum::<f64>();
    let nf = n as f64;
    Ok(nf * nf / total)
}

/// Spectrum of the exact normalized Gram matrix (clamped and renormalized).
pub fn exact_spectrum(
    e: &EmbeddingSet,
    spec: &GaussianKernelSpec,
    cap: usize,
) -> Result<EigenSpectrum> {
    let gram = exact_gram(e, spec, cap)?;
    entropy::eigenvalues_sym(gram.as_mat())
}

pub fn exact_vendi(
    e: &EmbeddingSet,
    spec: &GaussianKernelSpec,
    order: Order,
    cap: usize,
) -> Result<f64> {
    let spectrum = exact_spectrum(e, spec, cap)?;
    Ok(entropy::vendi_from_spectrum(&spectrum, order))
}

/// Median of all pairwise Euclidean distances (the usual bandwidth heuristic).
/// Callers subsample large sets first; this is quadratic in `n`.
pub fn median_pairwise_distance(e: &EmbeddingSet) -> Result<f64> {
    let n = e.n();
    if n < 2 {
        return Err(FkeaError::input(
            "median heuristic needs at least two samples",
        ));
    }
    let mut dists: Vec<f64> = (0..n)
        .into_par_iter()
        .flat_map_iter(|i| {
            let xi = e.row(i);
            ((i + 1)..n).map(move |j| sq_dist(xi, e.row(j)).sqrt())
        })
        .collect();
    let m = dists.len();
    let mid = m / 2;
    let (_, upper_mid, _) = dists.select_nth_unstable_by(mid, f64::total_cmp);
    let upper_mid = *upper_mid;
    let median = if m % 2 == 1 {
        upper_mid
    } else {
        let lower_mid = dists[..mid]
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower_mid + upper_mid)
    };
    if !(median > 0.0) {
        return Err(FkeaError::input(
            "median pairwise distance is zero; supply an explicit bandwidth",
        ));
    }
    Ok(median)
}
