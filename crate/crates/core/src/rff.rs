//! Random Fourier features for the Gaussian kernel and the streaming
//! `2r × 2r` proxy covariance built from them.
//!
//! A sample `x` maps to
//!
//! ```text
//! phi(x) = [cos(w_1.x), sin(w_1.x), ..., cos(w_r.x), sin(w_r.x)] / sqrt(r)
//! ```
//!
//! with frequencies `w_j ~ N(0, I / sigma^2)`. The interleaved cos/sin
//! layout is part of the contract: mode eigenvectors are indexed by it.
//!
//! The covariance is stored as an unnormalized sum plus a sample count, so
//! accumulators over disjoint shards merge exactly by addition.

use std::path::Path;

use faer::linalg::matmul::matmul;
use faer::{Accum, Mat, MatRef, Par};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::embedding::{dot, EmbeddingSet};
use crate::error::{FkeaError, Result};
use crate::kernel::GaussianKernelSpec;

/// Identifies the frequency generator. Part of the basis fingerprint, so it
/// must change whenever the sampling procedure changes.
///
/// Frequencies are `StandardNormal` draws (rand_distr 0.4) from a
/// `ChaCha20Rng::seed_from_u64(seed)` stream, filled row-major
/// (`w_1[0], w_1[1], ..., w_1[d-1], w_2[0], ...`) and divided by `sigma`.
pub const RNG_ALGORITHM: &str = "chacha20/seed_from_u64+rand_distr-0.4/standard_normal/row-major/v1";

/// Default feature dimension `2r`.
pub const DEFAULT_RFF_DIM: usize = 16_000;

/// Side length of the covariance tiles. Fixed so that the arithmetic
/// performed for every entry is independent of the thread count.
const TILE: usize = 256;

/// Frequencies `w_1..w_r` sampled from the Gaussian kernel's spectral density.
#[derive(Debug, Clone)]
pub struct FourierBasis {
    d: usize,
    r: usize,
    sigma: f64,
    seed: u64,
    omegas: Vec<f64>,
    fingerprint: u64,
}

/// Hash of everything that determines a basis: `(d, r, sigma, seed, generator)`.
pub fn basis_fingerprint(d: usize, r: usize, sigma: f64, seed: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(b"fkea-basis");
    h.update((d as u64).to_le_bytes());
    h.update((r as u64).to_le_bytes());
    h.update(sigma.to_bits().to_le_bytes());
    h.update(seed.to_le_bytes());
    h.update(RNG_ALGORITHM.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

pub fn sample_fourier_basis(
    d: usize,
    r: usize,
    spec: &GaussianKernelSpec,
    seed: u64,
) -> Result<FourierBasis> {
    if d == 0 || r == 0 {
        return Err(FkeaError::input(format!(
            "Fourier basis needs d >= 1 and r >= 1, got d = {d}, r = {r}"
        )));
    }
    let len = d
        .checked_mul(r)
        .ok_or_else(|| FkeaError::input("basis size overflows"))?;
    let sigma = spec.sigma();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let omegas: Vec<f64> = (0..len)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z / sigma
        })
        .collect();
    Ok(FourierBasis {
        d,
        r,
        sigma,
        seed,
        omegas,
        fingerprint: basis_fingerprint(d, r, sigma, seed),
    })
}

impl FourierBasis {
    pub fn d(&self) -> usize {
        self.d
    }

    pub fn r(&self) -> usize {
        self.r
    }

    /// Feature dimension `2r`.
    pub fn dim(&self) -> usize {
        2 * self.r
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    /// Frequency `w_j` (0-based).
    pub fn omega(&self, j: usize) -> &[f64] {
        &self.omegas[j * self.d..(j + 1) * self.d]
    }

    pub fn omegas(&self) -> &[f64] {
        &self.omegas
    }

    fn check_dim(&self, d: usize) -> Result<()> {
        if d != self.d {
            return Err(FkeaError::input(format!(
                "sample dimension {d} does not match basis dimension {}",
                self.d
            )));
        }
        Ok(())
    }

    /// Writes `phi(x)` into `out` (length `2r`).
    pub(crate) fn write_feature(&self, x: &[f64], out: &mut [f64]) {
        let scale = 1.0 / (self.r as f64).sqrt();
        for (j, pair) in out.chunks_exact_mut(2).enumerate() {
            let (s, c) = dot(self.omega(j), x).sin_cos();
            pair[0] = c * scale;
            pair[1] = s * scale;
        }
    }

    /// Features of every row of `batch`, one column per sample.
    pub fn features(&self, batch: &EmbeddingSet) -> Result<FeatureMatrix> {
        self.check_dim(batch.d())?;
        let dim = self.dim();
        let mut data = vec![0.0; dim * batch.n()];
        data.par_chunks_mut(dim)
            .zip(batch.rows().collect::<Vec<_>>().into_par_iter())
            .for_each(|(out, x)| self.write_feature(x, out));
        Ok(FeatureMatrix {
            dim,
            n: batch.n(),
            data,
            fingerprint: self.fingerprint,
        })
    }
}

/// `phi(x)`, a unit vector in `R^{2r}`.
#[derive(Debug, Clone, PartialEq)]
pub struct FourierFeature {
    values: Vec<f64>,
}

impl FourierFeature {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dot(&self, other: &FourierFeature) -> f64 {
        dot(&self.values, &other.values)
    }
}

pub fn feature_map(basis: &FourierBasis, x: &[f64]) -> Result<FourierFeature> {
    basis.check_dim(x.len())?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(FkeaError::input("feature map input must be finite"));
    }
    let mut values = vec![0.0; basis.dim()];
    basis.write_feature(x, &mut values);
    Ok(FourierFeature { values })
}

/// Features of a batch: a `2r × n` column-major matrix.
#[derive(Debug, Clone)]
pub struct FeatureMatrix {
    dim: usize,
    n: usize,
    data: Vec<f64>,
    fingerprint: u64,
}

impl FeatureMatrix {
    /// A matrix with no columns, ready to be [`extend`](Self::extend)ed.
    pub fn empty(basis: &FourierBasis) -> Self {
        Self {
            dim: basis.dim(),
            n: 0,
            data: Vec::new(),
            fingerprint: basis.fingerprint(),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    pub fn column(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_mat(&self) -> MatRef<'_, f64> {
        MatRef::from_column_major_slice(&self.data, self.dim, self.n)
    }

    /// Appends the columns of `other`.
    pub fn extend(&mut self, other: &FeatureMatrix) -> Result<()> {
        if other.fingerprint != self.fingerprint {
            return Err(FkeaError::Basis {
                expected: self.fingerprint,
                found: other.fingerprint,
            });
        }
        self.data.extend_from_slice(&other.data);
        self.n += other.n;
        Ok(())
    }
}

/// Unnormalized proxy covariance `sum_i phi(x_i) phi(x_i)^T` plus its sample count.
///
/// Only the upper triangle is maintained, in `TILE × TILE` blocks.
#[derive(Debug, Clone)]
pub struct ProxyCovariance {
    r: usize,
    samples_seen: u64,
    fingerprint: u64,
    tiles: Vec<Mat<f64>>,
    /// `sum_i phi(x_i)`, used to orient eigenvectors.
    feature_sum: Vec<f64>,
}

fn tile_count(dim: usize) -> usize {
    dim.div_ceil(TILE)
}

fn tile_len(dim: usize, b: usize) -> usize {
    TILE.min(dim - b * TILE)
}

/// Upper-triangle tile coordinates in storage order.
fn tile_pairs(dim: usize) -> Vec<(usize, usize)> {
    let nt = tile_count(dim);
    (0..nt)
        .flat_map(|bi| (bi..nt).map(move |bj| (bi, bj)))
        .collect()
}

impl ProxyCovariance {
    /// An empty accumulator compatible with `basis`.
    pub fn new(basis: &FourierBasis) -> Self {
        Self::empty(basis.r(), basis.fingerprint())
    }

    fn empty(r: usize, fingerprint: u64) -> Self {
        let dim = 2 * r;
        let tiles = tile_pairs(dim)
            .into_iter()
            .map(|(bi, bj)| Mat::zeros(tile_len(dim, bi), tile_len(dim, bj)))
            .collect();
        Self {
            r,
            samples_seen: 0,
            fingerprint,
            tiles,
            feature_sum: vec![0.0; dim],
        }
    }

    pub fn r(&self) -> usize {
        self.r
    }

    pub fn dim(&self) -> usize {
        2 * self.r
    }

    pub fn samples_seen(&self) -> u64 {
        self.samples_seen
    }

    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    fn check_fingerprint(&self, found: u64) -> Result<()> {
        if found != self.fingerprint {
            return Err(FkeaError::Basis {
                expected: self.fingerprint,
                found,
            });
        }
        Ok(())
    }

    /// Adds `sum_{x in batch} phi(x) phi(x)^T`.
    pub fn accumulate(&mut self, batch: &EmbeddingSet, basis: &FourierBasis) -> Result<()> {
        self.check_fingerprint(basis.fingerprint())?;
        let features = basis.features(batch)?;
        self.accumulate_features(&features)
    }

    /// Adds the outer products of precomputed feature columns.
    pub fn accumulate_features(&mut self, features: &FeatureMatrix) -> Result<()> {
        self.check_fingerprint(features.fingerprint())?;
        if features.dim() != self.dim() {
            return Err(FkeaError::input("feature dimension mismatch"));
        }
        let dim = self.dim();
        let f = features.as_mat();
        let pairs = tile_pairs(dim);
        self.tiles
            .par_iter_mut()
            .zip(pairs.par_iter())
            .for_each(|(tile, &(bi, bj))| {
                let lhs = f.subrows(bi * TILE, tile_len(dim, bi));
                let rhs = f.subrows(bj * TILE, tile_len(dim, bj));
                matmul(tile.as_mut(), Accum::Add, lhs, rhs.transpose(), 1.0, Par::Seq);
            });
        for i in 0..features.n() {
            for (acc, v) in self.feature_sum.iter_mut().zip(features.column(i)) {
                *acc += v;
            }
        }
        self.samples_seen += features.n() as u64;
        Ok(())
    }

    /// Adds `other` into `self`.
    pub fn merge_from(&mut self, other: &ProxyCovariance) -> Result<()> {
        self.check_fingerprint(other.fingerprint)?;
        for (a, b) in self.tiles.iter_mut().zip(&other.tiles) {
            *a += b;
        }
        for (a, b) in self.feature_sum.iter_mut().zip(&other.feature_sum) {
            *a += b;
        }
        self.samples_seen += other.samples_seen;
        Ok(())
    }

    /// Upper-triangle entry `(i, j)` of the raw sum; requires `i <= j`.
    fn upper(&self, i: usize, j: usize) -> f64 {
        debug_assert!(i <= j);
        let nt = tile_count(self.dim());
        let (bi, bj) = (i / TILE, j / TILE);
        let idx = bi * (2 * nt - bi + 1) / 2 + (bj - bi);
        self.tiles[idx][(i - bi * TILE, j - bj * TILE)]
    }

    /// Full symmetric `sum_i phi(x_i) phi(x_i)^T`, scaled by `scale`.
    fn assemble(&self, scale: f64) -> Mat<f64> {
        let dim = self.dim();
        let mut m = Mat::<f64>::zeros(dim, dim);
        for (&(bi, bj), tile) in tile_pairs(dim).iter().zip(&self.tiles) {
            for b in 0..tile.ncols() {
                let j = bj * TILE + b;
                for a in 0..tile.nrows() {
                    let i = bi * TILE + a;
                    if i <= j {
                        let v = tile[(a, b)] * scale;
                        m[(i, j)] = v;
                        m[(j, i)] = v;
                    }
                }
            }
        }
        m
    }

    /// Mean feature vector `(1/n) sum_i phi(x_i)`.
    pub fn mean_feature(&self) -> Result<Vec<f64>> {
        if self.samples_seen == 0 {
            return Err(FkeaError::EmptyAccumulator);
        }
        let inv_n = 1.0 / self.samples_seen as f64;
        Ok(self.feature_sum.iter().map(|v| v * inv_n).collect())
    }

    pub fn sum_matrix(&self) -> Mat<f64> {
        self.assemble(1.0)
    }

    /// `C = sum / n`, a unit-trace symmetric PSD matrix.
    pub fn normalized_covariance(&self) -> Result<Mat<f64>> {
        if self.samples_seen == 0 {
            return Err(FkeaError::EmptyAccumulator);
        }
        Ok(self.assemble(1.0 / self.samples_seen as f64))
    }

    /// `trace(C)`; equals 1 up to round-off.
    pub fn normalized_trace(&self) -> Result<f64> {
        if self.samples_seen == 0 {
            return Err(FkeaError::EmptyAccumulator);
        }
        let sum: f64 = (0..self.dim()).map(|i| self.upper(i, i)).sum();
        Ok(sum / self.samples_seen as f64)
    }

    /// `||C||_F^2`, read directly from the stored upper triangle.
    pub fn normalized_frobenius_sq(&self) -> Result<f64> {
        if self.samples_seen == 0 {
            return Err(FkeaError::EmptyAccumulator);
        }
        let inv_n = 1.0 / self.samples_seen as f64;
        let mut diag = 0.0;
        let mut off = 0.0;
        for (&(bi, bj), tile) in tile_pairs(self.dim()).iter().zip(&self.tiles) {
            for b in 0..tile.ncols() {
                for a in 0..tile.nrows() {
                    let v = tile[(a, b)] * inv_n;
                    match (bi * TILE + a).cmp(&(bj * TILE + b)) {
                        std::cmp::Ordering::Less => off += v * v,
                        std::cmp::Ordering::Equal => diag += v * v,
                        std::cmp::Ordering::Greater => {}
                    }
                }
            }
        }
        Ok(diag + 2.0 * off)
    }

    const CHECKPOINT_MAGIC: &'static [u8; 4] = b"FKCP";
    const CHECKPOINT_VERSION: u32 = 1;
    const CHECKPOINT_HEADER: usize = 4 + 4 + 8 + 8 + 8;

    /// Checkpoint bytes: magic `FKCP`, version `u32`, fingerprint `u64`,
    /// `r` as `u64`, `samples_seen` as `u64`, then the upper triangle of the
    /// raw sum, row-major, then the `2r` entries of the feature sum, all as
    /// `f64`. All little-endian.
    pub fn encode_checkpoint(&self) -> Vec<u8> {
        let dim = self.dim();
        let mut out = Vec::with_capacity(Self::CHECKPOINT_HEADER + 8 * (dim * (dim + 1) / 2 + dim));
        out.extend_from_slice(Self::CHECKPOINT_MAGIC);
        out.extend_from_slice(&Self::CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&self.fingerprint.to_le_bytes());
        out.extend_from_slice(&(self.r as u64).to_le_bytes());
        out.extend_from_slice(&self.samples_seen.to_le_bytes());
        for i in 0..dim {
            for j in i..dim {
                out.extend_from_slice(&self.upper(i, j).to_le_bytes());
            }
        }
        for v in &self.feature_sum {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn decode_checkpoint(bytes: &[u8]) -> Result<Self> {
        let header = Self::CHECKPOINT_HEADER;
        if bytes.len() < header {
            return Err(FkeaError::format(
                bytes.len() as u64,
                format!("checkpoint header needs {header} bytes, file has {}", bytes.len()),
            ));
        }
        if &bytes[..4] != Self::CHECKPOINT_MAGIC {
            return Err(FkeaError::format(0, "bad checkpoint magic"));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
        let version = u32_at(4);
        if version != Self::CHECKPOINT_VERSION {
            return Err(FkeaError::format(4, format!("unsupported checkpoint version {version}")));
        }
        let fingerprint = u64_at(8);
        let r = u64_at(16);
        let samples_seen = u64_at(24);
        if r == 0 {
            return Err(FkeaError::format(16, "checkpoint declares r = 0"));
        }
        let payload = (bytes.len() - header) as u64;
        let expected = r
            .checked_mul(2)
            .and_then(|dim| Some(dim.checked_mul(dim + 1)? / 2 + dim))
            .and_then(|count| count.checked_mul(8));
        if expected != Some(payload) {
            return Err(FkeaError::format(
                header as u64,
                format!(
                    "checkpoint payload is {payload} bytes, r = {r} requires {}",
                    expected.map_or_else(|| "an overflowing size".to_string(), |e| e.to_string())
                ),
            ));
        }
        let r = usize::try_from(r).map_err(|_| FkeaError::format(16, "r too large"))?;
        let dim = 2 * r;
        let mut cov = Self::empty(r, fingerprint);
        cov.samples_seen = samples_seen;
        let mut values = bytes[header..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        let nt = tile_count(dim);
        for i in 0..dim {
            for j in i..dim {
                let v = values.next().expect("length checked above");
                if !v.is_finite() {
                    return Err(FkeaError::Data {
                        row: i as u64,
                        message: format!("non-finite checkpoint entry at column {j}"),
                    });
                }
                let (bi, bj) = (i / TILE, j / TILE);
                let idx = bi * (2 * nt - bi + 1) / 2 + (bj - bi);
                let tile = &mut cov.tiles[idx];
                tile[(i - bi * TILE, j - bj * TILE)] = v;
                if bi == bj {
                    tile[(j - bj * TILE, i - bi * TILE)] = v;
                }
            }
        }
        for (k, slot) in cov.feature_sum.iter_mut().enumerate() {
            let v = values.next().expect("length checked above");
            if !v.is_finite() {
                return Err(FkeaError::Data {
                    row: dim as u64,
                    message: format!("non-finite checkpoint feature sum at entry {k}"),
                });
            }
            *slot = v;
        }
        Ok(cov)
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode_checkpoint()).map_err(|e| FkeaError::io(path, e))
    }

    pub fn load_checkpoint(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| FkeaError::io(path, e))?;
        Self::decode_checkpoint(&bytes)
    }
}

/// `a + b` for accumulators over the same basis.
pub fn merge(a: &ProxyCovariance, b: &ProxyCovariance) -> Result<ProxyCovariance> {
    let mut out = a.clone();
    out.merge_from(b)?;
    Ok(out)
}
