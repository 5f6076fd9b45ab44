//! Sample clusters ("modes") from the top eigenvectors of the proxy covariance.
//!
//! The score of sample `x` under mode `i` is `u_i(x) = phi(x) . v_i`, the
//! projection of its Fourier feature on eigenvector `v_i`. Averaged over the
//! accumulated samples, `u_i(x)^2` reproduces the eigenvalue `lambda_i`.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use faer::Side;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::{dot, EmbeddingSet};
use crate::error::{FkeaError, Result};
use crate::rff::{FeatureMatrix, FourierBasis, ProxyCovariance};

/// Largest residual `|C v - lambda v|` accepted from the eigensolver.
pub const RESIDUAL_TOL: f64 = 1e-7;
/// Mean scores below this are treated as zero when orienting eigenvectors.
pub const ORIENT_TOL: f64 = 1e-10;

/// Top-`t` eigenpairs of a normalized proxy covariance.
#[derive(Debug, Clone)]
pub struct ModeBasis {
    dim: usize,
    eigenvalues: Vec<f64>,
    // column-major dim × t; column i is eigenvector i
    vectors: Vec<f64>,
    fingerprint: u64,
}

impl ModeBasis {
    pub fn t(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn eigenvector(&self, i: usize) -> &[f64] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }
}

/// Orients `v` so the mean score over the accumulated samples is positive,
/// making the highest raw scores those of the samples the mode describes.
/// Falls back to [`canonical_sign`] when the mean score vanishes.
fn orient(v: &mut [f64], mean_feature: &[f64]) {
    let mean_score = dot(v, mean_feature);
    if mean_score.abs() > ORIENT_TOL {
        if mean_score < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
    } else {
        canonical_sign(v);
    }
}

/// Flips `v` so that its largest-magnitude entry (first one on ties) is positive.
fn canonical_sign(v: &mut [f64]) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

pub fn top_eigenvectors(cov: &ProxyCovariance, t: usize) -> Result<ModeBasis> {
    let dim = cov.dim();
    if t == 0 || t > dim {
        return Err(FkeaError::input(format!(
            "mode count must lie in 1..={dim}, got {t}"
        )));
    }
    let c = cov.normalized_covariance()?;
    let mean_feature = cov.mean_feature()?;
    let evd = c
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| FkeaError::Numeric(format!("symmetric eigensolver failed: {e:?}")))?;
    let s = evd.S().column_vector();
    let u = evd.U();

    let mut eigenvalues = Vec::with_capacity(t);
    let mut vectors = Vec::with_capacity(t * dim);
    for k in 0..t {
        let col = dim - 1 - k;
        let lambda = s[col].max(0.0);
        let mut v: Vec<f64> = (0..dim).map(|i| u[(i, col)]).collect();
        orient(&mut v, &mean_feature);
        let residual = (0..dim)
            .map(|i| {
                let cv: f64 = (0..dim).map(|j| c[(i, j)] * v[j]).sum();
                (cv - s[col] * v[i]).powi(2)
            })
            .sum::<f64>()
            .sqrt();
        if !(residual <= RESIDUAL_TOL) {
            return Err(FkeaError::Numeric(format!(
                "eigenpair {k} has residual {residual:e} above {RESIDUAL_TOL:e}"
            )));
        }
        eigenvalues.push(lambda);
        vectors.extend_from_slice(&v);
    }
    Ok(ModeBasis {
        dim,
        eigenvalues,
        vectors,
        fingerprint: cov.fingerprint(),
    })
}

fn check_compatible(basis: &FourierBasis, mb: &ModeBasis) -> Result<()> {
    if basis.fingerprint() != mb.fingerprint {
        return Err(FkeaError::Basis {
            expected: mb.fingerprint,
            found: basis.fingerprint(),
        });
    }
    Ok(())
}

/// `u_i(x)` for mode `i` (0-based).
pub fn mode_score(basis: &FourierBasis, mb: &ModeBasis, i: usize, x: &[f64]) -> Result<f64> {
    check_compatible(basis, mb)?;
    if i >= mb.t() {
        return Err(FkeaError::input(format!(
            "mode index {i} out of range for {} modes",
            mb.t()
        )));
    }
    let phi = crate::rff::feature_map(basis, x)?;
    Ok(dot(phi.values(), mb.eigenvector(i)))
}

/// Scores of every feature column under every mode, `scores[sample][mode]`.
pub fn feature_scores(mb: &ModeBasis, features: &FeatureMatrix) -> Result<Vec<Vec<f64>>> {
    if features.fingerprint() != mb.fingerprint {
        return Err(FkeaError::Basis {
            expected: mb.fingerprint,
            found: features.fingerprint(),
        });
    }
    Ok((0..features.n())
        .into_par_iter()
        .map(|s| {
            let phi = features.column(s);
            (0..mb.t()).map(|i| dot(phi, mb.eigenvector(i))).collect()
        })
        .collect())
}

/// How samples are ordered within a mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Ranking {
    /// Highest raw score first.
    #[default]
    Raw,
    /// Highest absolute score first.
    Abs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedSample {
    pub rank: usize,
    pub index: u64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeEntry {
    /// 1-based mode number.
    pub mode: usize,
    pub eigenvalue: f64,
    pub samples: Vec<RankedSample>,
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    key: f64,
    score: f64,
    index: u64,
}

impl Candidate {
    // Greater means ranked earlier: higher key, then lower index.
    fn rank_cmp(&self, other: &Self) -> Ordering {
        self.key
            .total_cmp(&other.key)
            .then_with(|| other.index.cmp(&self.index))
    }
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.rank_cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.rank_cmp(other)
    }
}

/// Streaming per-mode top-`k` selection; memory is `O(t k)`.
#[derive(Debug)]
pub struct ModeRanker<'a> {
    basis: &'a FourierBasis,
    mb: &'a ModeBasis,
    k: usize,
    ranking: Ranking,
    heaps: Vec<BinaryHeap<Reverse<Candidate>>>,
    next_index: u64,
}

impl<'a> ModeRanker<'a> {
    pub fn new(basis: &'a FourierBasis, mb: &'a ModeBasis, k: usize, ranking: Ranking) -> Result<Self> {
        check_compatible(basis, mb)?;
        if k == 0 {
            return Err(FkeaError::input("top-k must be at least 1"));
        }
        Ok(Self {
            basis,
            mb,
            k,
            ranking,
            heaps: (0..mb.t()).map(|_| BinaryHeap::with_capacity(k + 1)).collect(),
            next_index: 0,
        })
    }

    /// Scores the next batch; sample indices continue from the previous batch.
    pub fn push_batch(&mut self, batch: &EmbeddingSet) -> Result<()> {
        let features = self.basis.features(batch)?;
        let scores = feature_scores(self.mb, &features)?;
        for per_mode in scores {
            let index = self.next_index;
            self.next_index += 1;
            for (heap, &score) in self.heaps.iter_mut().zip(&per_mode) {
                let key = match self.ranking {
                    Ranking::Raw => score,
                    Ranking::Abs => score.abs(),
                };
                let cand = Candidate { key, score, index };
                if heap.len() < self.k {
                    heap.push(Reverse(cand));
                } else if heap.peek().is_some_and(|worst| cand > worst.0) {
                    heap.pop();
                    heap.push(Reverse(cand));
                }
            }
        }
        Ok(())
    }

    pub fn samples_scored(&self) -> u64 {
        self.next_index
    }

    pub fn finish(self) -> Vec<ModeEntry> {
        self.heaps
            .into_iter()
            .enumerate()
            .map(|(i, heap)| {
                let mut cands: Vec<Candidate> = heap.into_iter().map(|r| r.0).collect();
                cands.sort_unstable_by(|a, b| b.cmp(a));
                ModeEntry {
                    mode: i + 1,
                    eigenvalue: self.mb.eigenvalues[i],
                    samples: cands
                        .into_iter()
                        .enumerate()
                        .map(|(rank, c)| RankedSample {
                            rank: rank + 1,
                            index: c.index,
                            score: c.score,
                        })
                        .collect(),
                }
            })
            .collect()
    }
}

/// Top-`k` samples of every mode over an in-memory set.
pub fn rank_modes(
    e: &EmbeddingSet,
    basis: &FourierBasis,
    mb: &ModeBasis,
    k: usize,
    ranking: Ranking,
) -> Result<Vec<ModeEntry>> {
    if k > e.n() {
        return Err(FkeaError::input(format!(
            "top-k {k} exceeds the sample count {}",
            e.n()
        )));
    }
    let mut ranker = ModeRanker::new(basis, mb, k, ranking)?;
    ranker.push_batch(e)?;
    Ok(ranker.finish())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::GaussianKernelSpec;
    use crate::rff::{feature_map, sample_fourier_basis};
    use approx::assert_relative_eq;

    fn setup(n: usize, d: usize, r: usize, seed: u64) -> (EmbeddingSet, FourierBasis, ProxyCovariance) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed);
        let data = (0..n * d).map(|_| rng.gen_range(-1.5..1.5)).collect();
        let e = EmbeddingSet::from_row_major(n, d, data).unwrap();
        let basis = sample_fourier_basis(d, r, &GaussianKernelSpec::new(1.0).unwrap(), seed).unwrap();
        let mut cov = ProxyCovariance::new(&basis);
        cov.accumulate(&e, &basis).unwrap();
        (e, basis, cov)
    }

    #[test]
    fn sign_convention() {
        let mut v = vec![0.1, -0.9, 0.3];
        canonical_sign(&mut v);
        assert_eq!(v, vec![-0.1, 0.9, -0.3]);
        let mut w = vec![0.5, -0.5];
        canonical_sign(&mut w);
        assert_eq!(w, vec![0.5, -0.5]);
    }

    #[test]
    fn orientation_makes_mean_score_positive() {
        let (e, basis, cov) = setup(200, 3, 64, 5);
        let mb = top_eigenvectors(&cov, 8).unwrap();
        for i in 0..8 {
            let mean: f64 = e
                .rows()
                .map(|x| mode_score(&basis, &mb, i, x).unwrap())
                .sum::<f64>()
                / e.n() as f64;
            assert!(mean >= -ORIENT_TOL, "mode {i} mean score {mean}");
        }
        let mut v = vec![0.1, -0.9];
        orient(&mut v, &[0.0, 0.0]);
        assert_eq!(v, vec![-0.1, 0.9]);
    }

    #[test]
    fn single_sample_mode() {
        let (e, basis, cov) = setup(1, 3, 16, 1);
        let mb = top_eigenvectors(&cov, 1).unwrap();
        assert_relative_eq!(mb.eigenvalues()[0], 1.0, max_relative = 1e-12);
        let phi = feature_map(&basis, e.row(0)).unwrap();
        let cos = dot(phi.values(), mb.eigenvector(0)).abs();
        assert_relative_eq!(cos, 1.0, max_relative = 1e-12);
        let u = mode_score(&basis, &mb, 0, e.row(0)).unwrap();
        assert_relative_eq!(u, 1.0, max_relative = 1e-12);
    }

    #[test]
    fn t_out_of_range() {
        let (_, _, cov) = setup(3, 2, 4, 2);
        assert!(top_eigenvectors(&cov, 0).is_err());
        assert!(top_eigenvectors(&cov, 9).is_err());
        assert!(top_eigenvectors(&cov, 8).is_ok());
    }

    #[test]
    fn eigenvalues_match_spectrum() {
        let (_, _, cov) = setup(40, 3, 20, 3);
        let mb = top_eigenvectors(&cov, 6).unwrap();
        let spec = crate::entropy::eigenvalues_sym(cov.normalized_covariance().unwrap().as_ref()).unwrap();
        for i in 0..6 {
            assert!((mb.eigenvalues()[i] - spec.values()[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn orthonormal_and_rayleigh() {
        let (e, basis, cov) = setup(80, 4, 30, 4);
        let mb = top_eigenvectors(&cov, 5).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                let g = dot(mb.eigenvector(i), mb.eigenvector(j));
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((g - expect).abs() < 1e-8);
            }
            let mean_sq: f64 = e
                .rows()
                .map(|x| mode_score(&basis, &mb, i, x).unwrap().powi(2))
                .sum::<f64>()
                / e.n() as f64;
            assert!((mean_sq - mb.eigenvalues()[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn score_errors() {
        let (e, basis, cov) = setup(5, 2, 4, 5);
        let mb = top_eigenvectors(&cov, 2).unwrap();
        assert!(mode_score(&basis, &mb, 2, e.row(0)).is_err());
        assert!(mode_score(&basis, &mb, 0, &[1.0]).is_err());
        let other = sample_fourier_basis(2, 4, &GaussianKernelSpec::new(1.0).unwrap(), 99).unwrap();
        assert!(matches!(mode_score(&other, &mb, 0, e.row(0)), Err(FkeaError::Basis { .. })));
        assert!(rank_modes(&e, &basis, &mb, 6, Ranking::Raw).is_err());
        assert!(rank_modes(&e, &basis, &mb, 0, Ranking::Raw).is_err());
    }

    #[test]
    fn full_ranking_and_shard_independence() {
        let (e, basis, cov) = setup(50, 3, 12, 6);
        let mb = top_eigenvectors(&cov, 2).unwrap();
        let full = rank_modes(&e, &basis, &mb, e.n(), Ranking::Raw).unwrap();
        assert_eq!(full[0].samples.len(), 50);
        let mut seen: Vec<u64> = full[0].samples.iter().map(|s| s.index).collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..50).collect::<Vec<u64>>());
        for w in full[0].samples.windows(2) {
            assert!(w[0].score >= w[1].score);
        }

        let mut ranker = ModeRanker::new(&basis, &mb, 7, Ranking::Raw).unwrap();
        for batch in e.batches(9) {
            ranker.push_batch(&batch).unwrap();
        }
        let sharded = ranker.finish();
        let whole = rank_modes(&e, &basis, &mb, 7, Ranking::Raw).unwrap();
        assert_eq!(sharded, whole);
    }

    #[test]
    fn ties_prefer_lower_index() {
        let (_, basis, cov) = setup(10, 2, 6, 7);
        let mb = top_eigenvectors(&cov, 1).unwrap();
        let same = EmbeddingSet::from_rows(&[[0.2, 0.3]; 4]).unwrap();
        let ranked = rank_modes(&same, &basis, &mb, 3, Ranking::Raw).unwrap();
        let idx: Vec<u64> = ranked[0].samples.iter().map(|s| s.index).collect();
        assert_eq!(idx, vec![0, 1, 2]);
    }

    #[test]
    fn abs_ranking_orders_by_magnitude() {
        let (e, basis, cov) = setup(30, 3, 10, 8);
        let mb = top_eigenvectors(&cov, 3).unwrap();
        let ranked = rank_modes(&e, &basis, &mb, 30, Ranking::Abs).unwrap();
        for m in &ranked {
            for w in m.samples.windows(2) {
                assert!(w[0].score.abs() >= w[1].score.abs());
            }
        }
    }
}
