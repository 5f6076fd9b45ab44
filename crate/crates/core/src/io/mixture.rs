//! Isotropic Gaussian mixtures with planted cluster labels, for tests and sweeps.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::embedding::{sq_dist, EmbeddingSet};
use crate::error::{FkeaError, Result};

const CENTER_RETRIES: usize = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub struct MixtureSpec {
    pub t: usize,
    pub n_per_cluster: usize,
    pub d: usize,
    /// Minimum distance between any two cluster centers.
    pub center_separation: f64,
    /// Per-coordinate standard deviation inside a cluster.
    pub cluster_std: f64,
    pub seed: u64,
}

impl MixtureSpec {
    pub fn validate(&self) -> Result<()> {
        if self.t == 0 || self.n_per_cluster == 0 || self.d == 0 {
            return Err(FkeaError::input(
                "mixture needs t, n_per_cluster and d all >= 1",
            ));
        }
        for (name, v) in [
            ("center separation", self.center_separation),
            ("cluster std", self.cluster_std),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(FkeaError::input(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Mixture {
    pub data: EmbeddingSet,
    /// Cluster index of every row.
    pub labels: Vec<u32>,
    pub centers: Vec<Vec<f64>>,
}

/// Samples `t` clusters of `n_per_cluster` rows each, grouped by cluster.
///
/// Centers are drawn uniformly from a cube of side
/// `2 * separation * max(1, t^(1/d))` and re-drawn until every pair is at
/// least `center_separation` apart.
pub fn gen_mixture(spec: &MixtureSpec) -> Result<Mixture> {
    spec.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    let side = 2.0 * spec.center_separation * (spec.t as f64).powf(1.0 / spec.d as f64).max(1.0);
    let min_sq = spec.center_separation * spec.center_separation;

    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(spec.t);
    for c in 0..spec.t {
        let mut placed = false;
        for _ in 0..CENTER_RETRIES {
            let cand: Vec<f64> = (0..spec.d).map(|_| rng.gen::<f64>() * side).collect();
            if centers.iter().all(|o| sq_dist(o, &cand) >= min_sq) {
                centers.push(cand);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(FkeaError::Generation(format!(
                "could not place center {c} of {} at separation {} in dimension {} after {CENTER_RETRIES} tries",
                spec.t, spec.center_separation, spec.d
            )));
        }
    }

    let n = spec.t * spec.n_per_cluster;
    let mut data = Vec::with_capacity(n * spec.d);
    let mut labels = Vec::with_capacity(n);
    for (c, center) in centers.iter().enumerate() {
        for _ in 0..spec.n_per_cluster {
            for &mu in center {
                let z: f64 = StandardNormal.sample(&mut rng);
                data.push(mu + spec.cluster_std * z);
            }
            labels.push(c as u32);
        }
    }
    Ok(Mixture {
        data: EmbeddingSet::from_row_major(n, spec.d, data)?,
        labels,
        centers,
    })
}
