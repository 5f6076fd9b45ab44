//! Rényi entropies of unit-trace spectra and the Fourier-approximated
//! VENDI / RKE scores built on them.
//!
//! All logarithms are natural. A score is `exp(H_alpha)`, so the base would
//! cancel anyway; using `ln` keeps `exp` an exact inverse.
//!
//! Orders are handled as:
//!
//! | order          | entropy                         |
//! |----------------|---------------------------------|
//! | `alpha = 1`    | Shannon limit `-sum l ln l`     |
//! | `alpha = inf`  | min-entropy `-ln l_max`         |
//! | otherwise      | `ln(sum l^alpha) / (1 - alpha)` |

use std::fmt;
use std::str::FromStr;

use faer::linalg::matmul::matmul;
use faer::{Accum, Mat, MatRef, Par, Side};

use crate::error::{FkeaError, Result};
use crate::rff::{FeatureMatrix, ProxyCovariance};

/// Eigenvalues in `(-SILENT_CLAMP, 0)` are treated as round-off and zeroed quietly.
pub const SILENT_CLAMP: f64 = 1e-9;
/// Total clamped mass above this is reported as a numeric warning.
pub const CLAMPED_MASS_WARN: f64 = 1e-6;
/// Failure probability used for the bound printed next to every FKEA score.
pub const REPORT_DELTA: f64 = 0.05;

const SYMMETRY_TOL: f64 = 1e-10;

/// Order `alpha` of a Rényi entropy. Always strictly positive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Order {
    Shannon,
    Finite(f64),
    Infinite,
}

impl Order {
    pub const SHANNON: Order = Order::Shannon;

    pub fn new(alpha: f64) -> Result<Self> {
        if alpha.is_nan() || alpha <= 0.0 {
            return Err(FkeaError::input(format!(
                "entropy order must be > 0, got {alpha}"
            )));
        }
        Ok(if alpha == 1.0 {
            Order::Shannon
        } else if alpha == f64::INFINITY {
            Order::Infinite
        } else {
            Order::Finite(alpha)
        })
    }

    pub fn alpha(&self) -> f64 {
        match *self {
            Order::Shannon => 1.0,
            Order::Finite(a) => a,
            Order::Infinite => f64::INFINITY,
        }
    }

    /// The default report orders: 1, 1.5, 2 and infinity.
    pub fn defaults() -> Vec<Order> {
        vec![
            Order::Shannon,
            Order::Finite(1.5),
            Order::Finite(2.0),
            Order::Infinite,
        ]
    }
}

impl fmt::Display for Order {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Order::Shannon => f.write_str("1"),
            Order::Finite(a) => write!(f, "{a}"),
            Order::Infinite => f.write_str("inf"),
        }
    }
}

impl FromStr for Order {
    type Err = FkeaError;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        match t.to_ascii_lowercase().as_str() {
            "inf" | "infinity" | "+inf" | "∞" => return Ok(Order::Infinite),
            _ => {}
        }
        let alpha: f64 = t
            .parse()
            .map_err(|_| FkeaError::input(format!("cannot parse entropy order {s:?}")))?;
        Order::new(alpha)
    }
}

/// Descending, non-negative, unit-sum eigenvalues.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenSpectrum {
    values: Vec<f64>,
    source_dim: usize,
    clamped_mass: f64,
    warnings: Vec<String>,
}

impl EigenSpectrum {
    /// Clamps negatives to zero, renormalizes to unit sum and sorts descending.
    ///
    /// Positive values within `len * eps * max` of zero are round-off and are
    /// zeroed too; otherwise orders below 1 would amplify them.
    pub fn from_raw(mut raw: Vec<f64>, source_dim: usize) -> Result<Self> {
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(FkeaError::Numeric("non-finite eigenvalue".into()));
        }
        let largest = raw.iter().copied().fold(0.0, f64::max);
        let floor = raw.len() as f64 * f64::EPSILON * largest;
        for v in raw.iter_mut() {
            if *v > 0.0 && *v <= floor {
                *v = 0.0;
            }
        }
        let mut warnings = Vec::new();
        let min = raw.iter().copied().fold(f64::INFINITY, f64::min);
        if min < -SILENT_CLAMP {
            warnings.push(format!(
                "clamped negative eigenvalue {min:e} (below -{SILENT_CLAMP:e})"
            ));
        }
        let mut clamped_mass = 0.0;
        for v in raw.iter_mut() {
            if *v < 0.0 {
                clamped_mass -= *v;
                *v = 0.0;
            }
        }
        if clamped_mass >= CLAMPED_MASS_WARN {
            warnings.push(format!(
                "total clamped eigenvalue mass {clamped_mass:e} exceeds {CLAMPED_MASS_WARN:e}"
            ));
        }
        let total: f64 = raw.iter().sum();
        if !(total > 0.0) {
            return Err(FkeaError::Numeric(
                "spectrum has no positive mass".into(),
            ));
        }
        for v in raw.iter_mut() {
            *v /= total;
        }
        raw.sort_unstable_by(|a, b| b.total_cmp(a));
        Ok(Self {
            values: raw,
            source_dim,
            clamped_mass,
            warnings,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn source_dim(&self) -> usize {
        self.source_dim
    }

    pub fn clamped_mass(&self) -> f64 {
        self.clamped_mass
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn largest(&self) -> f64 {
        self.values[0]
    }

    /// Number of strictly positive eigenvalues.
    pub fn support(&self) -> usize {
        self.values.iter().take_while(|&&v| v > 0.0).count()
    }
}

fn check_symmetric(m: MatRef<'_, f64>) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(FkeaError::input(format!(
            "matrix must be square, got {} x {}",
            m.nrows(),
            m.ncols()
        )));
    }
    let n = m.nrows();
    if n == 0 {
        return Err(FkeaError::input("matrix is empty"));
    }
    let mut scale = 1.0f64;
    for j in 0..n {
        for i in 0..n {
            let v = m[(i, j)];
            if !v.is_finite() {
                return Err(FkeaError::input(format!("non-finite entry at ({i}, {j})")));
            }
            scale = scale.max(v.abs());
        }
    }
    for j in 0..n {
        for i in (j + 1)..n {
            let gap = (m[(i, j)] - m[(j, i)]).abs();
            if gap > SYMMETRY_TOL * scale {
                return Err(FkeaError::input(format!(
                    "matrix not symmetric: |M[{i},{j}] - M[{j},{i}]| = {gap:e}"
                )));
            }
        }
    }
    Ok(())
}

/// Full spectrum of a symmetric matrix, clamped and renormalized.
///
/// Runs sequentially, so the result is a pure function of the input bits.
pub fn eigenvalues_sym(m: MatRef<'_, f64>) -> Result<EigenSpectrum> {
    check_symmetric(m)?;
    let raw = m
        .self_adjoint_eigenvalues(Side::Lower)
        .map_err(|e| FkeaError::Numeric(format!("symmetric eigensolver failed: {e:?}")))?;
    EigenSpectrum::from_raw(raw, m.nrows())
}

/// Order-`alpha` Rényi entropy (natural log) of a unit-sum spectrum.
pub fn renyi_entropy(s: &EigenSpectrum, order: Order) -> f64 {
    let positive = s.values.iter().copied().filter(|&v| v > 0.0);
    match order {
        Order::Shannon => positive.map(|v| -v * v.ln()).sum::<f64>().max(0.0),
        Order::Infinite => -s.largest().ln(),
        Order::Finite(alpha) => {
            // ln sum l^a = a ln l_max + ln sum (l / l_max)^a, which stays
            // finite for large orders.
            let top = s.largest();
            let rest: f64 = positive.map(|v| (v / top).powf(alpha)).sum();
            let log_sum = alpha * top.ln() + rest.ln();
            (log_sum / (1.0 - alpha)).max(0.0)
        }
    }
}

/// `exp(H_alpha)`: the effective number of distinct atoms in the spectrum.
pub fn vendi_from_spectrum(s: &EigenSpectrum, order: Order) -> f64 {
    renyi_entropy(s, order).exp()
}

/// FKEA-VENDI: eigendecomposes the `2r × 2r` normalized proxy covariance.
pub fn fkea_vendi(cov: &ProxyCovariance, order: Order) -> Result<f64> {
    let spectrum = eigenvalues_sym(cov.normalized_covariance()?.as_ref())?;
    Ok(vendi_from_spectrum(&spectrum, order))
}

/// FKEA-RKE: inverse squared Frobenius norm of the normalized proxy covariance.
/// No eigendecomposition.
pub fn fkea_rke(cov: &ProxyCovariance) -> Result<f64> {
    Ok(1.0 / cov.normalized_frobenius_sq()?)
}

/// Spectrum of the `n × n` proxy Gram matrix `(1/n) F^T F`.
///
/// Its nonzero eigenvalues coincide with those of the `2r × 2r` proxy
/// covariance, so when `n < 2r` this is the cheaper way to the same spectrum.
pub fn proxy_gram_spectrum(features: &FeatureMatrix) -> Result<EigenSpectrum> {
    let f = features.as_mat();
    let n = f.ncols();
    if n == 0 {
        return Err(FkeaError::EmptyAccumulator);
    }
    let mut gram = Mat::<f64>::zeros(n, n);
    matmul(
        gram.as_mut(),
        Accum::Replace,
        f.transpose(),
        f,
        1.0 / n as f64,
        Par::Seq,
    );
    // Mirror the lower triangle so the matrix is exactly symmetric.
    for j in 0..n {
        for i in (j + 1)..n {
            gram[(j, i)] = gram[(i, j)];
        }
    }
    eigenvalues_sym(gram.as_ref())
}

/// Which matrix the FKEA spectrum was read from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpectrumRoute {
    /// The `2r × 2r` proxy covariance.
    Covariance,
    /// The `n × n` proxy Gram matrix, used when `n < 2r` and features were retained.
    ProxyGram,
}

/// FKEA spectrum through whichever of the two equivalent matrices is smaller.
pub fn fkea_spectrum(
    cov: &ProxyCovariance,
    retained: Option<&FeatureMatrix>,
) -> Result<(EigenSpectrum, SpectrumRoute)> {
    match retained {
        Some(f) if f.n() as u64 == cov.samples_seen() && f.n() < cov.dim() => {
            Ok((proxy_gram_spectrum(f)?, SpectrumRoute::ProxyGram))
        }
        _ => Ok((
            eigenvalues_sym(cov.normalized_covariance()?.as_ref())?,
            SpectrumRoute::Covariance,
        )),
    }
}

/// `sqrt(8 ln(n / 2 delta) / r)`: with probability at least `1 - delta` the
/// L2 distance between the exact and FKEA spectra is at most this value.
/// A non-positive log term gives 0.
pub fn theorem_bound(n: u64, r: usize, delta: f64) -> Result<f64> {
    if n == 0 || r == 0 {
        return Err(FkeaError::input("bound needs n >= 1 and r >= 1"));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(FkeaError::input(format!(
            "failure probability must lie in (0, 1), got {delta}"
        )));
    }
    let log_term = (n as f64 / (2.0 * delta)).ln();
    Ok((8.0 * log_term.max(0.0) / r as f64).sqrt())
}

/// Bound on `|FKEA^((1-a)/a) - VENDI^((1-a)/a)|`. Only the dimension-free
/// case `alpha >= 2` is available; smaller orders depend on the kernel's
/// feature dimension, which is infinite for the Gaussian kernel.
pub fn corollary_bound(n: u64, r: usize, delta: f64, order: Order) -> Result<Option<f64>> {
    if order.alpha() >= 2.0 {
        theorem_bound(n, r, delta).map(Some)
    } else {
        Ok(None)
    }
}

/// `score^((1 - alpha) / alpha)`, which equals the alpha-norm of the spectrum.
pub fn alpha_norm_of_score(score: f64, order: Order) -> f64 {
    match order {
        Order::Shannon => 1.0,
        Order::Infinite => 1.0 / score,
        Order::Finite(a) => score.powf((1.0 - a) / a),
    }
}

/// Euclidean distance between two descending spectra, zero-padding the shorter.
pub fn spectrum_error(exact: &EigenSpectrum, approx: &EigenSpectrum) -> f64 {
    let a = exact.values();
    let b = approx.values();
    let len = a.len().max(b.len());
    (0..len)
        .map(|i| {
            let x = a.get(i).copied().unwrap_or(0.0);
            let y = b.get(i).copied().unwrap_or(0.0);
            (x - y) * (x - y)
        })
        .sum::<f64>()
        .sqrt()
}
