//! End-to-end commands behind the `fkea` binary.
//!
//! Each command is a plain function returning its report, so the CLI stays a
//! thin argument parser and everything here is testable in-process.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::Serialize;

use crate::embedding::EmbeddingSet;
use crate::entropy::{
    self, fkea_rke, fkea_spectrum, spectrum_error, theorem_bound, vendi_from_spectrum,
    EigenSpectrum, Order, SpectrumRoute, REPORT_DELTA,
};
use crate::error::{FkeaError, Result};
use crate::io::embeddings::{read_embeddings, write_embeddings, Dtype, EmbeddingReader};
use crate::io::mixture::{gen_mixture, MixtureSpec};
use crate::io::report::{
    BoundInfo, DiversityReport, Method, ModeReport, Provenance, SigmaSource, SpectrumInfo,
    DIVERSITY_SCHEMA, MODES_SCHEMA,
};
use crate::kernel::{self, GaussianKernelSpec, DEFAULT_EXACT_CAP};
use crate::modes::{top_eigenvectors, ModeRanker, Ranking};
use crate::rff::{
    sample_fourier_basis, FeatureMatrix, FourierBasis, ProxyCovariance, DEFAULT_RFF_DIM,
    RNG_ALGORITHM,
};

/// Rows drawn for the median bandwidth heuristic.
pub const HEURISTIC_SUBSAMPLE: usize = 1_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SigmaChoice {
    Value(f64),
    MedianHeuristic,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub input: PathBuf,
    pub sigma: SigmaChoice,
    /// Feature dimension `2r`; must be even.
    pub rff_dim: usize,
    pub alphas: Vec<Order>,
    pub seed: u64,
    pub batch_size: usize,
    pub top_t: usize,
    pub top_k: usize,
    pub ranking: Ranking,
    pub exact_cap: usize,
    pub checkpoint: Option<PathBuf>,
    pub resume: Option<PathBuf>,
}

impl RunConfig {
    pub fn new(input: impl Into<PathBuf>, sigma: SigmaChoice) -> Self {
        Self {
            input: input.into(),
            sigma,
            rff_dim: DEFAULT_RFF_DIM,
            alphas: Order::defaults(),
            seed: 0,
            batch_size: crate::io::embeddings::DEFAULT_BATCH_ROWS,
            top_t: 10,
            top_k: 25,
            ranking: Ranking::Raw,
            exact_cap: DEFAULT_EXACT_CAP,
            checkpoint: None,
            resume: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rff_dim < 2 || self.rff_dim % 2 != 0 {
            return Err(FkeaError::input(format!(
                "Fourier feature dimension must be even and >= 2, got {}",
                self.rff_dim
            )));
        }
        if let SigmaChoice::Value(s) = self.sigma {
            GaussianKernelSpec::new(s)?;
        }
        if self.alphas.is_empty() {
            return Err(FkeaError::input("at least one entropy order is required"));
        }
        if self.batch_size == 0 {
            return Err(FkeaError::input("batch size must be >= 1"));
        }
        Ok(())
    }

    pub fn r(&self) -> usize {
        self.rff_dim / 2
    }

    /// Orders sorted ascending with duplicates removed.
    fn orders(&self) -> Vec<Order> {
        let mut v = self.alphas.clone();
        v.sort_by(|a, b| a.alpha().total_cmp(&b.alpha()));
        v.dedup();
        v
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct Timings {
    pub bandwidth: Duration,
    pub accumulate: Duration,
    pub eigensolve: Duration,
    pub total: Duration,
}

#[derive(Debug, Clone)]
pub struct ScoreOutcome {
    pub report: DiversityReport,
    pub timings: Timings,
}

/// Peak resident set size of this process in KiB (Linux only).
pub fn peak_rss_kib() -> Option<u64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    status
        .lines()
        .find(|l| l.starts_with("VmHWM:"))?
        .split_whitespace()
        .nth(1)?
        .parse()
        .ok()
}

/// Runs `f` on a rayon pool of `threads` workers (the global pool if `None`).
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(f()),
        Some(0) => Err(FkeaError::input("thread count must be >= 1")),
        Some(t) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build()
                .map_err(|e| FkeaError::input(format!("cannot build thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

/// Uniform reservoir sample of up to `m` rows in one pass over the file.
fn reservoir_sample(path: &Path, m: usize, seed: u64, batch: usize) -> Result<EmbeddingSet> {
    let mut reader = EmbeddingReader::open(path)?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0x6d65_6469_616e_5f68);
    let mut kept: Vec<Vec<f64>> = Vec::with_capacity(m);
    let mut seen = 0u64;
    while let Some(b) = reader.next_batch(batch)? {
        for x in b.rows() {
            if kept.len() < m {
                kept.push(x.to_vec());
            } else {
                let j = rng.gen_range(0..=seen);
                if (j as usize) < m {
                    kept[j as usize] = x.to_vec();
                }
            }
            seen += 1;
        }
    }
    if kept.is_empty() {
        return Err(FkeaError::format(0, "input contains no rows"));
    }
    EmbeddingSet::from_rows(&kept)
}

fn resolve_sigma(cfg: &RunConfig) -> Result<(GaussianKernelSpec, SigmaSource)> {
    match cfg.sigma {
        SigmaChoice::Value(s) => Ok((GaussianKernelSpec::new(s)?, SigmaSource::User)),
        SigmaChoice::MedianHeuristic => {
            let sample = reservoir_sample(&cfg.input, HEURISTIC_SUBSAMPLE, cfg.seed, cfg.batch_size)?;
            let sigma = kernel::median_pairwise_distance(&sample)?;
            Ok((GaussianKernelSpec::new(sigma)?, SigmaSource::MedianHeuristic))
        }
    }
}

fn provenance(
    cfg: &RunConfig,
    n: u64,
    d: usize,
    spec: &GaussianKernelSpec,
    source: SigmaSource,
    basis: Option<&FourierBasis>,
) -> Provenance {
    Provenance {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        input: Some(cfg.input.display().to_string()),
        n,
        d,
        sigma: spec.sigma(),
        sigma_source: source,
        rff_dim: basis.map(|b| b.dim()),
        r: basis.map(|b| b.r()),
        seed: Some(cfg.seed),
        rng: basis.map(|_| RNG_ALGORITHM.to_string()),
        basis_fingerprint: basis.map(|b| format!("{:016x}", b.fingerprint())),
        batch_size: basis.map(|_| cfg.batch_size),
    }
}

fn scores_for(spectrum: &EigenSpectrum, orders: &[Order]) -> IndexMap<String, f64> {
    orders
        .iter()
        .map(|&o| (o.to_string(), vendi_from_spectrum(spectrum, o)))
        .collect()
}

/// Result of one streaming pass: the accumulator plus, while `n < 2r`, the
/// raw feature columns (at most `(2r)^2` values, the size of the accumulator).
struct Accumulated {
    basis: FourierBasis,
    cov: ProxyCovariance,
    retained: Option<FeatureMatrix>,
    d: usize,
}

fn accumulate_file(cfg: &RunConfig, spec: &GaussianKernelSpec) -> Result<Accumulated> {
    let mut reader = EmbeddingReader::open(&cfg.input)?;
    let first = reader
        .next_batch(cfg.batch_size)?
        .ok_or_else(|| FkeaError::format(0, "input contains no rows"))?;
    let d = first.d();
    let basis = sample_fourier_basis(d, cfg.r(), spec, cfg.seed)?;
    let (mut cov, mut retained) = match &cfg.resume {
        Some(path) => {
            let cov = ProxyCovariance::load_checkpoint(path)?;
            if cov.fingerprint() != basis.fingerprint() {
                return Err(FkeaError::Basis {
                    expected: cov.fingerprint(),
                    found: basis.fingerprint(),
                });
            }
            (cov, None)
        }
        None => (ProxyCovariance::new(&basis), Some(FeatureMatrix::empty(&basis))),
    };

    let mut batch = Some(first);
    while let Some(b) = batch {
        let features = basis.features(&b)?;
        cov.accumulate_features(&features)?;
        retained = match retained {
            Some(mut kept) if kept.n() + features.n() < basis.dim() => {
                kept.extend(&features)?;
                Some(kept)
            }
            _ => None,
        };
        batch = reader.next_batch(cfg.batch_size)?;
    }
    if let Some(path) = &cfg.checkpoint {
        cov.save_checkpoint(path)?;
    }
    Ok(Accumulated {
        basis,
        cov,
        retained,
        d,
    })
}

/// One streaming pass: read, accumulate, eigensolve, score.
pub fn cmd_score(cfg: &RunConfig) -> Result<ScoreOutcome> {
    cfg.validate()?;
    let start = Instant::now();
    let (spec, source) = resolve_sigma(cfg)?;
    let t_bandwidth = start.elapsed();

    let acc = accumulate_file(cfg, &spec)?;
    let t_accumulate = start.elapsed() - t_bandwidth;

    let (spectrum, route) = fkea_spectrum(&acc.cov, acc.retained.as_ref())?;
    let rke = fkea_rke(&acc.cov)?;
    let t_eigen = start.elapsed() - t_bandwidth - t_accumulate;

    let n = acc.cov.samples_seen();
    let report = DiversityReport {
        schema: DIVERSITY_SCHEMA.into(),
        method: Method::Fkea,
        provenance: provenance(cfg, n, acc.d, &spec, source, Some(&acc.basis)),
        scores: scores_for(&spectrum, &cfg.orders()),
        rke,
        bound: Some(BoundInfo {
            delta: REPORT_DELTA,
            epsilon: theorem_bound(n, acc.basis.r(), REPORT_DELTA)?,
        }),
        spectrum: Some(SpectrumInfo {
            route: Some(route),
            matrix_dim: spectrum.source_dim(),
            support: spectrum.support(),
            clamped_mass: spectrum.clamped_mass(),
        }),
        warnings: spectrum.warnings().to_vec(),
    };
    Ok(ScoreOutcome {
        report,
        timings: Timings {
            bandwidth: t_bandwidth,
            accumulate: t_accumulate,
            eigensolve: t_eigen,
            total: start.elapsed(),
        },
    })
}

/// Exact Gram-matrix baseline for the same orders.
pub fn cmd_exact(cfg: &RunConfig) -> Result<ScoreOutcome> {
    cfg.validate()?;
    let start = Instant::now();
    if let Some(n) = EmbeddingReader::open(&cfg.input)?.n_hint() {
        if n > cfg.exact_cap as u64 {
            return Err(FkeaError::Capacity {
                what: "exact scoring",
                n: n as usize,
                cap: cfg.exact_cap,
            });
        }
    }
    let (spec, source) = resolve_sigma(cfg)?;
    let t_bandwidth = start.elapsed();
    let e = read_embeddings(&cfg.input)?;
    let rke = kernel::exact_rke(&e, &spec, cfg.exact_cap)?;
    let t_accumulate = start.elapsed() - t_bandwidth;
    let spectrum = kernel::exact_spectrum(&e, &spec, cfg.exact_cap)?;
    let t_eigen = start.elapsed() - t_bandwidth - t_accumulate;

    let report = DiversityReport {
        schema: DIVERSITY_SCHEMA.into(),
        method: Method::Exact,
        provenance: provenance(cfg, e.n() as u64, e.d(), &spec, source, None),
        scores: scores_for(&spectrum, &cfg.orders()),
        rke,
        bound: None,
        spectrum: Some(SpectrumInfo {
            route: None,
            matrix_dim: spectrum.source_dim(),
            support: spectrum.support(),
            clamped_mass: spectrum.clamped_mass(),
        }),
        warnings: spectrum.warnings().to_vec(),
    };
    Ok(ScoreOutcome {
        report,
        timings: Timings {
            bandwidth: t_bandwidth,
            accumulate: t_accumulate,
            eigensolve: t_eigen,
            total: start.elapsed(),
        },
    })
}

/// Top-`t` modes with the `k` highest-scoring samples of each (two passes).
pub fn cmd_modes(cfg: &RunConfig) -> Result<ModeReport> {
    cfg.validate()?;
    let (spec, source) = resolve_sigma(cfg)?;
    let acc = accumulate_file(cfg, &spec)?;
    let n = acc.cov.samples_seen();
    if cfg.top_k as u64 > n {
        return Err(FkeaError::input(format!(
            "top-k {} exceeds the sample count {n}",
            cfg.top_k
        )));
    }
    let mb = top_eigenvectors(&acc.cov, cfg.top_t)?;
    let mut ranker = ModeRanker::new(&acc.basis, &mb, cfg.top_k, cfg.ranking)?;
    let mut reader = EmbeddingReader::open(&cfg.input)?;
    while let Some(batch) = reader.next_batch(cfg.batch_size)? {
        ranker.push_batch(&batch)?;
    }
    Ok(ModeReport {
        schema: MODES_SCHEMA.into(),
        provenance: provenance(cfg, n, acc.d, &spec, source, Some(&acc.basis)),
        ranking: cfg.ranking,
        top_k: cfg.top_k,
        modes: ranker.finish(),
    })
}

/// One line of a sweep CSV.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub sweep: &'static str,
    pub parameter: usize,
    pub seed: u64,
    pub alpha: String,
    pub score: f64,
    pub exact_score: f64,
    /// L2 distance between the exact and approximate spectra.
    pub spectrum_error: f64,
    /// `theorem_bound(n, r, 0.05)`.
    pub bound: f64,
}

/// FKEA spectrum of an in-memory set, read from the smaller of the proxy
/// Gram and proxy covariance matrices.
pub fn fkea_spectrum_in_memory(
    e: &EmbeddingSet,
    spec: &GaussianKernelSpec,
    r: usize,
    seed: u64,
) -> Result<(EigenSpectrum, SpectrumRoute)> {
    let basis = sample_fourier_basis(e.d(), r, spec, seed)?;
    let features = basis.features(e)?;
    if features.n() < basis.dim() {
        Ok((entropy::proxy_gram_spectrum(&features)?, SpectrumRoute::ProxyGram))
    } else {
        let mut cov = ProxyCovariance::new(&basis);
        cov.accumulate_features(&features)?;
        fkea_spectrum(&cov, None)
    }
}

/// Error of the FKEA spectrum against the exact one, over `r` values and seeds.
pub fn sweep_r(
    e: &EmbeddingSet,
    spec: &GaussianKernelSpec,
    r_list: &[usize],
    seeds: &[u64],
    orders: &[Order],
    exact_cap: usize,
) -> Result<Vec<SweepRow>> {
    let exact = kernel::exact_spectrum(e, spec, exact_cap)?;
    let n = e.n() as u64;
    let mut rows = Vec::new();
    for &r in r_list {
        let bound = theorem_bound(n, r, REPORT_DELTA)?;
        for &seed in seeds {
            let (approx, _) = fkea_spectrum_in_memory(e, spec, r, seed)?;
            let err = spectrum_error(&exact, &approx);
            for &o in orders {
                rows.push(SweepRow {
                    sweep: "r",
                    parameter: r,
                    seed,
                    alpha: o.to_string(),
                    score: vendi_from_spectrum(&approx, o),
                    exact_score: vendi_from_spectrum(&exact, o),
                    spectrum_error: err,
                    bound,
                });
            }
        }
    }
    Ok(rows)
}

/// Scores of planted mixtures with `t` clusters for each `t` in `t_list`.
pub fn sweep_classes(
    template: &MixtureSpec,
    t_list: &[usize],
    spec: &GaussianKernelSpec,
    r: usize,
    seed: u64,
    orders: &[Order],
    exact_cap: usize,
) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::new();
    for &t in t_list {
        let mix = gen_mixture(&MixtureSpec {
            t,
            ..template.clone()
        })?;
        let e = &mix.data;
        let (approx, _) = fkea_spectrum_in_memory(e, spec, r, seed)?;
        let exact = if e.n() <= exact_cap {
            Some(kernel::exact_spectrum(e, spec, exact_cap)?)
        } else {
            None
        };
        let err = exact.as_ref().map_or(f64::NAN, |x| spectrum_error(x, &approx));
        let bound = theorem_bound(e.n() as u64, r, REPORT_DELTA)?;
        for &o in orders {
            rows.push(SweepRow {
                sweep: "classes",
                parameter: t,
                seed,
                alpha: o.to_string(),
                score: vendi_from_spectrum(&approx, o),
                exact_score: exact.as_ref().map_or(f64::NAN, |x| vendi_from_spectrum(x, o)),
                spectrum_error: err,
                bound,
            });
        }
    }
    Ok(rows)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row).expect("sweep rows always serialize");
    }
    String::from_utf8(w.into_inner().expect("in-memory writer")).expect("CSV is UTF-8")
}

/// Writes a mixture as a binary embedding file plus a `index,label` CSV.
pub fn cmd_gen(spec: &MixtureSpec, out: &Path, labels: &Path, dtype: Dtype) -> Result<usize> {
    let mix = gen_mixture(spec)?;
    write_embeddings(out, &mix.data, dtype)?;
    let mut w = csv::Writer::from_path(labels).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => FkeaError::io(labels, io),
        other => FkeaError::Generation(format!("{other:?}")),
    })?;
    let to_err = |e: csv::Error| FkeaError::Generation(format!("writing labels: {e}"));
    w.write_record(["index", "label"]).map_err(to_err)?;
    for (i, l) in mix.labels.iter().enumerate() {
        w.write_record([i.to_string(), l.to_string()]).map_err(to_err)?;
    }
    w.flush().map_err(|e| FkeaError::io(labels, e))?;
    Ok(mix.data.n())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::embeddings::write_embeddings;

    #[test]
    fn config_validation() {
        let mut cfg = RunConfig::new("x", SigmaChoice::Value(1.0));
        assert!(cfg.validate().is_ok());
        cfg.rff_dim = 7;
        assert!(cfg.validate().is_err());
        cfg.rff_dim = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::new("x", SigmaChoice::Value(-1.0));
        assert!(cfg.validate().is_err());
        cfg.sigma = SigmaChoice::MedianHeuristic;
        cfg.alphas.clear();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn orders_are_sorted_and_unique() {
        let mut cfg = RunConfig::new("x", SigmaChoice::Value(1.0));
        cfg.alphas = vec![Order::Infinite, Order::Finite(2.0), Order::Shannon, Order::Finite(2.0)];
        let got: Vec<String> = cfg.orders().iter().map(|o| o.to_string()).collect();
        assert_eq!(got, ["1", "2", "inf"]);
    }

    #[test]
    fn reservoir_is_seeded_and_bounded() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.bin");
        let e = EmbeddingSet::from_row_major(50, 1, (0..50).map(f64::from).collect()).unwrap();
        write_embeddings(&path, &e, Dtype::F64).unwrap();
        let a = reservoir_sample(&path, 10, 3, 7).unwrap();
        let b = reservoir_sample(&path, 10, 3, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.n(), 10);
        let all = reservoir_sample(&path, 100, 3, 7).unwrap();
        assert_eq!(all, e);
    }

    #[test]
    fn threads_zero_is_rejected() {
        assert!(with_threads(Some(0), || ()).is_err());
        assert_eq!(with_threads(Some(2), rayon::current_num_threads).unwrap(), 2);
    }
}
