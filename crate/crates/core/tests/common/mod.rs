#![allow(dead_code)]

use std::io::{BufWriter, Write};
use std::path::Path;

use fkea::io::embeddings::{Dtype, EmbeddingFileHeader};
use fkea::EmbeddingSet;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn gaussian_set(n: usize, d: usize, seed: u64) -> EmbeddingSet {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let data = (0..n * d).map(|_| StandardNormal.sample(&mut rng)).collect();
    EmbeddingSet::from_row_major(n, d, data).unwrap()
}

pub fn uniform_set(n: usize, d: usize, seed: u64) -> EmbeddingSet {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let data = (0..n * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    EmbeddingSet::from_row_major(n, d, data).unwrap()
}

/// Streams `n` standard-normal rows to a binary f32 file without holding
/// them in memory.
pub fn write_gaussian_file(path: &Path, n: u64, d: u32, seed: u64) {
    let mut w = BufWriter::new(std::fs::File::create(path).unwrap());
    let header = EmbeddingFileHeader {
        n,
        d,
        dtype: Dtype::F32,
    };
    w.write_all(&header.encode()).unwrap();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    for _ in 0..n * d as u64 {
        let z: f64 = StandardNormal.sample(&mut rng);
        w.write_all(&(z as f32).to_le_bytes()).unwrap();
    }
    w.flush().unwrap();
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}
