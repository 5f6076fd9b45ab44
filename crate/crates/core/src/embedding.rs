use crate::error::{FkeaError, Result};

/// A dense `n × d` block of sample embeddings, stored row-major in double precision.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    n: usize,
    d: usize,
    data: Vec<f64>,
}

impl EmbeddingSet {
    /// Builds a set from row-major values. Rejects empty shapes, ragged
    /// buffers and non-finite entries (reporting the first offending row).
    pub fn from_row_major(n: usize, d: usize, data: Vec<f64>) -> Result<Self> {
        if n == 0 || d == 0 {
            return Err(FkeaError::input(format!(
                "embedding set needs n >= 1 and d >= 1, got n = {n}, d = {d}"
            )));
        }
        if n.checked_mul(d) != Some(data.len()) {
            return Err(FkeaError::input(format!(
                "expected {n} x {d} = {} values, got {}",
                n.saturating_mul(d),
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(FkeaError::Data {
                row: (pos / d) as u64,
                message: format!("non-finite value {} in column {}", data[pos], pos % d),
            });
        }
        Ok(Self { n, d, data })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let d = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * d);
        for (i, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != d {
                return Err(FkeaError::input(format!(
                    "row {i} has {} entries, expected {d}",
                    row.len()
                )));
            }
            data.extend_from_slice(row);
        }
        Self::from_row_major(rows.len(), d, data)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.d)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// Rows `start..end` as a new set.
    pub fn slice_rows(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.n {
            return Err(FkeaError::input(format!(
                "row range {start}..{end} invalid for n = {}",
                self.n
            )));
        }
        Ok(Self {
            n: end - start,
            d: self.d,
            data: self.data[start * self.d..end * self.d].to_vec(),
        })
    }

    /// Selects rows by index, in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Self> {
        let mut data = Vec::with_capacity(indices.len() * self.d);
        for &i in indices {
            if i >= self.n {
                return Err(FkeaError::input(format!("row index {i} out of range")));
            }
            data.extend_from_slice(self.row(i));
        }
        Self::from_row_major(indices.len(), self.d, data)
    }

    /// Splits into consecutive batches of at most `batch` rows.
    pub fn batches(&self, batch: usize) -> impl Iterator<Item = EmbeddingSet> + '_ {
        let batch = batch.max(1);
        (0..self.n).step_by(batch).map(move |start| {
            let end = (start + batch).min(self.n);
            Self {
                n: end - start,
                d: self.d,
                data: self.data[start * self.d..end * self.d].to_vec(),
            }
        })
    }
}

/// Dot product with a fixed four-lane accumulation order.
///
/// The result depends only on the two slices, never on how callers batch or
/// parallelize, which keeps every downstream quantity reproducible.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = 4 * c;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in 4 * chunks..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Squared Euclidean distance, accumulated the same way as [`dot`].
#[inline]
pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = 4 * c;
        let d0 = a[i] - b[i];
        let d1 = a[i + 1] - b[i + 1];
        let d2 = a[i + 2] - b[i + 2];
        let d3 = a[i + 3] - b[i + 3];
        acc[0] += d0 * d0;
        acc[1] += d1 * d1;
        acc[2] += d2 * d2;
        acc[3] += d3 * d3;
    }
    let mut tail = 0.0;
    for i in 4 * chunks..a.len() {
        let di = a[i] - b[i];
        tail += di * di;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}
