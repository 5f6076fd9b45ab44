//! Embedding files.
//!
//! Binary layout (all integers little-endian):
//!
//! | offset | size | field                              |
//! |--------|------|------------------------------------|
//! | 0      | 4    | magic `FKEA`                       |
//! | 4      | 4    | version `u32` = 1                  |
//! | 8      | 8    | `n` as `u64`                       |
//! | 16     | 4    | `d` as `u32`                       |
//! | 20     | 1    | dtype: 0 = `f32`, 1 = `f64`        |
//! | 21     | ...  | `n * d` values, row-major          |
//!
//! Files ending in `.csv` are read as headerless CSV, one sample per line.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::embedding::EmbeddingSet;
use crate::error::{FkeaError, Result};

pub const MAGIC: &[u8; 4] = b"FKEA";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 21;
pub const DEFAULT_BATCH_ROWS: usize = 8_192;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    pub fn code(self) -> u8 {
        match self {
            Dtype::F32 => 0,
            Dtype::F64 => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Dtype::F32),
            1 => Some(Dtype::F64),
            _ => None,
        }
    }

    pub fn width(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EmbeddingFileHeader {
    pub n: u64,
    pub d: u32,
    pub dtype: Dtype,
}

impl EmbeddingFileHeader {
    pub fn encode(&self) -> [u8; HEADER_LEN] {
        let mut out = [0u8; HEADER_LEN];
        out[0..4].copy_from_slice(MAGIC);
        out[4..8].copy_from_slice(&VERSION.to_le_bytes());
        out[8..16].copy_from_slice(&self.n.to_le_bytes());
        out[16..20].copy_from_slice(&self.d.to_le_bytes());
        out[20] = self.dtype.code();
        out
    }

    /// Parses and validates the fixed-size header.
    pub fn parse(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(FkeaError::format(
                bytes.len() as u64,
                format!("header needs {HEADER_LEN} bytes, found {}", bytes.len()),
            ));
        }
        if &bytes[0..4] != MAGIC {
            return Err(FkeaError::format(0, "bad magic, expected \"FKEA\""));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(FkeaError::format(4, format!("unsupported version {version}")));
        }
        let n = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
        if n == 0 {
            return Err(FkeaError::format(8, "header declares n = 0"));
        }
        let d = u32::from_le_bytes(bytes[16..20].try_into().unwrap());
        if d == 0 {
            return Err(FkeaError::format(16, "header declares d = 0"));
        }
        let dtype = Dtype::from_code(bytes[20])
            .ok_or_else(|| FkeaError::format(20, format!("unknown dtype code {}", bytes[20])))?;
        Ok(Self { n, d, dtype })
    }

    /// Payload size in bytes, or `None` if it overflows `u64`.
    pub fn payload_len(&self) -> Option<u64> {
        self.n
            .checked_mul(self.d as u64)?
            .checked_mul(self.dtype.width() as u64)
    }

    fn check_payload(&self, actual: u64) -> Result<()> {
        match self.payload_len() {
            Some(expected) if expected == actual => Ok(()),
            Some(expected) => Err(FkeaError::format(
                HEADER_LEN as u64,
                format!(
                    "payload length mismatch: header implies {expected} bytes ({} x {} x {}), found {actual}",
                    self.n,
                    self.d,
                    self.dtype.width()
                ),
            )),
            None => Err(FkeaError::format(8, "declared payload size overflows")),
        }
    }
}

fn decode_values(payload: &[u8], dtype: Dtype) -> Vec<f64> {
    match dtype {
        Dtype::F32 => payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
        Dtype::F64 => payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
    }
}

fn set_from_values(values: Vec<f64>, rows: usize, d: usize, first_row: u64) -> Result<EmbeddingSet> {
    EmbeddingSet::from_row_major(rows, d, values).map_err(|e| match e {
        FkeaError::Data { row, message } => FkeaError::Data {
            row: first_row + row,
            message,
        },
        other => other,
    })
}

/// Decodes a complete binary embedding file held in memory.
pub fn decode_embeddings(bytes: &[u8]) -> Result<EmbeddingSet> {
    let header = EmbeddingFileHeader::parse(bytes)?;
    header.check_payload((bytes.len() - HEADER_LEN) as u64)?;
    let values = decode_values(&bytes[HEADER_LEN..], header.dtype);
    set_from_values(values, header.n as usize, header.d as usize, 0)
}

pub fn encode_embeddings(e: &EmbeddingSet, dtype: Dtype) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + e.as_slice().len() * dtype.width());
    write_payload(&mut out, e, dtype).expect("writing to a Vec cannot fail");
    out
}

fn write_payload<W: Write>(w: &mut W, e: &EmbeddingSet, dtype: Dtype) -> std::io::Result<()> {
    let header = EmbeddingFileHeader {
        n: e.n() as u64,
        d: e.d() as u32,
        dtype,
    };
    w.write_all(&header.encode())?;
    for &v in e.as_slice() {
        match dtype {
            Dtype::F32 => w.write_all(&(v as f32).to_le_bytes())?,
            Dtype::F64 => w.write_all(&v.to_le_bytes())?,
        }
    }
    Ok(())
}

pub fn write_embeddings(path: &Path, e: &EmbeddingSet, dtype: Dtype) -> Result<()> {
    if e.d() > u32::MAX as usize {
        return Err(FkeaError::input("dimension does not fit the file header"));
    }
    let file = File::create(path).map_err(|err| FkeaError::io(path, err))?;
    let mut w = BufWriter::new(file);
    write_payload(&mut w, e, dtype)
        .and_then(|_| w.flush())
        .map_err(|err| FkeaError::io(path, err))
}

/// Parses headerless CSV text: one sample per non-empty line.
pub fn parse_csv(text: &str) -> Result<EmbeddingSet> {
    let mut reader = CsvRows::new(text.as_bytes());
    let mut data = Vec::new();
    let mut n = 0usize;
    while let Some(row) = reader.next_row()? {
        data.extend_from_slice(&row);
        n += 1;
    }
    let d = reader
        .d
        .ok_or_else(|| FkeaError::format(0, "CSV contains no rows"))?;
    set_from_values(data, n, d, 0)
}

struct CsvRows<R: Read> {
    inner: csv::Reader<R>,
    record: csv::StringRecord,
    d: Option<usize>,
    row: u64,
}

impl<R: Read> CsvRows<R> {
    fn new(src: R) -> Self {
        let inner = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(src);
        Self {
            inner,
            record: csv::StringRecord::new(),
            d: None,
            row: 0,
        }
    }

    fn next_row(&mut self) -> Result<Option<Vec<f64>>> {
        loop {
            let more = self.inner.read_record(&mut self.record).map_err(|e| {
                let offset = e.position().map_or(0, |p| p.byte());
                FkeaError::format(offset, format!("malformed CSV: {e}"))
            })?;
            if !more {
                return Ok(None);
            }
            if self.record.iter().all(|f| f.is_empty()) {
                continue;
            }
            let row = self.row;
            self.row += 1;
            let values = self
                .record
                .iter()
                .enumerate()
                .map(|(c, f)| {
                    f.parse::<f64>().map_err(|_| FkeaError::Data {
                        row,
                        message: format!("column {c}: cannot parse {f:?} as a number"),
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            match self.d {
                None => self.d = Some(values.len()),
                Some(d) if d != values.len() => {
                    return Err(FkeaError::Data {
                        row,
                        message: format!("expected {d} columns, found {}", values.len()),
                    })
                }
                Some(_) => {}
            }
            if let Some(c) = values.iter().position(|v| !v.is_finite()) {
                return Err(FkeaError::Data {
                    row,
                    message: format!("non-finite value in column {c}"),
                });
            }
            return Ok(Some(values));
        }
    }
}

enum Source {
    Binary {
        file: BufReader<File>,
        header: EmbeddingFileHeader,
        rows_read: u64,
    },
    Csv(CsvRows<BufReader<File>>),
}

/// Sequential batch reader over an embedding file. Memory use is bounded by
/// the batch size, never by the file length.
pub struct EmbeddingReader {
    source: Source,
    path: std::path::PathBuf,
}

fn is_csv(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

impl EmbeddingReader {
    pub fn open(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| FkeaError::io(path, e))?;
        let source = if is_csv(path) {
            Source::Csv(CsvRows::new(BufReader::new(file)))
        } else {
            let len = file.metadata().map_err(|e| FkeaError::io(path, e))?.len();
            let mut file = BufReader::with_capacity(1 << 20, file);
            let mut head = [0u8; HEADER_LEN];
            let got = read_fully(&mut file, &mut head).map_err(|e| FkeaError::io(path, e))?;
            let header = EmbeddingFileHeader::parse(&head[..got])?;
            header.check_payload(len - HEADER_LEN as u64)?;
            Source::Binary {
                file,
                header,
                rows_read: 0,
            }
        };
        Ok(Self {
            source,
            path: path.to_path_buf(),
        })
    }

    /// Sample dimension, known up front for binary files.
    pub fn d(&self) -> Option<usize> {
        match &self.source {
            Source::Binary { header, .. } => Some(header.d as usize),
            Source::Csv(rows) => rows.d,
        }
    }

    /// Declared sample count (binary files only).
    pub fn n_hint(&self) -> Option<u64> {
        match &self.source {
            Source::Binary { header, .. } => Some(header.n),
            Source::Csv(_) => None,
        }
    }

    /// Next batch of at most `max_rows` rows, or `None` at end of file.
    pub fn next_batch(&mut self, max_rows: usize) -> Result<Option<EmbeddingSet>> {
        let max_rows = max_rows.max(1);
        match &mut self.source {
            Source::Binary {
                file,
                header,
                rows_read,
            } => {
                let remaining = header.n - *rows_read;
                if remaining == 0 {
                    return Ok(None);
                }
                let rows = remaining.min(max_rows as u64) as usize;
                let d = header.d as usize;
                let mut buf = vec![0u8; rows * d * header.dtype.width()];
                file.read_exact(&mut buf)
                    .map_err(|e| FkeaError::io(&self.path, e))?;
                let values = decode_values(&buf, header.dtype);
                let set = set_from_values(values, rows, d, *rows_read)?;
                *rows_read += rows as u64;
                Ok(Some(set))
            }
            Source::Csv(reader) => {
                let mut data = Vec::new();
                let mut rows = 0;
                while rows < max_rows {
                    match reader.next_row()? {
                        Some(row) => {
                            data.extend_from_slice(&row);
                            rows += 1;
                        }
                        None => break,
                    }
                }
                if rows == 0 {
                    return Ok(None);
                }
                let first = reader.row - rows as u64;
                set_from_values(data, rows, reader.d.unwrap_or(0), first).map(Some)
            }
        }
    }
}

fn read_fully<R: Read>(r: &mut R, buf: &mut [u8]) -> std::io::Result<usize> {
    let mut got = 0;
    while got < buf.len() {
        match r.read(&mut buf[got..])? {
            0 => break,
            k => got += k,
        }
    }
    Ok(got)
}

/// Reads a whole embedding file (binary, or CSV by extension).
pub fn read_embeddings(path: &Path) -> Result<EmbeddingSet> {
    let mut reader = EmbeddingReader::open(path)?;
    let mut data = Vec::new();
    let mut n = 0;
    while let Some(batch) = reader.next_batch(DEFAULT_BATCH_ROWS)? {
        n += batch.n();
        data.extend(batch.into_vec());
    }
    let d = reader
        .d()
        .ok_or_else(|| FkeaError::format(0, "file contains no rows"))?;
    EmbeddingSet::from_row_major(n, d, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_set() -> EmbeddingSet {
        EmbeddingSet::from_rows(&[[1.0, -2.5, 1e-300], [0.1, 0.2, 0.3]]).unwrap()
    }

    #[test]
    fn header_layout_is_bit_exact() {
        let h = EmbeddingFileHeader {
            n: 3,
            d: 2,
            dtype: Dtype::F32,
        };
        let bytes = h.encode();
        assert_eq!(
            bytes,
            [
                b'F', b'K', b'E', b'A', 1, 0, 0, 0, 3, 0, 0, 0, 0, 0, 0, 0, 2, 0, 0, 0, 0
            ]
        );
        assert_eq!(EmbeddingFileHeader::parse(&bytes).unwrap(), h);
    }

    #[test]
    fn f64_round_trip_is_bitwise() {
        let e = sample_set();
        let back = decode_embeddings(&encode_embeddings(&e, Dtype::F64)).unwrap();
        assert_eq!(back, e);
    }

    #[test]
    fn f32_is_widened() {
        let e = EmbeddingSet::from_rows(&[[0.5f64, 1.25]]).unwrap();
        let back = decode_embeddings(&encode_embeddings(&e, Dtype::F32)).unwrap();
        assert_eq!(back, e);
        let e = EmbeddingSet::from_rows(&[[0.1f64]]).unwrap();
        let back = decode_embeddings(&encode_embeddings(&e, Dtype::F32)).unwrap();
        assert_eq!(back.row(0)[0], 0.1f32 as f64);
    }

    #[test]
    fn truncation_reports_lengths() {
        let bytes = encode_embeddings(&sample_set(), Dtype::F64);
        let err = decode_embeddings(&bytes[..bytes.len() - 3]).unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, FkeaError::Format { offset: 21, .. }), "{msg}");
        assert!(msg.contains("48") && msg.contains("45"), "{msg}");
        assert!(decode_embeddings(&bytes[..10]).is_err());
    }

    #[test]
    fn header_errors_carry_offsets() {
        let good = encode_embeddings(&sample_set(), Dtype::F64);
        let cases = [(0usize, 0u64), (4, 4), (20, 20)];
        for (byte, offset) in cases {
            let mut bad = good.clone();
            bad[byte] = 0xEE;
            match decode_embeddings(&bad).unwrap_err() {
                FkeaError::Format { offset: o, .. } => assert_eq!(o, offset),
                other => panic!("unexpected {other:?}"),
            }
        }
        let mut zero_n = good.clone();
        zero_n[8..16].fill(0);
        assert!(matches!(
            decode_embeddings(&zero_n),
            Err(FkeaError::Format { offset: 8, .. })
        ));
        let mut huge = good.clone();
        huge[8..16].copy_from_slice(&u64::MAX.to_le_bytes());
        assert!(decode_embeddings(&huge).is_err());
    }

    #[test]
    fn nan_payload_names_row() {
        let mut bytes = encode_embeddings(&sample_set(), Dtype::F64);
        let off = HEADER_LEN + 8 * 4;
        bytes[off..off + 8].copy_from_slice(&f64::NAN.to_le_bytes());
        match decode_embeddings(&bytes).unwrap_err() {
            FkeaError::Data { row, .. } => assert_eq!(row, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn csv_parsing() {
        let e = parse_csv("1,2\n3, 4\n\n5,6\n").unwrap();
        assert_eq!((e.n(), e.d()), (3, 2));
        assert_eq!(e.row(1), &[3.0, 4.0]);
        assert!(matches!(parse_csv("1,2\n3\n"), Err(FkeaError::Data { row: 1, .. })));
        assert!(matches!(parse_csv("1,x\n"), Err(FkeaError::Data { row: 0, .. })));
        assert!(matches!(parse_csv("1,NaN\n"), Err(FkeaError::Data { row: 0, .. })));
        assert!(parse_csv("").is_err());
    }

    #[test]
    fn streaming_reader_matches_whole_file() {
        let dir = tempfile::tempdir().unwrap();
        let rows: Vec<[f64; 3]> = (0..25).map(|i| [i as f64, -(i as f64), 0.5]).collect();
        let e = EmbeddingSet::from_rows(&rows).unwrap();
        let bin = dir.path().join("e.bin");
        write_embeddings(&bin, &e, Dtype::F64).unwrap();
        let mut reader = EmbeddingReader::open(&bin).unwrap();
        assert_eq!(reader.n_hint(), Some(25));
        let mut sizes = vec![];
        while let Some(b) = reader.next_batch(10).unwrap() {
            sizes.push(b.n());
        }
        assert_eq!(sizes, vec![10, 10, 5]);
        assert_eq!(read_embeddings(&bin).unwrap(), e);

        let csv_path = dir.path().join("e.CSV");
        let text: String = rows
            .iter()
            .map(|r| format!("{},{},{}\n", r[0], r[1], r[2]))
            .collect();
        std::fs::write(&csv_path, text).unwrap();
        assert_eq!(read_embeddings(&csv_path).unwrap(), e);
    }

    #[test]
    fn streaming_reader_rejects_truncated_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.bin");
        let bytes = encode_embeddings(&sample_set(), Dtype::F32);
        std::fs::write(&path, &bytes[..bytes.len() - 1]).unwrap();
        assert!(matches!(
            EmbeddingReader::open(&path),
            Err(FkeaError::Format { .. })
        ));
    }
}
