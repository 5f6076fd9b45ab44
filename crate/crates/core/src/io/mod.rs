//! File formats: embedding ingestion, synthetic mixtures and report output.

pub mod embeddings;
pub mod mixture;
pub mod report;

pub use embeddings::{
    decode_embeddings, encode_embeddings, parse_csv, read_embeddings, write_embeddings, Dtype,
    EmbeddingFileHeader, EmbeddingReader,
};
pub use mixture::{gen_mixture, Mixture, MixtureSpec};
pub use report::{write_report, DiversityReport, ModeReport, Provenance, ReportFormat};
