#![no_main]
use fkea::io::EmbeddingFileHeader;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(header) = EmbeddingFileHeader::parse(data) {
        // Whatever parses must re-encode to the same bytes.
        assert_eq!(&header.encode()[..], &data[..fkea::io::embeddings::HEADER_LEN]);
        let _ = header.payload_len();
    }
});
