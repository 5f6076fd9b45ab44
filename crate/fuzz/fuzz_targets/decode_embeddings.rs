#![no_main]
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    // Arbitrary bytes must decode or fail with a structured error, never panic.
    if let Ok(e) = fkea::io::decode_embeddings(data) {
        assert!(e.as_slice().iter().all(|v| v.is_finite()));
        assert_eq!(e.as_slice().len(), e.n() * e.d());
    }
});
