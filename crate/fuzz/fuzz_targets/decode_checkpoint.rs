#![no_main]
use fkea::ProxyCovariance;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(cov) = ProxyCovariance::decode_checkpoint(data) {
        // A decoded accumulator must survive a round trip.
        assert_eq!(cov.encode_checkpoint(), data);
    }
});
