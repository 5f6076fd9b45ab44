#![no_main]
use fkea::io::{DiversityReport, ModeReport};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(r) = DiversityReport::from_json(text) {
        let _ = r.to_csv();
        assert_eq!(DiversityReport::from_json(&r.to_json()).ok().as_ref(), Some(&r));
    }
    if let Ok(r) = ModeReport::from_json(text) {
        let _ = r.to_csv();
    }
});
