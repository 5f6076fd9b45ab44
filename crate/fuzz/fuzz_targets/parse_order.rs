#![no_main]
use fkea::Order;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(order) = text.parse::<Order>() {
            // The canonical string parses back to the same order.
            assert_eq!(order.to_string().parse::<Order>().unwrap(), order);
        }
    }
});
