#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(ds) = opreason::corpus::parse_drop_json(text) {
            for raw in &ds.instances {
                let _ = raw.primary_answer().texts();
            }
        }
    }
});
