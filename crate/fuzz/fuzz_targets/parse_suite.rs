#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(suite) = inn_core::dataio::parse_suite(text) {
            for i in 0..suite.cells.len() {
                let _ = suite.cell(i);
            }
        }
    }
});
