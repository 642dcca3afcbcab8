#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(h) = inn_core::analysis::parse_heatmap(text, "fuzz") {
            let csv = h.to_csv().unwrap();
            assert_eq!(inn_core::analysis::parse_heatmap(&csv, "fuzz").unwrap(), h);
        }
    }
});
