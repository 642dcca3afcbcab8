#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(cfg) = inn_core::dataio::parse_config(text) {
            let again = serde_json::to_string(&cfg).unwrap();
            assert_eq!(inn_core::dataio::parse_config(&again).unwrap(), cfg);
        }
    }
});
