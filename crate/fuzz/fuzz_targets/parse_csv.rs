#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(s) = inn_core::dataio::parse_csv(data, "fuzz") {
        assert_eq!(s.u.len(), s.y.len());
        assert!(s.u.iter().chain(&s.y).all(|v| v.is_finite()));
    }
});
