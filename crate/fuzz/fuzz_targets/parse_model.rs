#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(model) = inn_core::model::parse_model(text) {
            let json = model.to_json().unwrap();
            let back = inn_core::model::parse_model(&json).unwrap();
            assert_eq!(back.digest().unwrap(), model.digest().unwrap());
        }
    }
});
