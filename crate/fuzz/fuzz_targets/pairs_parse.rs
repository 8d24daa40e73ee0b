#![no_main]
use libfuzzer_sys::fuzz_target;
use pup::eval::parse_pairs;

fuzz_target!(|data: &[u8]| {
    if let Ok(s) = std::str::from_utf8(data) {
        if let Ok(pairs) = parse_pairs(s) {
            for p in pairs {
                assert!(!p.source.is_empty());
                assert!(!p.references.is_empty());
            }
        }
    }
});
