#![no_main]
use libfuzzer_sys::fuzz_target;
use pup::text::Vocabulary;

fuzz_target!(|data: &[u8]| {
    if let Ok(s) = std::str::from_utf8(data) {
        if let Ok(v) = Vocabulary::parse(s) {
            let mut out = Vec::new();
            v.write_to(&mut out).unwrap();
            let again = Vocabulary::parse(std::str::from_utf8(&out).unwrap()).unwrap();
            assert_eq!(again.hash(), v.hash());
        }
    }
});
