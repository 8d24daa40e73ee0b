#![no_main]
use libfuzzer_sys::fuzz_target;
use pup::text::tokenize;

fuzz_target!(|data: &[u8]| {
    if let Ok(s) = std::str::from_utf8(data) {
        let toks = tokenize(s);
        for t in toks.iter() {
            assert!(!t.is_empty());
            assert!(!t.chars().any(char::is_whitespace));
        }
        // Re-tokenizing the joined output is stable.
        assert_eq!(tokenize(&toks.to_string()), toks);
    }
});
