#![no_main]
use libfuzzer_sys::fuzz_target;
use pup::lm::NGramLM;

fuzz_target!(|data: &[u8]| {
    if let Ok(lm) = NGramLM::from_bytes(data, None) {
        let bytes = lm.to_bytes();
        let again = NGramLM::from_bytes(&bytes, Some(lm.vocab_hash())).expect("re-serialized model loads");
        assert_eq!(again.to_bytes(), bytes);
    }
});
