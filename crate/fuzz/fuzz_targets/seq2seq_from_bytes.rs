#![no_main]
use libfuzzer_sys::fuzz_target;
use pup::nn::Seq2Seq;

fuzz_target!(|data: &[u8]| {
    if let Ok(model) = Seq2Seq::from_bytes(data, None) {
        assert_eq!(model.to_bytes(), data);
    }
});
